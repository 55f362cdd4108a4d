#pragma once

#include "crl/data_io.hpp"
#include "crl/stereo_ops.hpp"

namespace crl {

// Semi-global matching parameters. p2 > p1 > 0; uniqueness <= 0 disables the
// uniqueness invalidation (a pixel stays valid iff the best cost undercuts
// every non-neighbouring candidate by the given ratio).
struct SgmParams {
    int max_disp = 64;
    double p1 = 10.0;
    double p2 = 120.0;
    int directions = 8;  // 4 or 8
    bool subpixel = false;
    double uniqueness = 0.95;
    int sad_window = 5;

    void validate() const {
        if (!(p2 > p1 && p1 > 0)) throw UsageError("SGM requires P2 > P1 > 0");
        if (max_disp < 1) throw UsageError("SGM requires max_disp >= 1");
        if (directions != 4 && directions != 8)
            throw UsageError("SGM supports 4 or 8 path directions");
        if (sad_window < 1 || sad_window % 2 == 0)
            throw UsageError("SGM SAD window must be odd and positive");
    }
};

// Mean of RGB scaled to [0, 255].
Tensor to_grayscale(const Tensor& rgb);

// Window-normalized SAD cost volume on grayscale images:
// cost(k,x,y) = window_area * mean over in-frame taps of |L(u,v) - R(u-k,v)|.
// Displacements whose center falls out of range cost max (255 * window area).
CostVolumeT<double> sad_cost_volume(const Tensor& left_gray, const Tensor& right_gray,
                                    int max_disp, int window = 5);

// Path-wise aggregation: L_r(p,d) = C(p,d) + min(L_r(p-r,d), L_r(p-r,d+-1)+P1,
// min_k L_r(p-r,k)+P2) - min_k L_r(p-r,k), summed over directions.
CostVolumeT<double> sgm_aggregate(const CostVolumeT<double>& cost, const SgmParams& params);

// Winner-take-all readout with ties broken toward smaller displacement and
// optional parabola-fit subpixel refinement.
DisparityMap wta_disparity(const CostVolumeT<double>& cost, bool subpixel,
                           double uniqueness = 0.0);

DisparityMap run_sgm(const StereoSample& sample, const SgmParams& params);

}  // namespace crl
