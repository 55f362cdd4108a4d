#pragma once

#include <string>
#include <vector>

#include "crl/png_io.hpp"
#include "crl/stereo_ops.hpp"
#include "crl/tensor.hpp"

namespace crl {

// One training/evaluation unit. Images are 1x3xHxW in [0,1]; ground truth
// follows the positive-disparity convention (the right-image match of left
// pixel x sits at x - d, so warp uses sign -1).
template <typename S>
struct StereoSampleT {
    std::string id;
    TensorT<S> left;
    TensorT<S> right;
    DisparityMapT<S> gt;
};
using StereoSample = StereoSampleT<double>;

template <typename S>
StereoSampleT<S> convert_sample(const StereoSample& s) {
    StereoSampleT<S> out;
    out.id = s.id;
    auto cvt = [](const Tensor& t) {
        typename TensorT<S>::Array a(t.numel());
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = S(t.data()[i]);
        return TensorT<S>::from_array(t.shape(), std::move(a), false);
    };
    out.left = cvt(s.left);
    out.right = cvt(s.right);
    out.gt = DisparityMapT<S>{cvt(s.gt.data), s.gt.scale, s.gt.valid};
    return out;
}

// Synthetic random-dot scene: a textured background plane plus axis-aligned
// rectangles at constant disparity (larger disparity = nearer; nearer wins).
struct SceneSpec {
    struct Rect {
        int x = 0, y = 0, w = 0, h = 0;
        double disparity = 0.0;
    };
    int width = 0;
    int height = 0;
    double background_disparity = 0.0;
    std::vector<Rect> rects;
    std::uint64_t texture_seed = 0;
    double noise_sigma = 0.0;

    void validate() const;
};

// Exact-ground-truth stereogram. Occluded and out-of-frame pixels are marked
// invalid; for noise-free integer-disparity scenes, warp(right, gt, -1)
// reproduces the left image exactly on valid pixels.
StereoSample generate_stereogram(const SceneSpec& spec, std::uint64_t seed);

// KITTI 2015 disparity container: 16-bit PNG, disparity = stored/256,
// stored 0 means invalid.
DisparityMap read_kitti_disparity(const std::string& path);
void write_kitti_disparity(const std::string& path, const DisparityMap& map);

// Disparity file dispatch by extension (.pfm / .png).
DisparityMap read_disparity_file(const std::string& path);
void write_disparity_file(const std::string& path, const DisparityMap& map);

// Image <-> tensor conversions (quantize to 8 bit on save).
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

enum class DispFormat { Auto, Pfm, KittiPng };

// Dataset layout: <root>/left/<id>.png, right/<id>.png, disp/<id>.{pfm|png},
// plus an optional manifest.txt with one "<id> <left> <right> <disp>" line
// per sample.
void save_sample(const std::string& root, const StereoSample& sample,
                 DispFormat format = DispFormat::Pfm);
std::vector<StereoSample> load_dataset(const std::string& root,
                                       DispFormat format = DispFormat::Auto);
void write_manifest(const std::string& root, const std::vector<std::string>& ids,
                    DispFormat format);

}  // namespace crl
