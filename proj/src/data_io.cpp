#include "crl/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "crl/pfm.hpp"

namespace fs = std::filesystem;

namespace crl {

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw UsageError("scene: non-positive dimensions");
    auto check_d = [&](double d) {
        if (d < 0.0 || d >= width / 4.0)
            throw UsageError("scene: disparity " + std::to_string(d) +
                             " outside [0, width/4) for width " + std::to_string(width));
    };
    check_d(background_disparity);
    for (const auto& r : rects) {
        check_d(r.disparity);
        if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || r.x + r.w > width ||
            r.y + r.h > height)
            throw UsageError("scene: rectangle outside the frame");
    }
}

namespace {

// Per-pixel uniform noise smoothed once with a 3x3 box, so every local patch
// is unique and matches unambiguously.
std::vector<double> make_texture(int h, int w, Rng& rng) {
    std::vector<double> raw(std::size_t(h) * w), smooth(std::size_t(h) * w);
    for (auto& v : raw) v = rng.uniform();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            int count = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += raw[std::size_t(yy) * w + xx];
                    ++count;
                }
            smooth[std::size_t(y) * w + x] = acc / count;
        }
    return smooth;
}

double sample_linear(const std::vector<double>& row, int width, double x) {
    const double xc = std::min(std::max(x, 0.0), double(width - 1));
    const int x0 = int(std::floor(xc));
    const int x1 = std::min(x0 + 1, width - 1);
    const double f = xc - x0;
    return (1.0 - f) * row[std::size_t(x0)] + f * row[std::size_t(x1)];
}

}  // namespace

StereoSample generate_stereogram(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int H = spec.height, W = spec.width;

    double max_d = spec.background_disparity;
    for (const auto& r : spec.rects) max_d = std::max(max_d, r.disparity);
    const int We = W + int(std::ceil(max_d)) + 2;  // extra columns feed the right view only

    // Left-view and right-view disparity of the visible surface; nearer
    // (larger disparity) wins. A rectangle [x0, x0+w) at disparity d spans
    // [x0-d, x0+w-d) in the right view.
    std::vector<double> d_left(std::size_t(H) * W, spec.background_disparity);
    std::vector<double> d_right(std::size_t(H) * W, spec.background_disparity);
    for (const auto& r : spec.rects)
        for (int y = r.y; y < r.y + r.h; ++y) {
            for (int x = r.x; x < r.x + r.w; ++x) {
                double& dl = d_left[std::size_t(y) * W + x];
                dl = std::max(dl, r.disparity);
            }
            for (int x = 0; x < W; ++x) {
                if (x >= r.x - r.disparity && x < r.x + r.w - r.disparity) {
                    double& dr = d_right[std::size_t(y) * W + x];
                    dr = std::max(dr, r.disparity);
                }
            }
        }

    Rng tex_rng(spec.texture_seed ? spec.texture_seed : seed);
    Tensor left = Tensor::zeros({1, 3, H, W});
    Tensor right = Tensor::zeros({1, 3, H, W});
    for (int c = 0; c < 3; ++c) {
        Rng channel_rng = tex_rng.stream(std::uint64_t(c) + 11);
        const std::vector<double> tex = make_texture(H, We, channel_rng);
        std::vector<double> row(std::size_t(We));
        for (int y = 0; y < H; ++y) {
            std::copy_n(tex.begin() + std::size_t(y) * We, std::size_t(We), row.begin());
            for (int x = 0; x < W; ++x) left.at(0, c, y, x) = row[std::size_t(x)];
            for (int x = 0; x < W; ++x) {
                const double src = x + d_right[std::size_t(y) * W + x];
                right.at(0, c, y, x) = sample_linear(row, We, src);
            }
        }
    }

    // Left pixel (x,y) is valid iff its right-view position is in frame and
    // the surface visible there is its own (both bilinear support columns).
    std::vector<std::uint8_t> valid(std::size_t(H) * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = d_left[std::size_t(y) * W + x];
            const double xr = x - d;
            if (xr < 0.0) continue;
            const int x0 = int(std::floor(xr));
            const int x1 = std::min(x0 + 1, W - 1);
            const bool visible =
                std::abs(d_right[std::size_t(y) * W + x0] - d) < 1e-9 &&
                (xr == double(x0) || std::abs(d_right[std::size_t(y) * W + x1] - d) < 1e-9);
            if (visible) valid[std::size_t(y) * W + x] = 1;
        }

    if (spec.noise_sigma > 0.0) {
        Rng noise_rng = Rng(seed).stream(99);
        for (Tensor* img : {&left, &right})
            for (Eigen::Index i = 0; i < img->data().size(); ++i)
                img->data()[i] = std::min(
                    1.0, std::max(0.0, img->data()[i] + noise_rng.normal(0, spec.noise_sigma)));
    }

    StereoSample s;
    s.left = std::move(left);
    s.right = std::move(right);
    Tensor gt = Tensor::zeros({1, 1, H, W});
    for (std::size_t i = 0; i < d_left.size(); ++i) gt.data()[Eigen::Index(i)] = d_left[i];
    s.gt = DisparityMap{std::move(gt), 0, std::move(valid)};
    return s;
}

DisparityMap read_kitti_disparity(const std::string& path) {
    const ImageU16 img = read_png16(path);
    Tensor d = Tensor::zeros({1, 1, img.height, img.width});
    std::vector<std::uint8_t> valid(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        valid[i] = img.data[i] != 0;
        d.data()[Eigen::Index(i)] = double(img.data[i]) / 256.0;
    }
    return DisparityMap{std::move(d), 0, std::move(valid)};
}

void write_kitti_disparity(const std::string& path, const DisparityMap& map) {
    const Shape4 s = map.data.shape();
    ImageU16 img;
    img.width = s.w;
    img.height = s.h;
    img.data.resize(std::size_t(s.h) * s.w);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        if (!map.all_valid() && !map.valid[i]) {
            img.data[i] = 0;
            continue;
        }
        const double v = std::round(map.data.data()[Eigen::Index(i)] * 256.0);
        img.data[i] = std::uint16_t(std::min(65535.0, std::max(0.0, v)));
    }
    write_png16(path, img);
}

DisparityMap read_disparity_file(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".pfm") {
        const PfmImage img = read_pfm(path);
        if (img.channels != 1)
            throw FormatError("disparity PFM must have 1 channel: " + path);
        Tensor d = Tensor::zeros({1, 1, img.height, img.width});
        for (std::size_t i = 0; i < img.data.size(); ++i)
            d.data()[Eigen::Index(i)] = double(img.data[i]);
        // Non-finite values (FlyingThings uses inf for unknown) become invalid.
        std::vector<std::uint8_t> valid(img.data.size(), 1);
        bool any_invalid = false;
        for (std::size_t i = 0; i < img.data.size(); ++i)
            if (!std::isfinite(img.data[i])) {
                valid[i] = 0;
                d.data()[Eigen::Index(i)] = 0.0;
                any_invalid = true;
            }
        if (!any_invalid) valid.clear();
        return DisparityMap{std::move(d), 0, std::move(valid)};
    }
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".png")
        return read_kitti_disparity(path);
    throw FormatError("unknown disparity format (want .pfm or .png): " + path);
}

void write_disparity_file(const std::string& path, const DisparityMap& map) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".pfm") {
        const Shape4 s = map.data.shape();
        PfmImage img;
        img.width = s.w;
        img.height = s.h;
        img.channels = 1;
        img.data.resize(std::size_t(s.h) * s.w);
        for (std::size_t i = 0; i < img.data.size(); ++i)
            img.data[i] = float(map.data.data()[Eigen::Index(i)]);
        write_pfm(path, img);
        return;
    }
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") {
        write_kitti_disparity(path, map);
        return;
    }
    throw FormatError("unknown disparity format (want .pfm or .png): " + path);
}

Tensor image_to_tensor(const ImageU8& img) {
    Tensor t = Tensor::zeros({1, 3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(0, c, y, x) =
                    img.data[(std::size_t(y) * img.width + x) * 3 + std::size_t(c)] / 255.0;
    return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
    const Shape4 s = t.shape();
    if (s.n != 1 || s.c != 3) throw UsageError("tensor_to_image wants a 1x3xHxW tensor");
    ImageU8 img;
    img.width = s.w;
    img.height = s.h;
    img.data.resize(std::size_t(s.h) * s.w * 3);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::round(t.at(0, c, y, x) * 255.0);
                img.data[(std::size_t(y) * s.w + x) * 3 + std::size_t(c)] =
                    std::uint8_t(std::min(255.0, std::max(0.0, v)));
            }
    return img;
}

void save_sample(const std::string& root, const StereoSample& sample, DispFormat format) {
    for (const char* sub : {"left", "right", "disp"}) fs::create_directories(fs::path(root) / sub);
    write_png8((fs::path(root) / "left" / (sample.id + ".png")).string(),
               tensor_to_image(sample.left));
    write_png8((fs::path(root) / "right" / (sample.id + ".png")).string(),
               tensor_to_image(sample.right));
    const char* ext = format == DispFormat::KittiPng ? ".png" : ".pfm";
    write_disparity_file((fs::path(root) / "disp" / (sample.id + ext)).string(), sample.gt);
}

void write_manifest(const std::string& root, const std::vector<std::string>& ids,
                    DispFormat format) {
    std::ofstream os(fs::path(root) / "manifest.txt");
    if (!os) throw FormatError("cannot write manifest under " + root);
    const char* ext = format == DispFormat::KittiPng ? ".png" : ".pfm";
    for (const auto& id : ids)
        os << id << " left/" << id << ".png right/" << id << ".png disp/" << id << ext << "\n";
}

std::vector<StereoSample> load_dataset(const std::string& root, DispFormat format) {
    const fs::path left_dir = fs::path(root) / "left";
    if (!fs::exists(left_dir)) throw IngestError("dataset has no left/ directory: " + root);

    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(left_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());

    std::vector<std::string> incomplete;
    std::vector<StereoSample> samples;
    for (const auto& id : ids) {
        const fs::path right = fs::path(root) / "right" / (id + ".png");
        fs::path disp;
        if (format == DispFormat::Pfm)
            disp = fs::path(root) / "disp" / (id + ".pfm");
        else if (format == DispFormat::KittiPng)
            disp = fs::path(root) / "disp" / (id + ".png");
        else {
            disp = fs::path(root) / "disp" / (id + ".pfm");
            if (!fs::exists(disp)) disp = fs::path(root) / "disp" / (id + ".png");
        }
        if (!fs::exists(right) || !fs::exists(disp)) {
            incomplete.push_back(id);
            continue;
        }
        StereoSample s;
        s.id = id;
        s.left = image_to_tensor(read_png8((left_dir / (id + ".png")).string()));
        s.right = image_to_tensor(read_png8(right.string()));
        s.gt = read_disparity_file(disp.string());
        if (!(s.left.shape() == s.right.shape()) ||
            s.gt.data.shape().h != s.left.shape().h || s.gt.data.shape().w != s.left.shape().w)
            throw IngestError("sample '" + id + "' has mismatched dimensions");
        samples.push_back(std::move(s));
    }
    if (!incomplete.empty()) {
        std::string msg = "incomplete sample(s):";
        for (const auto& id : incomplete) msg += " " + id;
        throw IngestError(msg);
    }
    return samples;
}

}  // namespace crl
