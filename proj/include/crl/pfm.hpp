#pragma once

#include <string>
#include <vector>

namespace crl {

// Portable FloatMap image. data is stored top-down, row-major, channels
// interleaved (the file itself stores rows bottom-to-top).
struct PfmImage {
    int width = 0;
    int height = 0;
    int channels = 1;  // 1 ("Pf") or 3 ("PF")
    std::vector<float> data;

    float& at(int y, int x, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
    float at(int y, int x, int c = 0) const {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
};

PfmImage read_pfm(const std::string& path);
void write_pfm(const std::string& path, const PfmImage& image);

}  // namespace crl
