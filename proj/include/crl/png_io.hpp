#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crl {

// 8-bit RGB image, interleaved, top-down.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // width*height*3
};

// 16-bit single-channel image, top-down.
struct ImageU16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> data;
};

ImageU8 read_png8(const std::string& path);   // expands gray/palette to RGB
void write_png8(const std::string& path, const ImageU8& image);

// Strict 16-bit grayscale (the KITTI disparity container); any other bit
// depth or channel layout is a format error.
ImageU16 read_png16(const std::string& path);
void write_png16(const std::string& path, const ImageU16& image);

}  // namespace crl
