#include "crl/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "crl/common.hpp"

namespace crl {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

void open_reader(PngReader& r, std::FILE* f, const std::string& path) {
    png_byte header[8];
    if (std::fread(header, 1, 8, f) != 8 || png_sig_cmp(header, 0, 8))
        throw FormatError("PNG: bad signature in " + path);
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw FormatError("PNG: cannot create read struct");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw FormatError("PNG: cannot create info struct");
    if (setjmp(png_jmpbuf(r.png))) throw FormatError("PNG: decode error in " + path);
    png_init_io(r.png, f);
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);
}

}  // namespace

ImageU8 read_png8(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("PNG: cannot open " + path);
    PngReader r;
    open_reader(r, f.get(), path);
    if (setjmp(png_jmpbuf(r.png))) throw FormatError("PNG: decode error in " + path);

    png_set_expand(r.png);
    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);

    ImageU8 img;
    img.width = int(png_get_image_width(r.png, r.info));
    img.height = int(png_get_image_height(r.png, r.info));
    if (png_get_channels(r.png, r.info) != 3)
        throw FormatError("PNG: unexpected channel count in " + path);
    img.data.resize(std::size_t(img.width) * img.height * 3);
    std::vector<png_bytep> rows(std::size_t(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[std::size_t(y)] = img.data.data() + std::size_t(y) * img.width * 3;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

void write_png8(const std::string& path, const ImageU8& image) {
    if (image.data.size() != std::size_t(image.width) * image.height * 3)
        throw FormatError("PNG: image data does not match dimensions");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError("PNG: cannot open " + path + " for writing");
    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) throw FormatError("PNG: cannot create write struct");
    w.info = png_create_info_struct(w.png);
    if (!w.info) throw FormatError("PNG: cannot create info struct");
    if (setjmp(png_jmpbuf(w.png))) throw FormatError("PNG: encode error for " + path);
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, png_uint_32(image.width), png_uint_32(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    for (int y = 0; y < image.height; ++y)
        png_write_row(w.png, const_cast<png_bytep>(image.data.data() +
                                                   std::size_t(y) * image.width * 3));
    png_write_end(w.png, nullptr);
}

ImageU16 read_png16(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("PNG: cannot open " + path);
    PngReader r;
    open_reader(r, f.get(), path);
    if (setjmp(png_jmpbuf(r.png))) throw FormatError("PNG: decode error in " + path);

    const int depth = png_get_bit_depth(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);
    if (depth != 16)
        throw FormatError("PNG: expected 16-bit depth, got " + std::to_string(depth) + " in " +
                          path);
    if (color != PNG_COLOR_TYPE_GRAY)
        throw FormatError("PNG: expected grayscale in " + path);
    png_set_swap(r.png);  // PNG stores big-endian samples
    png_read_update_info(r.png, r.info);

    ImageU16 img;
    img.width = int(png_get_image_width(r.png, r.info));
    img.height = int(png_get_image_height(r.png, r.info));
    img.data.resize(std::size_t(img.width) * img.height);
    std::vector<png_bytep> rows(std::size_t(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[std::size_t(y)] =
            reinterpret_cast<png_bytep>(img.data.data() + std::size_t(y) * img.width);
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

void write_png16(const std::string& path, const ImageU16& image) {
    if (image.data.size() != std::size_t(image.width) * image.height)
        throw FormatError("PNG: image data does not match dimensions");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError("PNG: cannot open " + path + " for writing");
    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) throw FormatError("PNG: cannot create write struct");
    w.info = png_create_info_struct(w.png);
    if (!w.info) throw FormatError("PNG: cannot create info struct");
    if (setjmp(png_jmpbuf(w.png))) throw FormatError("PNG: encode error for " + path);
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, png_uint_32(image.width), png_uint_32(image.height), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_set_swap(w.png);
    for (int y = 0; y < image.height; ++y)
        png_write_row(w.png, reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(
                                 image.data.data() + std::size_t(y) * image.width)));
    png_write_end(w.png, nullptr);
}

}  // namespace crl
