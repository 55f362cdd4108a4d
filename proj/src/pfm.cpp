#include "crl/pfm.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crl/common.hpp"

namespace crl {

namespace {

static_assert(std::endian::native == std::endian::little,
              "PFM codec assumes a little-endian host");

// Header tokens are separated by single whitespace characters; '#' starts a
// comment running to end of line.
std::string next_token(std::istream& is, const char* field) {
    std::string tok;
    int ch;
    while ((ch = is.peek()) != EOF) {
        if (std::isspace(ch)) {
            is.get();
        } else if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else {
            break;
        }
    }
    while ((ch = is.peek()) != EOF && !std::isspace(ch)) tok.push_back(char(is.get()));
    if (tok.empty()) throw FormatError(std::string("PFM: missing ") + field);
    return tok;
}

void byteswap_floats(std::vector<float>& v) {
    for (float& f : v) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&f, &u, 4);
    }
}

}  // namespace

PfmImage read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("PFM: cannot open " + path);

    const std::string magic = next_token(is, "magic");
    PfmImage img;
    if (magic == "Pf")
        img.channels = 1;
    else if (magic == "PF")
        img.channels = 3;
    else
        throw FormatError("PFM: bad magic '" + magic + "' in " + path);

    try {
        img.width = std::stoi(next_token(is, "width"));
        img.height = std::stoi(next_token(is, "height"));
    } catch (const std::exception&) {
        throw FormatError("PFM: bad dimensions line in " + path);
    }
    if (img.width <= 0 || img.height <= 0)
        throw FormatError("PFM: non-positive dimensions in " + path);

    double scale = 0.0;
    try {
        scale = std::stod(next_token(is, "scale"));
    } catch (const std::exception&) {
        throw FormatError("PFM: bad scale line in " + path);
    }
    if (scale == 0.0) throw FormatError("PFM: zero scale in " + path);
    const bool little_endian = scale < 0.0;
    is.get();  // single whitespace after the scale line

    const std::size_t count = std::size_t(img.width) * img.height * img.channels;
    img.data.resize(count);
    // File rows run bottom-to-top; flip into top-down memory order.
    const std::size_t row_elems = std::size_t(img.width) * img.channels;
    for (int y = img.height - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char*>(img.data.data() + std::size_t(y) * row_elems),
                std::streamsize(row_elems * sizeof(float)));
        if (!is) throw FormatError("PFM: truncated payload in " + path);
    }
    if (!little_endian) byteswap_floats(img.data);
    return img;
}

void write_pfm(const std::string& path, const PfmImage& image) {
    if (image.channels != 1 && image.channels != 3)
        throw FormatError("PFM: channels must be 1 or 3");
    if (image.data.size() != std::size_t(image.width) * image.height * image.channels)
        throw FormatError("PFM: data size does not match dimensions");

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("PFM: cannot open " + path + " for writing");
    os << (image.channels == 1 ? "Pf" : "PF") << "\n"
       << image.width << " " << image.height << "\n"
       << "-1.0\n";
    const std::size_t row_elems = std::size_t(image.width) * image.channels;
    for (int y = image.height - 1; y >= 0; --y)
        os.write(reinterpret_cast<const char*>(image.data.data() + std::size_t(y) * row_elems),
                 std::streamsize(row_elems * sizeof(float)));
    if (!os) throw FormatError("PFM: short write to " + path);
}

}  // namespace crl
