#include "t1cl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "t1cl/tensor.hpp"

namespace t1cl {

namespace {

// Next whitespace-separated token, skipping '#' comments to end of line.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw io_error("truncated image header");
    return tok;
}

std::size_t parse_dim(const std::string& tok) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(tok, &pos);
    } catch (const std::exception&) {
        throw io_error("bad number in image header: " + tok);
    }
    if (pos != tok.size() || v == 0) throw io_error("bad number in image header: " + tok);
    return v;
}

}  // namespace

FeatureMap read_image(std::istream& in) {
    const std::string magic = next_token(in);
    std::size_t channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw io_error("unsupported image magic: " + magic);

    const std::size_t width = parse_dim(next_token(in));
    const std::size_t height = parse_dim(next_token(in));
    const std::size_t maxval = parse_dim(next_token(in));
    if (maxval != 255) throw io_error("only 8-bit images are supported");
    // The header ends with exactly one whitespace byte before the raster.

    FeatureMap img = FeatureMap::zeros(height, width, channels);
    const std::size_t count = height * width * channels;
    std::vector<unsigned char> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) throw io_error("truncated image raster");
    for (std::size_t t = 0; t < count; ++t)
        img.data.data[t] = static_cast<double>(raw[t]) / 255.0;
    return img;
}

FeatureMap read_image_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path);
    return read_image(in);
}

void write_image(std::ostream& out, const FeatureMap& img) {
    const char* magic;
    if (img.channels == 1)
        magic = "P5";
    else if (img.channels == 3)
        magic = "P6";
    else
        throw std::invalid_argument("images must have 1 or 3 channels");

    out << magic << "\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.data.size());
    for (std::size_t t = 0; t < raw.size(); ++t) {
        const double v = std::clamp(img.data.data[t], 0.0, 1.0);
        raw[t] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw io_error("failed to write image");
}

void write_image_file(const std::string& path, const FeatureMap& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    write_image(out, img);
}

}  // namespace t1cl
