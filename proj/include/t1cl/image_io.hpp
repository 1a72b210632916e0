#pragma once

#include <iosfwd>
#include <string>

#include "t1cl/layer.hpp"

namespace t1cl {

// Binary PGM (P5, one channel) and PPM (P6, three channels), 8-bit only;
// bytes map to [0,1] by /255.  Malformed input throws io_error.
FeatureMap read_image(std::istream& in);
FeatureMap read_image_file(const std::string& path);

// Channels pick the format: 1 -> P5, 3 -> P6, anything else is refused.
// Values are clipped to [0,1] and rounded to bytes.
void write_image(std::ostream& out, const FeatureMap& img);
void write_image_file(const std::string& path, const FeatureMap& img);

}  // namespace t1cl
