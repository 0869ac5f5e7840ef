#pragma once

#include <filesystem>

#include "schoolcount/imagedata.hpp"

namespace schoolcount {

// 8-bit RGB PNG. Grey and RGBA inputs are converted to RGB on read.
RawImage read_png(const std::filesystem::path& file);
void write_png(const std::filesystem::path& file, const RawImage& image);

}  // namespace schoolcount
