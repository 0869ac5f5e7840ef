#include "schoolcount/png_io.hpp"

#include <png.h>

#include <cstring>

#include "schoolcount/error.hpp"

namespace schoolcount {

RawImage read_png(const std::filesystem::path& file) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, file.c_str())) {
    throw IoError("imagedata", "cannot read PNG " + file.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RawImage out(static_cast<int>(img.height), static_cast<int>(img.width));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("imagedata", "cannot decode PNG " + file.string() + ": " + img.message);
  }
  return out;
}

void write_png(const std::filesystem::path& file, const RawImage& image) {
  if (image.empty()) throw ValidationError("imagedata", "cannot write empty image " + file.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, file.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("imagedata", "cannot write PNG " + file.string() + ": " + img.message);
  }
}

}  // namespace schoolcount
