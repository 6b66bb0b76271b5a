#include "clvae/image_io.hpp"

#include <png.h>

#include <cstring>

#include "clvae/errors.hpp"

namespace clvae {

RawImage read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw DataError("read_png: channels must be 1 or 3");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  RawImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = channels;
  out.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: channels must be 1 or 3");
  if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw DataError("write_png: buffer size does not match dimensions");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace clvae
