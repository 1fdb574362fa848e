#include <png.h>

#include <cstring>
#include <vector>

#include "patchdiff/data.hpp"
#include "patchdiff/errors.hpp"

namespace patchdiff {

ImageTensor load_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  ImageTensor out(static_cast<int>(image.height), static_cast<int>(image.width), 3);
  auto values = out.values();
  for (std::size_t i = 0; i < buffer.size(); ++i) values[i] = to_model_value(buffer[i]);
  return out;
}

void save_png(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.channels() != 3) throw ShapeError("save_png expects 3 channels, got " + shape_string(img));
  std::vector<unsigned char> buffer(img.size());
  auto values = img.values();
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = to_display_byte(values[i]);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace patchdiff
