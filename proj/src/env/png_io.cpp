#include "ckm/env/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

#include "ckm/common/byte_io.hpp"

namespace ckm::env {

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw io::FormatError("cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw io::FormatError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height)
    throw std::invalid_argument("PNG pixel buffer does not match its dimensions");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw io::FormatError("cannot write PNG " + path.string() + ": " + image.message);
}

ImportedSample import_png_pair(const std::filesystem::path& gain_png,
                               const std::filesystem::path& building_png, Cell bs,
                               double cell_size_m) {
  const auto gain = read_png_gray(gain_png);
  const auto build = read_png_gray(building_png);
  if (gain.width != gain.height || build.width != gain.width || build.height != gain.height)
    throw io::FormatError("gain and building maps must be square and of equal size");
  const std::size_t side = gain.width;
  std::vector<std::uint8_t> occ(side * side);
  std::vector<double> gray(side * side);
  for (std::size_t i = 0; i < occ.size(); ++i) {
    occ[i] = build.pixels[i] >= 128 ? 1 : 0;
    gray[i] = occ[i] ? 1.0 : 1.0 - gain.pixels[i] / 255.0;
  }
  ImportedSample s{EnvironmentMap(side, cell_size_m, occ, 0), {}};
  if (!s.env.in_bounds(bs) || s.env.is_building(bs))
    throw PlacementError("BS cell " + bs.str() + " is not a free cell of the imported map");
  s.ckm = Ckm::from_gray(side, std::move(gray), std::move(occ), BsLocation::from_cell(bs, side),
                         gain_png.stem().string());
  return s;
}

void export_ckm_png(const std::filesystem::path& path, const Ckm& ckm) {
  GrayImage img{ckm.side(), ckm.side(), std::vector<std::uint8_t>(ckm.gray().size())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] =
        ckm.mask()[i] ? 0 : static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - ckm.gray()[i])));
  }
  write_png_gray(path, img);
}

void export_environment_png(const std::filesystem::path& path, const EnvironmentMap& env) {
  GrayImage img{env.side(), env.side(), std::vector<std::uint8_t>(env.occupancy().size())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = env.occupancy()[i] ? 255 : 0;
  write_png_gray(path, img);
}

}  // namespace ckm::env
