#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ckm/env/ckm_map.hpp"

// 8-bit grayscale PNG interchange in the RadioMapSeer convention: gain maps
// store pixel 255 for the strongest level (47 dB loss) and 0 for the weakest
// (147 dB), i.e. pixel = round(255 * (1 - gray)); building maps store 255 on
// buildings and 0 elsewhere.

namespace ckm::env {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

struct ImportedSample {
  EnvironmentMap env;
  Ckm ckm;
};

/// Builds an environment and CKM from a (gain map, building map) pair; the BS
/// cell is supplied separately since the PNGs do not carry it.
ImportedSample import_png_pair(const std::filesystem::path& gain_png,
                               const std::filesystem::path& building_png, Cell bs,
                               double cell_size_m = 1.0);

void export_ckm_png(const std::filesystem::path& path, const Ckm& ckm);
void export_environment_png(const std::filesystem::path& path, const EnvironmentMap& env);

}  // namespace ckm::env
