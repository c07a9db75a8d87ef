#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ckm/env/ckm_map.hpp"
#include "ckm/env/environment.hpp"

// On-disk dataset: <root>/manifest.json plus one raw grid per environment
// (occupancy) and per CKM (gray). Raw grid layout:
//
//   offset 0   4 bytes  magic "CKMR"
//          4   u32 LE   format version
//          8   u32 LE   side L
//         12   u32 LE   kind (0 = occupancy, 1 = CKM gray)
//         16   L*L f32 LE values, row-major
//          …   ceil(L*L/8) bytes building mask, bit i of the stream = cell i, LSB first

namespace ckm::env {

enum class GridKind : std::uint32_t { kOccupancy = 0, kCkmGray = 1 };

struct RawGrid {
  std::size_t side = 0;
  GridKind kind = GridKind::kCkmGray;
  std::vector<float> values;
  std::vector<std::uint8_t> mask;
};

inline constexpr std::uint32_t kRawGridVersion = 1;

void write_raw_grid(const std::filesystem::path& path, const RawGrid& grid);
RawGrid read_raw_grid(const std::filesystem::path& path);

struct DatasetConfig {
  std::size_t env_count = 10;
  std::size_t bs_per_env = 16;
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  DpmParams dpm;
};

/// Seed of environment i, derived from the master seed.
std::uint64_t environment_seed(std::uint64_t master_seed, std::size_t index);
/// Distinct free cells, uniformly sampled; throws GenerationError if too few.
std::vector<Cell> sample_bs_cells(const EnvironmentMap& env, std::size_t count, std::uint64_t seed);
/// ceil(10%) of the environments (the last ones) are held out.
std::size_t validation_count(std::size_t env_count);
std::string environment_id(std::size_t index);

/// Writes the dataset under out_dir and returns the manifest.
nlohmann::json build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

struct EnvironmentRecord {
  std::string id;
  EnvironmentMap map;
  std::vector<Ckm> ckms;  // one per BS, in manifest order
};

/// Environment `index` of a dataset built from `config`, generated in memory.
/// Gray values pass through the same 32-bit storage rounding as the files, so
/// the record equals what Dataset::load returns for that environment.
EnvironmentRecord synthesize_environment(const DatasetConfig& config, std::size_t index);

class Dataset {
 public:
  static Dataset load(const std::filesystem::path& root);

  const nlohmann::json& manifest() const { return manifest_; }
  std::size_t side() const { return side_; }
  const std::vector<EnvironmentRecord>& environments() const { return envs_; }
  const std::vector<std::size_t>& train_indices() const { return train_; }
  const std::vector<std::size_t>& validation_indices() const { return validation_; }
  const EnvironmentRecord& find(const std::string& env_id) const;

 private:
  nlohmann::json manifest_;
  std::size_t side_ = 0;
  std::vector<EnvironmentRecord> envs_;
  std::vector<std::size_t> train_, validation_;
};

/// Re-runs generation from the manifest seeds and compares with the stored
/// raw grids byte for byte. Returns the number of mismatching files.
std::size_t verify_regeneration(const std::filesystem::path& root);

}  // namespace ckm::env
