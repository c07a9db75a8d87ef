#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ckm/numerics/optim.hpp"
#include "ckm/numerics/tensor.hpp"

// Checkpoint container:
//
//   offset 0   8 bytes  magic "CKMCKPT\0"
//          8   u32 LE   format version
//         12   u32 LE   reserved (0)
//         16   u64 LE   manifest length in bytes
//         24   manifest JSON {"meta": {...}, "arrays": [{name, shape, dtype, offset, bytes}]}
//          …   payload: raw little-endian arrays, offsets relative to payload start

namespace ckm::nd {

enum class DType { kF64, kF32 };

struct ArrayRecord {
  std::string name;
  Shape shape;
  DType dtype = DType::kF64;
  std::vector<double> values;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArrayRecord> arrays;

  void add(std::string name, Shape shape, std::vector<double> values, DType dtype = DType::kF64);
  const ArrayRecord& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Adds every parameter as "<prefix><name>".
void store_params(Checkpoint& ckpt, const ParamStore& params, const std::string& prefix = "");
/// Copies values into the already-registered parameters; shapes must match.
void restore_params(const Checkpoint& ckpt, ParamStore& params, const std::string& prefix = "");

void store_optimizer(Checkpoint& ckpt, const ParamStore& params, const OptimizerState& state,
                     const std::string& prefix = "adam/");
void restore_optimizer(const Checkpoint& ckpt, const ParamStore& params, OptimizerState& state,
                       const std::string& prefix = "adam/");

}  // namespace ckm::nd
