#include "ckm/numerics/checkpoint.hpp"

#include <fstream>

#include "ckm/common/byte_io.hpp"

namespace ckm::nd {

namespace {

constexpr char kMagic[8] = {'C', 'K', 'M', 'C', 'K', 'P', 'T', '\0'};

const char* dtype_name(DType d) { return d == DType::kF64 ? "f64" : "f32"; }

DType parse_dtype(const std::string& s) {
  if (s == "f64") return DType::kF64;
  if (s == "f32") return DType::kF32;
  throw io::FormatError("unknown dtype " + s);
}

std::size_t elem_bytes(DType d) { return d == DType::kF64 ? 8 : 4; }

}  // namespace

void Checkpoint::add(std::string name, Shape shape, std::vector<double> values, DType dtype) {
  if (numel(shape) != values.size()) {
    throw ShapeError("checkpoint array " + name + " has " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  if (contains(name)) throw ContractError("duplicate checkpoint array " + name);
  arrays.push_back({std::move(name), std::move(shape), dtype, std::move(values)});
}

const ArrayRecord& Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw io::FormatError("checkpoint has no array named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["meta"] = ckpt.meta;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    const std::uint64_t bytes = a.values.size() * elem_bytes(a.dtype);
    manifest["arrays"].push_back({{"name", a.name},
                                  {"shape", a.shape},
                                  {"dtype", dtype_name(a.dtype)},
                                  {"offset", offset},
                                  {"bytes", bytes}});
    offset += bytes;
  }
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw io::FormatError("cannot write " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    io::write_le<std::uint32_t>(os, Checkpoint::kVersion);
    io::write_le<std::uint32_t>(os, 0);
    io::write_le<std::uint64_t>(os, text.size());
    io::write_bytes(os, text);
    for (const auto& a : ckpt.arrays) {
      for (double v : a.values) {
        if (a.dtype == DType::kF64) {
          io::write_le(os, v);
        } else {
          io::write_le(os, static_cast<float>(v));
        }
      }
    }
    if (!os) throw io::FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot open checkpoint " + path.string());
  const std::string magic = io::read_bytes(is, sizeof(kMagic));
  if (magic != std::string(kMagic, sizeof(kMagic))) {
    throw io::FormatError(path.string() + " is not a checkpoint");
  }
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  io::read_le<std::uint32_t>(is);
  const auto manifest_len = io::read_le<std::uint64_t>(is);
  const auto manifest = nlohmann::json::parse(io::read_bytes(is, manifest_len));

  Checkpoint ckpt;
  ckpt.meta = manifest.at("meta");
  const auto payload_start = is.tellg();
  for (const auto& entry : manifest.at("arrays")) {
    ArrayRecord rec;
    rec.name = entry.at("name").get<std::string>();
    rec.shape = entry.at("shape").get<Shape>();
    rec.dtype = parse_dtype(entry.at("dtype").get<std::string>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t n = numel(rec.shape);
    if (entry.at("bytes").get<std::uint64_t>() != n * elem_bytes(rec.dtype)) {
      throw io::FormatError("array " + rec.name + " has inconsistent byte count");
    }
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    rec.values.resize(n);
    for (auto& v : rec.values) {
      v = rec.dtype == DType::kF64 ? io::read_le<double>(is)
                                   : static_cast<double>(io::read_le<float>(is));
    }
    ckpt.arrays.push_back(std::move(rec));
  }
  return ckpt;
}

void store_params(Checkpoint& ckpt, const ParamStore& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.at(i);
    ckpt.add(prefix + params.name(i), t.shape(), {t.data().begin(), t.data().end()});
  }
}

void restore_params(const Checkpoint& ckpt, ParamStore& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = ckpt.find(prefix + params.name(i));
    auto& t = params.at(i);
    if (rec.shape != t.shape()) {
      throw ShapeError("checkpoint array " + rec.name + " has shape " + shape_str(rec.shape) +
                       ", model expects " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(rec.values.begin(), rec.values.end(), dst.begin());
  }
}

void store_optimizer(Checkpoint& ckpt, const ParamStore& params, const OptimizerState& state,
                     const std::string& prefix) {
  ckpt.meta["optimizer_step"] = state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.add(prefix + "m/" + params.name(i), params.at(i).shape(), state.m[i]);
    ckpt.add(prefix + "v/" + params.name(i), params.at(i).shape(), state.v[i]);
  }
}

void restore_optimizer(const Checkpoint& ckpt, const ParamStore& params, OptimizerState& state,
                       const std::string& prefix) {
  state.step = ckpt.meta.at("optimizer_step").get<std::size_t>();
  state.m.resize(params.size());
  state.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = ckpt.find(prefix + "m/" + params.name(i)).values;
    state.v[i] = ckpt.find(prefix + "v/" + params.name(i)).values;
  }
}

}  // namespace ckm::nd
