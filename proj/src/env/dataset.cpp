#include "ckm/env/dataset.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ckm/common/byte_io.hpp"

namespace ckm::env {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'K', 'M', 'R'};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RawGrid occupancy_grid(const EnvironmentMap& env) {
  RawGrid g;
  g.side = env.side();
  g.kind = GridKind::kOccupancy;
  g.mask = env.occupancy();
  g.values.assign(g.mask.begin(), g.mask.end());
  return g;
}

RawGrid ckm_grid(const Ckm& ckm) {
  RawGrid g;
  g.side = ckm.side();
  g.kind = GridKind::kCkmGray;
  g.values.assign(ckm.gray().begin(), ckm.gray().end());
  g.mask = ckm.mask();
  return g;
}

std::string bs_file(std::size_t b) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "bs_%03zu.bin", b);
  return buf;
}

json generator_json(const DatasetConfig& c) {
  return {{"building_count", {c.generator.building_count.first, c.generator.building_count.second}},
          {"building_size", {c.generator.building_size.first, c.generator.building_size.second}},
          {"pl0_db", c.dpm.pl0_db},
          {"path_loss_exponent", c.dpm.path_loss_exponent},
          {"diffraction_db_per_turn", c.dpm.diffraction_db_per_turn}};
}

DatasetConfig config_from_manifest(const json& m) {
  DatasetConfig c;
  c.env_count = m.at("environments").size();
  c.bs_per_env = m.at("bs_per_env").get<std::size_t>();
  c.seed = m.at("seed").get<std::uint64_t>();
  c.generator.side = m.at("side").get<std::size_t>();
  c.generator.cell_size_m = m.at("cell_size_m").get<double>();
  const auto& g = m.at("generator");
  c.generator.building_count = {g.at("building_count")[0], g.at("building_count")[1]};
  c.generator.building_size = {g.at("building_size")[0], g.at("building_size")[1]};
  c.dpm.pl0_db = g.at("pl0_db");
  c.dpm.path_loss_exponent = g.at("path_loss_exponent");
  c.dpm.diffraction_db_per_turn = g.at("diffraction_db_per_turn");
  return c;
}

}  // namespace

void write_raw_grid(const fs::path& path, const RawGrid& grid) {
  const std::size_t n = grid.side * grid.side;
  if (grid.values.size() != n || grid.mask.size() != n)
    throw std::invalid_argument("raw grid size does not match side " + std::to_string(grid.side));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FormatError("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  io::write_le<std::uint32_t>(os, kRawGridVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.side));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.kind));
  for (float v : grid.values) io::write_le(os, v);
  std::string bits((n + 7) / 8, '\0');
  for (std::size_t i = 0; i < n; ++i)
    if (grid.mask[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1u << (i % 8)));
  io::write_bytes(os, bits);
  if (!os) throw io::FormatError("write failed for " + path.string());
}

RawGrid read_raw_grid(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot open " + path.string());
  if (io::read_bytes(is, 4) != std::string(kMagic, 4))
    throw io::FormatError(path.string() + " is not a raw CKM grid");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kRawGridVersion)
    throw io::FormatError("unsupported grid version " + std::to_string(version));
  RawGrid g;
  g.side = io::read_le<std::uint32_t>(is);
  const auto kind = io::read_le<std::uint32_t>(is);
  if (kind > 1) throw io::FormatError("unknown grid kind " + std::to_string(kind));
  g.kind = static_cast<GridKind>(kind);
  const std::size_t n = g.side * g.side;
  g.values.resize(n);
  for (auto& v : g.values) v = io::read_le<float>(is);
  const auto bits = io::read_bytes(is, (n + 7) / 8);
  g.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    g.mask[i] = (static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1u;
  return g;
}

std::uint64_t environment_seed(std::uint64_t master_seed, std::size_t index) {
  return splitmix64(master_seed ^ splitmix64(index));
}

std::vector<Cell> sample_bs_cells(const EnvironmentMap& env, std::size_t count,
                                  std::uint64_t seed) {
  auto cells = env.free_cells();
  if (cells.size() < count) {
    throw GenerationError("environment has " + std::to_string(cells.size()) +
                          " free cells, cannot place " + std::to_string(count) + " BSs");
  }
  std::uint64_t state = seed;
  for (std::size_t i = 0; i < count; ++i) {
    state = splitmix64(state);
    const std::size_t j = i + static_cast<std::size_t>(state % (cells.size() - i));
    std::swap(cells[i], cells[j]);
  }
  cells.resize(count);
  return cells;
}

std::size_t validation_count(std::size_t env_count) { return (env_count + 9) / 10; }

std::string environment_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "env_%04zu", index);
  return buf;
}

json build_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  if (config.env_count == 0) throw GenerationError("dataset needs at least one environment");
  fs::create_directories(out_dir);
  const std::size_t n = config.env_count;
  std::vector<json> env_entries(n);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const auto seed = environment_seed(config.seed, i);
      const auto env = generate_environment(seed, config.generator);
      const auto id = environment_id(i);
      const auto cells = sample_bs_cells(env, config.bs_per_env, seed);
      write_raw_grid(out_dir / id / "occupancy.bin", occupancy_grid(env));
      const PropagationGraph graph(env);
      json bs_list = json::array();
      for (std::size_t b = 0; b < cells.size(); ++b) {
        const auto loc = BsLocation::from_cell(cells[b], env.side());
        const auto ckm = dpm_channel_gain(graph, loc, config.dpm, id);
        write_raw_grid(out_dir / id / bs_file(b), ckm_grid(ckm));
        bs_list.push_back({{"index", b},
                           {"row", loc.cell.row},
                           {"col", loc.cell.col},
                           {"theta", loc.theta},
                           {"radius", loc.radius},
                           {"file", id + "/" + bs_file(b)}});
      }
      env_entries[i] = {{"id", id},
                        {"seed", seed},
                        {"occupancy_fraction", env.occupancy_fraction()},
                        {"occupancy_file", id + "/occupancy.bin"},
                        {"bs", std::move(bs_list)}};
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw GenerationError(environment_id(i) + ": " + errors[i]);

  const std::size_t n_val = validation_count(n);
  json train = json::array(), validation = json::array();
  for (std::size_t i = 0; i < n; ++i)
    (i + n_val >= n ? validation : train).push_back(environment_id(i));

  json manifest = {{"format", "ckm-dataset"},
                   {"version", 1},
                   {"side", config.generator.side},
                   {"cell_size_m", config.generator.cell_size_m},
                   {"seed", config.seed},
                   {"bs_per_env", config.bs_per_env},
                   {"generator", generator_json(config)},
                   {"split", {{"train", train}, {"validation", validation}}},
                   {"environments", env_entries}};
  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw io::FormatError("cannot write manifest in " + out_dir.string());
  os << manifest.dump(2) << '\n';
  return manifest;
}

EnvironmentRecord synthesize_environment(const DatasetConfig& config, std::size_t index) {
  const auto seed = environment_seed(config.seed, index);
  EnvironmentRecord rec;
  rec.id = environment_id(index);
  rec.map = generate_environment(seed, config.generator);
  const auto cells = sample_bs_cells(rec.map, config.bs_per_env, seed);
  const PropagationGraph graph(rec.map);
  for (const auto& cell : cells) {
    const auto loc = BsLocation::from_cell(cell, rec.map.side());
    const auto ckm = dpm_channel_gain(graph, loc, config.dpm, rec.id);
    std::vector<double> gray(ckm.gray().size());
    for (std::size_t k = 0; k < gray.size(); ++k) gray[k] = static_cast<float>(ckm.gray()[k]);
    rec.ckms.push_back(Ckm::from_gray(rec.map.side(), std::move(gray), ckm.mask(), loc, rec.id));
  }
  return rec;
}

Dataset Dataset::load(const fs::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw io::FormatError("no manifest.json under " + root.string());
  Dataset ds;
  ds.manifest_ = json::parse(is);
  if (ds.manifest_.value("format", "") != "ckm-dataset")
    throw io::FormatError(root.string() + " is not a CKM dataset");
  ds.side_ = ds.manifest_.at("side").get<std::size_t>();
  const double cell_size = ds.manifest_.at("cell_size_m").get<double>();

  for (const auto& e : ds.manifest_.at("environments")) {
    EnvironmentRecord rec;
    rec.id = e.at("id").get<std::string>();
    const auto occ = read_raw_grid(root / e.at("occupancy_file").get<std::string>());
    if (occ.side != ds.side_ || occ.kind != GridKind::kOccupancy)
      throw io::FormatError("bad occupancy grid for " + rec.id);
    rec.map = EnvironmentMap(ds.side_, cell_size, occ.mask, e.at("seed").get<std::uint64_t>());
    for (const auto& b : e.at("bs")) {
      const auto g = read_raw_grid(root / b.at("file").get<std::string>());
      if (g.side != ds.side_ || g.kind != GridKind::kCkmGray)
        throw io::FormatError("bad CKM grid " + b.at("file").get<std::string>());
      const auto loc = BsLocation::from_cell({b.at("row"), b.at("col")}, ds.side_);
      rec.ckms.push_back(Ckm::from_gray(ds.side_, {g.values.begin(), g.values.end()}, g.mask, loc,
                                        rec.id));
    }
    ds.envs_.push_back(std::move(rec));
  }
  const auto& split = ds.manifest_.at("split");
  for (std::size_t i = 0; i < ds.envs_.size(); ++i) {
    const auto& id = ds.envs_[i].id;
    const bool val = std::find(split.at("validation").begin(), split.at("validation").end(), id) !=
                     split.at("validation").end();
    (val ? ds.validation_ : ds.train_).push_back(i);
  }
  return ds;
}

const EnvironmentRecord& Dataset::find(const std::string& env_id) const {
  for (const auto& e : envs_)
    if (e.id == env_id) return e;
  throw std::out_of_range("unknown environment " + env_id);
}

std::size_t verify_regeneration(const fs::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw io::FormatError("no manifest.json under " + root.string());
  const auto manifest = json::parse(is);
  const auto config = config_from_manifest(manifest);

  auto same = [](const RawGrid& a, const RawGrid& b) {
    return a.side == b.side && a.kind == b.kind && a.mask == b.mask &&
           a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
  };

  std::size_t mismatches = 0;
  for (const auto& e : manifest.at("environments")) {
    const auto seed = e.at("seed").get<std::uint64_t>();
    const auto env = generate_environment(seed, config.generator);
    if (!same(occupancy_grid(env), read_raw_grid(root / e.at("occupancy_file").get<std::string>())))
      ++mismatches;
    const PropagationGraph graph(env);
    for (const auto& b : e.at("bs")) {
      const auto loc = BsLocation::from_cell({b.at("row"), b.at("col")}, env.side());
      const auto ckm = dpm_channel_gain(graph, loc, config.dpm, e.at("id").get<std::string>());
      if (!same(ckm_grid(ckm), read_raw_grid(root / b.at("file").get<std::string>())))
        ++mismatches;
    }
  }
  return mismatches;
}

}  // namespace ckm::env
