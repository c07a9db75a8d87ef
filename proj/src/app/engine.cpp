#include "ckm/app/engine.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>

#include "ckm/baselines/distance.hpp"
#include "ckm/common/byte_io.hpp"
#include "ckm/env/png_io.hpp"

namespace ckm::app {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path resolve_output(const fs::path& path) {
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("CKM_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int s = 18; s >= 0; s -= 6) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4) throw UsageError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = value(c);
      if (d < 0 || pad) throw UsageError("invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

json encode_f32(std::span<const double> values, const std::vector<std::size_t>& shape) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 4);
  for (double v : values) {
    const auto f = io::byteswap_if_big(static_cast<float>(v));
    const auto* p = reinterpret_cast<const std::uint8_t*>(&f);
    bytes.insert(bytes.end(), p, p + 4);
  }
  return {{"dtype", "f32le"}, {"shape", shape}, {"data", base64_encode(bytes)}};
}

std::vector<float> decode_f32(const json& array) {
  if (array.value("dtype", "") != "f32le") throw UsageError("array dtype must be f32le");
  const auto bytes = base64_decode(array.at("data").get<std::string>());
  std::size_t n = 1;
  for (const auto& d : array.at("shape")) n *= d.get<std::size_t>();
  if (bytes.size() != 4 * n) throw UsageError("array payload does not match its shape");
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(&out[i], bytes.data() + 4 * i, 4);
    out[i] = io::byteswap_if_big(out[i]);
  }
  return out;
}

json encode_u8(std::span<const std::uint8_t> values, const std::vector<std::size_t>& shape) {
  return {{"dtype", "u8"}, {"shape", shape}, {"data", base64_encode(values)}};
}

Method parse_method(const std::string& name) {
  if (name == "model") return Method::kModel;
  if (name == "distance") return Method::kDistance;
  if (name == "regression") return Method::kRegression;
  if (name == "ground-truth") return Method::kGroundTruth;
  throw UsageError("unknown method '" + name + "' (model, distance, regression, ground-truth)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kModel: return "model";
    case Method::kDistance: return "distance";
    case Method::kRegression: return "regression";
    case Method::kGroundTruth: return "ground-truth";
  }
  return "?";
}

std::vector<std::size_t> default_sources(const env::EnvironmentRecord& rec, std::size_t count) {
  if (count == 0) throw UsageError("at least one source BS is required");
  if (count > rec.ckms.size())
    throw DataError("environment " + rec.id + " has " + std::to_string(rec.ckms.size()) +
                    " BSs, " + std::to_string(count) + " sources requested");
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = i;
  return out;
}

env::BsLocation target_location(const env::EnvironmentMap& map, env::Cell cell) {
  if (!map.in_bounds(cell)) throw env::RangeError("cell " + cell.str() + " is outside the map");
  if (map.is_building(cell)) throw env::PlacementError("cell " + cell.str() + " is inside a building");
  return env::BsLocation::from_cell(cell, map.side());
}

Engine::Engine(std::shared_ptr<const env::Dataset> data) : data_(std::move(data)) {
  if (!data_) throw nd::ContractError("engine needs a dataset");
}

const env::EnvironmentRecord& Engine::environment(const std::string& id) const {
  try {
    return data_->find(id);
  } catch (const std::out_of_range&) {
    throw DataError("unknown environment " + id);
  }
}

void Engine::load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw DataError("no checkpoint at " + checkpoint.string());
  auto m = denoiser::CkmModel::load(checkpoint);
  if (m->side() != data_->side())
    throw DataError("checkpoint side " + std::to_string(m->side()) + " does not match dataset side " +
                    std::to_string(data_->side()));
  model_ = std::move(m);
  checkpoint_id_ = checkpoint.filename().string();
}

void Engine::load_regression(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw DataError("no checkpoint at " + checkpoint.string());
  regression_ = baselines::RegressionBaseline::load(checkpoint);
}

std::vector<env::Ckm> Engine::infer(Method method, const env::EnvironmentRecord& rec,
                                    const std::vector<std::size_t>& sources,
                                    const std::vector<env::BsLocation>& targets,
                                    const diffusion::SamplerConfig& sampler) const {
  if (targets.empty()) throw nd::ContractError("at least one target location is required");
  std::vector<baselines::SourceCkm> src;
  denoiser::SourceSet set;
  for (auto i : sources) {
    if (i >= rec.ckms.size()) throw DataError("source BS " + std::to_string(i) + " not in " + rec.id);
    src.push_back({&rec.ckms[i], rec.ckms[i].owner()});
    set.ckms.push_back(&rec.ckms[i]);
  }
  switch (method) {
    case Method::kModel:
      if (!model_) throw nd::ContractError("no diffusion checkpoint loaded");
      return model_->infer(set, targets, sampler);
    case Method::kDistance: {
      std::vector<env::Ckm> out;
      for (const auto& t : targets) out.push_back(baselines::distance_weighted_ckm(src, t, gamma));
      return out;
    }
    case Method::kRegression:
      if (!regression_) throw nd::ContractError("no regression checkpoint loaded");
      return regression_->predict(src, targets);
    case Method::kGroundTruth: {
      std::vector<env::Ckm> out;
      const env::PropagationGraph graph(rec.map);
      for (const auto& t : targets) out.push_back(env::dpm_channel_gain(graph, t));
      return out;
    }
  }
  throw UsageError("unknown method");
}

deploy::InferFn Engine::infer_fn(Method method, const env::EnvironmentRecord& rec,
                                 std::vector<std::size_t> sources,
                                 diffusion::SamplerConfig sampler) const {
  if (method == Method::kGroundTruth) return deploy::ground_truth_infer(rec.map);
  return [this, method, &rec, sources = std::move(sources), sampler](
             const std::vector<env::BsLocation>& targets) {
    return infer(method, rec, sources, targets, sampler);
  };
}

namespace {

std::string target_stem(std::size_t i) { return "target_" + std::to_string(i); }

}  // namespace

void write_predictions(const fs::path& dir, const PredictionSet& set) {
  if (set.maps.size() != set.targets.size())
    throw nd::ContractError("prediction set has " + std::to_string(set.maps.size()) + " maps for " +
                            std::to_string(set.targets.size()) + " targets");
  fs::create_directories(dir);
  json targets = json::array();
  for (std::size_t i = 0; i < set.maps.size(); ++i) {
    const auto& m = set.maps[i];
    env::RawGrid g;
    g.side = m.side();
    g.kind = env::GridKind::kCkmGray;
    g.values.assign(m.gray().begin(), m.gray().end());
    g.mask = m.mask();
    env::write_raw_grid(dir / (target_stem(i) + ".bin"), g);
    env::export_ckm_png(dir / (target_stem(i) + ".png"), m);
    json t = {{"row", set.targets[i].cell.row},
              {"col", set.targets[i].cell.col},
              {"file", target_stem(i) + ".bin"},
              {"png", target_stem(i) + ".png"}};
    t["bs_index"] = set.targets[i].bs_index ? json(*set.targets[i].bs_index) : json(nullptr);
    targets.push_back(std::move(t));
  }
  const json manifest = {{"format", "ckm-predictions"},
                         {"env_id", set.env_id},
                         {"method", set.method},
                         {"sources", set.sources},
                         {"settings", set.settings},
                         {"targets", std::move(targets)}};
  std::ofstream os(dir / "predictions.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw DataError("cannot write " + (dir / "predictions.json").string());
}

PredictionSet read_predictions(const fs::path& dir, const env::Dataset& data) {
  std::ifstream is(dir / "predictions.json");
  if (!is) throw DataError("no predictions.json under " + dir.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError(std::string("predictions.json: ") + e.what());
  }
  PredictionSet set;
  set.env_id = j.at("env_id").get<std::string>();
  set.method = j.at("method").get<std::string>();
  set.sources = j.at("sources").get<std::vector<std::size_t>>();
  set.settings = j.value("settings", json::object());
  const auto& rec = data.find(set.env_id);
  for (const auto& t : j.at("targets")) {
    PredictionTarget pt{{t.at("row").get<int>(), t.at("col").get<int>()}, std::nullopt};
    if (!t.at("bs_index").is_null()) pt.bs_index = t.at("bs_index").get<std::size_t>();
    const auto g = env::read_raw_grid(dir / t.at("file").get<std::string>());
    if (g.side != data.side()) throw DataError(t.at("file").get<std::string>() + " has the wrong side");
    set.maps.push_back(env::Ckm::from_gray(g.side, std::vector<double>(g.values.begin(), g.values.end()),
                                           g.mask, env::BsLocation::from_cell(pt.cell, g.side), rec.id));
    set.targets.push_back(pt);
  }
  return set;
}

metrics::MetricReport evaluate_predictions(const PredictionSet& set, const env::Dataset& data) {
  const auto& rec = data.find(set.env_id);
  metrics::MetricReport report;
  report.title = set.method + " on " + set.env_id + " (" + std::to_string(set.sources.size()) + " sources)";
  for (std::size_t i = 0; i < set.targets.size(); ++i) {
    const auto& t = set.targets[i];
    if (!t.bs_index) continue;
    if (*t.bs_index >= rec.ckms.size()) throw DataError("target BS index out of range");
    const auto& truth = rec.ckms[*t.bs_index];
    if (truth.owner().cell != t.cell)
      throw DataError("target " + std::to_string(i) + " at " + t.cell.str() + " is not BS " +
                      std::to_string(*t.bs_index));
    report.rows.push_back(metrics::evaluate_map("bs" + std::to_string(*t.bs_index), truth.gray(),
                                                set.maps[i].gray(), truth.mask(), truth.side()));
  }
  if (report.rows.empty()) throw DataError("no prediction has a ground-truth BS");
  return report;
}

}  // namespace ckm::app
