#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ckm/baselines/regression.hpp"
#include "ckm/denoiser/model.hpp"
#include "ckm/deploy/placement.hpp"
#include "ckm/env/dataset.hpp"
#include "ckm/metrics/metrics.hpp"

// Glue shared by the command-line tool and the HTTP service, so both produce
// the same maps for the same inputs.

namespace ckm::app {

/// Bad invocation: unknown names, malformed arguments (exit code 1).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Missing or inconsistent input data (exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative paths are taken under $CKM_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// {"dtype": "f32le", "shape": [...], "data": base64}
nlohmann::json encode_f32(std::span<const double> values, const std::vector<std::size_t>& shape);
std::vector<float> decode_f32(const nlohmann::json& array);
/// {"dtype": "u8", "shape": [...], "data": base64}
nlohmann::json encode_u8(std::span<const std::uint8_t> values, const std::vector<std::size_t>& shape);

enum class Method { kModel, kDistance, kRegression, kGroundTruth };
Method parse_method(const std::string& name);
std::string method_name(Method m);

/// The first `count` BSs of the environment, in manifest order.
std::vector<std::size_t> default_sources(const env::EnvironmentRecord& rec, std::size_t count);
/// Checks a target cell: RangeError outside the map, PlacementError on a building.
env::BsLocation target_location(const env::EnvironmentMap& map, env::Cell cell);

class Engine {
 public:
  explicit Engine(std::shared_ptr<const env::Dataset> data);

  const env::Dataset& data() const { return *data_; }
  const env::EnvironmentRecord& environment(const std::string& id) const;

  void load_model(const std::filesystem::path& checkpoint);
  void load_regression(const std::filesystem::path& checkpoint);
  const denoiser::CkmModel* model() const { return model_.get(); }
  const baselines::RegressionBaseline* regression() const { return regression_.get(); }
  std::optional<std::string> checkpoint_id() const { return checkpoint_id_; }

  double gamma = 0.1;

  /// One CKM per target, all targets in one call. Throws ContractError when
  /// the method needs a network that is not loaded.
  std::vector<env::Ckm> infer(Method method, const env::EnvironmentRecord& rec,
                              const std::vector<std::size_t>& sources,
                              const std::vector<env::BsLocation>& targets,
                              const diffusion::SamplerConfig& sampler) const;

  deploy::InferFn infer_fn(Method method, const env::EnvironmentRecord& rec,
                           std::vector<std::size_t> sources, diffusion::SamplerConfig sampler) const;

 private:
  std::shared_ptr<const env::Dataset> data_;
  std::unique_ptr<denoiser::CkmModel> model_;
  std::unique_ptr<baselines::RegressionBaseline> regression_;
  std::optional<std::string> checkpoint_id_;
};

/// One prediction run on disk: predictions.json, target_<i>.bin (raw gray
/// grid) and target_<i>.png per target.
struct PredictionTarget {
  env::Cell cell;
  std::optional<std::size_t> bs_index;  // set when the target is a dataset BS
};

struct PredictionSet {
  std::string env_id;
  std::string method;
  std::vector<std::size_t> sources;
  std::vector<PredictionTarget> targets;
  std::vector<env::Ckm> maps;
  nlohmann::json settings = nlohmann::json::object();
};

void write_predictions(const std::filesystem::path& dir, const PredictionSet& set);
/// Reads the manifest and the raw grids back; maps carry gray values only.
PredictionSet read_predictions(const std::filesystem::path& dir, const env::Dataset& data);

/// Scores every prediction that has a ground-truth BS.
metrics::MetricReport evaluate_predictions(const PredictionSet& set, const env::Dataset& data);

}  // namespace ckm::app
