#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "ckm/app/engine.hpp"

using namespace ckm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path r = [] {
    auto p = fs::temp_directory_path() / "ckm_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return r;
}

int run_cli(const std::string& args) {
  const std::string cmd = "cd " + root().string() + " && " + CKM_CLI_PATH + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void ensure_dataset() {
  if (fs::exists(root() / "data" / "manifest.json")) return;
  REQUIRE(run_cli("gen-data --out data --envs 4 --bs 16 --side 32 --seed 3 --buildings 2 4 "
              "--building-size 3 8 --verify") == 0);
}

}  // namespace

TEST_CASE("cli: exit codes") {
  ensure_dataset();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("infer --no-such-flag") == 1);
  CHECK(run_cli("infer --data data --method distance --target-cell 99,1") == 1);
  CHECK(run_cli("infer --data data --method sorcery") == 1);
  CHECK(run_cli("infer --data missing --method distance") == 2);
  CHECK(run_cli("evaluate --data data --pred missing") == 2);
  CHECK(run_cli("train --data data --out small --sources-max 12 --targets 5 --steps 1") == 2);
  CHECK(run_cli("infer --data data --checkpoint nowhere.ckpt") == 2);
}

TEST_CASE("cli: training writes checkpoints, a loss log and a replayable config") {
  ensure_dataset();
  REQUIRE(run_cli("train --data data --out run --steps 4 --checkpoint-every 2 --lr-max 1e-3 --warmup 1") == 0);
  for (const char* f : {"checkpoint_000002.ckpt", "checkpoint_000004.ckpt", "latest.ckpt", "model.ckpt",
                        "loss.csv", "run_config.toml", "train_config.json"})
    CHECK(fs::exists(root() / "run" / f));
  std::ifstream csv(root() / "run" / "loss.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 5);

  // Replaying the echoed config reproduces the run bit for bit.
  std::string cfg = slurp(root() / "run" / "run_config.toml");
  cfg.replace(cfg.find("out=\"run\""), 9, "out=\"run2\"");
  std::ofstream(root() / "replay.toml") << cfg;
  REQUIRE(run_cli("--config replay.toml train") == 0);
  CHECK(slurp(root() / "run" / "loss.csv") == slurp(root() / "run2" / "loss.csv"));
  CHECK(slurp(root() / "run" / "model.ckpt") == slurp(root() / "run2" / "model.ckpt"));
}

TEST_CASE("cli: infer is deterministic and evaluate scores ground truth perfectly") {
  ensure_dataset();
  if (!fs::exists(root() / "run" / "model.ckpt"))
    REQUIRE(run_cli("train --data data --out run --steps 2 --checkpoint-every 0") == 0);
  const std::string base = "infer --data data --checkpoint run/model.ckpt --sources 5 --targets 3 --seed 1 --steps 10";
  REQUIRE(run_cli(base + " --out a") == 0);
  REQUIRE(run_cli(base + " --out b") == 0);
  for (const char* f : {"predictions.json", "run_config.toml", "target_0.bin", "target_1.bin", "target_2.bin",
                        "target_0.png", "target_2.png"}) {
    CAPTURE(f);
    CHECK(fs::exists(root() / "a" / f));
    auto x = slurp(root() / "a" / f), y = slurp(root() / "b" / f);
    if (std::string(f) == "run_config.toml") {
      // Only the output directory differs.
      x.erase(x.find("out="), x.find('\n', x.find("out=")) - x.find("out="));
      y.erase(y.find("out="), y.find('\n', y.find("out=")) - y.find("out="));
    }
    CHECK(x == y);
  }

  REQUIRE(run_cli("infer --data data --method ground-truth --sources 5 --targets 3 --out gt") == 0);
  REQUIRE(run_cli("evaluate --data data --pred gt") == 0);
  const auto m = json::parse(slurp(root() / "gt" / "metrics.json"));
  CHECK(m["mean"]["rmse"] == 0.0);
  CHECK(m["mean"]["ssim"] == 1.0);
  CHECK(m["mean"]["psnr"] == "inf");

  // Baselines share the prediction layout, so evaluate accepts them too.
  REQUIRE(run_cli("baseline --data data --kind distance --sources 5 --targets 3 --out dist") == 0);
  REQUIRE(run_cli("evaluate --data data --pred dist --pred a --out both") == 0);
  const auto both = json::parse(slurp(root() / "both" / "metrics.json"));
  CHECK(both.size() == 2);
  CHECK(both[0]["mean"]["rmse"].get<double>() > 0.0);
}

TEST_CASE("cli: optimize with the simulator equals the exhaustive oracle") {
  ensure_dataset();
  std::ofstream(root() / "regions.json")
      << R"({"regions": [{"label": "A", "rects": [{"row0": 1, "col0": 1, "row1": 3, "col1": 2}]},
                         {"label": "B", "rects": [{"row0": 28, "col0": 20, "row1": 30, "col1": 22}]}]})";
  const auto data = env::Dataset::load(root() / "data");
  const auto& rec = data.environments()[data.validation_indices().front()];
  const auto regions = deploy::regions_from_json(json::parse(slurp(root() / "regions.json")));
  bool on_building = false;
  for (const auto& r : regions)
    for (const auto& c : r.cells) on_building = on_building || rec.map.is_building(c);
  if (on_building) {
    CHECK(run_cli("optimize --data data --regions regions.json --out opt.json") == 1);
    return;
  }
  REQUIRE(run_cli("optimize --data data --regions regions.json --xi-star 0.35 --stride 1 --out opt.json") == 0);
  const auto report = json::parse(slurp(root() / "opt.json"));

  // Oracle: every free cell, simulator map, direct loops.
  const auto cands = deploy::candidate_grid(rec.map, 1);
  REQUIRE(report["candidates"].size() == cands.size());
  std::ptrdiff_t best = -1;
  double best_mean = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto ckm_map = env::dpm_channel_gain(rec.map, env::BsLocation::from_cell(cands[i], rec.map.side()));
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : regions)
      for (const auto& c : r.cells) {
        sum += 1.0 - ckm_map.gray()[rec.map.index(c)];
        ++n;
      }
    bool feasible = true;
    for (const auto& r : regions) {
      double rmin = 1.0;
      for (const auto& c : r.cells) rmin = std::min(rmin, 1.0 - ckm_map.gray()[rec.map.index(c)]);
      feasible = feasible && rmin >= 0.35;
    }
    CHECK(report["candidates"][i]["feasible"] == feasible);
    const double mean = sum / static_cast<double>(n);
    if (feasible && (best < 0 || mean > best_mean)) {
      best = static_cast<std::ptrdiff_t>(i);
      best_mean = mean;
    }
  }
  if (best < 0) {
    CHECK(report["best_candidate"].is_null());
  } else {
    CHECK(report["best_candidate"]["row"] == cands[best].row);
    CHECK(report["best_candidate"]["col"] == cands[best].col);
  }
}
