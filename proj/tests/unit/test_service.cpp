#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>

#include "ckm/app/engine.hpp"
#include "ckm/service/service.hpp"

using namespace ckm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

denoiser::DenoiserConfig tiny_config() {
  denoiser::DenoiserConfig c;
  c.side = 32;
  c.latent_side = 8;
  c.base_channels = 8;
  c.attn_channels = 8;
  c.source_channels = 8;
  c.encoder_channels = {4, 4, 8};
  c.time_features = 8;
  c.time_dim = 8;
  c.groups = 2;
  return c;
}

// A 3-environment dataset and an untrained (but randomly initialised) model,
// shared by the cases below.
struct Fixture {
  fs::path root;
  std::shared_ptr<const env::Dataset> data;

  Fixture() {
    root = fs::temp_directory_path() / "ckm_test_service";
    fs::remove_all(root);
    env::DatasetConfig dc;
    dc.env_count = 3;
    dc.bs_per_env = 10;
    dc.seed = 5;
    dc.generator.side = 32;
    dc.generator.building_count = {2, 4};
    dc.generator.building_size = {3, 8};
    env::build_dataset(dc, root / "data");
    data = std::make_shared<const env::Dataset>(env::Dataset::load(root / "data"));
    denoiser::CkmModel model(tiny_config(), diffusion::NoiseSchedule::linear(),
                             std::make_unique<diffusion::PatchDctCodec>(32, 4), 2.0, 17);
    // Zero-initialised output layers would make every map identical; perturb.
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.05);
    for (std::size_t i = 0; i < model.denoiser().params().size(); ++i)
      for (auto& v : model.denoiser().params().at(i).mutable_data()) v += n(rng);
    model.save(root / "model.ckpt");
  }

  std::shared_ptr<app::Engine> engine(bool with_model) const {
    auto e = std::make_shared<app::Engine>(data);
    if (with_model) e->load_model(root / "model.ckpt");
    return e;
  }

  const env::EnvironmentRecord& rec() const { return data->environments().back(); }

  env::Cell building() const {
    const auto& m = rec().map;
    for (std::size_t i = 0; i < m.occupancy().size(); ++i)
      if (m.occupancy()[i]) return m.cell_at(i);
    throw std::logic_error("no building");
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

json cell_json(env::Cell c) { return {{"row", c.row}, {"col", c.col}}; }

json regions_json() {
  return json::parse(R"([{"label": "A", "rects": [{"row0": 1, "col0": 1, "row1": 2, "col1": 2}]},
                         {"label": "B", "cells": [[30, 30], [30, 29]]}])");
}

}  // namespace

TEST_CASE("base64 and float payloads") {
  auto enc = [](std::string s) {
    return app::base64_encode(std::vector<std::uint8_t>(s.begin(), s.end()));
  };
  CHECK(enc("Man") == "TWFu");
  CHECK(enc("Ma") == "TWE=");
  CHECK(enc("M") == "TQ==");
  CHECK(enc("") == "");
  std::mt19937_64 rng(1);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    CHECK(app::base64_decode(app::base64_encode(bytes)) == bytes);
  }
  CHECK_THROWS_AS(app::base64_decode("abc"), app::UsageError);
  CHECK_THROWS_AS(app::base64_decode("ab!d"), app::UsageError);

  const std::vector<double> v{0.0, 1.0, -2.5, 0.1};
  const auto j = app::encode_f32(v, {2, 2});
  CHECK(j["shape"] == json({2, 2}));
  const auto back = app::decode_f32(j);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == static_cast<float>(v[i]));
  // Little-endian layout: 1.0f is 00 00 80 3f.
  const auto raw = app::base64_decode(app::encode_f32(std::vector<double>{1.0}, {1})["data"].get<std::string>());
  CHECK(raw == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f});
}

TEST_CASE("service: health, environments and error statuses") {
  const auto& f = fixture();
  service::Service none(f.engine(false));
  const auto h = none.health();
  CHECK(h.status == 200);
  CHECK(h.body["checkpoint"].is_null());
  CHECK(h.body["L"] == 32);

  service::Service svc(f.engine(true));
  CHECK(svc.health().body["checkpoint"] == "model.ckpt");

  const auto env = svc.environment(f.rec().id);
  REQUIRE(env.status == 200);
  CHECK(env.body["bs"].size() == 10);
  CHECK(env.body["sources"].size() == 5);
  const auto occ = app::base64_decode(env.body["occupancy"]["data"].get<std::string>());
  CHECK(occ == f.rec().map.occupancy());
  CHECK(svc.environment("env_9999").status == 404);

  const json req = {{"env_id", f.rec().id}, {"target_locations", {cell_json(f.rec().ckms[7].owner().cell)}}};
  CHECK(none.infer(req).status == 409);
  CHECK(none.coverage({{"env_id", f.rec().id}, {"location", cell_json({1, 1})}, {"regions", regions_json()},
                       {"xi_star", 0.1}}).status == 409);

  auto bad = req;
  bad["env_id"] = "nope";
  CHECK(svc.infer(bad).status == 404);
  bad = req;
  bad.erase("env_id");
  CHECK(svc.infer(bad).status == 400);
  bad = req;
  bad["target_locations"] = json::array();
  CHECK(svc.infer(bad).status == 400);
  bad = req;
  bad["method"] = "oracle";
  CHECK(svc.infer(bad).status == 400);

  const auto b = f.building();
  bad = req;
  bad["target_locations"] = {cell_json(b)};
  const auto r = svc.infer(bad);
  CHECK(r.status == 400);
  CHECK(r.body["error"].get<std::string>().find(b.str()) != std::string::npos);
  bad["target_locations"] = {cell_json({40, 3})};
  CHECK(svc.infer(bad).status == 400);
  CHECK(svc.job("job-77").status == 404);
}

TEST_CASE("service: inference is deterministic, batched and isolated between requests") {
  const auto& f = fixture();
  service::Service svc(f.engine(true));
  const auto& rec = f.rec();
  json req = {{"env_id", rec.id}, {"seed", 4}, {"steps", 10}, {"target_locations", json::array()}};
  for (std::size_t i = 5; i < 8; ++i) req["target_locations"].push_back(cell_json(rec.ckms[i].owner().cell));

  const auto a = svc.infer(req);
  REQUIRE(a.status == 200);
  CHECK(a.body["targets"].size() == 3);
  const auto b = svc.infer(req);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.body["targets"][i]["gray"] == b.body["targets"][i]["gray"]);

  // Same request from several threads at once.
  std::vector<json> outs(4);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < outs.size(); ++t) pool.emplace_back([&, t] { outs[t] = svc.infer(req).body; });
  for (auto& th : pool) th.join();
  for (const auto& o : outs)
    for (std::size_t i = 0; i < 3; ++i) CHECK(o["targets"][i]["gray"] == a.body["targets"][i]["gray"]);

  // The engine produces the same maps when called directly.
  diffusion::SamplerConfig sc;
  sc.steps = 10;
  sc.seed = 4;
  const auto direct = f.engine(true)->infer(app::Method::kModel, rec, app::default_sources(rec, 5),
                                            {rec.ckms[5].owner(), rec.ckms[6].owner(), rec.ckms[7].owner()}, sc);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto got = app::decode_f32(a.body["targets"][i]["gray"]);
    for (std::size_t k = 0; k < got.size(); ++k) REQUIRE(got[k] == static_cast<float>(direct[i].gray()[k]));
  }

  // Ground truth through the same route.
  req["method"] = "ground-truth";
  const auto gt = svc.infer(req);
  const auto g0 = app::decode_f32(gt.body["targets"][0]["gray"]);
  for (std::size_t k = 0; k < g0.size(); ++k) REQUIRE(g0[k] == static_cast<float>(rec.ckms[5].gray()[k]));
}

TEST_CASE("service: coverage rows match the optimize report") {
  const auto& f = fixture();
  service::Service svc(f.engine(false));
  const auto& rec = f.rec();
  const json base = {{"env_id", rec.id}, {"method", "ground-truth"}, {"regions", regions_json()}, {"xi_star", 0.35}};

  auto opt = base;
  opt["stride"] = 4;
  const auto started = svc.optimize(opt);
  REQUIRE(started.status == 202);
  const auto id = started.body["job_id"].get<std::string>();
  json status;
  for (int i = 0; i < 600; ++i) {
    status = svc.job(id).body;
    if (status["status"] != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(status["status"] == "done");
  CHECK(status["done"] == status["total"]);
  const auto& report = status["report"];

  const auto direct = deploy::optimize_placement(deploy::ground_truth_infer(rec.map), rec.map,
                                                 deploy::regions_from_json(regions_json()), 0.35,
                                                 deploy::candidate_grid(rec.map, 4));
  CHECK(report == direct.to_json());

  for (std::size_t i = 0; i < report["candidates"].size(); i += 7) {
    const auto& row = report["candidates"][i];
    auto cov = base;
    cov["location"] = {{"row", row["row"]}, {"col", row["col"]}};
    const auto r = svc.coverage(cov);
    REQUIRE(r.status == 200);
    CHECK(r.body["candidate"].dump() == row.dump());
  }

  auto bad = base;
  bad["location"] = cell_json(f.building());
  CHECK(svc.coverage(bad).status == 400);
  bad = opt;
  bad["regions"] = json::parse(R"([{"label": "X", "cells": [[)" + std::to_string(f.building().row) + "," +
                               std::to_string(f.building().col) + "]]}]");
  CHECK(svc.optimize(bad).status == 400);
  bad = opt;
  bad["xi_star"] = 2.0;
  const auto empty = svc.optimize(bad);
  REQUIRE(empty.status == 202);
  svc.wait_for_jobs();
  const auto done = svc.job(empty.body["job_id"].get<std::string>()).body;
  CHECK(done["report"]["feasible_empty"] == true);
  CHECK(done["report"]["best_candidate"].is_null());
}

TEST_CASE("service over HTTP") {
  const auto& f = fixture();
  service::Service svc(f.engine(true));
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto h = cli.Get("/v1/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(h->get_header_value("Content-Type") == "application/json");
  CHECK(json::parse(h->body)["checkpoint"] == "model.ckpt");

  auto bad = cli.Post("/v1/infer", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(cli.Get("/v1/env/none")->status == 404);
  CHECK(cli.Get("/v1/jobs/none")->status == 404);

  const json req = {{"env_id", f.rec().id}, {"seed", 2}, {"steps", 5},
                    {"target_locations", {cell_json(f.rec().ckms[6].owner().cell)}}};
  auto r = cli.Post("/v1/infer", req.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["targets"][0]["gray"] == svc.infer(req).body["targets"][0]["gray"]);

  server.stop();
  th.join();
}

#ifdef CKM_CLI_PATH
TEST_CASE("service inference equals the command-line output") {
  const auto& f = fixture();
  const auto& rec = f.rec();
  const auto out = f.root / "cli_pred";
  fs::remove_all(out);
  const std::string cmd = std::string(CKM_CLI_PATH) + " infer --data " + (f.root / "data").string() +
                          " --checkpoint " + (f.root / "model.ckpt").string() + " --env " + rec.id +
                          " --sources 5 --targets 3 --seed 9 --steps 10 --out " + out.string() + " > /dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);

  service::Service svc(f.engine(true));
  json req = {{"env_id", rec.id}, {"seed", 9}, {"steps", 10}, {"sources", 5}, {"target_locations", json::array()}};
  for (std::size_t i = 5; i < 8; ++i) req["target_locations"].push_back(cell_json(rec.ckms[i].owner().cell));
  const auto r = svc.infer(req);
  REQUIRE(r.status == 200);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto grid = env::read_raw_grid(out / ("target_" + std::to_string(i) + ".bin"));
    CHECK(app::decode_f32(r.body["targets"][i]["gray"]) == grid.values);
  }
}
#endif
