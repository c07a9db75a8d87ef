// ckm: dataset generation, training, inference, evaluation, baselines,
// placement search and the HTTP service behind one executable.
//
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "ckm/app/engine.hpp"
#include "ckm/denoiser/train.hpp"
#include "ckm/service/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ckm;

namespace {

constexpr int kUsage = 1, kData = 2, kNumerical = 3;

struct Common {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
};

struct GenOpts {
  std::string out = "data";
  std::size_t envs = 10, bs = 16, side = 64;
  std::uint64_t seed = 0;
  std::vector<int> buildings{4, 8}, building_size{4, 16};
  bool verify = false;
};

struct TrainOpts {
  std::string data, out = "run", config_file, resume;
  std::uint64_t seed = 1;
  std::size_t steps = 2000, targets = 5, sources_min = 1, sources_max = 10, warmup = 100,
              checkpoint_every = 500, log_every = 50;
  double lr_min = 1e-5, lr_max = 1e-4;
};

struct InferOpts {
  std::string data, out = "pred", checkpoint, regression, env, method = "model";
  std::size_t sources = 5, targets = 3, steps = 50;
  std::vector<std::string> cells;
  std::uint64_t seed = 0;
  bool stochastic = false;
  double gamma = 0.1;
  // baseline only
  std::size_t train_steps = 0;
};

struct EvalOpts {
  std::string data, out;
  std::vector<std::string> pred;
};

struct OptOpts {
  std::string data, out = "coverage.json", checkpoint, regression, env, regions, method = "ground-truth";
  double xi_star = 0.5;
  std::size_t stride = 2, sources = 5, steps = 50, batch = 8;
  std::uint64_t seed = 0;
};

struct ServeOpts {
  std::string data, checkpoint, regression, host = "127.0.0.1";
  int port = 8080;
  std::size_t sources = 5, steps = 50;
};

std::shared_ptr<const env::Dataset> load_data(const std::string& dir) {
  if (dir.empty()) throw app::UsageError("--data is required");
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw app::DataError("no dataset under " + dir);
  return std::make_shared<const env::Dataset>(env::Dataset::load(dir));
}

// Every effective option of the running subcommand, defaults included, as a
// TOML section; replay with `ckm --config <file> <subcommand>`.
void echo_config(const CLI::App& sub, const fs::path& dir, const std::string& name = "run_config.toml") {
  fs::create_directories(dir);
  std::ofstream os(dir / name);
  os << "[" << sub.get_name() << "]\n";
  std::istringstream lines(sub.config_to_str(true, false));
  // Unset list options print as "{}", which would not read back as empty.
  for (std::string line; std::getline(lines, line);)
    if (!line.ends_with("=\"{}\"")) os << line << "\n";
}

std::string pick_env(const env::Dataset& data, const std::string& wanted) {
  if (!wanted.empty()) {
    data.find(wanted);
    return wanted;
  }
  const auto& v = data.validation_indices();
  return data.environments().at(v.empty() ? 0 : v.front()).id;
}

env::Cell parse_cell(const std::string& text) {
  int r = 0, c = 0;
  char comma = 0;
  std::istringstream is(text);
  if (!(is >> r >> comma >> c) || comma != ',' || !is.eof())
    throw app::UsageError("cell '" + text + "' is not ROW,COL");
  return {r, c};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) throw app::DataError("cannot write " + path.string());
}

int run_gen(const CLI::App& app, const GenOpts& o) {
  env::DatasetConfig dc;
  dc.env_count = o.envs;
  dc.bs_per_env = o.bs;
  dc.seed = o.seed;
  dc.generator.side = o.side;
  dc.generator.building_count = {o.buildings.at(0), o.buildings.at(1)};
  dc.generator.building_size = {o.building_size.at(0), o.building_size.at(1)};
  const auto out = app::resolve_output(o.out);
  echo_config(app, out);
  const auto manifest = env::build_dataset(dc, out);
  std::printf("wrote %zu environments (%zu train / %zu validation) to %s\n", o.envs,
              manifest.at("split").at("train").size(), manifest.at("split").at("validation").size(),
              out.c_str());
  if (o.verify) {
    const auto bad = env::verify_regeneration(out);
    std::printf("regeneration check: %zu mismatching files\n", bad);
    if (bad) return kData;
  }
  return 0;
}

int run_train(const CLI::App& app, const TrainOpts& o) {
  const auto data = load_data(o.data);
  denoiser::TrainConfig tc;
  if (!o.config_file.empty()) {
    std::ifstream is(o.config_file);
    if (!is) throw app::DataError("cannot read " + o.config_file);
    tc = denoiser::TrainConfig::from_json(json::parse(is));
  }
  // Explicit flags override the file.
  auto set = [&](const char* flag, auto& field, auto value) {
    if (app.count(flag)) field = value;
  };
  set("--seed", tc.seed, o.seed);
  set("--steps", tc.steps, o.steps);
  set("--targets", tc.targets, o.targets);
  set("--sources-min", tc.sources_min, o.sources_min);
  set("--sources-max", tc.sources_max, o.sources_max);
  set("--warmup", tc.warmup_steps, o.warmup);
  set("--checkpoint-every", tc.checkpoint_every, o.checkpoint_every);
  set("--lr-min", tc.lr_min, o.lr_min);
  set("--lr-max", tc.lr_max, o.lr_max);
  tc.model.side = data->side();
  tc.model.latent_side = data->side() / 4;

  const auto out = app::resolve_output(o.out);
  echo_config(app, out);
  write_json(out / "train_config.json", tc.to_json());

  std::vector<const env::EnvironmentRecord*> envs;
  for (auto i : data->train_indices()) envs.push_back(&data->environments()[i]);
  denoiser::Trainer trainer(envs, tc);
  if (!o.resume.empty()) trainer.resume(o.resume);

  std::ofstream csv(out / "loss.csv", o.resume.empty() ? std::ios::trunc : std::ios::app);
  if (o.resume.empty()) csv << "step,loss,lr\n";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    trainer.run([&](std::size_t step, double loss, double lr) {
      csv << step << ',' << loss << ',' << lr << '\n';
      if (o.log_every && step % o.log_every == 0) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("step %zu  loss %.5f  lr %.2e  %.1fs\n", step, loss, lr, s);
        std::fflush(stdout);
      }
      if (tc.checkpoint_every && step % tc.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%06zu.ckpt", step);
        trainer.save(out / name);
        trainer.save(out / "latest.ckpt");
      }
    });
  } catch (const denoiser::NumericalError& e) {
    csv.flush();
    trainer.save(out / "failed.ckpt");
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    const auto& l = trainer.losses();
    std::fprintf(stderr, "last losses:");
    for (std::size_t i = l.size() > 10 ? l.size() - 10 : 0; i < l.size(); ++i) std::fprintf(stderr, " %.5g", l[i]);
    std::fprintf(stderr, "\nstate before the failing step saved to %s\n", (out / "failed.ckpt").c_str());
    return kNumerical;
  }
  trainer.save(out / "latest.ckpt");
  trainer.model().save(out / "model.ckpt", {{"train", tc.to_json()}});
  std::printf("trained %zu steps; model written to %s\n", trainer.step(), (out / "model.ckpt").c_str());
  return 0;
}

// Shared by infer and baseline: same selection, same output layout.
int run_predict(const CLI::App& app, const InferOpts& o, app::Method method) {
  const auto data = load_data(o.data);
  auto engine = std::make_shared<app::Engine>(data);
  engine->gamma = o.gamma;
  const auto out = app::resolve_output(o.out);
  echo_config(app, out);

  if (method == app::Method::kModel) {
    if (o.checkpoint.empty()) throw app::UsageError("--checkpoint is required for the diffusion model");
    engine->load_model(o.checkpoint);
  }
  if (method == app::Method::kRegression) {
    if (!o.regression.empty()) {
      engine->load_regression(o.regression);
    } else if (o.train_steps) {
      baselines::RegressionConfig rc;
      rc.side = data->side();
      rc.sources = o.sources;
      rc.steps = o.train_steps;
      rc.seed = o.seed;
      std::vector<const env::EnvironmentRecord*> envs;
      for (auto i : data->train_indices()) envs.push_back(&data->environments()[i]);
      auto result = baselines::train_regression_baseline(envs, rc);
      result.model->save(out / "regression.ckpt");
      engine->load_regression(out / "regression.ckpt");
    } else {
      throw app::UsageError("regression needs --model or --train-steps");
    }
  }

  const auto& rec = data->find(pick_env(*data, o.env));
  app::PredictionSet set;
  set.env_id = rec.id;
  set.method = app::method_name(method);
  set.sources = app::default_sources(rec, o.sources);
  std::vector<env::BsLocation> locs;
  if (!o.cells.empty()) {
    for (const auto& s : o.cells) {
      const auto cell = parse_cell(s);
      locs.push_back(app::target_location(rec.map, cell));
      std::optional<std::size_t> bs;
      for (std::size_t i = 0; i < rec.ckms.size(); ++i)
        if (rec.ckms[i].owner().cell == cell) bs = i;
      set.targets.push_back({cell, bs});
    }
  } else {
    if (o.sources + o.targets > rec.ckms.size())
      throw app::DataError(rec.id + " has " + std::to_string(rec.ckms.size()) + " BSs, " +
                           std::to_string(o.sources + o.targets) + " needed");
    for (std::size_t i = o.sources; i < o.sources + o.targets; ++i) {
      locs.push_back(rec.ckms[i].owner());
      set.targets.push_back({rec.ckms[i].owner().cell, i});
    }
  }
  diffusion::SamplerConfig sc;
  sc.kind = o.stochastic ? diffusion::SamplerKind::kStochastic : diffusion::SamplerKind::kDeterministic;
  sc.steps = o.steps;
  sc.seed = o.seed;
  set.settings = {{"seed", o.seed}, {"gamma", o.gamma}};
  if (method == app::Method::kModel)
    set.settings.update({{"sampler", o.stochastic ? "stochastic" : "deterministic"}, {"steps", o.steps}});

  const auto t0 = std::chrono::steady_clock::now();
  set.maps = engine->infer(method, rec, set.sources, locs, sc);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  app::write_predictions(out, set);
  // Timing lives apart from the deterministic outputs.
  write_json(out / "timing.json", {{"seconds", seconds}, {"targets", locs.size()}});
  std::printf("%s: %zu maps for %s in %.2fs -> %s\n", set.method.c_str(), set.maps.size(), rec.id.c_str(),
              seconds, out.c_str());
  return 0;
}

int run_evaluate(const CLI::App& app, const EvalOpts& o) {
  const auto data = load_data(o.data);
  if (o.pred.empty()) throw app::UsageError("--pred is required");
  const fs::path out = o.out.empty() ? fs::path(o.pred.front()) : app::resolve_output(o.out);
  echo_config(app, out, "evaluate_config.toml");
  json all = json::array();
  std::string text;
  for (const auto& p : o.pred) {
    const auto set = app::read_predictions(p, *data);
    const auto report = app::evaluate_predictions(set, *data);
    auto j = report.to_json();
    j["predictions"] = p;
    all.push_back(std::move(j));
    text += report.to_table() + "\n";
  }
  write_json(out / "metrics.json", all.size() == 1 ? all.front() : all);
  std::ofstream(out / "metrics.txt") << text;
  std::fputs(text.c_str(), stdout);
  return 0;
}

int run_optimize(const CLI::App& app, const OptOpts& o) {
  const auto data = load_data(o.data);
  auto engine = std::make_shared<app::Engine>(data);
  const auto method = app::parse_method(o.method);
  if (method == app::Method::kModel) {
    if (o.checkpoint.empty()) throw app::UsageError("--checkpoint is required for the diffusion model");
    engine->load_model(o.checkpoint);
  }
  if (method == app::Method::kRegression) {
    if (o.regression.empty()) throw app::UsageError("--model is required for the regression baseline");
    engine->load_regression(o.regression);
  }
  if (o.regions.empty()) throw app::UsageError("--regions is required");
  std::ifstream is(o.regions);
  if (!is) throw app::DataError("cannot read " + o.regions);
  const auto regions = deploy::regions_from_json(json::parse(is));

  const auto& rec = data->find(pick_env(*data, o.env));
  for (const auto& r : regions) r.validate(rec.map);
  const auto out = app::resolve_output(o.out);
  echo_config(app, out.has_parent_path() ? out.parent_path() : fs::path("."), "optimize_config.toml");

  diffusion::SamplerConfig sc;
  sc.steps = o.steps;
  sc.seed = o.seed;
  const auto candidates = deploy::candidate_grid(rec.map, o.stride);
  deploy::OptimizeOptions opts;
  opts.batch = o.batch;
  opts.progress = [](std::size_t done, std::size_t total) {
    std::fprintf(stderr, "\r%zu / %zu candidates", done, total);
    if (done == total) std::fputc('\n', stderr);
  };
  const auto report = deploy::optimize_placement(
      engine->infer_fn(method, rec, app::default_sources(rec, o.sources), sc), rec.map, regions, o.xi_star,
      candidates, opts);
  auto j = report.to_json();
  j["env_id"] = rec.id;
  j["method"] = app::method_name(method);
  write_json(out, j);
  if (report.best) {
    const auto& b = report.candidates[*report.best];
    std::printf("best site %s  mean quality %.4f  (%zu of %zu feasible)\n", b.cell.str().c_str(), b.xi_mean,
                report.feasible_count, report.candidates.size());
  } else {
    std::printf("no feasible site at xi* = %.3f\n", o.xi_star);
  }
  return 0;
}

int run_serve(const ServeOpts& o) {
  const auto data = load_data(o.data);
  auto engine = std::make_shared<app::Engine>(data);
  if (!o.checkpoint.empty()) engine->load_model(o.checkpoint);
  if (!o.regression.empty()) engine->load_regression(o.regression);
  service::ServiceOptions so;
  so.sources = o.sources;
  so.sampler_steps = o.steps;
  service::Service svc(engine, so);
  httplib::Server server;
  svc.mount(server);
  std::printf("serving /v1 on http://%s:%d\n", o.host.c_str(), o.port);
  std::fflush(stdout);
  if (!server.listen(o.host, o.port)) throw app::UsageError("cannot listen on " + o.host + ":" + std::to_string(o.port));
  return 0;
}

void add_predict_flags(CLI::App* sub, InferOpts& o) {
  sub->add_option("--data", o.data, "dataset directory")->required();
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--env", o.env, "environment id (default: first validation environment)");
  sub->add_option("--sources", o.sources, "number of source BSs (the first ones of the environment)");
  sub->add_option("--targets", o.targets, "number of target BSs, taken after the sources");
  sub->add_option("--target-cell", o.cells, "explicit target cell ROW,COL (repeatable)");
  sub->add_option("--seed", o.seed, "sampling seed");
  sub->add_option("--gamma", o.gamma, "distance-weighting gamma");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-BS channel knowledge map inference"};
  app.set_config("--config", "", "replay a run_config.toml written by an earlier run");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenOpts gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic dataset");
  g->add_option("--out", gen.out, "output directory");
  g->add_option("--envs", gen.envs, "number of environments");
  g->add_option("--bs", gen.bs, "BSs per environment");
  g->add_option("--side", gen.side, "map side L");
  g->add_option("--seed", gen.seed, "master seed");
  g->add_option("--buildings", gen.buildings, "building count range MIN MAX")->expected(2);
  g->add_option("--building-size", gen.building_size, "building side range MIN MAX")->expected(2);
  g->add_flag("--verify", gen.verify, "regenerate from the manifest and compare byte for byte");

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "train the diffusion model");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "run directory");
  t->add_option("--train-config", tr.config_file, "training config JSON (flags override it)");
  t->add_option("--resume", tr.resume, "training checkpoint to continue from");
  t->add_option("--seed", tr.seed);
  t->add_option("--steps", tr.steps);
  t->add_option("--targets", tr.targets, "|I_t| per sample");
  t->add_option("--sources-min", tr.sources_min);
  t->add_option("--sources-max", tr.sources_max);
  t->add_option("--warmup", tr.warmup);
  t->add_option("--lr-min", tr.lr_min);
  t->add_option("--lr-max", tr.lr_max);
  t->add_option("--checkpoint-every", tr.checkpoint_every);
  t->add_option("--log-every", tr.log_every);

  InferOpts inf;
  auto* i = app.add_subcommand("infer", "infer target CKMs");
  add_predict_flags(i, inf);
  i->add_option("--checkpoint", inf.checkpoint, "model checkpoint");
  i->add_option("--method", inf.method, "model | distance | regression | ground-truth");
  i->add_option("--model", inf.regression, "regression baseline checkpoint (method regression)");
  i->add_option("--steps", inf.steps, "sampler steps");
  i->add_flag("--stochastic", inf.stochastic, "stochastic sampler");

  InferOpts base;
  base.out = "baseline";
  std::string kind = "distance";
  auto* b = app.add_subcommand("baseline", "run a baseline with the infer output layout");
  add_predict_flags(b, base);
  b->add_option("--kind", kind, "distance | regression");
  b->add_option("--model", base.regression, "regression checkpoint");
  b->add_option("--train-steps", base.train_steps, "train the regression baseline first");

  EvalOpts ev;
  auto* e = app.add_subcommand("evaluate", "score predictions against ground truth");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--pred", ev.pred, "prediction directory (repeatable)")->required();
  e->add_option("--out", ev.out, "report directory (default: first prediction directory)");

  OptOpts op;
  auto* o = app.add_subcommand("optimize", "search the best BS site");
  o->add_option("--data", op.data, "dataset directory")->required();
  o->add_option("--env", op.env, "environment id");
  o->add_option("--regions", op.regions, "region file (JSON)")->required();
  o->add_option("--xi-star", op.xi_star, "coverage threshold on 1 - gray");
  o->add_option("--stride", op.stride, "candidate grid stride");
  o->add_option("--method", op.method, "model | distance | regression | ground-truth");
  o->add_option("--checkpoint", op.checkpoint, "model checkpoint");
  o->add_option("--model", op.regression, "regression checkpoint");
  o->add_option("--sources", op.sources);
  o->add_option("--steps", op.steps, "sampler steps");
  o->add_option("--seed", op.seed);
  o->add_option("--batch", op.batch, "candidates per inference call");
  o->add_option("--out", op.out, "report file");

  ServeOpts sv;
  auto* s = app.add_subcommand("serve", "start the HTTP service");
  s->add_option("--data", sv.data, "dataset directory")->required();
  s->add_option("--checkpoint", sv.checkpoint, "model checkpoint");
  s->add_option("--model", sv.regression, "regression checkpoint");
  s->add_option("--host", sv.host);
  s->add_option("--port", sv.port);
  s->add_option("--sources", sv.sources);
  s->add_option("--steps", sv.steps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (*g) return run_gen(*g, gen);
    if (*t) return run_train(*t, tr);
    if (*i) return run_predict(*i, inf, app::parse_method(inf.method));
    if (*b) {
      const auto m = app::parse_method(kind);
      if (m != app::Method::kDistance && m != app::Method::kRegression)
        throw app::UsageError("--kind must be distance or regression");
      return run_predict(*b, base, m);
    }
    if (*e) return run_evaluate(*e, ev);
    if (*o) return run_optimize(*o, op);
    if (*s) return run_serve(sv);
  } catch (const denoiser::NumericalError& ex) {
    std::fprintf(stderr, "numerical failure: %s\n", ex.what());
    return kNumerical;
  } catch (const app::UsageError& ex) {
    std::fprintf(stderr, "usage error: %s\n", ex.what());
    return kUsage;
  } catch (const env::PlacementError& ex) {
    std::fprintf(stderr, "usage error: %s\n", ex.what());
    return kUsage;
  } catch (const env::RangeError& ex) {
    std::fprintf(stderr, "usage error: %s\n", ex.what());
    return kUsage;
  } catch (const nd::ContractError& ex) {
    std::fprintf(stderr, "usage error: %s\n", ex.what());
    return kUsage;
  } catch (const json::exception& ex) {
    std::fprintf(stderr, "data error: %s\n", ex.what());
    return kData;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "data error: %s\n", ex.what());
    return kData;
  }
  return kUsage;
}
