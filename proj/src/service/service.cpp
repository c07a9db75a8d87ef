#include "ckm/service/service.hpp"

#include <chrono>
#include <functional>

namespace ckm::service {

using nlohmann::json;

namespace {

struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Conflict : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json error_body(const std::string& message) { return {{"error", message}}; }

env::Cell parse_cell(const json& j) {
  if (!j.is_object() || !j.contains("row") || !j.contains("col"))
    throw app::UsageError("a location needs integer row and col");
  return {j.at("row").get<int>(), j.at("col").get<int>()};
}

}  // namespace

Service::Service(std::shared_ptr<const app::Engine> engine, ServiceOptions options)
    : engine_(std::move(engine)), options_(options) {
  if (!engine_) throw nd::ContractError("service needs an engine");
}

Service::~Service() { wait_for_jobs(); }

void Service::wait_for_jobs() {
  std::lock_guard lock(jobs_mutex_);
  for (auto& [id, job] : jobs_)
    if (job->worker.joinable()) job->worker.join();
}

template <typename F>
Service::Reply Service::guarded(F&& body) const {
  try {
    return body();
  } catch (const NotFound& e) {
    return {404, error_body(e.what())};
  } catch (const Conflict& e) {
    return {409, error_body(e.what())};
  } catch (const json::exception& e) {
    return {400, error_body(std::string("malformed request: ") + e.what())};
  } catch (const env::RangeError& e) {
    return {400, error_body(e.what())};
  } catch (const env::PlacementError& e) {
    return {400, error_body(e.what())};
  } catch (const app::UsageError& e) {
    return {400, error_body(e.what())};
  } catch (const app::DataError& e) {
    return {400, error_body(e.what())};
  } catch (const nd::ContractError& e) {
    return {400, error_body(e.what())};
  } catch (const std::exception& e) {
    return {500, error_body(e.what())};
  }
}

namespace {

struct Common {
  const env::EnvironmentRecord* rec = nullptr;
  app::Method method = app::Method::kModel;
  std::vector<std::size_t> sources;
  diffusion::SamplerConfig sampler;
};

Common parse_common(const app::Engine& engine, const ServiceOptions& options, const json& req) {
  if (!req.is_object()) throw app::UsageError("request body must be a JSON object");
  Common c;
  const auto id = req.at("env_id").get<std::string>();
  try {
    c.rec = &engine.data().find(id);
  } catch (const std::out_of_range&) {
    throw NotFound("unknown environment " + id);
  }
  c.method = app::parse_method(req.value("method", std::string("model")));
  if (c.method == app::Method::kModel && !engine.model()) throw Conflict("no checkpoint loaded");
  if (c.method == app::Method::kRegression && !engine.regression())
    throw Conflict("no regression checkpoint loaded");
  c.sources = app::default_sources(*c.rec, req.value("sources", options.sources));
  c.sampler.steps = req.value("steps", options.sampler_steps);
  c.sampler.seed = req.value("seed", std::uint64_t{0});
  return c;
}

json bs_json(const env::BsLocation& l, std::size_t index) {
  return {{"index", index}, {"row", l.cell.row}, {"col", l.cell.col}, {"theta", l.theta}, {"radius", l.radius}};
}

std::vector<deploy::TargetRegion> parse_regions(const json& req, const env::EnvironmentMap& map) {
  auto regions = deploy::regions_from_json(req.at("regions"));
  if (regions.empty()) throw app::UsageError("at least one target region is required");
  for (const auto& r : regions) r.validate(map);
  return regions;
}

}  // namespace

Service::Reply Service::health() const {
  const auto ck = engine_->checkpoint_id();
  return {200,
          {{"status", "ok"},
           {"checkpoint", ck ? json(*ck) : json(nullptr)},
           {"L", engine_->data().side()}}};
}

Service::Reply Service::environment(const std::string& id) const {
  return guarded([&]() -> Reply {
    const env::EnvironmentRecord* rec;
    try {
      rec = &engine_->data().find(id);
    } catch (const std::out_of_range&) {
      throw NotFound("unknown environment " + id);
    }
    const std::size_t side = rec->map.side();
    json bs = json::array(), sources = json::array();
    for (std::size_t i = 0; i < rec->ckms.size(); ++i) bs.push_back(bs_json(rec->ckms[i].owner(), i));
    for (auto i : app::default_sources(*rec, std::min(options_.sources, rec->ckms.size()))) {
      auto s = bs_json(rec->ckms[i].owner(), i);
      s["gray"] = app::encode_f32(rec->ckms[i].gray(), {side, side});
      sources.push_back(std::move(s));
    }
    return {200,
            {{"id", rec->id},
             {"L", side},
             {"occupancy", app::encode_u8(rec->map.occupancy(), {side, side})},
             {"bs", std::move(bs)},
             {"sources", std::move(sources)}}};
  });
}

Service::Reply Service::infer(const json& req) const {
  return guarded([&]() -> Reply {
    const auto c = parse_common(*engine_, options_, req);
    std::vector<env::BsLocation> targets;
    for (const auto& t : req.at("target_locations")) targets.push_back(app::target_location(c.rec->map, parse_cell(t)));
    if (targets.empty()) throw app::UsageError("target_locations is empty");
    const auto t0 = std::chrono::steady_clock::now();
    const auto maps = engine_->infer(c.method, *c.rec, c.sources, targets, c.sampler);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::size_t side = c.rec->map.side();
    json out = json::array();
    for (const auto& m : maps)
      out.push_back({{"row", m.owner().cell.row},
                     {"col", m.owner().cell.col},
                     {"gray", app::encode_f32(m.gray(), {side, side})},
                     {"seconds", seconds / static_cast<double>(maps.size())}});
    return {200,
            {{"env_id", c.rec->id},
             {"method", app::method_name(c.method)},
             {"seed", c.sampler.seed},
             {"sources", c.sources},
             {"mask", app::encode_u8(maps.front().mask(), {side, side})},
             {"total_seconds", seconds},
             {"targets", std::move(out)}}};
  });
}

Service::Reply Service::coverage(const json& req) const {
  return guarded([&]() -> Reply {
    const auto c = parse_common(*engine_, options_, req);
    const auto loc = app::target_location(c.rec->map, parse_cell(req.at("location")));
    const auto regions = parse_regions(req, c.rec->map);
    const double xi_star = req.at("xi_star").get<double>();
    const auto maps = engine_->infer_fn(c.method, *c.rec, c.sources, c.sampler)({loc});
    json labels = json::array();
    for (const auto& r : regions) labels.push_back(r.label);
    return {200,
            {{"env_id", c.rec->id},
             {"method", app::method_name(c.method)},
             {"quality", "1 - gray"},
             {"xi_star", xi_star},
             {"regions", labels},
             {"candidate", deploy::score_candidate(maps.front(), regions, xi_star).to_json()}}};
  });
}

Service::Reply Service::optimize(const json& req) {
  return guarded([&]() -> Reply {
    const auto c = parse_common(*engine_, options_, req);
    const auto regions = parse_regions(req, c.rec->map);
    const double xi_star = req.at("xi_star").get<double>();
    const std::size_t stride = req.value("stride", std::size_t{2});
    if (stride == 0) throw app::UsageError("stride must be positive");
    const auto candidates = deploy::candidate_grid(c.rec->map, stride);
    if (candidates.empty()) throw app::UsageError("no free candidate cell at stride " + std::to_string(stride));

    auto job = std::make_unique<Job>();
    job->total = candidates.size();
    Job* raw = job.get();
    std::string id;
    {
      std::lock_guard lock(jobs_mutex_);
      id = "job-" + std::to_string(next_job_++);
      jobs_.emplace(id, std::move(job));
    }
    auto infer = engine_->infer_fn(c.method, *c.rec, c.sources, c.sampler);
    deploy::OptimizeOptions opts;
    opts.batch = req.value("batch", options_.optimize_batch);
    opts.progress = [raw](std::size_t done, std::size_t) { raw->done = done; };
    const auto* map = &c.rec->map;
    raw->worker = std::thread([raw, infer, map, regions, xi_star, candidates, opts] {
      try {
        auto report = deploy::optimize_placement(infer, *map, regions, xi_star, candidates, opts).to_json();
        std::lock_guard lock(raw->mutex);
        raw->report = std::move(report);
      } catch (const std::exception& e) {
        std::lock_guard lock(raw->mutex);
        raw->error = e.what();
      }
      raw->finished = true;
    });
    return {202, {{"job_id", id}, {"total", candidates.size()}}};
  });
}

Service::Reply Service::job(const std::string& id) const {
  std::lock_guard lock(jobs_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return {404, error_body("unknown job " + id)};
  auto& j = *it->second;
  json body = {{"job_id", id}, {"done", j.done.load()}, {"total", j.total.load()}};
  if (!j.finished) {
    body["status"] = "running";
    body["report"] = nullptr;
    return {200, body};
  }
  std::lock_guard jl(j.mutex);
  body["status"] = j.error.empty() ? "done" : "failed";
  body["report"] = j.error.empty() ? j.report : json(nullptr);
  if (!j.error.empty()) body["error"] = j.error;
  return {200, body};
}

void Service::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse = [](const httplib::Request& req, json& out) {
    try {
      out = json::parse(req.body);
      return true;
    } catch (const json::exception&) {
      return false;
    }
  };
  auto post = [send, parse](std::function<Reply(const json&)> fn) {
    return [send, parse, fn](const httplib::Request& req, httplib::Response& res) {
      json body;
      if (!parse(req, body)) return send(res, {400, error_body("request body is not valid JSON")});
      send(res, fn(body));
    };
  };
  server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server.Get(R"(/v1/env/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, environment(req.matches[1]));
  });
  server.Get(R"(/v1/jobs/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, job(req.matches[1]));
  });
  server.Post("/v1/infer", post([this](const json& b) { return infer(b); }));
  server.Post("/v1/coverage", post([this](const json& b) { return coverage(b); }));
  server.Post("/v1/optimize", post([this](const json& b) { return optimize(b); }));
}

}  // namespace ckm::service
