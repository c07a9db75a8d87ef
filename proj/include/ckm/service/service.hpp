#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ckm/app/engine.hpp"

// JSON API under /v1:
//   GET  /v1/health            {status, checkpoint, L}
//   GET  /v1/env/{id}          occupancy + BS list + source CKMs
//   POST /v1/infer             {env_id, target_locations: [{row, col}], seed}
//   POST /v1/coverage          {env_id, location: {row, col}, regions, xi_star}
//   POST /v1/optimize          {env_id, regions, xi_star, stride} -> 202 {job_id}
//   GET  /v1/jobs/{id}         progress and, once done, the report
// Optional request fields: method (model | distance | regression |
// ground-truth), sources (count), steps (sampler steps).
// Arrays travel as base64 little-endian f32 with a shape.

namespace ckm::service {

struct ServiceOptions {
  std::size_t sources = 5;
  std::size_t sampler_steps = 50;
  std::size_t optimize_batch = 8;
};

class Service {
 public:
  Service(std::shared_ptr<const app::Engine> engine, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void mount(httplib::Server& server);

  // Route bodies, callable without a socket. Each returns (status, body).
  struct Reply {
    int status = 200;
    nlohmann::json body;
  };
  Reply health() const;
  Reply environment(const std::string& id) const;
  Reply infer(const nlohmann::json& request) const;
  Reply coverage(const nlohmann::json& request) const;
  Reply optimize(const nlohmann::json& request);
  Reply job(const std::string& id) const;

  /// Blocks until every optimize job has finished.
  void wait_for_jobs();

 private:
  struct Job {
    std::atomic<std::size_t> done{0};
    std::atomic<std::size_t> total{0};
    std::atomic<bool> finished{false};
    std::mutex mutex;
    nlohmann::json report;
    std::string error;
    std::thread worker;
  };

  template <typename F>
  Reply guarded(F&& body) const;

  std::shared_ptr<const app::Engine> engine_;
  ServiceOptions options_;
  mutable std::mutex jobs_mutex_;
  std::map<std::string, std::unique_ptr<Job>> jobs_;
  std::size_t next_job_ = 1;
};

}  // namespace ckm::service
