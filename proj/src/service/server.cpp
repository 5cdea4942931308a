#include <atomic>
#include <cmath>
#include <map>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "json_io.hpp"
#include "knobs/log.hpp"
#include "knobs/service.hpp"

namespace knobs::service {

using nlohmann::json;

namespace {

constexpr std::ptrdiff_t kMaxSlots = 256;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  send_json(res, status, extra);
}

// "12" or "sae:12".
std::optional<std::size_t> parse_feature_id(std::string s) {
  if (s.rfind("sae:", 0) == 0) s = s.substr(4);
  if (s.empty() || s.size() > 18) return std::nullopt;
  for (char c : s)
    if (c < '0' || c > '9') return std::nullopt;
  return std::stoull(s);
}

std::optional<std::size_t> feature_id_from(const json& j) {
  if (j.is_number_unsigned()) return j.get<std::size_t>();
  if (j.is_number_integer()) {
    const auto v = j.get<std::int64_t>();
    return v < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(v));
  }
  if (j.is_string()) return parse_feature_id(j.get<std::string>());
  return std::nullopt;
}

json verdict_record_json(const VerdictRecord& v) {
  return {{"verdict", validation::to_string(v.verdict)}, {"annotator", v.annotator},
          {"note", v.note},                                {"timestamp", v.timestamp},
          {"disagreement", v.disagreement},                {"without_sweep", v.without_sweep}};
}

json sweep_summary_json(const SweepSummary& s) {
  json levels = json::array();
  for (const auto& l : s.levels) levels.push_back(detail::level_json(l));
  return {{"run_id", s.run_id}, {"report_path", s.report_path}, {"verdict", detail::monotonicity_json(s.verdict)},
          {"levels", levels}};
}

json validity_json(const validation::ValidityVerdict& v) {
  return {{"valid", v.valid}, {"reason", v.reason ? json(validation::to_string(*v.reason)) : json(nullptr)}};
}

std::string sse_event(const char* name, const json& data) {
  return std::string("event: ") + name + "\ndata: " + data.dump() + "\n\n";
}

}  // namespace

struct Server::Impl {
  struct SweepRun {
    std::string id;
    std::size_t feature = 0;
    std::string status = "running";
    std::string error;
    std::optional<validation::SweepReport> report;
    std::string report_path;
  };

  ServiceResources res;
  std::unique_ptr<StoreLock> lock;
  RunLedger ledger;
  std::string digest;
  std::string lm_digest;
  std::string sae_digest;

  mutable std::mutex snapshot_mutex;
  std::shared_ptr<const FeatureStore> current;
  std::mutex writer_mutex;

  std::map<std::string, steering::SteeringVector> vectors;  // by label
  std::counting_semaphore<kMaxSlots> slots;

  std::mutex sweeps_mutex;
  std::map<std::string, SweepRun> runs;
  std::vector<std::jthread> sweep_threads;
  std::mutex sweep_serial;
  std::atomic<std::size_t> next_run{1};

  httplib::Server http;

  explicit Impl(ServiceResources r)
      : res(std::move(r)),
        lock(std::make_unique<StoreLock>(res.store_path)),
        ledger(res.ledger_path),
        digest(config_digest(res.config)),
        slots(static_cast<std::ptrdiff_t>(std::min<std::size_t>(res.config.server.generation_workers, kMaxSlots))) {
    if (!res.lm) throw ConfigError("service: a language model is required");
    current = std::make_shared<const FeatureStore>(load_store(res.store_path));
    lm_digest = digest_of(current->lm_checkpoint);
    sae_digest = digest_of(current->sae_checkpoint);

    for (auto& v : res.vectors) vectors.emplace(v.label(), v);
    if (res.sae) {
      for (const auto& f : current->features) {
        const std::string label = "sae:" + std::to_string(f.id());
        if (vectors.count(label) || f.id() >= res.sae->params.features()) continue;
        vectors.emplace(label, steering::make_sae_vector(res.sae->params, res.sae->stats, f.id(),
                                                         res.config.sae_alpha, f.candidate.layer));
      }
    }

    const std::size_t threads = res.config.server.http_threads;
    http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    http.set_logger([](const httplib::Request& req, const httplib::Response& r) {
      log::info(req.method + " " + req.path + " -> " + std::to_string(r.status));
    });
    routes();
    if (!res.config.server.static_dir.empty() && std::filesystem::is_directory(res.config.server.static_dir))
      http.set_mount_point("/", res.config.server.static_dir);
  }

  static std::string digest_of(const std::string& path) {
    std::error_code ec;
    if (path.empty() || !std::filesystem::is_regular_file(path, ec)) return {};
    return file_sha256(path);
  }

  std::shared_ptr<const FeatureStore> snapshot() const {
    std::lock_guard g(snapshot_mutex);
    return current;
  }

  void publish(std::shared_ptr<const FeatureStore> next) {
    std::lock_guard g(snapshot_mutex);
    current = std::move(next);
  }

  // Copy, mutate, persist, publish, log: one writer at a time.
  template <class Fn>
  auto mutate(const std::string& command, const std::string& detail, Fn&& fn) {
    std::lock_guard g(writer_mutex);
    auto next = std::make_shared<FeatureStore>(*snapshot());
    auto result = fn(*next);
    write_store_locked(*next, res.store_path);
    publish(next);
    ledger.append(make_ledger_record(command, digest, {}, {res.store_path.string()}, detail));
    return result;
  }

  json feature_json(const FeatureRecord& f) const {
    const auto& c = f.candidate;
    json j = detail::candidate_json(c);
    j["id"] = f.id();
    j["label"] = "sae:" + std::to_string(f.id());
    j["polarity"] = corpus::to_string(c.dominant);
    j["phi"] = f.phi ? json(*f.phi) : json(nullptr);
    j["steerable"] = vectors.count("sae:" + std::to_string(f.id())) > 0;
    if (f.sweep) {
      j["sweep"] = sweep_summary_json(*f.sweep);
      j["rho"] = f.sweep->verdict.rho ? json(*f.sweep->verdict.rho) : json(nullptr);
      j["automatic"] = validation::to_string(f.sweep->verdict.status);
      j["automatic_pass"] = f.sweep->verdict.status == validation::VerdictStatus::pass;
    } else {
      j["sweep"] = nullptr;
      j["rho"] = nullptr;
      j["automatic"] = nullptr;
      j["automatic_pass"] = nullptr;
    }
    j["status"] = validation::to_string(f.status());
    j["disagreement"] = !f.verdicts.empty() && f.verdicts.back().disagreement;
    json history = json::array();
    for (const auto& v : f.verdicts) history.push_back(verdict_record_json(v));
    j["verdicts"] = history;
    return j;
  }

  void routes() {
    http.Get("/api/health", [this](const httplib::Request&, httplib::Response& r) { health(r); });
    http.Get("/api/features", [this](const httplib::Request&, httplib::Response& r) { list_features(r); });
    http.Get(R"(/api/features/([^/]+))",
             [this](const httplib::Request& q, httplib::Response& r) { feature_detail(q, r); });
    http.Post("/api/steer", [this](const httplib::Request& q, httplib::Response& r) { steer(q, r); });
    http.Get("/api/heatmap", [this](const httplib::Request& q, httplib::Response& r) { heatmap(q, r); });
    http.Post(R"(/api/sweep/([^/]+))", [this](const httplib::Request& q, httplib::Response& r) { launch_sweep(q, r); });
    http.Get(R"(/api/sweep/([^/]+))", [this](const httplib::Request& q, httplib::Response& r) { poll_sweep(q, r); });
    http.Post("/api/verdict", [this](const httplib::Request& q, httplib::Response& r) { verdict(q, r); });
    http.set_exception_handler([](const httplib::Request&, httplib::Response& r, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(r, 500, e.what());
      } catch (...) {
        send_error(r, 500, "internal error");
      }
    });
  }

  void health(httplib::Response& r) const {
    const auto s = snapshot();
    json vector_labels = json::array();
    for (const auto& [label, v] : vectors) vector_labels.push_back(label);
    send_json(r, 200,
              {{"status", "ok"},
               {"version", kToolVersion},
               {"store_version", s->version},
               {"config_digest", digest},
               {"checkpoints",
                {{"lm", {{"path", s->lm_checkpoint}, {"digest", lm_digest}}},
                 {"sae", res.sae ? json{{"path", s->sae_checkpoint}, {"digest", sae_digest}} : json(nullptr)}}},
               {"features", s->features.size()},
               {"vectors", vector_labels}});
  }

  void list_features(httplib::Response& r) const {
    const auto s = snapshot();
    json features = json::array();
    for (const auto& f : s->features) features.push_back(feature_json(f));
    json caa = json::array();
    for (const auto& [label, v] : vectors)
      if (std::holds_alternative<steering::CaaSource>(v.source))
        caa.push_back({{"id", std::get<steering::CaaSource>(v.source).pair_set}, {"label", label}, {"layer", v.layer}});
    send_json(r, 200, {{"features", features}, {"caa", caa}, {"count", s->features.size()}});
  }

  void feature_detail(const httplib::Request& q, httplib::Response& r) const {
    const auto id = parse_feature_id(q.matches[1]);
    const auto s = snapshot();
    const FeatureRecord* f = id ? s->find(*id) : nullptr;
    if (!f) return send_error(r, 404, "unknown feature '" + std::string(q.matches[1]) + "'");
    send_json(r, 200, feature_json(*f));
  }

  static std::optional<json> parse_body(const httplib::Request& q, httplib::Response& r) {
    try {
      json j = q.body.empty() ? json::object() : json::parse(q.body);
      if (!j.is_object()) {
        send_error(r, 400, "request body must be a JSON object");
        return std::nullopt;
      }
      return j;
    } catch (const json::parse_error& e) {
      send_error(r, 400, "malformed JSON at byte " + std::to_string(e.byte));
      return std::nullopt;
    }
  }

  // Resolves the steering vector named by a request; sends the error itself.
  const steering::SteeringVector* resolve_vector(const json& body, httplib::Response& r) const {
    const bool has_feature = body.contains("feature"), has_caa = body.contains("caa");
    if (has_feature == has_caa) {
      send_error(r, 400, "give exactly one of 'feature' or 'caa'");
      return nullptr;
    }
    std::string label;
    if (has_feature) {
      const auto id = feature_id_from(body["feature"]);
      if (!id || !snapshot()->find(*id)) {
        send_error(r, 404, "unknown feature " + body["feature"].dump());
        return nullptr;
      }
      label = "sae:" + std::to_string(*id);
    } else {
      if (!body["caa"].is_string()) {
        send_error(r, 400, "'caa' must be a string");
        return nullptr;
      }
      label = body["caa"].get<std::string>();
      if (label.rfind("caa:", 0) != 0) label = "caa:" + label;
    }
    const auto it = vectors.find(label);
    if (it == vectors.end()) {
      send_error(r, 404, "no cached steering vector for " + label);
      return nullptr;
    }
    return &it->second;
  }

  bool alpha_in_bounds(double alpha, httplib::Response& r) const {
    const double bound = res.config.server.alpha_bound;
    if (std::isfinite(alpha) && std::abs(alpha) <= bound) return true;
    send_error(r, 400, "alpha outside the allowed range", {{"bounds", {-bound, bound}}});
    return false;
  }

  void steer(const httplib::Request& q, httplib::Response& r) {
    const auto body = parse_body(q, r);
    if (!body) return;
    const steering::SteeringVector* base = resolve_vector(*body, r);
    if (!base) return;

    lm::SamplerSettings sampler = res.config.sampler;
    double alpha = std::holds_alternative<steering::CaaSource>(base->source) ? res.config.caa_alpha : res.config.sae_alpha;
    std::string prompt;
    try {
      if (body->contains("alpha")) alpha = body->at("alpha").get<double>();
      if (!body->contains("prompt")) return send_error(r, 400, "missing 'prompt'");
      prompt = body->at("prompt").get<std::string>();
      if (body->contains("max_new_tokens")) sampler.max_new_tokens = body->at("max_new_tokens").get<std::size_t>();
      if (body->contains("seed")) sampler.seed = body->at("seed").get<std::uint64_t>();
      if (body->contains("temperature")) sampler.temperature = body->at("temperature").get<double>();
    } catch (const json::exception&) {
      return send_error(r, 400, "malformed steer request");
    }
    if (!alpha_in_bounds(alpha, r)) return;
    if (sampler.max_new_tokens > res.config.server.steer_max_new_tokens)
      return send_error(r, 400, "max_new_tokens above the server limit",
                        {{"limit", res.config.server.steer_max_new_tokens}});
    if (!(sampler.temperature >= 0.0)) return send_error(r, 400, "temperature must be ≥ 0");

    auto vector = std::make_shared<steering::SteeringVector>(base->with_alpha(alpha));
    auto lm = res.lm;
    r.set_header("Cache-Control", "no-cache");
    r.set_chunked_content_provider(
        "text/event-stream",
        [this, vector, lm, sampler, prompt](std::size_t, httplib::DataSink& sink) {
          slots.acquire();
          struct Release {
            std::counting_semaphore<kMaxSlots>& s;
            ~Release() { s.release(); }
          } release{slots};
          try {
            std::size_t index = 0;
            const auto out = steering::steered_generate(
                prompt, *lm, *vector, sampler, [&](int token, std::string_view piece) {
                  const auto e = sse_event("token", {{"index", index++}, {"token", token}, {"text", piece}});
                  sink.write(e.data(), e.size());
                });
            const auto validity = validation::validity_check(out.continuation);
            const auto e = sse_event("done", {{"vector", vector->label()},
                                              {"alpha", vector->alpha},
                                              {"layer", vector->layer},
                                              {"seed", sampler.seed},
                                              {"temperature", sampler.temperature},
                                              {"baseline", vector->alpha == 0.0},
                                              {"prompt", prompt},
                                              {"text", out.continuation},
                                              {"full_text", out.text},
                                              {"truncated", out.truncated},
                                              {"validity", validity_json(validity)}});
            sink.write(e.data(), e.size());
          } catch (const std::exception& ex) {
            const auto e = sse_event("error", {{"error", ex.what()}});
            sink.write(e.data(), e.size());
          }
          sink.done();
          return true;
        });
  }

  void heatmap(const httplib::Request& q, httplib::Response& r) const {
    if (!res.sae) return send_error(r, 503, "no SAE checkpoint loaded");
    if (!q.has_param("text") || !q.has_param("feature"))
      return send_error(r, 400, "heatmap needs 'text' and 'feature'");
    const auto feature = parse_feature_id(q.get_param_value("feature"));
    if (!feature || *feature >= res.sae->params.features())
      return send_error(r, 404, "unknown feature '" + q.get_param_value("feature") + "'");
    std::size_t layer = res.config.retrieval.layer;
    if (const FeatureRecord* f = snapshot()->find(*feature)) layer = f->candidate.layer;
    if (q.has_param("layer")) {
      const auto l = parse_feature_id(q.get_param_value("layer"));
      if (!l) return send_error(r, 400, "layer must be a non-negative integer");
      layer = *l;
    }
    if (layer >= res.lm->config.n_layers) return send_error(r, 400, "layer out of range");
    const std::string format = q.has_param("format") ? q.get_param_value("format") : "json";
    if (format != "json" && format != "html" && format != "ansi")
      return send_error(r, 400, "format must be json, html or ansi");

    harness::HeatmapRecord record;
    try {
      record = harness::token_heatmap(q.get_param_value("text"), *res.lm, res.sae->params, layer, *feature);
    } catch (const LengthError& e) {
      return send_error(r, 400, e.what());
    }
    json tokens = json::array();
    double peak = 0.0;
    for (std::size_t i = 0; i < record.spans.size(); ++i) {
      const auto& s = record.spans[i];
      tokens.push_back({{"id", s.id},
                        {"begin", s.begin},
                        {"end", s.end},
                        {"text", record.text.substr(s.begin, s.end - s.begin)},
                        {"activation", record.activations[i]}});
      peak = std::max(peak, record.activations[i]);
    }
    json body = {{"text", record.text}, {"feature", record.feature}, {"layer", record.layer},
                 {"tokens", tokens},    {"max", peak}};
    if (format != "json") body["rendered"] = harness::render_heatmap(record, harness::heatmap_format_from_string(format));
    send_json(r, 200, body);
  }

  void launch_sweep(const httplib::Request& q, httplib::Response& r) {
    const auto id = parse_feature_id(q.matches[1]);
    const auto s = snapshot();
    const FeatureRecord* f = id ? s->find(*id) : nullptr;
    if (!f) return send_error(r, 404, "unknown feature '" + std::string(q.matches[1]) + "'");
    const auto vit = vectors.find("sae:" + std::to_string(*id));
    if (vit == vectors.end()) return send_error(r, 404, "no cached steering vector for feature " + std::to_string(*id));
    if (res.questions.empty()) return send_error(r, 409, "no sweep questions loaded");
    if (!res.lexicon) return send_error(r, 409, "no lexicon loaded for sweep scoring");
    const auto body = parse_body(q, r);
    if (!body) return;

    validation::SweepConfig cfg = res.config.sweep;
    cfg.workers = res.config.server.generation_workers;
    std::vector<corpus::ValidationQuestion> questions = res.questions;
    try {
      if (body->contains("alphas")) cfg.alphas = body->at("alphas").get<std::vector<double>>();
      if (body->contains("replicates")) cfg.replicates = body->at("replicates").get<std::size_t>();
      if (body->contains("max_new_tokens")) cfg.max_new_tokens = body->at("max_new_tokens").get<std::size_t>();
      if (body->contains("seed_base")) cfg.seed_base = body->at("seed_base").get<std::uint64_t>();
      if (body->contains("temperature")) cfg.temperature = body->at("temperature").get<double>();
      if (body->contains("questions")) {
        const auto n = body->at("questions").get<std::size_t>();
        if (n == 0) return send_error(r, 400, "questions must be ≥ 1");
        if (n < questions.size()) questions.resize(n);
      }
      cfg.validate();
    } catch (const json::exception&) {
      return send_error(r, 400, "malformed sweep request");
    } catch (const ConfigError& e) {
      return send_error(r, 400, e.what());
    }
    for (double a : cfg.alphas)
      if (!alpha_in_bounds(a, r)) return;
    if (cfg.max_new_tokens > res.config.server.steer_max_new_tokens)
      return send_error(r, 400, "max_new_tokens above the server limit",
                        {{"limit", res.config.server.steer_max_new_tokens}});

    const std::string run_id = "run-" + std::to_string(next_run++);
    {
      std::lock_guard g(sweeps_mutex);
      runs[run_id] = SweepRun{run_id, *id, "running", {}, std::nullopt, {}};
      sweep_threads.emplace_back([this, run_id, feature = *id, delta = f->candidate.delta, vector = vit->second,
                                  cfg, questions] { run_sweep(run_id, feature, delta, vector, cfg, questions); });
    }
    send_json(r, 202, {{"run_id", run_id}, {"feature", *id}, {"status", "running"}});
  }

  void run_sweep(const std::string& run_id, std::size_t feature, double delta_f,
                 const steering::SteeringVector& vector, const validation::SweepConfig& cfg,
                 const std::vector<corpus::ValidationQuestion>& questions) {
    std::lock_guard serial(sweep_serial);
    std::string detail = run_id + " feature=" + std::to_string(feature);
    try {
      auto raw = validation::alpha_sweep(vector, questions, *res.lm, cfg);
      std::unique_ptr<validation::RemoteJudge> judge;
      if (!res.config.judge.base_url.empty()) judge = std::make_unique<validation::RemoteJudge>(res.config.judge);
      validation::score_sweep(raw, *res.lexicon, judge.get());
      auto report = validation::monotonicity_verdict(raw, res.config.monotonicity, delta_f);
      std::string report_path;
      if (!res.sweep_dir.empty()) {
        std::filesystem::create_directories(res.sweep_dir);
        report_path = (res.sweep_dir / (run_id + ".json")).string();
        validation::save_report(report, report_path);
      }
      mutate("api:sweep", detail + " status=" + validation::to_string(report.verdict.status),
             [&](FeatureStore& s) {
               attach_sweep(s, feature, report, run_id, report_path);
               return 0;
             });
      std::lock_guard g(sweeps_mutex);
      auto& run = runs[run_id];
      run.status = "done";
      run.report = std::move(report);
      run.report_path = report_path;
    } catch (const std::exception& e) {
      log::warn("sweep " + run_id + " failed: " + e.what());
      try {
        ledger.append(make_ledger_record("api:sweep", digest, {}, {}, detail + " failed: " + e.what()));
      } catch (const std::exception& le) {
        log::warn(std::string("ledger append failed: ") + le.what());
      }
      std::lock_guard g(sweeps_mutex);
      auto& run = runs[run_id];
      run.status = "failed";
      run.error = e.what();
    }
  }

  void poll_sweep(const httplib::Request& q, httplib::Response& r) {
    std::lock_guard g(sweeps_mutex);
    const auto it = runs.find(q.matches[1]);
    if (it == runs.end()) return send_error(r, 404, "unknown sweep run '" + std::string(q.matches[1]) + "'");
    const auto& run = it->second;
    json j = {{"run_id", run.id}, {"feature", run.feature}, {"status", run.status}};
    if (!run.error.empty()) j["error"] = run.error;
    if (run.report) {
      json levels = json::array();
      for (const auto& l : run.report->levels) levels.push_back(detail::level_json(l));
      j["levels"] = levels;
      j["verdict"] = detail::monotonicity_json(run.report->verdict);
      j["delta_f"] = run.report->delta_f ? json(*run.report->delta_f) : json(nullptr);
      j["cells"] = run.report->cells.size();
      j["report_path"] = run.report_path;
    }
    send_json(r, 200, j);
  }

  void verdict(const httplib::Request& q, httplib::Response& r) {
    const auto body = parse_body(q, r);
    if (!body) return;
    if (!body->contains("feature")) return send_error(r, 400, "missing 'feature'");
    const auto id = feature_id_from(body->at("feature"));
    if (!id || !snapshot()->find(*id)) return send_error(r, 404, "unknown feature " + body->at("feature").dump());
    validation::HumanVerdict verdict;
    std::string annotator, note;
    try {
      verdict = validation::human_verdict_from_string(body->at("verdict").get<std::string>());
      annotator = body->at("annotator").get<std::string>();
      if (body->contains("note")) note = body->at("note").get<std::string>();
    } catch (const std::exception&) {
      return send_error(r, 400, "verdict needs 'verdict' (accepted|rejected) and 'annotator'");
    }
    if (verdict == validation::HumanVerdict::pending) return send_error(r, 400, "verdict must be accepted or rejected");
    if (annotator.empty()) return send_error(r, 400, "annotator must be nonempty");

    const std::string detail = "feature=" + std::to_string(*id) + " verdict=" + validation::to_string(verdict) +
                               " annotator=" + annotator;
    VerdictRecord recorded;
    try {
      recorded = mutate("api:verdict", detail, [&](FeatureStore& s) {
        return record_verdict(s, *id, verdict, annotator, note, utc_timestamp());
      });
    } catch (const NotFoundError& e) {
      return send_error(r, 404, e.what());
    }
    const auto s = snapshot();
    json out = {{"feature", feature_json(*s->find(*id))}, {"recorded", verdict_record_json(recorded)}};
    if (recorded.without_sweep) out["warning"] = "no sweep summary for this feature";
    send_json(r, 200, out);
  }
};

Server::Server(ServiceResources resources) : impl_(std::make_unique<Impl>(std::move(resources))) {}

Server::~Server() {
  impl_->http.stop();
  wait_for_sweeps();
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw ConfigError("cannot bind " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() { impl_->http.stop(); }

void Server::wait_for_sweeps() {
  std::vector<std::jthread> threads;
  {
    std::lock_guard g(impl_->sweeps_mutex);
    threads.swap(impl_->sweep_threads);
  }
  threads.clear();  // joins
}

std::shared_ptr<const FeatureStore> Server::snapshot() const { return impl_->snapshot(); }

}  // namespace knobs::service
