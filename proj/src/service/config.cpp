#include <fstream>
#include <sstream>

#include <json.hpp>

#include "knobs/service.hpp"

namespace knobs::service {

using nlohmann::json;

namespace {

const char* tokenizer_name(lm::TokenizerMode m) { return m == lm::TokenizerMode::byte ? "byte" : "word"; }

json to_json(const AppConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["lm"] = {{"tokenizer", tokenizer_name(c.tokenizer)},
             {"vocab_size", c.lm.vocab_size},
             {"d_model", c.lm.d_model},
             {"n_layers", c.lm.n_layers},
             {"n_heads", c.lm.n_heads},
             {"context", c.lm.context},
             {"d_ff", c.lm.d_ff},
             {"steps", c.lm_steps},
             {"learning_rate", c.lm_train.learning_rate},
             {"batch_size", c.lm_train.batch_size},
             {"holdout_fraction", c.lm_train.holdout_fraction},
             {"grad_clip", c.lm_train.grad_clip},
             {"log_every", c.lm_train.log_every}};
  j["sampler"] = {{"max_new_tokens", c.sampler.max_new_tokens}, {"temperature", c.sampler.temperature}};
  j["sae"] = {{"features", c.sae.features},
              {"lambda_sparsity", c.sae.lambda_sparsity},
              {"learning_rate", c.sae.learning_rate},
              {"steps", c.sae.steps},
              {"batch_size", c.sae.batch_size},
              {"resample_interval", c.sae.resample_interval}};
  j["retrieval"] = {{"tau1", c.retrieval.tau1},
                    {"tau2", c.retrieval.tau2},
                    {"top_k", c.retrieval.top_k},
                    {"layer", c.retrieval.layer}};
  j["steering"] = {{"sae_alpha", c.sae_alpha}, {"caa_alpha", c.caa_alpha}};
  j["sweep"] = {{"alphas", c.sweep.alphas},
                {"question_set", c.sweep.question_set},
                {"replicates", c.sweep.replicates},
                {"seed_base", c.sweep.seed_base},
                {"max_new_tokens", c.sweep.max_new_tokens},
                {"temperature", c.sweep.temperature},
                {"workers", c.sweep.workers}};
  j["monotonicity"] = {{"rho_threshold", c.monotonicity.rho_threshold},
                       {"effect_floor", c.monotonicity.effect_floor},
                       {"min_levels", c.monotonicity.min_levels}};
  j["judge"] = {{"endpoint", c.judge.base_url},
                {"route", c.judge.route},
                {"token_env", c.judge.token_env},
                {"model", c.judge.model},
                {"timeout_seconds", c.judge.timeout_seconds},
                {"max_attempts", c.judge.max_attempts},
                {"backoff_seconds", c.judge.backoff_seconds},
                {"max_concurrent", c.judge.max_concurrent}};
  j["questionnaire"] = {{"max_new_tokens", c.questionnaire.max_new_tokens},
                        {"temperature", c.questionnaire.temperature},
                        {"workers", c.questionnaire.workers}};
  j["planted"] = {{"lexicon_a", c.planted.lexicon_a},
                  {"lexicon_b", c.planted.lexicon_b},
                  {"filler", c.planted.filler},
                  {"situation_min", c.planted.situation_min},
                  {"situation_max", c.planted.situation_max},
                  {"reaction_min", c.planted.reaction_min},
                  {"reaction_max", c.planted.reaction_max},
                  {"lexicon_rate", c.planted.lexicon_rate},
                  {"pair_count", c.planted.pair_count},
                  {"marker_token", c.planted.marker_token ? json(*c.planted.marker_token) : json(nullptr)},
                  {"trait", c.planted.trait},
                  {"facet", c.planted.facet}};
  j["server"] = {{"host", c.server.host},
                 {"port", c.server.port},
                 {"alpha_bound", c.server.alpha_bound},
                 {"generation_workers", c.server.generation_workers},
                 {"http_threads", c.server.http_threads},
                 {"steer_max_new_tokens", c.server.steer_max_new_tokens},
                 {"static_dir", c.server.static_dir}};
  return j;
}

void check_keys(const json& user, const json& defaults, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("config: unknown key '" + name + "'");
    if (defaults[key].is_object()) check_keys(value, defaults[key], name);
  }
}

void overlay(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (base[key].is_object()) overlay(base[key], value);
    else base[key] = value;
  }
}

class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  template <class T>
  void operator()(const char* section, const char* key, T& out) const {
    const std::string name = std::string(section) + "." + key;
    try {
      out = root_.at(section).at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: key '" + name + "' has the wrong type");
    }
  }

 private:
  const json& root_;
};

AppConfig from_json(const json& j) {
  AppConfig c;
  const Reader read(j);
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("config: key 'seed' has the wrong type");
  }
  std::string tokenizer;
  read("lm", "tokenizer", tokenizer);
  if (tokenizer == "byte") c.tokenizer = lm::TokenizerMode::byte;
  else if (tokenizer == "word") c.tokenizer = lm::TokenizerMode::word;
  else throw ConfigError("config: lm.tokenizer must be byte or word");
  read("lm", "vocab_size", c.lm.vocab_size);
  read("lm", "d_model", c.lm.d_model);
  read("lm", "n_layers", c.lm.n_layers);
  read("lm", "n_heads", c.lm.n_heads);
  read("lm", "context", c.lm.context);
  read("lm", "d_ff", c.lm.d_ff);
  read("lm", "steps", c.lm_steps);
  read("lm", "learning_rate", c.lm_train.learning_rate);
  read("lm", "batch_size", c.lm_train.batch_size);
  read("lm", "holdout_fraction", c.lm_train.holdout_fraction);
  read("lm", "grad_clip", c.lm_train.grad_clip);
  read("lm", "log_every", c.lm_train.log_every);
  read("sampler", "max_new_tokens", c.sampler.max_new_tokens);
  read("sampler", "temperature", c.sampler.temperature);
  read("sae", "features", c.sae.features);
  read("sae", "lambda_sparsity", c.sae.lambda_sparsity);
  read("sae", "learning_rate", c.sae.learning_rate);
  read("sae", "steps", c.sae.steps);
  read("sae", "batch_size", c.sae.batch_size);
  read("sae", "resample_interval", c.sae.resample_interval);
  read("retrieval", "tau1", c.retrieval.tau1);
  read("retrieval", "tau2", c.retrieval.tau2);
  read("retrieval", "top_k", c.retrieval.top_k);
  read("retrieval", "layer", c.retrieval.layer);
  read("steering", "sae_alpha", c.sae_alpha);
  read("steering", "caa_alpha", c.caa_alpha);
  read("sweep", "alphas", c.sweep.alphas);
  read("sweep", "question_set", c.sweep.question_set);
  read("sweep", "replicates", c.sweep.replicates);
  read("sweep", "seed_base", c.sweep.seed_base);
  read("sweep", "max_new_tokens", c.sweep.max_new_tokens);
  read("sweep", "temperature", c.sweep.temperature);
  read("sweep", "workers", c.sweep.workers);
  read("monotonicity", "rho_threshold", c.monotonicity.rho_threshold);
  read("monotonicity", "effect_floor", c.monotonicity.effect_floor);
  read("monotonicity", "min_levels", c.monotonicity.min_levels);
  read("judge", "endpoint", c.judge.base_url);
  read("judge", "route", c.judge.route);
  read("judge", "token_env", c.judge.token_env);
  read("judge", "model", c.judge.model);
  read("judge", "timeout_seconds", c.judge.timeout_seconds);
  read("judge", "max_attempts", c.judge.max_attempts);
  read("judge", "backoff_seconds", c.judge.backoff_seconds);
  read("judge", "max_concurrent", c.judge.max_concurrent);
  read("questionnaire", "max_new_tokens", c.questionnaire.max_new_tokens);
  read("questionnaire", "temperature", c.questionnaire.temperature);
  read("questionnaire", "workers", c.questionnaire.workers);
  read("planted", "lexicon_a", c.planted.lexicon_a);
  read("planted", "lexicon_b", c.planted.lexicon_b);
  read("planted", "filler", c.planted.filler);
  read("planted", "situation_min", c.planted.situation_min);
  read("planted", "situation_max", c.planted.situation_max);
  read("planted", "reaction_min", c.planted.reaction_min);
  read("planted", "reaction_max", c.planted.reaction_max);
  read("planted", "lexicon_rate", c.planted.lexicon_rate);
  read("planted", "pair_count", c.planted.pair_count);
  const json& marker = j.at("planted").at("marker_token");
  if (marker.is_null()) c.planted.marker_token.reset();
  else if (marker.is_string()) c.planted.marker_token = marker.get<std::string>();
  else throw ConfigError("config: key 'planted.marker_token' has the wrong type");
  read("planted", "trait", c.planted.trait);
  read("planted", "facet", c.planted.facet);
  read("server", "host", c.server.host);
  read("server", "port", c.server.port);
  read("server", "alpha_bound", c.server.alpha_bound);
  read("server", "generation_workers", c.server.generation_workers);
  read("server", "http_threads", c.server.http_threads);
  read("server", "steer_max_new_tokens", c.server.steer_max_new_tokens);
  read("server", "static_dir", c.server.static_dir);
  c.sae.seed = c.seed;
  c.planted.seed = c.seed;
  c.questionnaire.seed = c.seed;
  return c;
}

}  // namespace

void AppConfig::validate() const {
  lm.validate();
  sae.validate();
  retrieval.validate();
  sweep.validate();
  if (retrieval.layer >= lm.n_layers) throw ConfigError("config: retrieval.layer must be below lm.n_layers");
  if (!(server.alpha_bound > 0.0)) throw ConfigError("config: server.alpha_bound must be positive");
  if (server.generation_workers == 0) throw ConfigError("config: server.generation_workers must be ≥ 1");
  if (server.http_threads == 0) throw ConfigError("config: server.http_threads must be ≥ 1");
  if (server.port < 0 || server.port > 65535) throw ConfigError("config: server.port out of range");
  if (!(monotonicity.rho_threshold > 0.0 && monotonicity.rho_threshold <= 1.0))
    throw ConfigError("config: monotonicity.rho_threshold must be in (0, 1]");
  if (monotonicity.effect_floor < 0.0) throw ConfigError("config: monotonicity.effect_floor must be ≥ 0");
  if (judge.max_attempts < 1) throw ConfigError("config: judge.max_attempts must be ≥ 1");
}

AppConfig parse_config(std::string_view text, std::string_view origin) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(origin) + ": parse error at byte " + std::to_string(e.byte));
  }
  const AppConfig defaults;
  json merged = to_json(defaults);
  check_keys(user, merged, "");
  overlay(merged, user);
  AppConfig c = from_json(merged);
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string config_text(const AppConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string config_digest(const AppConfig& config) { return sha256_hex(to_json(config).dump()); }

}  // namespace knobs::service
