// Command-line front end: one subcommand per pipeline stage plus `serve`.

#include <pthread.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "knobs/corpus.hpp"
#include "knobs/harness.hpp"
#include "knobs/log.hpp"
#include "knobs/pipeline.hpp"
#include "knobs/retrieval.hpp"
#include "knobs/sae.hpp"
#include "knobs/service.hpp"
#include "knobs/steering.hpp"
#include "knobs/validation.hpp"

namespace fs = std::filesystem;
using namespace knobs;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

struct Context {
  service::AppConfig config;
  fs::path out;
  std::string digest;

  fs::path output(const std::string& name) const { return out / name; }

  void record(const std::string& command, const std::vector<fs::path>& inputs,
              const std::vector<fs::path>& outputs, const std::string& detail = {}) const {
    std::vector<std::string> names;
    for (const auto& p : outputs) names.push_back(p.string());
    service::RunLedger(out / "ledger.jsonl")
        .append(service::make_ledger_record(command, digest, inputs, names, detail));
  }
};

Context make_context(const Globals& g) {
  Context c;
  if (!g.config_path.empty()) c.config = service::load_config(g.config_path);
  if (g.seed) {
    c.config.seed = *g.seed;
    c.config.sae.seed = *g.seed;
    c.config.planted.seed = *g.seed;
    c.config.questionnaire.seed = *g.seed;
  }
  if (c.config.judge.base_url.empty()) c.config.judge.base_url = validation::JudgeConfig::from_env().base_url;
  c.config.validate();
  c.out = g.out_dir;
  fs::create_directories(c.out);
  c.digest = service::config_digest(c.config);
  return c;
}

validation::Lexicon load_lexicon(const std::string& lexicon_path, const std::string& manifest_path) {
  if (!manifest_path.empty()) {
    const auto m = corpus::load_manifest(manifest_path);
    return {m.positive_lexicon, m.negative_lexicon};
  }
  std::ifstream in(lexicon_path);
  if (!in) throw NotFoundError("cannot open lexicon " + lexicon_path);
  const auto j = nlohmann::json::parse(in);
  validation::Lexicon lex{j.at("positive").get<std::vector<std::string>>(),
                          j.at("negative").get<std::vector<std::string>>()};
  lex.validate();
  return lex;
}

std::vector<steering::SteeringVector> load_vectors_if_present(const fs::path& path) {
  return fs::exists(path) ? steering::load_vectors(path) : std::vector<steering::SteeringVector>{};
}

void upsert(std::vector<steering::SteeringVector>& vectors, steering::SteeringVector v) {
  for (auto& existing : vectors)
    if (existing.label() == v.label()) {
      existing = std::move(v);
      return;
    }
  vectors.push_back(std::move(v));
}

const steering::SteeringVector& find_vector(const std::vector<steering::SteeringVector>& vectors,
                                            const std::string& label) {
  for (const auto& v : vectors)
    if (v.label() == label) return v;
  throw NotFoundError("no steering vector '" + label + "'");
}

std::unique_ptr<validation::RemoteJudge> make_judge(const service::AppConfig& c) {
  if (c.judge.base_url.empty()) return nullptr;
  return std::make_unique<validation::RemoteJudge>(c.judge);
}

// ---- subcommands -----------------------------------------------------------

void plant_text(const Context& ctx, std::size_t pairs, std::size_t questions, const std::string& marker) {
  auto plan = ctx.config.planted;
  if (pairs) plan.pair_count = pairs;
  if (!marker.empty()) plan.marker_token = marker;
  const auto corpus = corpus::generate_planted_text_corpus(plan);
  const auto qs = corpus::generate_planted_questions(plan, questions, plan.seed + 1);
  const auto pairs_path = ctx.output("pairs.jsonl"), q_path = ctx.output("questions.jsonl"),
             m_path = ctx.output("manifest.json");
  corpus::save_pairs(corpus.pairs, pairs_path);
  corpus::save_questions(qs, q_path);
  corpus::save_manifest(corpus.manifest, m_path);
  std::printf("%zu pairs, %zu questions -> %s\n", corpus.pairs.size(), qs.size(), ctx.out.c_str());
  ctx.record("plant text", {}, {pairs_path, q_path, m_path});
}

void plant_acts(const Context& ctx, std::size_t d, std::size_t m_true, std::size_t k, double noise,
                std::size_t count) {
  const auto p = corpus::generate_planted_activations(d, m_true, k, noise, count, ctx.config.seed);
  const auto a = ctx.output("acts.bin"), dict = ctx.output("dictionary.bin");
  pipeline::save_activations(p.samples, a);
  pipeline::save_activations(p.dictionary, dict);
  std::printf("%zu samples of width %zu -> %s\n", count, d, a.c_str());
  ctx.record("plant acts", {}, {a, dict});
}

void train_lm_cmd(const Context& ctx, const std::string& pairs_path, std::size_t steps) {
  const auto pairs = corpus::load_pairs(pairs_path);
  const auto texts = pipeline::sample_texts(pairs);
  const auto tokenizer = pipeline::build_tokenizer(ctx.config.tokenizer, texts);
  auto cfg = ctx.config.lm;
  cfg.vocab_size = tokenizer.vocab_size();
  auto options = ctx.config.lm_train;
  if (!options.log_every) options.log_every = 250;
  const auto result = lm::train_lm(pipeline::training_sequences(tokenizer, texts), cfg, tokenizer, ctx.config.seed,
                                   steps ? steps : ctx.config.lm_steps, options);
  const auto out = ctx.output("lm.ckpt");
  lm::save_checkpoint(result.weights, out);
  std::printf("loss %.4f -> %.4f, held-out %.4f -> %.4f\n", result.initial_train_loss, result.final_train_loss,
              result.initial_heldout_loss, result.final_heldout_loss);
  ctx.record("train-lm", {pairs_path}, {out});
}

void capture_cmd(const Context& ctx, const std::string& lm_path, const std::string& pairs_path, std::size_t layer) {
  const auto lm = lm::load_checkpoint(lm_path);
  const auto acts = pipeline::capture_activations(pipeline::sample_texts(corpus::load_pairs(pairs_path)), lm, layer);
  const auto out = ctx.output("acts.bin");
  pipeline::save_activations(acts, out);
  std::printf("%zu activation rows of width %zu at layer %zu\n", acts.rows(), acts.cols(), layer);
  ctx.record("capture-acts", {lm_path, pairs_path}, {out}, "layer=" + std::to_string(layer));
}

void train_sae_cmd(const Context& ctx, const std::string& acts_path) {
  const auto acts = pipeline::load_activations(acts_path);
  const auto trained = sae::train_sae(acts, ctx.config.sae);
  const auto out = ctx.output("sae.ckpt");
  sae::save_checkpoint(trained, out);
  std::size_t dead = 0;
  for (bool b : trained.stats.dead) dead += b;
  std::printf("mse %.5f, mean L0 %.2f, dead %zu of %zu\n", trained.stats.reconstruction_mse, trained.stats.mean_l0,
              dead, trained.stats.dead.size());
  ctx.record("train-sae", {acts_path}, {out});
}

void retrieve_cmd(const Context& ctx, const std::string& lm_path, const std::string& sae_path,
                  const std::string& pairs_path, std::optional<std::size_t> layer) {
  const auto lm = lm::load_checkpoint(lm_path);
  const auto trained = sae::load_checkpoint(sae_path);
  auto cfg = ctx.config.retrieval;
  if (layer) cfg.layer = *layer;
  cfg.validate();
  const auto vectors = retrieval::capture_pair_features(corpus::load_pairs(pairs_path), lm, trained.params, cfg.layer);
  const auto candidates = retrieval::select_candidates(retrieval::frequency_difference(vectors), cfg);

  const auto cand_path = ctx.output("candidates.json"), store_path = ctx.output("store.json"),
             vec_path = ctx.output("vectors.json");
  retrieval::save_candidates(candidates, cand_path);
  auto steering_vectors = load_vectors_if_present(vec_path);
  for (const auto& c : candidates)
    upsert(steering_vectors, steering::make_sae_vector(trained.params, trained.stats, c.feature, ctx.config.sae_alpha, c.layer));
  steering::save_vectors(steering_vectors, vec_path);
  auto store = service::store_from_candidates(candidates, &trained.stats);
  store.lm_checkpoint = fs::absolute(lm_path).string();
  store.sae_checkpoint = fs::absolute(sae_path).string();
  store.vectors_path = fs::absolute(vec_path).string();
  service::save_store(store, store_path);

  std::printf("%-8s %-6s %-7s %-7s %-7s %-8s %s\n", "feature", "layer", "delta_f", "pos", "neg", "mean", "polarity");
  for (const auto& c : candidates)
    std::printf("%-8zu %-6zu %-7.3f %-7.3f %-7.3f %-8.3f %s\n", c.feature, c.layer, c.delta, c.pos_freq, c.neg_freq,
                c.active_mean, corpus::to_string(c.dominant));
  ctx.record("retrieve", {lm_path, sae_path, pairs_path}, {cand_path, store_path, vec_path});
}

void caa_cmd(const Context& ctx, const std::string& lm_path, const std::string& pairs_path, std::size_t layer,
             std::optional<double> alpha, const std::string& name, const std::string& vectors_path) {
  const auto lm = lm::load_checkpoint(lm_path);
  const auto samples = steering::capture_final_residuals(corpus::load_pairs(pairs_path), lm, layer);
  const fs::path out = vectors_path.empty() ? ctx.output("vectors.json") : fs::path(vectors_path);
  auto vectors = load_vectors_if_present(out);
  const auto v = steering::make_caa_vector(samples, layer, alpha.value_or(ctx.config.caa_alpha), name);
  std::printf("%s: layer %zu, |direction| %.4f\n", v.label().c_str(), layer, l2_norm(v.direction));
  upsert(vectors, v);
  steering::save_vectors(vectors, out);
  ctx.record("caa", {lm_path, pairs_path}, {out}, v.label());
}

void sweep_cmd(const Context& ctx, const std::string& lm_path, const std::string& vectors_path,
               const std::string& sae_path, std::size_t feature, std::optional<std::size_t> layer,
               const std::string& questions_path, const std::string& lexicon_path, const std::string& manifest_path,
               const std::string& store_path) {
  const auto lm = lm::load_checkpoint(lm_path);
  steering::SteeringVector v;
  std::optional<double> delta_f;
  std::optional<service::FeatureStore> store;
  if (!store_path.empty()) {
    store = service::load_store(store_path);
    if (const auto* f = store->find(feature)) {
      delta_f = f->candidate.delta;
      if (!layer) layer = f->candidate.layer;
    }
  }
  if (!sae_path.empty()) {
    const auto trained = sae::load_checkpoint(sae_path);
    v = steering::make_sae_vector(trained.params, trained.stats, feature, 1.0, layer.value_or(ctx.config.retrieval.layer));
  } else {
    v = find_vector(steering::load_vectors(vectors_path), "sae:" + std::to_string(feature));
  }
  const auto questions = corpus::load_questions(questions_path);
  auto raw = validation::alpha_sweep(v, questions, lm, ctx.config.sweep);
  const auto judge = make_judge(ctx.config);
  validation::score_sweep(raw, load_lexicon(lexicon_path, manifest_path), judge.get());
  const auto report = validation::monotonicity_verdict(raw, ctx.config.monotonicity, delta_f);
  const auto out = ctx.output("sweep-" + std::to_string(feature) + ".json");
  validation::save_report(report, out);
  std::fputs(validation::format_report(report).c_str(), stdout);

  std::vector<fs::path> outputs{out};
  if (store && store->find(feature)) {
    service::attach_sweep(*store, feature, report, "cli-" + service::utc_timestamp(), out.string());
    service::save_store(*store, store_path);
    outputs.push_back(store_path);
  }
  std::vector<fs::path> inputs{lm_path, questions_path};
  if (!sae_path.empty()) inputs.push_back(sae_path);
  if (!vectors_path.empty()) inputs.push_back(vectors_path);
  ctx.record("sweep", inputs, outputs, "feature=" + std::to_string(feature));
}

void bench_cmd(const Context& ctx, const std::string& lm_path, const std::string& questionnaire_path,
               const std::string& vectors_path, const std::vector<std::size_t>& features,
               const std::vector<std::string>& caa_sets, std::optional<double> alpha) {
  const auto lm = lm::load_checkpoint(lm_path);
  const auto items = harness::load_questionnaire(questionnaire_path);
  const auto vectors = vectors_path.empty() ? std::vector<steering::SteeringVector>{} : steering::load_vectors(vectors_path);

  std::vector<harness::ReportRow> rows;
  auto run = [&](const steering::SteeringVector* v, const std::string& method, std::optional<double> a) {
    std::optional<steering::SteeringVector> scaled;
    if (v) scaled = v->with_alpha(*a);
    const auto answers = harness::administer(items, lm, scaled ? &*scaled : nullptr, ctx.config.questionnaire);
    std::map<std::string, std::vector<harness::ParsedAnswer>> by_trait;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto parsed = answers[i].failed ? harness::ParsedAnswer{std::nullopt, validation::InvalidReason::empty_output, {}}
                                            : harness::parse_answer(answers[i].text, items[i]);
      by_trait[items[i].trait].push_back(parsed);
    }
    for (const auto& [trait, parsed] : by_trait) {
      harness::ReportRow row;
      row.trait = trait;
      row.method = method;
      if (v) {
        row.layer = v->layer;
        if (const auto* s = std::get_if<steering::SaeSource>(&v->source)) row.feature = s->feature;
        row.alpha = a;
      }
      row.result = harness::trait_score(parsed);
      rows.push_back(std::move(row));
    }
  };
  run(nullptr, "Baseline", std::nullopt);
  for (const auto& name : caa_sets) {
    const auto& v = find_vector(vectors, name.rfind("caa:", 0) == 0 ? name : "caa:" + name);
    const double a = alpha.value_or(ctx.config.caa_alpha);
    run(&v, "CAA", a);
    run(&v, "CAA", -a);
  }
  for (std::size_t f : features) {
    const auto& v = find_vector(vectors, "sae:" + std::to_string(f));
    const double a = alpha.value_or(ctx.config.sae_alpha);
    run(&v, "Ours", a);
    run(&v, "Ours", -a);
  }
  const auto out = ctx.output("bench.json");
  harness::save_report_rows(rows, out);
  std::fputs(harness::render_table(rows).c_str(), stdout);
  std::vector<fs::path> inputs{lm_path, questionnaire_path};
  if (!vectors_path.empty()) inputs.push_back(vectors_path);
  ctx.record("bench", inputs, {out});
}

void heatmap_cmd(const Context& ctx, const std::string& lm_path, const std::string& sae_path, std::size_t feature,
                 std::optional<std::size_t> layer, const std::string& text, const std::string& format,
                 const std::string& output) {
  const auto lm = lm::load_checkpoint(lm_path);
  const auto trained = sae::load_checkpoint(sae_path);
  const auto record = harness::token_heatmap(text, lm, trained.params, layer.value_or(ctx.config.retrieval.layer), feature);
  const auto rendered = harness::render_heatmap(record, harness::heatmap_format_from_string(format));
  if (output.empty()) {
    std::fputs(rendered.c_str(), stdout);
    std::fputc('\n', stdout);
  } else {
    std::ofstream(output) << rendered;
  }
}

void serve_cmd(const Context& ctx, const std::string& store_path, const std::string& lm_path,
               const std::string& sae_path, const std::string& vectors_path, const std::string& questions_path,
               const std::string& lexicon_path, const std::string& manifest_path, std::optional<int> port) {
  service::ServiceResources r;
  r.config = ctx.config;
  const auto store = service::load_store(store_path);
  const std::string lm_file = lm_path.empty() ? store.lm_checkpoint : lm_path;
  if (lm_file.empty()) throw ConfigError("serve: no language model checkpoint given or referenced by the store");
  r.lm = std::make_shared<const lm::LmWeights>(lm::load_checkpoint(lm_file));
  const std::string sae_file = sae_path.empty() ? store.sae_checkpoint : sae_path;
  if (!sae_file.empty() && fs::exists(sae_file))
    r.sae = std::make_shared<const sae::TrainedSae>(sae::load_checkpoint(sae_file));
  const std::string vec_file = vectors_path.empty() ? store.vectors_path : vectors_path;
  if (!vec_file.empty() && fs::exists(vec_file)) r.vectors = steering::load_vectors(vec_file);
  if (!questions_path.empty()) r.questions = corpus::load_questions(questions_path);
  if (!lexicon_path.empty() || !manifest_path.empty()) r.lexicon = load_lexicon(lexicon_path, manifest_path);
  r.store_path = store_path;
  r.ledger_path = ctx.out / "ledger.jsonl";
  r.sweep_dir = ctx.out / "sweeps";

  // Signals are taken synchronously on a waiter thread; workers inherit the mask.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGUSR1);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::Server server(std::move(r));
  const int bound = server.bind(ctx.config.server.host, port.value_or(ctx.config.server.port));
  std::printf("serving on http://%s:%d\n", ctx.config.server.host.c_str(), bound);
  std::fflush(stdout);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGUSR1);
  waiter.join();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Find, steer and validate sparse-autoencoder features of a small language model."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Config file (JSON); absent keys keep defaults")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Overrides the config seed");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs and the run ledger");

  // plant
  auto* plant = app.add_subcommand("plant", "Generate planted corpora")->require_subcommand(1)->fallthrough();
  std::size_t p_pairs = 0, p_questions = 10;
  std::string p_marker;
  auto* plant_text_cmd = plant->add_subcommand("text", "Planted style corpus, questions and manifest");
  plant_text_cmd->add_option("--pairs", p_pairs, "Pair count (config default otherwise)");
  plant_text_cmd->add_option("--questions", p_questions, "Neutral sweep questions");
  plant_text_cmd->add_option("--marker", p_marker, "Marker token inserted into every positive");
  std::size_t a_d = 32, a_m = 128, a_k = 4, a_count = 50000;
  double a_noise = 0.01;
  auto* plant_acts_cmd = plant->add_subcommand("acts", "Planted sparse activations and their dictionary");
  plant_acts_cmd->add_option("--d", a_d);
  plant_acts_cmd->add_option("--m-true", a_m);
  plant_acts_cmd->add_option("--k", a_k);
  plant_acts_cmd->add_option("--noise", a_noise);
  plant_acts_cmd->add_option("--count", a_count);

  std::string lm_path, sae_path, pairs_path, acts_path, vectors_path, questions_path, lexicon_path, manifest_path,
      store_path, questionnaire_path, text, format = "ansi", output, caa_name = "pairs";
  std::size_t steps = 0, feature = 0;
  std::optional<std::size_t> layer;
  std::optional<double> alpha;
  std::optional<int> port;
  std::vector<std::size_t> features;
  std::vector<std::string> caa_sets;

  auto* train_lm = app.add_subcommand("train-lm", "Train the toy language model on pair texts");
  train_lm->add_option("--pairs", pairs_path)->required()->check(CLI::ExistingFile);
  train_lm->add_option("--steps", steps, "Training steps (config default otherwise)");

  auto* capture = app.add_subcommand("capture-acts", "Capture residual activations for SAE training");
  capture->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  capture->add_option("--pairs", pairs_path)->required()->check(CLI::ExistingFile);
  capture->add_option("--layer", layer)->required();

  auto* train_sae = app.add_subcommand("train-sae", "Train a sparse autoencoder on captured activations");
  train_sae->add_option("--acts", acts_path)->required()->check(CLI::ExistingFile);

  auto* retrieve = app.add_subcommand("retrieve", "Rank SAE features by activation-frequency difference");
  retrieve->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  retrieve->add_option("--sae", sae_path)->required()->check(CLI::ExistingFile);
  retrieve->add_option("--pairs", pairs_path)->required()->check(CLI::ExistingFile);
  retrieve->add_option("--layer", layer);

  auto* caa = app.add_subcommand("caa", "Build a contrastive mean-difference steering vector");
  caa->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  caa->add_option("--pairs", pairs_path)->required()->check(CLI::ExistingFile);
  caa->add_option("--layer", layer)->required();
  caa->add_option("--alpha", alpha);
  caa->add_option("--name", caa_name, "Pair-set name used in the vector label");
  caa->add_option("--vectors", vectors_path, "Vector file to update (out-dir/vectors.json otherwise)");

  auto* sweep = app.add_subcommand("sweep", "Alpha sweep and monotonicity verdict for one feature");
  sweep->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  auto* sweep_vec = sweep->add_option("--vectors", vectors_path)->check(CLI::ExistingFile);
  auto* sweep_sae = sweep->add_option("--sae", sae_path)->check(CLI::ExistingFile);
  sweep_vec->excludes(sweep_sae);
  sweep->add_option("--feature", feature)->required();
  sweep->add_option("--layer", layer);
  sweep->add_option("--questions", questions_path)->required()->check(CLI::ExistingFile);
  auto* sweep_lex = sweep->add_option("--lexicon", lexicon_path, "JSON {positive: [...], negative: [...]}");
  auto* sweep_man = sweep->add_option("--manifest", manifest_path, "Planted manifest supplying the lexicons");
  sweep_lex->excludes(sweep_man);
  sweep->add_option("--store", store_path, "Feature store to update with the summary");

  auto* bench = app.add_subcommand("bench", "Forced-choice questionnaire with and without steering");
  bench->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  bench->add_option("--questionnaire", questionnaire_path)->required()->check(CLI::ExistingFile);
  bench->add_option("--vectors", vectors_path)->check(CLI::ExistingFile);
  bench->add_option("--feature", features, "SAE features to steer with (repeatable)");
  bench->add_option("--caa", caa_sets, "CAA pair sets to steer with (repeatable)");
  bench->add_option("--alpha", alpha, "Magnitude; both signs are run");

  auto* heatmap = app.add_subcommand("heatmap", "Token-level activation heatmap for one feature");
  heatmap->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  heatmap->add_option("--sae", sae_path)->required()->check(CLI::ExistingFile);
  heatmap->add_option("--feature", feature)->required();
  heatmap->add_option("--layer", layer);
  heatmap->add_option("--text", text)->required();
  heatmap->add_option("--format", format)->check(CLI::IsMember({"html", "ansi"}));
  heatmap->add_option("--output", output);

  auto* serve = app.add_subcommand("serve", "HTTP API over a feature store");
  serve->add_option("--store", store_path)->required()->check(CLI::ExistingFile);
  serve->add_option("--lm", lm_path)->check(CLI::ExistingFile);
  serve->add_option("--sae", sae_path)->check(CLI::ExistingFile);
  serve->add_option("--vectors", vectors_path)->check(CLI::ExistingFile);
  serve->add_option("--questions", questions_path)->check(CLI::ExistingFile);
  auto* serve_lex = serve->add_option("--lexicon", lexicon_path);
  auto* serve_man = serve->add_option("--manifest", manifest_path);
  serve_lex->excludes(serve_man);
  serve->add_option("--port", port);

  app.add_subcommand("config", "Print the effective configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    const Context ctx = make_context(g);
    if (plant_text_cmd->parsed()) plant_text(ctx, p_pairs, p_questions, p_marker);
    else if (plant_acts_cmd->parsed()) plant_acts(ctx, a_d, a_m, a_k, a_noise, a_count);
    else if (train_lm->parsed()) train_lm_cmd(ctx, pairs_path, steps);
    else if (capture->parsed()) capture_cmd(ctx, lm_path, pairs_path, *layer);
    else if (train_sae->parsed()) train_sae_cmd(ctx, acts_path);
    else if (retrieve->parsed()) retrieve_cmd(ctx, lm_path, sae_path, pairs_path, layer);
    else if (caa->parsed()) caa_cmd(ctx, lm_path, pairs_path, *layer, alpha, caa_name, vectors_path);
    else if (sweep->parsed()) {
      if (vectors_path.empty() && sae_path.empty()) throw ConfigError("sweep needs --vectors or --sae");
      if (lexicon_path.empty() && manifest_path.empty()) throw ConfigError("sweep needs --lexicon or --manifest");
      sweep_cmd(ctx, lm_path, vectors_path, sae_path, feature, layer, questions_path, lexicon_path, manifest_path,
                store_path);
    } else if (bench->parsed()) bench_cmd(ctx, lm_path, questionnaire_path, vectors_path, features, caa_sets, alpha);
    else if (heatmap->parsed()) heatmap_cmd(ctx, lm_path, sae_path, feature, layer, text, format, output);
    else if (serve->parsed())
      serve_cmd(ctx, store_path, lm_path, sae_path, vectors_path, questions_path, lexicon_path, manifest_path, port);
    else std::fputs(service::config_text(ctx.config).c_str(), stdout);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
