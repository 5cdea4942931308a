#include "knobs/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "knobs/log.hpp"
#include "knobs/steering.hpp"

namespace knobs::pipeline {

namespace {

constexpr char kActMagic[8] = {'K', 'N', 'O', 'B', 'A', 'C', 'T', '\0'};
constexpr std::uint32_t kActVersion = 1;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

}  // namespace

std::vector<std::string> sample_texts(const std::vector<corpus::ContrastivePair>& pairs) {
  std::vector<std::string> out;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    out.push_back(p.text(corpus::Polarity::positive));
    out.push_back(p.text(corpus::Polarity::negative));
  }
  return out;
}

lm::Tokenizer build_tokenizer(lm::TokenizerMode mode, const std::vector<std::string>& texts) {
  return mode == lm::TokenizerMode::byte ? lm::Tokenizer::bytes() : lm::Tokenizer::build_word_vocabulary(texts);
}

std::vector<std::vector<int>> training_sequences(const lm::Tokenizer& tokenizer,
                                                 const std::vector<std::string>& texts) {
  std::vector<std::vector<int>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto ids = tokenizer.encode_for_model(t);
    ids.push_back(tokenizer.bos());
    out.push_back(std::move(ids));
  }
  return out;
}

Matrix capture_activations(const std::vector<std::string>& texts, const lm::LmWeights& lm, std::size_t layer) {
  if (layer >= lm.config.n_layers) throw ConfigError("capture layer " + std::to_string(layer) + " out of range");
  const std::size_t d = lm.config.d_model;
  std::vector<double> rows;
  std::size_t count = 0, skipped = 0;
  for (const auto& t : texts) {
    const auto ids = lm.tokenizer.encode_for_model(t);
    if (ids.size() > lm.config.context) {
      ++skipped;
      continue;
    }
    const auto f = lm::forward(ids, lm, {layer});
    const Matrix& h = f.captures.at(0).hidden;
    for (std::size_t r = 1; r < h.rows(); ++r) {
      rows.insert(rows.end(), h.row(r).begin(), h.row(r).end());
      ++count;
    }
  }
  if (skipped) log::warn("capture: skipped " + std::to_string(skipped) + " texts longer than the context");
  if (count == 0) throw DataError("capture: no token activations collected");
  return Matrix(count, d, std::move(rows));
}

void save_activations(const Matrix& activations, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint64_t rows = activations.rows(), cols = activations.cols();
  out.write(kActMagic, sizeof kActMagic);
  out.write(reinterpret_cast<const char*>(&kActVersion), sizeof kActVersion);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  out.write(reinterpret_cast<const char*>(activations.data().data()),
            static_cast<std::streamsize>(activations.size() * sizeof(double)));
  if (!out) throw DataError("short write to " + path.string());
}

Matrix load_activations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t rows = 0, cols = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kActMagic, sizeof magic) != 0) throw ParseError(path.string() + ": not an activation file");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kActVersion) throw VersionError(path.string() + ": unsupported activation file version");
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || cols == 0 || rows > (std::uint64_t{1} << 40) / cols) throw ParseError(path.string() + ": bad header");
  std::vector<double> data(rows * cols);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw ParseError(path.string() + ": truncated at byte " + std::to_string(in.gcount()));
  return Matrix(rows, cols, std::move(data));
}

PlantedExperiment PlantedExperiment::defaults() {
  PlantedExperiment e;
  e.corpus.pair_count = 400;
  e.corpus.seed = 1;
  e.lm = lm::LmConfig{0, 64, 4, 4, 48, 256};
  e.lm_train.batch_size = 8;
  e.sae.features = 256;
  e.sae.lambda_sparsity = 10.0;
  e.sae.steps = 3000;
  e.sae.batch_size = 64;
  e.sae.seed = 1;
  e.sae.resample_interval = 1000;
  e.retrieval.layer = e.layer;
  e.sweep.replicates = 4;
  e.sweep.max_new_tokens = 16;
  e.sweep.seed_base = 3;
  return e;
}

PlantedOutcome run_planted_experiment(const PlantedExperiment& e, const Progress& progress,
                                      const std::filesystem::path& lm_cache) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  PlantedOutcome out;

  const auto planted = corpus::generate_planted_text_corpus(e.corpus);
  const auto texts = sample_texts(planted.pairs);
  const auto tokenizer = lm::Tokenizer::build_word_vocabulary(texts);
  lm::LmConfig config = e.lm;
  config.vocab_size = tokenizer.vocab_size();

  const auto t_lm = std::chrono::steady_clock::now();
  bool cached = false;
  if (!lm_cache.empty() && std::filesystem::exists(lm_cache)) {
    auto w = lm::load_checkpoint(lm_cache);
    if (w.config == config && w.tokenizer == tokenizer) {
      out.lm.weights = std::move(w);
      cached = true;
      say("lm: loaded " + lm_cache.string());
    }
  }
  if (!cached) {
    out.lm = lm::train_lm(training_sequences(tokenizer, texts), config, tokenizer, e.lm_seed, e.lm_steps, e.lm_train);
    if (!lm_cache.empty()) lm::save_checkpoint(out.lm.weights, lm_cache);
    say(fmt("lm: trained, loss %.3f -> %.3f, held-out %.3f", out.lm.initial_train_loss, out.lm.final_train_loss,
            out.lm.final_heldout_loss));
  }
  out.lm_seconds = seconds_since(t_lm);
  const lm::LmWeights& lm = out.lm.weights;

  const Matrix acts = capture_activations(texts, lm, e.layer);
  out.sae = sae::train_sae(acts, e.sae);
  say(fmt("sae: mse %.4f, mean L0 %.2f", out.sae.stats.reconstruction_mse, out.sae.stats.mean_l0));

  auto retrieval_cfg = e.retrieval;
  retrieval_cfg.layer = e.layer;
  const auto vectors = retrieval::capture_pair_features(planted.pairs, lm, out.sae.params, e.layer);
  out.candidates = retrieval::select_candidates(retrieval::frequency_difference(vectors), retrieval_cfg);
  say("retrieval: " + std::to_string(out.candidates.size()) + " candidates");

  const auto questions = corpus::generate_planted_questions(e.corpus, e.question_count, e.question_seed);
  const validation::Lexicon lexicon{e.corpus.lexicon_a, e.corpus.lexicon_b};
  for (std::size_t i = 0; i < std::min(e.swept_candidates, out.candidates.size()); ++i) {
    const auto& c = out.candidates[i];
    const auto v = steering::make_sae_vector(out.sae.params, out.sae.stats, c.feature, 1.0, e.layer);
    auto raw = validation::alpha_sweep(v, questions, lm, e.sweep);
    validation::score_sweep(raw, lexicon);
    out.reports.push_back(validation::monotonicity_verdict(raw, e.monotonicity, c.delta));
    say(validation::format_report(out.reports.back()));
  }
  out.total_seconds = seconds_since(t0);
  return out;
}

}  // namespace knobs::pipeline
