#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "knobs/corpus.hpp"
#include "knobs/lm.hpp"
#include "knobs/retrieval.hpp"
#include "knobs/sae.hpp"
#include "knobs/validation.hpp"

namespace knobs::pipeline {

// Positive then negative text of every pair.
std::vector<std::string> sample_texts(const std::vector<corpus::ContrastivePair>& pairs);

lm::Tokenizer build_tokenizer(lm::TokenizerMode mode, const std::vector<std::string>& texts);

// Marker, tokens, marker: the layout train_lm expects.
std::vector<std::vector<int>> training_sequences(const lm::Tokenizer& tokenizer,
                                                 const std::vector<std::string>& texts);

// Residual rows at `layer` for every token of every text, marker rows
// excluded. Texts longer than the context are skipped with a warning.
Matrix capture_activations(const std::vector<std::string>& texts, const lm::LmWeights& lm, std::size_t layer);

// Magic, version, rows, cols, raw doubles.
void save_activations(const Matrix& activations, const std::filesystem::path& path);
Matrix load_activations(const std::filesystem::path& path);

// Planted style corpus -> toy LM -> SAE -> retrieval -> α sweeps on the top
// candidates, scored with the planted lexicons.
struct PlantedExperiment {
  corpus::PlantedSpec corpus = corpus::PlantedSpec::defaults();
  lm::LmConfig lm;  // vocab_size is filled from the tokenizer
  lm::LmTrainOptions lm_train;
  std::size_t lm_steps = 3000;
  std::uint64_t lm_seed = 1;
  std::size_t layer = 2;
  sae::SaeTrainConfig sae;
  retrieval::RetrievalConfig retrieval;
  std::size_t swept_candidates = 2;
  std::size_t question_count = 10;
  std::uint64_t question_seed = 7;
  validation::SweepConfig sweep;
  validation::MonotonicityConfig monotonicity;

  static PlantedExperiment defaults();
};

struct PlantedOutcome {
  lm::LmTrainResult lm;
  sae::TrainedSae sae;
  std::vector<retrieval::Candidate> candidates;
  std::vector<validation::SweepReport> reports;  // one per swept candidate
  double lm_seconds = 0.0;
  double total_seconds = 0.0;
};

using Progress = std::function<void(const std::string&)>;

// `lm_cache`, when given, is loaded if present and written after training.
PlantedOutcome run_planted_experiment(const PlantedExperiment& experiment, const Progress& progress = {},
                                      const std::filesystem::path& lm_cache = {});

}  // namespace knobs::pipeline
