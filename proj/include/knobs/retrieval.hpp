#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "knobs/corpus.hpp"
#include "knobs/lm.hpp"
#include "knobs/sae.hpp"

namespace knobs::retrieval {

using corpus::Polarity;

// Max-pooled SAE code of one sample text.
struct SequenceFeatureVector {
  std::vector<double> features;  // length m, ≥ 0
  std::string sample_id;
  Polarity polarity = Polarity::positive;
};

struct FeatureStat {
  double pos_freq = 0.0;  // share of positive vectors with F_j > 0
  double neg_freq = 0.0;
  double delta = 0.0;     // |pos_freq − neg_freq|
  // Mean F_j over the firing vectors of the side that fires more often.
  double active_mean = 0.0;

  Polarity dominant() const { return pos_freq >= neg_freq ? Polarity::positive : Polarity::negative; }
};

struct FeatureStats {
  std::vector<FeatureStat> features;
  std::size_t positive_count = 0;
  std::size_t negative_count = 0;
};

struct RetrievalConfig {
  double tau1 = 0.6;  // Δf floor
  double tau2 = 0.8;  // one-sided activation-rate floor
  std::size_t top_k = 32;
  std::size_t layer = 1;

  void validate() const;
};

struct Candidate {
  std::size_t layer = 0;
  std::size_t feature = 0;
  double delta = 0.0;
  double pos_freq = 0.0;
  double neg_freq = 0.0;
  double active_mean = 0.0;
  Polarity dominant = Polarity::positive;

  bool operator==(const Candidate&) const = default;
};

// per_token is T × m. Throws DataError when T = 0.
std::vector<double> aggregate_sequence(const Matrix& per_token);

// SAE codes for every token of `text` at `layer`, sequence-start marker
// dropped. Rows follow the tokenizer's spans.
Matrix token_codes(std::string_view text, const lm::LmWeights& lm, const sae::SaeParams& sae,
                   std::size_t layer);

// Two vectors per pair, positive first. Samples that yield no tokens or do not
// fit the context are skipped with a warning.
std::vector<SequenceFeatureVector> capture_pair_features(
    const std::vector<corpus::ContrastivePair>& pairs, const lm::LmWeights& lm,
    const sae::SaeParams& sae, std::size_t layer);

FeatureStats frequency_difference(const std::vector<SequenceFeatureVector>& vectors);

// Keeps Δf ≥ τ1 and max(pos, neg) ≥ τ2; orders by Δf, then active mean (both
// descending), then index; truncates to top_k.
std::vector<Candidate> select_candidates(const FeatureStats& stats, const RetrievalConfig& config);

void save_candidates(const std::vector<Candidate>& candidates, const std::filesystem::path& path);
std::vector<Candidate> load_candidates(const std::filesystem::path& path);

}  // namespace knobs::retrieval
