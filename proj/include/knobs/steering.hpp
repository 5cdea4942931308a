#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "knobs/corpus.hpp"
#include "knobs/lm.hpp"
#include "knobs/sae.hpp"

namespace knobs::steering {

inline constexpr double kDefaultSaeAlpha = 5.0;
inline constexpr double kDefaultCaaAlpha = 2.0;

struct SaeSource {
  std::size_t feature = 0;
  double phi = 0.0;
  bool operator==(const SaeSource&) const = default;
};

struct CaaSource {
  std::string pair_set;
  bool operator==(const CaaSource&) const = default;
};

// resolved = alpha · direction. For SAE vectors direction is φ_i times decoder
// row i; for CAA it is the positive-minus-negative mean residual.
struct SteeringVector {
  std::size_t layer = 0;
  double alpha = 0.0;
  std::vector<double> direction;
  std::variant<SaeSource, CaaSource> source;
  std::vector<double> resolved;

  // Same direction and provenance at a new coefficient.
  SteeringVector with_alpha(double a) const;
  lm::InjectionHook hook() const { return {layer, resolved}; }
  std::string label() const;  // "sae:<i>" or "caa:<set>"

  bool operator==(const SteeringVector&) const = default;
};

// A dead feature (φ_i = 0) yields a zero vector and a warning.
SteeringVector make_sae_vector(const sae::SaeParams& params, const sae::SaeTrainStats& stats,
                               std::size_t feature, double alpha, std::size_t layer);

struct ResidualSample {
  std::vector<double> residual;  // final-token residual at the capture layer
  corpus::Polarity polarity = corpus::Polarity::positive;
};

// Final-token residuals at `layer` for both sides of every pair.
std::vector<ResidualSample> capture_final_residuals(const std::vector<corpus::ContrastivePair>& pairs,
                                                    const lm::LmWeights& lm, std::size_t layer);

SteeringVector make_caa_vector(const std::vector<ResidualSample>& samples, std::size_t layer,
                               double alpha, std::string pair_set);

std::vector<double> inject(std::span<const double> h, const SteeringVector& v);

lm::GenerationResult steered_generate(std::string_view prompt, const lm::LmWeights& lm,
                                      const SteeringVector& v, const lm::SamplerSettings& sampler,
                                      const lm::TokenCallback& on_token = {});

// Records carry everything needed to steer without the SAE present.
void save_vectors(const std::vector<SteeringVector>& vectors, const std::filesystem::path& path);
std::vector<SteeringVector> load_vectors(const std::filesystem::path& path);

}  // namespace knobs::steering
