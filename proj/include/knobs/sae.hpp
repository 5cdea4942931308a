#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "knobs/numerics.hpp"

namespace knobs::sae {

// h = relu(z·W_enc + b_enc), ẑ = h·W_dec + b_dec. Row i of W_dec is feature
// i's direction in residual space.
struct SaeParams {
  Matrix w_enc;                // d × m
  std::vector<double> b_enc;   // m
  Matrix w_dec;                // m × d
  std::vector<double> b_dec;   // d

  std::size_t input_dim() const { return w_enc.rows(); }
  std::size_t features() const { return w_enc.cols(); }
  void validate() const;
  bool operator==(const SaeParams&) const = default;
};

std::vector<double> preactivation(std::span<const double> z, const SaeParams& p);
std::vector<double> encode(std::span<const double> z, const SaeParams& p);
std::vector<double> decode(std::span<const double> h, const SaeParams& p);

Matrix encode_batch(const Matrix& z, const SaeParams& p);  // rows × m

struct SaeGrads {
  Matrix w_enc;
  std::vector<double> b_enc;
  Matrix w_dec;
  std::vector<double> b_dec;
};

struct SaeLoss {
  double loss = 0.0;            // reconstruction + λ·sparsity
  double reconstruction = 0.0;  // mean ‖z − ẑ‖²
  double sparsity = 0.0;        // mean ‖h‖₁
  SaeGrads grads;
};

// Batch-mean loss with analytic gradients for all four parameter groups.
SaeLoss sae_loss_and_grads(const Matrix& z_batch, const SaeParams& p, double lambda_sparsity);

struct SaeTrainConfig {
  std::size_t features = 256;
  double lambda_sparsity = 1e-2;
  double learning_rate = 1e-3;
  std::size_t steps = 5000;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t resample_interval = 1000;  // 0 disables dead-feature resampling

  void validate() const;
};

struct SaeTrainStats {
  std::vector<double> max_activation;        // φ_i over the final full pass
  std::vector<std::size_t> activation_count;  // samples with h_i > 0
  std::vector<bool> dead;
  std::size_t sample_count = 0;
  double reconstruction_mse = 0.0;
  double mean_l0 = 0.0;

  bool operator==(const SaeTrainStats&) const = default;
};

struct TrainedSae {
  SaeParams params;
  SaeTrainStats stats;
  SaeTrainConfig config;
};

// One full pass over `activations` with fixed parameters.
SaeTrainStats compute_stats(const Matrix& activations, const SaeParams& p);

// Rows of `activations` are training vectors. Decoder rows are renormalised to
// unit length after every optimiser step.
TrainedSae train_sae(const Matrix& activations, const SaeTrainConfig& config);

// Container: magic, version, JSON header (dims, λ, seed, training config),
// raw doubles for the four parameter groups, then the stats block.
void save_checkpoint(const TrainedSae& sae, const std::filesystem::path& path);
TrainedSae load_checkpoint(const std::filesystem::path& path);

}  // namespace knobs::sae
