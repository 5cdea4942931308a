#pragma once

#include <span>
#include <vector>

#include "knobs/lm.hpp"

namespace knobs::lm::detail {

struct LayerActs {
  std::vector<double> x_in;  // residual entering the block, T×d
  std::vector<double> ln1, ln1_mean, ln1_rstd;
  std::vector<double> qkv;   // T×3d
  std::vector<double> att;   // H×T×T softmax probabilities
  std::vector<double> y;     // attention output before projection, T×d
  std::vector<double> x_mid;
  std::vector<double> ln2, ln2_mean, ln2_rstd;
  std::vector<double> fc;    // T×F, before GELU
  std::vector<double> act;   // T×F, after GELU
  std::vector<double> x_out; // post-block residual (after injection)
};

struct Activations {
  std::size_t tokens = 0;
  std::vector<LayerActs> layers;
  std::vector<double> lnf, lnf_mean, lnf_rstd;
  std::vector<double> logits;  // T×V
};

void forward_pass(std::span<const int> tokens, const LmWeights& w, const InjectionHook* hook,
                  Activations& acts);

// Accumulates dL/dparams into `grad` given dL/dlogits.
void backward_pass(std::span<const int> tokens, const LmWeights& w, const Activations& acts,
                   std::span<const double> dlogits, std::span<double> grad);

}  // namespace knobs::lm::detail
