#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "knobs/log.hpp"
#include "transformer.hpp"

namespace knobs::lm {

namespace {

// Cross-entropy over one sequence; writes dL/dlogits scaled by `scale` when
// dlogits is non-null. Returns the summed (not averaged) loss.
double sequence_xent(std::span<const int> seq, const detail::Activations& acts, std::size_t V,
                     double scale, std::vector<double>* dlogits) {
  const std::size_t T = seq.size() - 1;
  double total = 0.0;
  if (dlogits) dlogits->assign(acts.tokens * V, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* lg = acts.logits.data() + t * V;
    double maxv = lg[0];
    for (std::size_t j = 1; j < V; ++j) maxv = std::max(maxv, lg[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < V; ++j) sum += std::exp(lg[j] - maxv);
    const double logz = maxv + std::log(sum);
    const auto target = static_cast<std::size_t>(seq[t + 1]);
    total += logz - lg[target];
    if (dlogits) {
      double* g = dlogits->data() + t * V;
      for (std::size_t j = 0; j < V; ++j) g[j] = std::exp(lg[j] - logz) * scale;
      g[target] -= scale;
    }
  }
  return total;
}

std::size_t target_count(const std::vector<std::vector<int>>& seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.size() > 1 ? s.size() - 1 : 0;
  return n;
}

}  // namespace

double loss_and_grad(const std::vector<std::vector<int>>& batch, const LmWeights& weights,
                     std::vector<double>& grad) {
  const std::size_t n = target_count(batch);
  if (n == 0) throw DataError("loss_and_grad: batch has no prediction targets");
  grad.assign(weights.params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  double total = 0.0;
  detail::Activations acts;
  std::vector<double> dlogits;
  for (const auto& seq : batch) {
    if (seq.size() < 2) continue;
    const std::span<const int> input(seq.data(), seq.size() - 1);
    detail::forward_pass(input, weights, nullptr, acts);
    total += sequence_xent(seq, acts, weights.config.vocab_size, scale, &dlogits);
    detail::backward_pass(input, weights, acts, dlogits, grad);
  }
  return total * scale;
}

double sequence_loss(const std::vector<std::vector<int>>& sequences, const LmWeights& weights) {
  const std::size_t n = target_count(sequences);
  if (n == 0) throw DataError("sequence_loss: no prediction targets");
  double total = 0.0;
  detail::Activations acts;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    detail::forward_pass(std::span<const int>(seq.data(), seq.size() - 1), weights, nullptr, acts);
    total += sequence_xent(seq, acts, weights.config.vocab_size, 0.0, nullptr);
  }
  return total / static_cast<double>(n);
}

LmTrainResult train_lm(const std::vector<std::vector<int>>& corpus, const LmConfig& config,
                       const Tokenizer& tokenizer, std::uint64_t seed, std::size_t steps,
                       const LmTrainOptions& options) {
  config.validate();
  if (steps < 1) throw ConfigError("train_lm: steps must be >= 1");
  if (options.batch_size < 1) throw ConfigError("train_lm: batch_size must be >= 1");

  std::vector<std::vector<int>> seqs;
  for (const auto& s : corpus) {
    if (s.size() < 2) continue;
    seqs.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(
                                                  std::min(s.size(), config.context + 1)));
  }
  if (seqs.empty()) throw DataError("train_lm: corpus has no sequence with at least 2 tokens");

  SeededRng rng(seed);
  SeededRng split_rng = rng.fork(1);
  SeededRng batch_rng = rng.fork(2);

  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  std::size_t holdout = static_cast<std::size_t>(options.holdout_fraction * seqs.size());
  if (seqs.size() < 10) holdout = 0;
  std::vector<std::vector<int>> train, heldout;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < holdout ? heldout : train).push_back(seqs[order[i]]);
  }
  if (heldout.empty()) heldout = train;

  auto eval_subset = [](const std::vector<std::vector<int>>& s) {
    return std::vector<std::vector<int>>(s.begin(), s.begin() + std::min<std::ptrdiff_t>(
                                                                   256, static_cast<std::ptrdiff_t>(s.size())));
  };
  const auto train_eval = eval_subset(train);
  const auto heldout_eval = eval_subset(heldout);

  LmTrainResult result{init_weights(config, tokenizer, seed), 0, 0, 0, 0, {}};
  LmWeights& w = result.weights;
  result.initial_train_loss = sequence_loss(train_eval, w);
  result.initial_heldout_loss = sequence_loss(heldout_eval, w);

  std::vector<double> m(w.params.size(), 0.0), v(w.params.size(), 0.0), grad;
  std::int64_t adam_t = 0;
  AdamHyper hyper;
  const std::size_t warmup = std::max<std::size_t>(1, std::min<std::size_t>(100, steps / 10));

  std::vector<std::size_t> epoch;
  std::size_t cursor = 0;
  std::vector<std::vector<int>> batch;
  for (std::size_t step = 0; step < steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      if (cursor == epoch.size()) {
        epoch.resize(train.size());
        for (std::size_t i = 0; i < epoch.size(); ++i) epoch[i] = i;
        for (std::size_t i = epoch.size(); i > 1; --i) std::swap(epoch[i - 1], epoch[batch_rng.below(i)]);
        cursor = 0;
      }
      batch.push_back(train[epoch[cursor++]]);
    }
    const double loss = loss_and_grad(batch, w, grad);
    result.loss_history.push_back(loss);

    double norm = 0.0;
    for (double g : grad) norm += g * g;
    norm = std::sqrt(norm);
    if (options.grad_clip > 0.0 && norm > options.grad_clip) {
      const double s = options.grad_clip / norm;
      for (double& g : grad) g *= s;
    }

    double lr = options.learning_rate;
    if (step < warmup) {
      lr *= static_cast<double>(step + 1) / static_cast<double>(warmup);
    } else {
      const double progress =
          static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(1, steps - warmup));
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    hyper.learning_rate = lr;
    adam_step(w.params, grad, m, v, adam_t, hyper);

    if (options.log_every && (step + 1) % options.log_every == 0) {
      log::info("train_lm step " + std::to_string(step + 1) + "/" + std::to_string(steps) +
                " loss " + std::to_string(loss));
    }
  }
  result.final_train_loss = sequence_loss(train_eval, w);
  result.final_heldout_loss = sequence_loss(heldout_eval, w);
  return result;
}

}  // namespace knobs::lm
