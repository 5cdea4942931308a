#include <cmath>
#include <string>

#include "transformer.hpp"

namespace knobs::lm {

namespace {

int pick_token(std::span<const double> logits, double temperature, SeededRng& rng) {
  if (temperature <= 0.0) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;
    return static_cast<int>(best);
  }
  double maxv = logits[0];
  for (double x : logits) maxv = std::max(maxv, x);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp((logits[j] - maxv) / temperature);
    sum += p[j];
  }
  const double u = rng.uniform() * sum;
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    acc += p[j];
    if (u < acc) return static_cast<int>(j);
  }
  return static_cast<int>(p.size() - 1);
}

}  // namespace

GenerationResult generate(std::string_view prompt, const LmWeights& weights,
                          const SamplerSettings& sampler, const InjectionHook* hook,
                          const TokenCallback& on_token) {
  const Tokenizer& tok = weights.tokenizer;
  std::vector<int> ids = tok.encode_for_model(prompt);
  if (ids.size() > weights.config.context) {
    throw LengthError("generate: prompt of " + std::to_string(ids.size()) +
                      " tokens exceeds context " + std::to_string(weights.config.context));
  }
  GenerationResult out;
  out.text = std::string(prompt);
  SeededRng rng(sampler.seed);
  detail::Activations acts;
  const std::size_t V = weights.config.vocab_size;

  for (std::size_t step = 0; step < sampler.max_new_tokens; ++step) {
    if (ids.size() >= weights.config.context) {
      out.truncated = true;
      break;
    }
    detail::forward_pass(ids, weights, hook, acts);
    const std::span<const double> last(acts.logits.data() + (ids.size() - 1) * V, V);
    const int next = pick_token(last, sampler.temperature, rng);
    if (next == tok.bos()) break;  // marker doubles as end-of-text
    ids.push_back(next);
    out.new_tokens.push_back(next);

    std::string piece = tok.token_text(next);
    if (tok.mode() == TokenizerMode::word && !out.text.empty()) {
      const bool attaches = piece.size() == 1 && std::string_view(".,!?;:").find(piece[0]) !=
                                                     std::string_view::npos;
      if (!attaches) piece.insert(piece.begin(), ' ');
    }
    out.text += piece;
    if (on_token) on_token(next, piece);
  }
  out.continuation = tok.detokenize(out.new_tokens);
  return out;
}

}  // namespace knobs::lm
