#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knobs/numerics.hpp"

namespace knobs::lm {

enum class TokenizerMode { byte, word };

struct TokenSpan {
  int id;
  std::size_t begin;  // byte offsets into the source text
  std::size_t end;
};

// Byte mode: ids 0..255 are raw bytes and 256 is the sequence-start marker.
// Word mode: id 0 is the marker, id 1 is <unk>, then the vocabulary. Words are
// maximal runs of letters, digits, apostrophes or hyphens; any other visible
// character is its own token.
class Tokenizer {
 public:
  static Tokenizer bytes();
  static Tokenizer words(std::vector<std::string> vocabulary);
  static Tokenizer build_word_vocabulary(const std::vector<std::string>& texts);

  TokenizerMode mode() const { return mode_; }
  std::size_t vocab_size() const;
  int bos() const { return mode_ == TokenizerMode::byte ? 256 : 0; }
  int unk() const { return mode_ == TokenizerMode::byte ? -1 : 1; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  std::vector<int> tokenize(std::string_view text) const;

  // Spans tile the text: each covers the whitespace before its token, and the
  // last one also takes any trailing whitespace.
  std::vector<TokenSpan> tokenize_with_spans(std::string_view text) const;

  std::string detokenize(std::span<const int> ids) const;
  std::string token_text(int id) const;

  // Marker followed by the text's tokens: the input layout the model sees.
  std::vector<int> encode_for_model(std::string_view text) const;

  bool operator==(const Tokenizer&) const = default;

 private:
  TokenizerMode mode_ = TokenizerMode::byte;
  std::vector<std::string> vocab_;  // word mode only, excludes specials
  std::vector<std::pair<std::string, int>> lookup_;  // sorted for binary search

  int lookup(std::string_view word) const;
};

struct LmConfig {
  std::size_t vocab_size = 257;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t context = 128;
  std::size_t d_ff = 256;

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

// Offsets of every tensor inside the flat parameter buffer.
struct ParamLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  std::size_t wte, wpe;
  std::vector<Layer> layers;
  std::size_t lnf_g, lnf_b, w_out;
  std::size_t total;

  static ParamLayout of(const LmConfig& c);
};

struct LmWeights {
  LmConfig config;
  Tokenizer tokenizer;
  std::vector<double> params;

  ParamLayout layout() const { return ParamLayout::of(config); }
  bool operator==(const LmWeights&) const = default;
};

// Randomly initialised weights (N(0, 0.02), residual projections scaled by
// 1/sqrt(2L), unit norm gains).
LmWeights init_weights(const LmConfig& config, Tokenizer tokenizer, std::uint64_t seed);

// Adds `vector` to the post-block residual of `layer` at every position.
struct InjectionHook {
  std::size_t layer = 0;
  std::vector<double> vector;
};

struct ResidualCapture {
  std::size_t layer = 0;
  Matrix hidden;  // one row per input token
};

struct ForwardResult {
  Matrix logits;  // tokens × vocab
  std::vector<ResidualCapture> captures;  // ascending layer order
};

// `tokens` is the full model input (marker included). Captures are the
// post-block residual, taken after any injection at that layer.
ForwardResult forward(std::span<const int> tokens, const LmWeights& weights,
                      const std::set<std::size_t>& capture_layers = {},
                      const InjectionHook* hook = nullptr);

struct LmTrainOptions {
  double learning_rate = 3e-3;
  std::size_t batch_size = 8;
  double holdout_fraction = 0.1;
  double grad_clip = 1.0;
  std::size_t log_every = 0;  // 0 disables progress logging
};

struct LmTrainResult {
  LmWeights weights;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  std::vector<double> loss_history;  // per step, training batch loss
};

// Mean next-token cross-entropy (nats) over all positions of the sequences.
double sequence_loss(const std::vector<std::vector<int>>& sequences, const LmWeights& weights);

// Sequences carry the marker at both ends (it doubles as end-of-text) and are
// cut to context + 1 tokens.
LmTrainResult train_lm(const std::vector<std::vector<int>>& corpus, const LmConfig& config,
                       const Tokenizer& tokenizer, std::uint64_t seed, std::size_t steps,
                       const LmTrainOptions& options = {});

// Loss and full parameter gradient for one batch; exposed for gradient checks.
double loss_and_grad(const std::vector<std::vector<int>>& batch, const LmWeights& weights,
                     std::vector<double>& grad);

struct SamplerSettings {
  std::size_t max_new_tokens = 32;
  double temperature = 1.0;  // 0 = greedy, lowest index wins ties
  std::uint64_t seed = 0;
};

struct GenerationResult {
  std::string text;          // prompt followed by the continuation
  std::string continuation;
  std::vector<int> new_tokens;
  bool truncated = false;    // hit the context limit before finishing
};

using TokenCallback = std::function<void(int token, std::string_view piece)>;

GenerationResult generate(std::string_view prompt, const LmWeights& weights,
                          const SamplerSettings& sampler, const InjectionHook* hook = nullptr,
                          const TokenCallback& on_token = {});

void save_checkpoint(const LmWeights& weights, const std::filesystem::path& path);
LmWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace knobs::lm
