#include <algorithm>
#include <atomic>
#include <thread>

#include "knobs/log.hpp"
#include "knobs/validation.hpp"

namespace knobs::validation {

void SweepConfig::validate() const {
  if (alphas.empty()) throw ConfigError("sweep: empty alpha grid");
  if (!std::is_sorted(alphas.begin(), alphas.end()) ||
      std::adjacent_find(alphas.begin(), alphas.end()) != alphas.end()) {
    throw ConfigError("sweep: alpha grid must be strictly ascending");
  }
  if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end()) {
    throw ConfigError("sweep: alpha grid must contain 0");
  }
  if (replicates == 0) throw ConfigError("sweep: replicates must be ≥ 1");
}

std::uint64_t cell_seed(std::uint64_t seed_base, std::size_t question_index, std::size_t replicate) {
  return mix64(mix64(seed_base ^ 0x5eedULL) + question_index * 0x9e3779b97f4a7c15ULL + replicate);
}

RawSweep alpha_sweep(const steering::SteeringVector& vector,
                     const std::vector<corpus::ValidationQuestion>& questions,
                     const lm::LmWeights& lm, const SweepConfig& config) {
  config.validate();
  if (questions.empty()) throw DataError("sweep: no questions");
  if (vector.layer >= lm.config.n_layers) throw ConfigError("sweep: vector layer out of range");

  RawSweep sweep;
  sweep.feature_id = vector.label();
  sweep.layer = vector.layer;
  for (double a : config.alphas) {
    for (std::size_t q = 0; q < questions.size(); ++q) {
      for (std::size_t r = 0; r < config.replicates; ++r) {
        SweepCell c;
        c.alpha = a;
        c.question_id = questions[q].id;
        c.replicate = r;
        c.seed = cell_seed(config.seed_base, q, r);
        c.prompt = questions[q].prompt();
        sweep.cells.push_back(std::move(c));
      }
    }
  }

  // Each worker owns the cells it claims; results land in preallocated slots,
  // so the archive order never depends on scheduling.
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sweep.cells.size(); i = next++) {
      auto& c = sweep.cells[i];
      try {
        const auto out = steering::steered_generate(c.prompt, lm, vector.with_alpha(c.alpha),
                                                    {config.max_new_tokens, config.temperature, c.seed});
        c.text = out.continuation;
      } catch (const Error& e) {
        c.status = CellStatus::failed;
        c.error = e.what();
      }
    }
  };
  std::size_t workers = config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, sweep.cells.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (const auto& c : sweep.cells) {
    if (c.status == CellStatus::failed) log::warn("sweep: cell failed at alpha " + std::to_string(c.alpha) + ": " + c.error);
  }
  return sweep;
}

void score_sweep(RawSweep& sweep, const Lexicon& lexicon, const RemoteJudge* judge,
                 std::string_view target_description) {
  lexicon.validate();
  bool judge_down = false;
  for (auto& c : sweep.cells) {
    if (c.status == CellStatus::failed) continue;
    c.validity = validity_check(c.text);
    c.score.reset();
    c.note.clear();
    if (judge && !judge_down) {
      try {
        c.score = judge->score(c.text, target_description);
        continue;
      } catch (const ScorerUnavailable& e) {
        judge_down = true;
        log::warn(std::string("sweep: ") + e.what() + "; falling back to the lexicon scorer");
      } catch (const ParseError& e) {
        c.note = std::string("judge reply unparseable: ") + e.what();
        continue;
      }
    }
    c.score = lexicon_score(c.text, lexicon);
    if (judge_down) c.note = "judge unavailable; lexicon fallback";
  }
}

}  // namespace knobs::validation
