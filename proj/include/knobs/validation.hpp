#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "knobs/corpus.hpp"
#include "knobs/lm.hpp"
#include "knobs/steering.hpp"

namespace knobs::validation {

// ---- scoring ---------------------------------------------------------------

struct BehaviorScore {
  double score = 0.5;  // 1 = fully expresses the positive pole
  std::string scorer;
  std::string rationale;

  bool operator==(const BehaviorScore&) const = default;
};

struct Lexicon {
  std::vector<std::string> positive;
  std::vector<std::string> negative;

  void validate() const;  // nonempty and disjoint (case-insensitive)
  Lexicon swapped() const { return {negative, positive}; }
};

// Lowercased word tokens: runs of letters, digits, apostrophes, hyphens.
std::vector<std::string> word_tokens(std::string_view text);

BehaviorScore lexicon_score(std::string_view text, const Lexicon& lexicon);

// ---- remote judge ----------------------------------------------------------

struct JudgeConfig {
  std::string base_url;                      // e.g. http://127.0.0.1:8080
  std::string route = "/v1/chat/completions";
  std::string token_env = "JUDGE_TOKEN";
  std::string model = "judge";
  double timeout_seconds = 30.0;
  int max_attempts = 3;
  double backoff_seconds = 0.5;              // doubles after each failure
  std::size_t max_concurrent = 4;

  // base_url from JUDGE_ENDPOINT; empty when unset.
  static JudgeConfig from_env();
};

std::string judge_prompt(std::string_view response, std::string_view target_description);

// Rightmost integer, reading "n/10" as n. Throws ParseError unless 0..10.
int parse_judge_reply(std::string_view reply);

// Chat-completion client. Transport failures and 5xx/429 replies are retried;
// exhausting the attempts raises ScorerUnavailable, an unparseable reply
// raises ParseError. Safe to share across threads.
class RemoteJudge {
 public:
  explicit RemoteJudge(JudgeConfig config);
  ~RemoteJudge();
  RemoteJudge(const RemoteJudge&) = delete;
  RemoteJudge& operator=(const RemoteJudge&) = delete;

  BehaviorScore score(std::string_view response, std::string_view target_description) const;
  const JudgeConfig& config() const { return config_; }

  struct Gate;  // concurrency cap

 private:
  JudgeConfig config_;
  std::unique_ptr<Gate> gate_;
};

// ---- validity --------------------------------------------------------------

enum class InvalidReason { repetition_collapse, empty_output, instruction_disobedience, nonsense };

const char* to_string(InvalidReason r);
InvalidReason invalid_reason_from_string(std::string_view s);

struct ValidityVerdict {
  bool valid = true;
  std::optional<InvalidReason> reason;

  static ValidityVerdict ok() { return {}; }
  static ValidityVerdict invalid(InvalidReason r) { return {false, r}; }
  bool operator==(const ValidityVerdict&) const = default;
};

// Option key named by a forced-choice answer: a bare key ("B", "(b)", "C."),
// "answer: X" / "answer is X", or an uppercase standalone key anywhere.
// Ambiguous answers naming several keys yield nullopt.
std::optional<std::string> find_option_key(std::string_view text, const std::vector<std::string>& keys);

// Checks in order: empty, repetition (an n ≥ 4 token span repeated ≥ 5 times
// back to back), nonsense (no letters at all), then, when option keys are
// given, a missing option key.
ValidityVerdict validity_check(std::string_view text, const std::vector<std::string>* option_keys = nullptr);

// ---- sweeps ----------------------------------------------------------------

struct SweepConfig {
  std::vector<double> alphas{-5.0, -2.5, 0.0, 2.5, 5.0};
  std::string question_set = "default";
  std::size_t replicates = 1;
  std::uint64_t seed_base = 0;
  std::size_t max_new_tokens = 32;
  double temperature = 1.0;
  std::size_t workers = 0;  // 0 = hardware concurrency

  void validate() const;  // ascending grid containing 0, replicates ≥ 1
};

enum class CellStatus { generated, failed };

struct SweepCell {
  double alpha = 0.0;
  std::string question_id;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  CellStatus status = CellStatus::generated;
  std::string prompt;
  std::string text;  // continuation only
  std::string error;
  std::optional<BehaviorScore> score;
  std::optional<ValidityVerdict> validity;
  std::string note;  // scorer provenance, parse failures

  bool operator==(const SweepCell&) const = default;
};

struct RawSweep {
  std::string feature_id;
  std::size_t layer = 0;
  std::vector<SweepCell> cells;  // ordered by (α, question, replicate)
};

// Seed of a cell; independent of α so every level sees the same draws.
std::uint64_t cell_seed(std::uint64_t seed_base, std::size_t question_index, std::size_t replicate);

// `vector` fixes direction and layer; its α is replaced per grid point.
RawSweep alpha_sweep(const steering::SteeringVector& vector,
                     const std::vector<corpus::ValidationQuestion>& questions,
                     const lm::LmWeights& lm, const SweepConfig& config);

// Fills score and validity for generated cells. With a judge, a
// ScorerUnavailable switches the remaining cells to the lexicon scorer and
// notes it; a ParseError leaves that cell unscored.
void score_sweep(RawSweep& sweep, const Lexicon& lexicon, const RemoteJudge* judge = nullptr,
                 std::string_view target_description = {});

// ---- verdicts --------------------------------------------------------------

enum class VerdictStatus { pass, fail, inconclusive };
enum class HumanVerdict { pending, accepted, rejected };

const char* to_string(VerdictStatus s);
const char* to_string(HumanVerdict h);
HumanVerdict human_verdict_from_string(std::string_view s);

struct MonotonicityConfig {
  double rho_threshold = 0.8;
  double effect_floor = 0.15;
  std::size_t min_levels = 3;
};

struct LevelSummary {
  double alpha = 0.0;
  std::size_t cells = 0;
  std::size_t valid_scored = 0;
  double mean_score = 0.0;  // over valid scored cells

  bool operator==(const LevelSummary&) const = default;
};

// Spearman correlation with average ranks for ties; nullopt when either side
// is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct Monotonicity {
  VerdictStatus status = VerdictStatus::inconclusive;
  std::optional<double> rho;
  double effect = 0.0;  // max mean − min mean
  bool flat = false;    // effect below the floor
  int polarity = 0;     // sign of ρ

  bool operator==(const Monotonicity&) const = default;
};

// Levels with no valid scored cell are dropped before ranking.
Monotonicity judge_levels(const std::vector<LevelSummary>& levels, const MonotonicityConfig& config = {});

struct SweepReport {
  std::string feature_id;
  std::size_t layer = 0;
  std::optional<double> delta_f;  // retrieval-side separation, for comparison
  std::vector<SweepCell> cells;
  std::vector<LevelSummary> levels;
  Monotonicity verdict;
  HumanVerdict human = HumanVerdict::pending;

  bool operator==(const SweepReport&) const = default;
};

SweepReport monotonicity_verdict(const RawSweep& sweep, const MonotonicityConfig& config = {},
                                 std::optional<double> delta_f = std::nullopt);

// One line per α level plus the summary; used by the CLI.
std::string format_report(const SweepReport& report);

void save_report(const SweepReport& report, const std::filesystem::path& path);
SweepReport load_report(const std::filesystem::path& path);

}  // namespace knobs::validation
