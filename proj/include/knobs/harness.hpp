#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "knobs/lm.hpp"
#include "knobs/sae.hpp"
#include "knobs/steering.hpp"
#include "knobs/validation.hpp"

namespace knobs::harness {

// ---- questionnaires --------------------------------------------------------

enum class Pole { high, low };

const char* to_string(Pole p);

struct ChoiceOption {
  std::string key;  // "A", "B", ...
  std::string text;
  Pole pole = Pole::high;

  bool operator==(const ChoiceOption&) const = default;
};

struct ForcedChoiceItem {
  std::string id;
  std::string question;
  std::vector<ChoiceOption> options;
  std::string trait;

  void validate() const;  // ≥ 2 options, both poles, distinct keys
  std::vector<std::string> keys() const;
  bool operator==(const ForcedChoiceItem&) const = default;
};

// One JSON object per line, same schema versioning as the pair files.
std::vector<ForcedChoiceItem> load_questionnaire(const std::filesystem::path& path);
void save_questionnaire(const std::vector<ForcedChoiceItem>& items, const std::filesystem::path& path);

// Question, enumerated options and the reply-with-one-letter instruction.
std::string item_prompt(const ForcedChoiceItem& item);

struct AdministerConfig {
  std::size_t max_new_tokens = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = hardware concurrency
};

struct RawAnswer {
  std::string item_id;
  std::uint64_t seed = 0;
  std::string prompt;
  std::string text;  // continuation only
  bool failed = false;
  std::string error;

  bool operator==(const RawAnswer&) const = default;
};

// Answers come back in item order; each item's seed depends only on the run
// seed and the item's position.
std::vector<RawAnswer> administer(const std::vector<ForcedChoiceItem>& items, const lm::LmWeights& lm,
                                  const steering::SteeringVector* steering, const AdministerConfig& config);

struct ParsedAnswer {
  std::optional<Pole> pole;  // set iff valid
  std::optional<validation::InvalidReason> reason;
  std::string key;           // matched option key, if any

  bool valid() const { return pole.has_value(); }
  bool operator==(const ParsedAnswer&) const = default;
};

// Collapse and empty output win over any option mention; then an option key,
// then an unambiguous option-text prefix; anything else is disobedience.
ParsedAnswer parse_answer(std::string_view answer, const ForcedChoiceItem& item);

struct TraitCounts {
  std::size_t high = 0, low = 0, invalid = 0, total = 0;
  bool operator==(const TraitCounts&) const = default;
};

struct TraitScoreResult {
  std::optional<double> score;  // high / (high + low); unset with no valid answer
  double valid_rate = 0.0;      // (high + low) / total
  TraitCounts counts;
  bool operator==(const TraitScoreResult&) const = default;
};

TraitScoreResult trait_score(const std::vector<ParsedAnswer>& answers);

// ---- reports ---------------------------------------------------------------

struct ReportRow {
  std::string trait;
  std::string method;  // "Baseline", "CAA", "Ours"
  std::optional<std::size_t> layer;
  std::optional<std::size_t> feature;
  std::optional<double> alpha;  // unset for the baseline
  TraitScoreResult result;

  bool operator==(const ReportRow&) const = default;
};

// Columns: Trait, Method, (Layer, Feature Idx), Polarity, Trait Score, Valid
// Rate. Rows of the same trait/method/location with α and −α collapse into
// one "±" row showing "+ / −" pairs.
std::string render_table(const std::vector<ReportRow>& rows);

void save_report_rows(const std::vector<ReportRow>& rows, const std::filesystem::path& path);
std::vector<ReportRow> load_report_rows(const std::filesystem::path& path);

// ---- heatmaps --------------------------------------------------------------

struct HeatmapRecord {
  std::string text;
  std::vector<lm::TokenSpan> spans;
  std::vector<double> activations;  // one per span, ≥ 0
  std::size_t feature = 0;
  std::size_t layer = 0;

  void validate() const;
};

HeatmapRecord token_heatmap(std::string_view text, const lm::LmWeights& lm, const sae::SaeParams& sae,
                            std::size_t layer, std::size_t feature);

enum class HeatmapFormat { html, ansi };

HeatmapFormat heatmap_format_from_string(std::string_view s);  // ConfigError when unknown

// Intensity = activation / record max (all zero when the max is 0).
std::string render_heatmap(const HeatmapRecord& record, HeatmapFormat format);

std::string html_escape(std::string_view s);

}  // namespace knobs::harness
