#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "knobs/numerics.hpp"

namespace knobs::corpus {

inline constexpr int kSchemaVersion = 1;

enum class Polarity { positive, negative };

const char* to_string(Polarity p);

// Matched texts that differ only in the target semantics.
struct ContrastivePair {
  std::string id;
  std::string situation;
  std::string positive;
  std::string negative;
  std::string trait;
  std::string facet;

  // The sample text fed to the model: situation followed by the reaction.
  std::string text(Polarity p) const;

  bool operator==(const ContrastivePair&) const = default;
};

struct ValidationQuestion {
  std::string id;
  std::string situation;
  std::string question;
  std::string trait;
  std::string facet;

  std::string prompt() const;

  bool operator==(const ValidationQuestion&) const = default;
};

// Trait -> facet names. Labels stay opaque strings everywhere else; an empty
// taxonomy accepts any label.
struct Taxonomy {
  std::vector<std::pair<std::string, std::vector<std::string>>> traits;

  bool empty() const { return traits.empty(); }
  bool accepts(const std::string& trait, const std::string& facet) const;
};

Taxonomy load_taxonomy(const std::filesystem::path& path);

std::vector<ContrastivePair> load_pairs(const std::filesystem::path& path,
                                        const Taxonomy& taxonomy = {});
void save_pairs(const std::vector<ContrastivePair>& pairs, const std::filesystem::path& path);

std::vector<ValidationQuestion> load_questions(const std::filesystem::path& path,
                                               const Taxonomy& taxonomy = {});
void save_questions(const std::vector<ValidationQuestion>& questions,
                    const std::filesystem::path& path);

struct PlantedSpec {
  std::vector<std::string> lexicon_a;  // marks positives
  std::vector<std::string> lexicon_b;  // marks negatives
  std::vector<std::string> filler;
  std::size_t situation_min = 4;
  std::size_t situation_max = 6;
  std::size_t reaction_min = 8;
  std::size_t reaction_max = 14;
  double lexicon_rate = 0.35;  // share of reaction slots holding a lexicon word
  std::size_t pair_count = 200;
  std::uint64_t seed = 0;
  std::optional<std::string> marker_token;  // inserted into every positive only
  std::string trait = "planted";
  std::string facet = "style";

  static PlantedSpec defaults();
};

struct PlantedManifest {
  std::vector<std::string> positive_lexicon;
  std::vector<std::string> negative_lexicon;
  std::optional<std::string> marker_token;
  double lexicon_rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t pair_count = 0;
  // Observed share of reaction tokens drawn from the polarity's own lexicon.
  double positive_lexicon_share = 0.0;
  double negative_lexicon_share = 0.0;
};

struct PlantedCorpus {
  std::vector<ContrastivePair> pairs;
  PlantedManifest manifest;
};

PlantedCorpus generate_planted_text_corpus(const PlantedSpec& plan);

// Neutral prompts for sweeps over a planted corpus: filler only, no lexicon.
std::vector<ValidationQuestion> generate_planted_questions(const PlantedSpec& plan,
                                                           std::size_t count,
                                                           std::uint64_t seed);

void save_manifest(const PlantedManifest& manifest, const std::filesystem::path& path);
PlantedManifest load_manifest(const std::filesystem::path& path);

struct PlantedActivations {
  Matrix samples;     // count × d
  Matrix dictionary;  // m_true × d, unit rows
  std::vector<std::vector<std::size_t>> support;  // active rows per sample
};

// Each sample is a nonnegative combination of k unit dictionary rows
// (coefficients uniform in [0.5, 1.5]) plus N(0, noise²) per coordinate.
PlantedActivations generate_planted_activations(std::size_t d, std::size_t m_true, std::size_t k,
                                                double noise, std::size_t count,
                                                std::uint64_t seed);

}  // namespace knobs::corpus
