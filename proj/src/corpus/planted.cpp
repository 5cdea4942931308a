#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "knobs/corpus.hpp"

namespace knobs::corpus {

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

void check_plan(const PlantedSpec& plan) {
  if (plan.lexicon_a.empty() || plan.lexicon_b.empty() || plan.filler.empty()) {
    throw ConfigError("planted corpus: lexicons and filler must be nonempty");
  }
  std::set<std::string> seen;
  for (const auto* group : {&plan.lexicon_a, &plan.lexicon_b, &plan.filler}) {
    std::set<std::string> local(group->begin(), group->end());
    for (const auto& w : local) {
      if (!seen.insert(w).second) {
        throw ConfigError("planted corpus: word '" + w + "' appears in more than one vocabulary");
      }
    }
  }
  if (plan.marker_token && seen.count(*plan.marker_token)) {
    throw ConfigError("planted corpus: marker token collides with a lexicon or filler word");
  }
  if (plan.situation_min > plan.situation_max || plan.reaction_min > plan.reaction_max ||
      plan.reaction_min == 0) {
    throw ConfigError("planted corpus: invalid length bounds");
  }
  if (!(plan.lexicon_rate > 0.0 && plan.lexicon_rate <= 1.0)) {
    throw ConfigError("planted corpus: lexicon_rate must be in (0, 1]");
  }
}

std::size_t draw_length(SeededRng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(hi - lo + 1);
}

std::vector<std::string> filler_words(SeededRng& rng, const PlantedSpec& plan, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(plan.filler[rng.below(plan.filler.size())]);
  return out;
}

}  // namespace

PlantedSpec PlantedSpec::defaults() {
  PlantedSpec s;
  s.lexicon_a = {"bright", "eager", "lively", "cheerful", "bold"};
  s.lexicon_b = {"quiet", "gloomy", "timid", "weary", "dull"};
  s.filler = {"i",     "would", "the",   "a",     "go",    "to",    "with",  "and",
              "then",  "see",   "my",    "friend", "room",  "day",   "at",    "we",
              "talk",  "walk",  "it",    "was",   "in",    "on",    "some",  "time",
              "people", "place", "feel",  "think", "about", "there", "that",  "this"};
  return s;
}

PlantedCorpus generate_planted_text_corpus(const PlantedSpec& plan) {
  check_plan(plan);
  SeededRng rng(plan.seed);
  PlantedCorpus out;
  std::size_t pos_tokens = 0, pos_lex = 0, neg_tokens = 0, neg_lex = 0;

  for (std::size_t n = 0; n < plan.pair_count; ++n) {
    ContrastivePair pair;
    pair.id = "planted-" + std::to_string(n);
    pair.trait = plan.trait;
    pair.facet = plan.facet;
    pair.situation = join(filler_words(rng, plan, draw_length(rng, plan.situation_min,
                                                              plan.situation_max)));

    const std::size_t len = draw_length(rng, plan.reaction_min, plan.reaction_max);
    std::vector<std::string> pos, neg;
    bool any_lexicon = false;
    for (std::size_t t = 0; t < len; ++t) {
      const bool lexicon_slot = rng.uniform() < plan.lexicon_rate;
      if (lexicon_slot) {
        const std::size_t ia = rng.below(plan.lexicon_a.size());
        const std::size_t ib = rng.below(plan.lexicon_b.size());
        pos.push_back(plan.lexicon_a[ia]);
        neg.push_back(plan.lexicon_b[ib]);
        any_lexicon = true;
      } else {
        const auto& w = plan.filler[rng.below(plan.filler.size())];
        pos.push_back(w);
        neg.push_back(w);
      }
    }
    if (!any_lexicon) {
      const std::size_t slot = rng.below(len);
      pos[slot] = plan.lexicon_a[rng.below(plan.lexicon_a.size())];
      neg[slot] = plan.lexicon_b[rng.below(plan.lexicon_b.size())];
    }
    if (plan.marker_token) {
      const std::size_t at = rng.below(pos.size() + 1);
      pos.insert(pos.begin() + static_cast<std::ptrdiff_t>(at), *plan.marker_token);
    }
    for (const auto& w : pos) {
      ++pos_tokens;
      if (std::find(plan.lexicon_a.begin(), plan.lexicon_a.end(), w) != plan.lexicon_a.end())
        ++pos_lex;
    }
    for (const auto& w : neg) {
      ++neg_tokens;
      if (std::find(plan.lexicon_b.begin(), plan.lexicon_b.end(), w) != plan.lexicon_b.end())
        ++neg_lex;
    }
    pair.positive = join(pos);
    pair.negative = join(neg);
    out.pairs.push_back(std::move(pair));
  }

  auto& m = out.manifest;
  m.positive_lexicon = plan.lexicon_a;
  m.negative_lexicon = plan.lexicon_b;
  m.marker_token = plan.marker_token;
  m.lexicon_rate = plan.lexicon_rate;
  m.seed = plan.seed;
  m.pair_count = plan.pair_count;
  m.positive_lexicon_share = pos_tokens ? static_cast<double>(pos_lex) / pos_tokens : 0.0;
  m.negative_lexicon_share = neg_tokens ? static_cast<double>(neg_lex) / neg_tokens : 0.0;
  return out;
}

std::vector<ValidationQuestion> generate_planted_questions(const PlantedSpec& plan,
                                                           std::size_t count,
                                                           std::uint64_t seed) {
  check_plan(plan);
  SeededRng rng(seed);
  std::vector<ValidationQuestion> out;
  for (std::size_t n = 0; n < count; ++n) {
    ValidationQuestion q;
    q.id = "planted-q" + std::to_string(n);
    q.trait = plan.trait;
    q.facet = plan.facet;
    const auto words =
        filler_words(rng, plan, draw_length(rng, plan.situation_min, plan.situation_max));
    q.situation = join(std::vector<std::string>(words.begin(), words.end() - 1));
    q.question = words.back();
    out.push_back(std::move(q));
  }
  return out;
}

PlantedActivations generate_planted_activations(std::size_t d, std::size_t m_true, std::size_t k,
                                                double noise, std::size_t count,
                                                std::uint64_t seed) {
  if (d == 0 || m_true <= d) throw ConfigError("planted activations: need m_true > d > 0");
  if (k == 0 || k >= m_true) throw ConfigError("planted activations: need 0 < k < m_true");
  if (!(noise >= 0.0)) throw ConfigError("planted activations: noise must be >= 0");
  if (count == 0) throw ConfigError("planted activations: count must be >= 1");

  SeededRng rng(seed);
  PlantedActivations out;
  out.dictionary = Matrix(m_true, d);
  for (std::size_t i = 0; i < m_true; ++i) {
    auto row = out.dictionary.row(i);
    for (double& x : row) x = rng.normal();
    const double norm = l2_norm(row);
    for (double& x : row) x /= norm;
  }

  out.samples = Matrix(count, d);
  out.support.resize(count);
  std::vector<std::size_t> perm(m_true);
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t i = 0; i < m_true; ++i) perm[i] = i;
    auto sample = out.samples.row(s);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t pick = j + rng.below(m_true - j);
      std::swap(perm[j], perm[pick]);
      const std::size_t feat = perm[j];
      out.support[s].push_back(feat);
      const double coef = rng.uniform(0.5, 1.5);
      const auto atom = out.dictionary.row(feat);
      for (std::size_t c = 0; c < d; ++c) sample[c] += coef * atom[c];
    }
    if (noise > 0.0)
      for (double& x : sample) x += rng.normal(0.0, noise);
  }
  return out;
}

}  // namespace knobs::corpus
