#include <algorithm>
#include <cctype>
#include <set>

#include "knobs/validation.hpp"

namespace knobs::validation {

namespace {

bool word_byte(unsigned char c) { return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::set<std::string> lowered(const std::vector<std::string>& words) {
  std::set<std::string> out;
  for (const auto& w : words) out.insert(lower(w));
  return out;
}

}  // namespace

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && word_byte(static_cast<unsigned char>(text[j]))) ++j;
    out.push_back(lower(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

void Lexicon::validate() const {
  if (positive.empty() || negative.empty()) throw ConfigError("lexicon: both word sets must be nonempty");
  const auto pos = lowered(positive);
  for (const auto& w : lowered(negative)) {
    if (pos.count(w)) throw ConfigError("lexicon: '" + w + "' appears on both sides");
  }
}

BehaviorScore lexicon_score(std::string_view text, const Lexicon& lexicon) {
  lexicon.validate();
  const auto pos = lowered(lexicon.positive);
  const auto neg = lowered(lexicon.negative);
  std::size_t p = 0, n = 0;
  for (const auto& w : word_tokens(text)) {
    p += pos.count(w);
    n += neg.count(w);
  }
  BehaviorScore s;
  s.scorer = "lexicon";
  s.score = p + n == 0 ? 0.5 : static_cast<double>(p) / static_cast<double>(p + n);
  s.rationale = std::to_string(p) + " positive, " + std::to_string(n) + " negative hits";
  return s;
}

}  // namespace knobs::validation
