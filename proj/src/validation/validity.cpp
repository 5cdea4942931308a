#include <algorithm>
#include <cctype>

#include "knobs/validation.hpp"

namespace knobs::validation {

namespace {

constexpr std::size_t kMinSpan = 4;
constexpr std::size_t kMinRepeats = 5;

bool repeats_back_to_back(const std::vector<std::string>& t) {
  const std::size_t n = t.size();
  for (std::size_t span = kMinSpan; span * kMinRepeats <= n; ++span) {
    for (std::size_t start = 0; start + span * kMinRepeats <= n; ++start) {
      std::size_t copies = 1;
      while (start + (copies + 1) * span <= n &&
             std::equal(t.begin() + static_cast<std::ptrdiff_t>(start),
                        t.begin() + static_cast<std::ptrdiff_t>(start + span),
                        t.begin() + static_cast<std::ptrdiff_t>(start + copies * span))) {
        ++copies;
      }
      if (copies >= kMinRepeats) return true;
    }
  }
  return false;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Raw tokens split on whitespace with surrounding brackets and punctuation
// stripped, case preserved.
std::vector<std::string> bare_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string tok(text.substr(i, j - i));
    auto strip = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
    while (!tok.empty() && strip(tok.front())) tok.erase(tok.begin());
    while (!tok.empty() && strip(tok.back())) tok.pop_back();
    if (!tok.empty()) out.push_back(tok);
    i = j;
  }
  return out;
}

}  // namespace

const char* to_string(InvalidReason r) {
  switch (r) {
    case InvalidReason::repetition_collapse: return "repetition_collapse";
    case InvalidReason::empty_output: return "empty_output";
    case InvalidReason::instruction_disobedience: return "instruction_disobedience";
    case InvalidReason::nonsense: return "nonsense";
  }
  return "?";
}

InvalidReason invalid_reason_from_string(std::string_view s) {
  for (auto r : {InvalidReason::repetition_collapse, InvalidReason::empty_output,
                 InvalidReason::instruction_disobedience, InvalidReason::nonsense}) {
    if (s == to_string(r)) return r;
  }
  throw ParseError("unknown invalid reason '" + std::string(s) + "'");
}

std::optional<std::string> find_option_key(std::string_view text, const std::vector<std::string>& keys) {
  const auto toks = bare_tokens(text);
  auto key_of = [&](const std::string& tok, bool any_case) -> std::optional<std::string> {
    for (const auto& k : keys) {
      if (tok == k || (any_case && upper(tok) == upper(k))) return k;
    }
    return std::nullopt;
  };
  if (toks.empty()) return std::nullopt;
  // The whole answer is a key, or it opens with one: "B", "(b)", "C. Because".
  const std::string t = trim(text);
  if (toks.size() == 1 || (t.size() > 1 && (t[1] == '.' || t[1] == ')' || t[1] == ':')) ||
      (t.size() > 2 && t[0] == '(' && t[2] == ')')) {
    if (auto k = key_of(toks[0], true)) return k;
  }
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
    const auto w = upper(toks[i]);
    if (w == "ANSWER" || w == "OPTION" || w == "CHOICE") {
      std::size_t j = i + 1;
      if (upper(toks[j]) == "IS" && j + 1 < toks.size()) ++j;
      if (auto k = key_of(toks[j], true)) return k;
    }
  }
  std::optional<std::string> found;
  for (const auto& tok : toks) {
    if (auto k = key_of(tok, false)) {
      if (found && *found != *k) return std::nullopt;
      found = k;
    }
  }
  return found;
}

ValidityVerdict validity_check(std::string_view text, const std::vector<std::string>* option_keys) {
  if (trim(text).empty()) return ValidityVerdict::invalid(InvalidReason::empty_output);
  const auto words = word_tokens(text);
  if (repeats_back_to_back(words)) return ValidityVerdict::invalid(InvalidReason::repetition_collapse);
  const bool has_letter = std::any_of(text.begin(), text.end(), [](char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80;
  });
  if (!has_letter) return ValidityVerdict::invalid(InvalidReason::nonsense);
  if (option_keys && !find_option_key(text, *option_keys)) {
    return ValidityVerdict::invalid(InvalidReason::instruction_disobedience);
  }
  return ValidityVerdict::ok();
}

}  // namespace knobs::validation
