#include <algorithm>
#include <cctype>
#include <set>

#include "knobs/lm.hpp"

namespace knobs::lm {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool attaches_left(std::string_view tok) {
  return tok.size() == 1 && std::string_view(".,!?;:").find(tok[0]) != std::string_view::npos;
}

// Raw [begin, end) extents of word-mode tokens.
std::vector<std::pair<std::size_t, std::size_t>> word_extents(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(i, j);
      i = j;
    } else {
      out.emplace_back(i, i + 1);
      ++i;
    }
  }
  return out;
}

}  // namespace

Tokenizer Tokenizer::bytes() { return Tokenizer{}; }

Tokenizer Tokenizer::words(std::vector<std::string> vocabulary) {
  Tokenizer t;
  t.mode_ = TokenizerMode::word;
  std::set<std::string> seen;
  for (auto& w : vocabulary) {
    if (w.empty()) throw ConfigError("tokenizer: empty vocabulary entry");
    if (!seen.insert(w).second) throw ConfigError("tokenizer: duplicate vocabulary entry " + w);
  }
  t.vocab_ = std::move(vocabulary);
  for (std::size_t i = 0; i < t.vocab_.size(); ++i) {
    t.lookup_.emplace_back(t.vocab_[i], static_cast<int>(i) + 2);
  }
  std::sort(t.lookup_.begin(), t.lookup_.end());
  return t;
}

Tokenizer Tokenizer::build_word_vocabulary(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& text : texts) {
    for (auto [b, e] : word_extents(text)) words.emplace(text.substr(b, e - b));
  }
  return Tokenizer::words(std::vector<std::string>(words.begin(), words.end()));
}

std::size_t Tokenizer::vocab_size() const {
  return mode_ == TokenizerMode::byte ? 257 : vocab_.size() + 2;
}

int Tokenizer::lookup(std::string_view word) const {
  auto it = std::lower_bound(lookup_.begin(), lookup_.end(), word,
                             [](const auto& entry, std::string_view w) { return entry.first < w; });
  if (it != lookup_.end() && it->first == word) return it->second;
  return unk();
}

std::vector<TokenSpan> Tokenizer::tokenize_with_spans(std::string_view text) const {
  std::vector<TokenSpan> spans;
  if (mode_ == TokenizerMode::byte) {
    for (std::size_t i = 0; i < text.size(); ++i) {
      spans.push_back({static_cast<unsigned char>(text[i]), i, i + 1});
    }
    return spans;
  }
  std::size_t cursor = 0;
  for (auto [b, e] : word_extents(text)) {
    spans.push_back({lookup(text.substr(b, e - b)), cursor, e});
    cursor = e;
  }
  if (!spans.empty()) spans.back().end = text.size();
  return spans;
}

std::vector<int> Tokenizer::tokenize(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& s : tokenize_with_spans(text)) ids.push_back(s.id);
  return ids;
}

std::vector<int> Tokenizer::encode_for_model(std::string_view text) const {
  std::vector<int> ids{bos()};
  for (int id : tokenize(text)) ids.push_back(id);
  return ids;
}

std::string Tokenizer::token_text(int id) const {
  if (id == bos()) return "";
  if (mode_ == TokenizerMode::byte) {
    if (id < 0 || id > 255) throw IndexError("tokenizer: byte id out of range");
    return std::string(1, static_cast<char>(id));
  }
  if (id == unk()) return "<unk>";
  if (id < 2 || static_cast<std::size_t>(id) >= vocab_.size() + 2) {
    throw IndexError("tokenizer: word id out of range");
  }
  return vocab_[static_cast<std::size_t>(id) - 2];
}

std::string Tokenizer::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == bos()) continue;
    const std::string piece = token_text(id);
    if (mode_ == TokenizerMode::word && !out.empty() && !attaches_left(piece)) out += ' ';
    out += piece;
  }
  return out;
}

}  // namespace knobs::lm
