#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "knobs/lm.hpp"

namespace knobs::lm {

// Layout: 8-byte magic, u32 format version, u64 header length, JSON header
// (config and tokenizer), u64 parameter count, raw little-endian doubles.
namespace {

constexpr char kMagic[8] = {'K', 'N', 'O', 'B', 'S', 'L', 'M', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("lm checkpoint: truncated " + what);
  return v;
}

}  // namespace

void save_checkpoint(const LmWeights& w, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"vocab_size", w.config.vocab_size}, {"d_model", w.config.d_model},
      {"n_layers", w.config.n_layers},     {"n_heads", w.config.n_heads},
      {"context", w.config.context},       {"d_ff", w.config.d_ff},
      {"tokenizer", w.tokenizer.mode() == TokenizerMode::byte ? "byte" : "word"},
      {"vocabulary", w.tokenizer.vocabulary()}};
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  put<std::uint64_t>(out, w.params.size());
  out.write(reinterpret_cast<const char*>(w.params.data()),
            static_cast<std::streamsize>(w.params.size() * sizeof(double)));
  if (!out) throw DataError("write failed for " + path.string());
}

LmWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError(path.string() + ": not an lm checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kFormatVersion) {
    throw VersionError(path.string() + ": unsupported lm checkpoint version " + std::to_string(version));
  }
  const auto hlen = get<std::uint64_t>(in, "header length");
  std::string h(hlen, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(hlen))) throw ParseError("lm checkpoint: truncated header");
  const auto header = nlohmann::json::parse(h);
  LmConfig c;
  c.vocab_size = header.at("vocab_size");
  c.d_model = header.at("d_model");
  c.n_layers = header.at("n_layers");
  c.n_heads = header.at("n_heads");
  c.context = header.at("context");
  c.d_ff = header.at("d_ff");
  c.validate();
  Tokenizer tok = header.at("tokenizer") == "byte"
                      ? Tokenizer::bytes()
                      : Tokenizer::words(header.at("vocabulary").get<std::vector<std::string>>());
  const auto count = get<std::uint64_t>(in, "parameter count");
  if (count != ParamLayout::of(c).total) throw ParseError("lm checkpoint: parameter count mismatch");
  LmWeights w{c, std::move(tok), std::vector<double>(count)};
  if (!in.read(reinterpret_cast<char*>(w.params.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw ParseError("lm checkpoint: truncated parameters");
  }
  return w;
}

}  // namespace knobs::lm
