#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "knobs/sae.hpp"

namespace knobs::sae {

namespace {

constexpr char kMagic[8] = {'K', 'N', 'O', 'B', 'S', 'A', 'E', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

void put_doubles(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& in, std::span<double> v) {
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
    throw ParseError("sae checkpoint: truncated at offset " + std::to_string(in.gcount()));
  }
}

}  // namespace

void save_checkpoint(const TrainedSae& sae, const std::filesystem::path& path) {
  sae.params.validate();
  const auto& c = sae.config;
  const auto& s = sae.stats;
  nlohmann::json header = {{"d", sae.params.input_dim()},
                           {"m", sae.params.features()},
                           {"lambda_sparsity", c.lambda_sparsity},
                           {"seed", c.seed},
                           {"learning_rate", c.learning_rate},
                           {"steps", c.steps},
                           {"batch_size", c.batch_size},
                           {"resample_interval", c.resample_interval},
                           {"stats",
                            {{"sample_count", s.sample_count},
                             {"reconstruction_mse", s.reconstruction_mse},
                             {"mean_l0", s.mean_l0},
                             {"activation_count", s.activation_count},
                             {"dead", s.dead}}}};
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t hlen = h.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  put_doubles(out, sae.params.w_enc.data());
  put_doubles(out, sae.params.b_enc);
  put_doubles(out, sae.params.w_dec.data());
  put_doubles(out, sae.params.b_dec);
  put_doubles(out, s.max_activation);
  if (!out) throw DataError("write failed for " + path.string());
}

TrainedSae load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError(path.string() + ": not an sae checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in) throw ParseError(path.string() + ": truncated sae checkpoint header");
  if (version != kFormatVersion) {
    throw VersionError(path.string() + ": unsupported sae checkpoint version " + std::to_string(version));
  }
  std::string h(hlen, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(hlen))) throw ParseError("sae checkpoint: truncated header");
  const auto header = nlohmann::json::parse(h);
  const std::size_t d = header.at("d"), m = header.at("m");

  TrainedSae sae;
  auto& c = sae.config;
  c.features = m;
  c.lambda_sparsity = header.at("lambda_sparsity");
  c.seed = header.at("seed");
  c.learning_rate = header.at("learning_rate");
  c.steps = header.at("steps");
  c.batch_size = header.at("batch_size");
  c.resample_interval = header.at("resample_interval");
  sae.params = {Matrix(d, m), std::vector<double>(m), Matrix(m, d), std::vector<double>(d)};
  get_doubles(in, sae.params.w_enc.data());
  get_doubles(in, sae.params.b_enc);
  get_doubles(in, sae.params.w_dec.data());
  get_doubles(in, sae.params.b_dec);
  auto& s = sae.stats;
  s.max_activation.resize(m);
  get_doubles(in, s.max_activation);
  const auto& st = header.at("stats");
  s.sample_count = st.at("sample_count");
  s.reconstruction_mse = st.at("reconstruction_mse");
  s.mean_l0 = st.at("mean_l0");
  s.activation_count = st.at("activation_count").get<std::vector<std::size_t>>();
  s.dead = st.at("dead").get<std::vector<bool>>();
  if (s.activation_count.size() != m || s.dead.size() != m) throw ParseError("sae checkpoint: stats size mismatch");
  return sae;
}

}  // namespace knobs::sae
