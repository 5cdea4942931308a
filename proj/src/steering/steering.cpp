#include "knobs/steering.hpp"

#include <fstream>

#include <json.hpp>

#include "knobs/log.hpp"

namespace knobs::steering {

namespace {

std::vector<double> scaled(std::span<const double> v, double a) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = a * v[i];
  return out;
}

}  // namespace

SteeringVector SteeringVector::with_alpha(double a) const {
  SteeringVector v = *this;
  v.alpha = a;
  v.resolved = scaled(direction, a);
  return v;
}

std::string SteeringVector::label() const {
  if (const auto* s = std::get_if<SaeSource>(&source)) return "sae:" + std::to_string(s->feature);
  return "caa:" + std::get<CaaSource>(source).pair_set;
}

SteeringVector make_sae_vector(const sae::SaeParams& params, const sae::SaeTrainStats& stats,
                               std::size_t feature, double alpha, std::size_t layer) {
  if (feature >= params.features() || feature >= stats.max_activation.size()) {
    throw IndexError("steering: feature " + std::to_string(feature) + " out of range (m = " +
                     std::to_string(params.features()) + ")");
  }
  const double phi = stats.max_activation[feature];
  if (phi < 0.0) throw DataError("steering: negative max activation for feature " + std::to_string(feature));
  if (phi == 0.0) log::warn("steering: feature " + std::to_string(feature) + " never fired; vector is zero");
  SteeringVector v;
  v.layer = layer;
  v.source = SaeSource{feature, phi};
  v.direction = scaled(params.w_dec.row(feature), phi);
  return v.with_alpha(alpha);
}

std::vector<ResidualSample> capture_final_residuals(const std::vector<corpus::ContrastivePair>& pairs,
                                                    const lm::LmWeights& lm, std::size_t layer) {
  if (layer >= lm.config.n_layers) throw ConfigError("caa: layer " + std::to_string(layer) + " out of range");
  std::vector<ResidualSample> out;
  for (const auto& pair : pairs) {
    for (auto pol : {corpus::Polarity::positive, corpus::Polarity::negative}) {
      try {
        const auto fwd = lm::forward(lm.tokenizer.encode_for_model(pair.text(pol)), lm, {layer});
        const Matrix& h = fwd.captures.front().hidden;
        const auto last = h.row(h.rows() - 1);
        out.push_back({{last.begin(), last.end()}, pol});
      } catch (const LengthError& e) {
        log::warn("caa: " + pair.id + "/" + to_string(pol) + " skipped: " + e.what());
      }
    }
  }
  return out;
}

SteeringVector make_caa_vector(const std::vector<ResidualSample>& samples, std::size_t layer,
                               double alpha, std::string pair_set) {
  std::size_t d = 0, n_pos = 0, n_neg = 0;
  for (const auto& s : samples) {
    if (d == 0) d = s.residual.size();
    if (s.residual.size() != d) throw ShapeError("caa: residual widths differ");
    (s.polarity == corpus::Polarity::positive ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) throw DataError("caa: need at least one sample of each polarity");
  std::vector<double> pos(d, 0.0), neg(d, 0.0);
  for (const auto& s : samples) {
    auto& acc = s.polarity == corpus::Polarity::positive ? pos : neg;
    for (std::size_t i = 0; i < d; ++i) acc[i] += s.residual[i];
  }
  SteeringVector v;
  v.layer = layer;
  v.source = CaaSource{std::move(pair_set)};
  v.direction.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    v.direction[i] = pos[i] / static_cast<double>(n_pos) - neg[i] / static_cast<double>(n_neg);
  }
  return v.with_alpha(alpha);
}

std::vector<double> inject(std::span<const double> h, const SteeringVector& v) {
  if (h.size() != v.resolved.size()) {
    throw ShapeError("inject: residual has " + std::to_string(h.size()) + " entries, vector has " +
                     std::to_string(v.resolved.size()));
  }
  std::vector<double> out(h.begin(), h.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += v.resolved[i];
  return out;
}

lm::GenerationResult steered_generate(std::string_view prompt, const lm::LmWeights& lm,
                                      const SteeringVector& v, const lm::SamplerSettings& sampler,
                                      const lm::TokenCallback& on_token) {
  if (v.layer >= lm.config.n_layers) {
    throw ConfigError("steering: layer " + std::to_string(v.layer) + " out of range");
  }
  const auto hook = v.hook();
  return lm::generate(prompt, lm, sampler, &hook, on_token);
}

void save_vectors(const std::vector<SteeringVector>& vectors, const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : vectors) {
    nlohmann::json src;
    if (const auto* s = std::get_if<SaeSource>(&v.source)) {
      src = {{"kind", "sae"}, {"feature", s->feature}, {"phi", s->phi}};
    } else {
      src = {{"kind", "caa"}, {"pair_set", std::get<CaaSource>(v.source).pair_set}};
    }
    rows.push_back({{"layer", v.layer},
                    {"alpha", v.alpha},
                    {"source", src},
                    {"direction", v.direction},
                    {"resolved", v.resolved}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json{{"schema_version", corpus::kSchemaVersion}, {"vectors", rows}}.dump() << '\n';
}

std::vector<SteeringVector> load_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.value("schema_version", 0) != corpus::kSchemaVersion) {
    throw VersionError(path.string() + ": unsupported steering-vector schema");
  }
  std::vector<SteeringVector> out;
  for (const auto& r : doc.at("vectors")) {
    SteeringVector v;
    v.layer = r.at("layer");
    v.alpha = r.at("alpha");
    const auto& src = r.at("source");
    if (src.at("kind") == "sae") {
      v.source = SaeSource{src.at("feature"), src.at("phi")};
    } else {
      v.source = CaaSource{src.at("pair_set")};
    }
    v.direction = r.at("direction").get<std::vector<double>>();
    v.resolved = r.at("resolved").get<std::vector<double>>();
    if (v.direction.size() != v.resolved.size()) throw ParseError(path.string() + ": vector width mismatch");
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace knobs::steering
