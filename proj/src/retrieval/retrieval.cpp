#include "knobs/retrieval.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "knobs/log.hpp"

namespace knobs::retrieval {

void RetrievalConfig::validate() const {
  if (!(tau1 >= 0.0 && tau1 <= 1.0)) throw ConfigError("retrieval: tau1 must lie in [0, 1]");
  if (!(tau2 >= 0.0 && tau2 <= 1.0)) throw ConfigError("retrieval: tau2 must lie in [0, 1]");
}

std::vector<double> aggregate_sequence(const Matrix& per_token) {
  if (per_token.rows() == 0) throw DataError("aggregate_sequence: empty sequence");
  std::vector<double> f(per_token.row(0).begin(), per_token.row(0).end());
  for (std::size_t t = 1; t < per_token.rows(); ++t) {
    const auto row = per_token.row(t);
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = std::max(f[j], row[j]);
  }
  return f;
}

Matrix token_codes(std::string_view text, const lm::LmWeights& lm, const sae::SaeParams& sae,
                   std::size_t layer) {
  const auto ids = lm.tokenizer.encode_for_model(text);
  const auto fwd = lm::forward(ids, lm, {layer});
  const Matrix& hidden = fwd.captures.front().hidden;
  const std::size_t m = sae.features();
  Matrix codes(hidden.rows() - 1, m);
  for (std::size_t t = 1; t < hidden.rows(); ++t) {
    const auto h = sae::encode(hidden.row(t), sae);
    std::copy(h.begin(), h.end(), codes.row(t - 1).begin());
  }
  return codes;
}

std::vector<SequenceFeatureVector> capture_pair_features(
    const std::vector<corpus::ContrastivePair>& pairs, const lm::LmWeights& lm,
    const sae::SaeParams& sae, std::size_t layer) {
  if (layer >= lm.config.n_layers) throw ConfigError("capture: layer " + std::to_string(layer) + " out of range");
  if (sae.input_dim() != lm.config.d_model) throw ShapeError("capture: sae width does not match the model");
  std::vector<SequenceFeatureVector> out;
  out.reserve(pairs.size() * 2);
  for (const auto& pair : pairs) {
    for (Polarity pol : {Polarity::positive, Polarity::negative}) {
      const std::string text = pair.text(pol);
      try {
        const Matrix codes = token_codes(text, lm, sae, layer);
        if (codes.rows() == 0) {
          log::warn("capture: " + pair.id + "/" + to_string(pol) + " has no tokens, skipped");
          continue;
        }
        out.push_back({aggregate_sequence(codes), pair.id, pol});
      } catch (const LengthError& e) {
        log::warn("capture: " + pair.id + "/" + to_string(pol) + " skipped: " + e.what());
      }
    }
  }
  return out;
}

FeatureStats frequency_difference(const std::vector<SequenceFeatureVector>& vectors) {
  FeatureStats stats;
  std::size_t m = 0;
  for (const auto& v : vectors) {
    if (m == 0) m = v.features.size();
    if (v.features.size() != m) throw ShapeError("frequency_difference: mixed feature widths");
    (v.polarity == Polarity::positive ? stats.positive_count : stats.negative_count) += 1;
  }
  if (stats.positive_count == 0 || stats.negative_count == 0) {
    throw DataError("frequency_difference: need at least one vector of each polarity");
  }
  // Integer counts and sums in input order keep the result independent of
  // how the vectors were produced.
  std::vector<std::size_t> pos_hits(m, 0), neg_hits(m, 0);
  std::vector<double> pos_sum(m, 0.0), neg_sum(m, 0.0);
  for (const auto& v : vectors) {
    const bool pos = v.polarity == Polarity::positive;
    for (std::size_t j = 0; j < m; ++j) {
      if (v.features[j] > 0.0) {
        (pos ? pos_hits : neg_hits)[j] += 1;
        (pos ? pos_sum : neg_sum)[j] += v.features[j];
      }
    }
  }
  stats.features.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    auto& s = stats.features[j];
    s.pos_freq = static_cast<double>(pos_hits[j]) / static_cast<double>(stats.positive_count);
    s.neg_freq = static_cast<double>(neg_hits[j]) / static_cast<double>(stats.negative_count);
    s.delta = std::abs(s.pos_freq - s.neg_freq);
    if (s.dominant() == Polarity::positive) {
      s.active_mean = pos_hits[j] ? pos_sum[j] / static_cast<double>(pos_hits[j]) : 0.0;
    } else {
      s.active_mean = neg_hits[j] ? neg_sum[j] / static_cast<double>(neg_hits[j]) : 0.0;
    }
  }
  return stats;
}

std::vector<Candidate> select_candidates(const FeatureStats& stats, const RetrievalConfig& config) {
  config.validate();
  std::vector<Candidate> out;
  for (std::size_t j = 0; j < stats.features.size(); ++j) {
    const auto& s = stats.features[j];
    if (s.delta >= config.tau1 && std::max(s.pos_freq, s.neg_freq) >= config.tau2) {
      out.push_back({config.layer, j, s.delta, s.pos_freq, s.neg_freq, s.active_mean, s.dominant()});
    }
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    if (a.active_mean != b.active_mean) return a.active_mean > b.active_mean;
    return a.feature < b.feature;
  });
  if (out.size() > config.top_k) out.resize(config.top_k);
  return out;
}

void save_candidates(const std::vector<Candidate>& candidates, const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : candidates) {
    rows.push_back({{"layer", c.layer},
                    {"feature", c.feature},
                    {"delta_f", c.delta},
                    {"pos_freq", c.pos_freq},
                    {"neg_freq", c.neg_freq},
                    {"active_mean", c.active_mean},
                    {"dominant", to_string(c.dominant)}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json{{"schema_version", corpus::kSchemaVersion}, {"candidates", rows}}.dump(2) << '\n';
}

std::vector<Candidate> load_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.value("schema_version", 0) != corpus::kSchemaVersion) {
    throw VersionError(path.string() + ": unsupported candidate schema");
  }
  std::vector<Candidate> out;
  for (const auto& r : doc.at("candidates")) {
    Candidate c;
    c.layer = r.at("layer");
    c.feature = r.at("feature");
    c.delta = r.at("delta_f");
    c.pos_freq = r.at("pos_freq");
    c.neg_freq = r.at("neg_freq");
    c.active_mean = r.at("active_mean");
    c.dominant = r.at("dominant") == "negative" ? Polarity::negative : Polarity::positive;
    out.push_back(c);
  }
  return out;
}

}  // namespace knobs::retrieval
