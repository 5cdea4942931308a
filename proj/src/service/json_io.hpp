#pragma once

#include <json.hpp>

#include "knobs/retrieval.hpp"
#include "knobs/validation.hpp"

namespace knobs::service::detail {

inline const char* polarity_name(corpus::Polarity p) { return corpus::to_string(p); }

inline corpus::Polarity polarity_from(const std::string& s) {
  if (s == "positive") return corpus::Polarity::positive;
  if (s == "negative") return corpus::Polarity::negative;
  throw ParseError("unknown polarity '" + s + "'");
}

inline nlohmann::json candidate_json(const retrieval::Candidate& c) {
  return {{"layer", c.layer},         {"feature", c.feature},   {"delta_f", c.delta},
          {"pos_freq", c.pos_freq},   {"neg_freq", c.neg_freq}, {"active_mean", c.active_mean},
          {"dominant", polarity_name(c.dominant)}};
}

inline retrieval::Candidate candidate_from(const nlohmann::json& j) {
  retrieval::Candidate c;
  c.layer = j.at("layer").get<std::size_t>();
  c.feature = j.at("feature").get<std::size_t>();
  c.delta = j.at("delta_f").get<double>();
  c.pos_freq = j.at("pos_freq").get<double>();
  c.neg_freq = j.at("neg_freq").get<double>();
  c.active_mean = j.at("active_mean").get<double>();
  c.dominant = polarity_from(j.at("dominant").get<std::string>());
  return c;
}

inline nlohmann::json level_json(const validation::LevelSummary& l) {
  return {{"alpha", l.alpha}, {"cells", l.cells}, {"valid_scored", l.valid_scored}, {"mean_score", l.mean_score}};
}

inline validation::LevelSummary level_from(const nlohmann::json& j) {
  return {j.at("alpha").get<double>(), j.at("cells").get<std::size_t>(), j.at("valid_scored").get<std::size_t>(),
          j.at("mean_score").get<double>()};
}

inline nlohmann::json monotonicity_json(const validation::Monotonicity& m) {
  return {{"status", validation::to_string(m.status)},
          {"rho", m.rho ? nlohmann::json(*m.rho) : nlohmann::json(nullptr)},
          {"effect", m.effect},
          {"flat", m.flat},
          {"polarity", m.polarity}};
}

inline validation::Monotonicity monotonicity_from(const nlohmann::json& j) {
  validation::Monotonicity m;
  const auto status = j.at("status").get<std::string>();
  if (status == "pass") m.status = validation::VerdictStatus::pass;
  else if (status == "fail") m.status = validation::VerdictStatus::fail;
  else if (status == "inconclusive") m.status = validation::VerdictStatus::inconclusive;
  else throw ParseError("unknown verdict status '" + status + "'");
  if (!j.at("rho").is_null()) m.rho = j.at("rho").get<double>();
  m.effect = j.at("effect").get<double>();
  m.flat = j.at("flat").get<bool>();
  m.polarity = j.at("polarity").get<int>();
  return m;
}

}  // namespace knobs::service::detail
