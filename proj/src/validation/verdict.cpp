#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "knobs/validation.hpp"

namespace knobs::validation {

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

nlohmann::json cell_json(const SweepCell& c) {
  nlohmann::json j = {{"alpha", c.alpha},
                      {"question_id", c.question_id},
                      {"replicate", c.replicate},
                      {"seed", c.seed},
                      {"status", c.status == CellStatus::generated ? "generated" : "failed"},
                      {"prompt", c.prompt},
                      {"text", c.text},
                      {"error", c.error},
                      {"note", c.note}};
  if (c.score) j["score"] = {{"score", c.score->score}, {"scorer", c.score->scorer}, {"rationale", c.score->rationale}};
  if (c.validity) {
    j["validity"] = {{"valid", c.validity->valid}};
    if (c.validity->reason) j["validity"]["reason"] = to_string(*c.validity->reason);
  }
  return j;
}

SweepCell cell_from_json(const nlohmann::json& j) {
  SweepCell c;
  c.alpha = j.at("alpha");
  c.question_id = j.at("question_id");
  c.replicate = j.at("replicate");
  c.seed = j.at("seed");
  c.status = j.at("status") == "failed" ? CellStatus::failed : CellStatus::generated;
  c.prompt = j.at("prompt");
  c.text = j.at("text");
  c.error = j.at("error");
  c.note = j.at("note");
  if (j.contains("score")) {
    const auto& s = j["score"];
    c.score = BehaviorScore{s.at("score"), s.at("scorer"), s.at("rationale")};
  }
  if (j.contains("validity")) {
    ValidityVerdict v;
    v.valid = j["validity"].at("valid");
    if (j["validity"].contains("reason")) v.reason = invalid_reason_from_string(j["validity"]["reason"].get<std::string>());
    c.validity = v;
  }
  return c;
}

VerdictStatus status_from_string(std::string_view s) {
  if (s == "pass") return VerdictStatus::pass;
  if (s == "fail") return VerdictStatus::fail;
  if (s == "inconclusive") return VerdictStatus::inconclusive;
  throw ParseError("unknown verdict status '" + std::string(s) + "'");
}

}  // namespace

const char* to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::pass: return "pass";
    case VerdictStatus::fail: return "fail";
    case VerdictStatus::inconclusive: return "inconclusive";
  }
  return "?";
}

const char* to_string(HumanVerdict h) {
  switch (h) {
    case HumanVerdict::pending: return "pending";
    case HumanVerdict::accepted: return "accepted";
    case HumanVerdict::rejected: return "rejected";
  }
  return "?";
}

HumanVerdict human_verdict_from_string(std::string_view s) {
  if (s == "pending") return HumanVerdict::pending;
  if (s == "accepted") return HumanVerdict::accepted;
  if (s == "rejected") return HumanVerdict::rejected;
  throw ParseError("unknown human verdict '" + std::string(s) + "'");
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  // Ranks average to (n + 1) / 2 exactly, so centred ranks are exact halves.
  const double mean = (static_cast<double>(x.size()) + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = rx[i] - mean, b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Monotonicity judge_levels(const std::vector<LevelSummary>& levels, const MonotonicityConfig& config) {
  std::vector<double> alphas, means;
  for (const auto& l : levels) {
    if (l.valid_scored == 0) continue;
    alphas.push_back(l.alpha);
    means.push_back(l.mean_score);
  }
  Monotonicity m;
  if (alphas.size() < std::max<std::size_t>(config.min_levels, 2)) return m;
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  m.effect = *hi - *lo;
  m.flat = m.effect < config.effect_floor;
  m.rho = spearman(alphas, means);
  if (m.rho) m.polarity = *m.rho > 0 ? 1 : (*m.rho < 0 ? -1 : 0);
  const bool strong = m.rho && std::abs(*m.rho) >= config.rho_threshold;
  m.status = strong && !m.flat ? VerdictStatus::pass : VerdictStatus::fail;
  return m;
}

SweepReport monotonicity_verdict(const RawSweep& sweep, const MonotonicityConfig& config,
                                 std::optional<double> delta_f) {
  SweepReport r;
  r.feature_id = sweep.feature_id;
  r.layer = sweep.layer;
  r.delta_f = delta_f;
  r.cells = sweep.cells;
  std::vector<double> alphas;
  for (const auto& c : sweep.cells) {
    if (std::find(alphas.begin(), alphas.end(), c.alpha) == alphas.end()) alphas.push_back(c.alpha);
  }
  std::sort(alphas.begin(), alphas.end());
  for (double a : alphas) {
    LevelSummary l;
    l.alpha = a;
    double sum = 0;
    for (const auto& c : sweep.cells) {
      if (c.alpha != a) continue;
      ++l.cells;
      if (c.status == CellStatus::generated && c.score && c.validity && c.validity->valid) {
        ++l.valid_scored;
        sum += c.score->score;
      }
    }
    l.mean_score = l.valid_scored ? sum / static_cast<double>(l.valid_scored) : 0.0;
    r.levels.push_back(l);
  }
  r.verdict = judge_levels(r.levels, config);
  return r;
}

std::string format_report(const SweepReport& r) {
  std::ostringstream out;
  char buf[160];
  out << "feature " << r.feature_id << " (layer " << r.layer << ")\n";
  out << "  alpha     cells  valid  mean\n";
  for (const auto& l : r.levels) {
    std::snprintf(buf, sizeof buf, "  %+6.2f  %6zu %6zu  %.4f\n", l.alpha, l.cells, l.valid_scored, l.mean_score);
    out << buf;
  }
  const auto& v = r.verdict;
  out << "  delta_f " << (r.delta_f ? std::to_string(*r.delta_f) : "n/a");
  out << "  rho " << (v.rho ? std::to_string(*v.rho) : "undefined");
  out << "  effect " << std::to_string(v.effect);
  out << "  verdict " << to_string(v.status) << (v.flat ? "(flat)" : "");
  out << "  polarity " << (v.polarity > 0 ? "+" : v.polarity < 0 ? "-" : "0");
  out << "  human " << to_string(r.human) << "\n";
  return out.str();
}

void save_report(const SweepReport& r, const std::filesystem::path& path) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(cell_json(c));
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : r.levels) {
    levels.push_back({{"alpha", l.alpha}, {"cells", l.cells}, {"valid_scored", l.valid_scored}, {"mean_score", l.mean_score}});
  }
  nlohmann::json summary = {{"status", to_string(r.verdict.status)},
                            {"flat", r.verdict.flat},
                            {"effect", r.verdict.effect},
                            {"polarity", r.verdict.polarity},
                            {"human_verdict", to_string(r.human)}};
  summary["rho"] = r.verdict.rho ? nlohmann::json(*r.verdict.rho) : nlohmann::json(nullptr);
  summary["delta_f"] = r.delta_f ? nlohmann::json(*r.delta_f) : nlohmann::json(nullptr);
  const nlohmann::json doc = {{"schema_version", corpus::kSchemaVersion},
                              {"feature", r.feature_id},
                              {"layer", r.layer},
                              {"summary", summary},
                              {"levels", levels},
                              {"cells", cells}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

SweepReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.value("schema_version", 0) != corpus::kSchemaVersion) {
    throw VersionError(path.string() + ": unsupported sweep report schema");
  }
  SweepReport r;
  r.feature_id = doc.at("feature");
  r.layer = doc.at("layer");
  const auto& s = doc.at("summary");
  r.verdict.status = status_from_string(s.at("status").get<std::string>());
  r.verdict.flat = s.at("flat");
  r.verdict.effect = s.at("effect");
  r.verdict.polarity = s.at("polarity");
  if (!s.at("rho").is_null()) r.verdict.rho = s.at("rho").get<double>();
  if (!s.at("delta_f").is_null()) r.delta_f = s.at("delta_f").get<double>();
  r.human = human_verdict_from_string(s.at("human_verdict").get<std::string>());
  for (const auto& l : doc.at("levels")) {
    r.levels.push_back({l.at("alpha"), l.at("cells"), l.at("valid_scored"), l.at("mean_score")});
  }
  for (const auto& c : doc.at("cells")) r.cells.push_back(cell_from_json(c));
  return r;
}

}  // namespace knobs::validation
