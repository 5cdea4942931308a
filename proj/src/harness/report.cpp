#include <array>
#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "knobs/harness.hpp"

namespace knobs::harness {

using nlohmann::json;

namespace {

std::string fixed(const std::optional<double>& v, int digits) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
  return buf;
}

std::string location(const ReportRow& r) {
  if (!r.layer) return "-";
  return "(" + std::to_string(*r.layer) + ", " + (r.feature ? std::to_string(*r.feature) : "-") + ")";
}

bool same_slot(const ReportRow& a, const ReportRow& b) {
  return a.trait == b.trait && a.method == b.method && a.layer == b.layer && a.feature == b.feature;
}

}  // namespace

std::string render_table(const std::vector<ReportRow>& rows) {
  std::vector<std::array<std::string, 6>> cells;
  cells.push_back({"Trait", "Method", "(Layer, Feature Idx)", "Polarity", "Trait Score", "Valid Rate"});
  std::vector<bool> used(rows.size(), false);
  std::string last_trait;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (used[i]) continue;
    const auto& r = rows[i];
    used[i] = true;
    const std::string trait = r.trait == last_trait ? "" : r.trait;
    last_trait = r.trait;
    if (!r.alpha || *r.alpha == 0.0) {
      cells.push_back({trait, r.method, location(r), "-", fixed(r.result.score, 4), fixed(r.result.valid_rate, 3)});
      continue;
    }
    const ReportRow* partner = nullptr;
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      if (!used[j] && same_slot(r, rows[j]) && rows[j].alpha && *rows[j].alpha == -*r.alpha) {
        partner = &rows[j];
        used[j] = true;
        break;
      }
    }
    if (!partner) {
      cells.push_back({trait, r.method, location(r), *r.alpha > 0 ? "+" : "-" , fixed(r.result.score, 4),
                       fixed(r.result.valid_rate, 3)});
      continue;
    }
    const ReportRow& plus = *r.alpha > 0 ? r : *partner;
    const ReportRow& minus = *r.alpha > 0 ? *partner : r;
    cells.push_back({trait, r.method, location(r), "±",
                     fixed(plus.result.score, 4) + " / " + fixed(minus.result.score, 4),
                     fixed(plus.result.valid_rate, 3) + " / " + fixed(minus.result.valid_rate, 3)});
  }
  // Column widths in code points, so "±" counts once.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::array<std::size_t, 6> w{};
  for (const auto& row : cells)
    for (std::size_t c = 0; c < 6; ++c) w[c] = std::max(w[c], width(row[c]));
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      out += cells[r][c];
      if (c + 1 < 6) out += std::string(w[c] - width(cells[r][c]) + 2, ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto x : w) total += x + 2;
      out += std::string(total - 2, '-') + '\n';
    }
  }
  return out;
}

void save_report_rows(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j = {{"trait", r.trait},
              {"method", r.method},
              {"valid_rate", r.result.valid_rate},
              {"counts", {{"high", r.result.counts.high}, {"low", r.result.counts.low},
                          {"invalid", r.result.counts.invalid}, {"total", r.result.counts.total}}}};
    j["layer"] = r.layer ? json(*r.layer) : json(nullptr);
    j["feature"] = r.feature ? json(*r.feature) : json(nullptr);
    j["alpha"] = r.alpha ? json(*r.alpha) : json(nullptr);
    j["score"] = r.result.score ? json(*r.result.score) : json(nullptr);
    arr.push_back(j);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << json{{"schema_version", corpus::kSchemaVersion}, {"rows", arr}}.dump(2) << '\n';
}

std::vector<ReportRow> load_report_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.value("schema_version", 0) != corpus::kSchemaVersion) throw VersionError(path.string() + ": unsupported schema");
  std::vector<ReportRow> rows;
  for (const auto& j : doc.at("rows")) {
    ReportRow r;
    r.trait = j.at("trait");
    r.method = j.at("method");
    if (!j.at("layer").is_null()) r.layer = j.at("layer").get<std::size_t>();
    if (!j.at("feature").is_null()) r.feature = j.at("feature").get<std::size_t>();
    if (!j.at("alpha").is_null()) r.alpha = j.at("alpha").get<double>();
    if (!j.at("score").is_null()) r.result.score = j.at("score").get<double>();
    r.result.valid_rate = j.at("valid_rate");
    const auto& c = j.at("counts");
    r.result.counts = {c.at("high"), c.at("low"), c.at("invalid"), c.at("total")};
    rows.push_back(r);
  }
  return rows;
}

}  // namespace knobs::harness
