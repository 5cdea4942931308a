#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "knobs/corpus.hpp"
#include "knobs/log.hpp"

namespace knobs::corpus {

using nlohmann::json;

const char* to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

std::string ContrastivePair::text(Polarity p) const {
  const std::string& reaction = p == Polarity::positive ? positive : negative;
  if (situation.empty()) return reaction;
  return situation + " " + reaction;
}

std::string ValidationQuestion::prompt() const {
  if (situation.empty()) return question;
  return situation + " " + question;
}

bool Taxonomy::accepts(const std::string& trait, const std::string& facet) const {
  if (traits.empty()) return true;
  for (const auto& [name, facets] : traits) {
    if (name != trait) continue;
    if (facets.empty()) return true;
    for (const auto& f : facets)
      if (f == facet) return true;
    return false;
  }
  return false;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open taxonomy file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Taxonomy tax;
  for (const auto& t : doc.at("traits")) {
    tax.traits.emplace_back(t.at("name").get<std::string>(),
                            t.value("facets", std::vector<std::string>{}));
  }
  return tax;
}

namespace {

// Reads one object per nonblank line and hands it to `build` along with a
// field accessor that reports line and field name on failure.
template <typename Record, typename Build>
std::vector<Record> load_jsonl(const std::filesystem::path& path, Build build) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Record> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": malformed record: " + e.what());
    }
    if (!obj.is_object()) throw ParseError(where + ": record is not an object");
    const int version = obj.value("schema_version", kSchemaVersion);
    if (version != kSchemaVersion) {
      throw VersionError(where + ": unsupported schema_version " + std::to_string(version));
    }
    auto field = [&](const char* name, bool required_nonempty) -> std::string {
      auto it = obj.find(name);
      if (it == obj.end() || !it->is_string()) {
        throw DataError(where + ": missing or non-string field '" + name + "'");
      }
      std::string value = it->get<std::string>();
      if (required_nonempty && value.empty()) {
        throw DataError(where + ": field '" + name + "' is empty");
      }
      return value;
    };
    Record rec = build(field, where);
    if (!ids.insert(rec.id).second) throw DataError(where + ": duplicate id '" + rec.id + "'");
    out.push_back(std::move(rec));
  }
  if (out.empty()) log::warn(path.string() + ": no records");
  return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

}  // namespace

std::vector<ContrastivePair> load_pairs(const std::filesystem::path& path,
                                        const Taxonomy& taxonomy) {
  return load_jsonl<ContrastivePair>(path, [&](auto& field, const std::string& where) {
    ContrastivePair p;
    p.id = field("id", true);
    p.situation = field("situation", false);
    p.positive = field("positive", true);
    p.negative = field("negative", true);
    p.trait = field("trait", false);
    p.facet = field("facet", false);
    if (p.positive == p.negative) {
      throw DataError(where + ": field 'negative' is identical to 'positive'");
    }
    if (!taxonomy.accepts(p.trait, p.facet)) {
      throw DataError(where + ": field 'facet' (" + p.trait + "/" + p.facet +
                      ") not in taxonomy");
    }
    return p;
  });
}

void save_pairs(const std::vector<ContrastivePair>& pairs, const std::filesystem::path& path) {
  std::vector<json> rows;
  for (const auto& p : pairs) {
    rows.push_back({{"schema_version", kSchemaVersion},
                    {"id", p.id},
                    {"situation", p.situation},
                    {"positive", p.positive},
                    {"negative", p.negative},
                    {"trait", p.trait},
                    {"facet", p.facet}});
  }
  write_lines(path, rows);
}

std::vector<ValidationQuestion> load_questions(const std::filesystem::path& path,
                                               const Taxonomy& taxonomy) {
  return load_jsonl<ValidationQuestion>(path, [&](auto& field, const std::string& where) {
    ValidationQuestion q;
    q.id = field("id", true);
    q.situation = field("situation", false);
    q.question = field("question", true);
    q.trait = field("trait", false);
    q.facet = field("facet", false);
    if (!taxonomy.accepts(q.trait, q.facet)) {
      throw DataError(where + ": field 'facet' (" + q.trait + "/" + q.facet +
                      ") not in taxonomy");
    }
    return q;
  });
}

void save_questions(const std::vector<ValidationQuestion>& questions,
                    const std::filesystem::path& path) {
  std::vector<json> rows;
  for (const auto& q : questions) {
    rows.push_back({{"schema_version", kSchemaVersion},
                    {"id", q.id},
                    {"situation", q.situation},
                    {"question", q.question},
                    {"trait", q.trait},
                    {"facet", q.facet}});
  }
  write_lines(path, rows);
}

void save_manifest(const PlantedManifest& m, const std::filesystem::path& path) {
  json doc = {{"schema_version", kSchemaVersion},
              {"polarity_lexicon",
               {{"positive", m.positive_lexicon}, {"negative", m.negative_lexicon}}},
              {"rates",
               {{"lexicon_rate", m.lexicon_rate},
                {"positive_lexicon_share", m.positive_lexicon_share},
                {"negative_lexicon_share", m.negative_lexicon_share}}},
              {"seed", m.seed},
              {"pair_count", m.pair_count}};
  if (m.marker_token) doc["marker_token"] = *m.marker_token;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

PlantedManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.value("schema_version", 0) != kSchemaVersion) {
    throw VersionError(path.string() + ": unsupported manifest schema_version");
  }
  PlantedManifest m;
  m.positive_lexicon = doc.at("polarity_lexicon").at("positive").get<std::vector<std::string>>();
  m.negative_lexicon = doc.at("polarity_lexicon").at("negative").get<std::vector<std::string>>();
  m.lexicon_rate = doc.at("rates").at("lexicon_rate").get<double>();
  m.positive_lexicon_share = doc.at("rates").at("positive_lexicon_share").get<double>();
  m.negative_lexicon_share = doc.at("rates").at("negative_lexicon_share").get<double>();
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.pair_count = doc.at("pair_count").get<std::size_t>();
  if (doc.contains("marker_token")) m.marker_token = doc["marker_token"].get<std::string>();
  return m;
}

}  // namespace knobs::corpus
