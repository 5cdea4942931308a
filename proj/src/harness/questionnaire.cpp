#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "knobs/harness.hpp"
#include "knobs/log.hpp"

namespace knobs::harness {

using nlohmann::json;

namespace {

std::string lower_trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) || s[e - 1] == '.')) --e;
  std::string out(s.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Pole pole_from_string(const std::string& s, const std::string& where) {
  if (s == "high") return Pole::high;
  if (s == "low") return Pole::low;
  throw DataError(where + ": field 'pole' must be high or low, got '" + s + "'");
}

}  // namespace

const char* to_string(Pole p) { return p == Pole::high ? "high" : "low"; }

void ForcedChoiceItem::validate() const {
  if (options.size() < 2) throw DataError("item " + id + ": needs at least two options");
  bool high = false, low = false;
  std::set<std::string> seen;
  for (const auto& o : options) {
    if (o.key.empty() || o.text.empty()) throw DataError("item " + id + ": option with empty key or text");
    if (!seen.insert(o.key).second) throw DataError("item " + id + ": duplicate option key " + o.key);
    (o.pole == Pole::high ? high : low) = true;
  }
  if (!high || !low) throw DataError("item " + id + ": options must cover both poles");
}

std::vector<std::string> ForcedChoiceItem::keys() const {
  std::vector<std::string> out;
  for (const auto& o : options) out.push_back(o.key);
  return out;
}

std::vector<ForcedChoiceItem> load_questionnaire(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ForcedChoiceItem> out;
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
    if (obj.value("schema_version", corpus::kSchemaVersion) != corpus::kSchemaVersion) {
      throw VersionError(where + ": unsupported schema_version");
    }
    auto str = [&](const json& o, const char* name) {
      auto it = o.find(name);
      if (it == o.end() || !it->is_string()) throw DataError(where + ": missing or non-string field '" + name + "'");
      return it->get<std::string>();
    };
    ForcedChoiceItem item;
    item.id = str(obj, "id");
    item.question = str(obj, "question");
    item.trait = obj.value("trait", "");
    if (!obj.contains("options") || !obj["options"].is_array()) throw DataError(where + ": missing field 'options'");
    for (const auto& o : obj["options"]) {
      item.options.push_back({str(o, "key"), str(o, "text"), pole_from_string(str(o, "pole"), where)});
    }
    try {
      item.validate();
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!ids.insert(item.id).second) throw DataError(where + ": duplicate id '" + item.id + "'");
    out.push_back(std::move(item));
  }
  if (out.empty()) log::warn(path.string() + ": no records");
  return out;
}

void save_questionnaire(const std::vector<ForcedChoiceItem>& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& item : items) {
    json opts = json::array();
    for (const auto& o : item.options) opts.push_back({{"key", o.key}, {"text", o.text}, {"pole", to_string(o.pole)}});
    out << json{{"schema_version", corpus::kSchemaVersion},
                {"id", item.id},
                {"question", item.question},
                {"trait", item.trait},
                {"options", opts}}.dump()
        << '\n';
  }
}

std::string item_prompt(const ForcedChoiceItem& item) {
  std::string p = item.question;
  for (const auto& o : item.options) p += "\n" + o.key + ". " + o.text;
  p += "\nAnswer with a single letter.\nAnswer:";
  return p;
}

std::vector<RawAnswer> administer(const std::vector<ForcedChoiceItem>& items, const lm::LmWeights& lm,
                                  const steering::SteeringVector* steering, const AdministerConfig& config) {
  if (items.empty()) throw DataError("administer: no items");
  std::vector<RawAnswer> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    out[i].item_id = items[i].id;
    out[i].seed = mix64(config.seed + 0x9e3779b97f4a7c15ULL * (i + 1));
    out[i].prompt = item_prompt(items[i]);
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < out.size(); i = next++) {
      auto& a = out[i];
      const lm::SamplerSettings s{config.max_new_tokens, config.temperature, a.seed};
      try {
        a.text = steering ? steering::steered_generate(a.prompt, lm, *steering, s).continuation
                          : lm::generate(a.prompt, lm, s).continuation;
      } catch (const Error& e) {
        a.failed = true;
        a.error = e.what();
      }
    }
  };
  std::size_t workers = config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, out.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return out;
}

ParsedAnswer parse_answer(std::string_view answer, const ForcedChoiceItem& item) {
  ParsedAnswer p;
  const auto v = validation::validity_check(answer);
  if (!v.valid && v.reason != validation::InvalidReason::nonsense) {
    p.reason = v.reason;
    return p;
  }
  auto pole_of = [&](const std::string& key) {
    for (const auto& o : item.options)
      if (o.key == key) return o.pole;
    return Pole::high;
  };
  if (auto key = validation::find_option_key(answer, item.keys())) {
    p.key = *key;
    p.pole = pole_of(*key);
    return p;
  }
  std::string a = lower_trim(answer);
  for (const char* lead : {"answer:", "answer is", "my answer is"}) {
    if (a.rfind(lead, 0) == 0) a = lower_trim(a.substr(std::string_view(lead).size()));
  }
  if (a.size() >= 3) {
    const ChoiceOption* match = nullptr;
    int hits = 0;
    for (const auto& o : item.options) {
      const std::string t = lower_trim(o.text);
      if (t.rfind(a, 0) == 0 || a.rfind(t, 0) == 0) {
        match = &o;
        ++hits;
      }
    }
    if (hits == 1) {
      p.key = match->key;
      p.pole = match->pole;
      return p;
    }
  }
  p.reason = v.valid ? validation::InvalidReason::instruction_disobedience : *v.reason;
  return p;
}

TraitScoreResult trait_score(const std::vector<ParsedAnswer>& answers) {
  TraitScoreResult r;
  for (const auto& a : answers) {
    ++r.counts.total;
    if (!a.pole) ++r.counts.invalid;
    else if (*a.pole == Pole::high) ++r.counts.high;
    else ++r.counts.low;
  }
  const std::size_t valid = r.counts.high + r.counts.low;
  if (valid > 0) r.score = static_cast<double>(r.counts.high) / static_cast<double>(valid);
  r.valid_rate = r.counts.total ? static_cast<double>(valid) / static_cast<double>(r.counts.total) : 0.0;
  return r;
}

}  // namespace knobs::harness
