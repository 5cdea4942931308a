#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "json_io.hpp"
#include "knobs/log.hpp"
#include "knobs/service.hpp"

namespace knobs::service {

using nlohmann::json;
using validation::HumanVerdict;
using validation::VerdictStatus;

validation::HumanVerdict FeatureRecord::status() const {
  return verdicts.empty() ? HumanVerdict::pending : verdicts.back().verdict;
}

const FeatureRecord* FeatureStore::find(std::size_t feature) const {
  for (const auto& f : features)
    if (f.id() == feature) return &f;
  return nullptr;
}

FeatureRecord* FeatureStore::find(std::size_t feature) {
  return const_cast<FeatureRecord*>(std::as_const(*this).find(feature));
}

void FeatureStore::validate() const {
  std::set<std::size_t> seen;
  for (const auto& f : features) {
    if (!seen.insert(f.id()).second)
      throw DataError("store: duplicate feature " + std::to_string(f.id()));
    for (const auto& v : f.verdicts)
      if (v.verdict == HumanVerdict::pending)
        throw DataError("store: feature " + std::to_string(f.id()) + " has a pending entry in its verdict history");
  }
}

FeatureStore store_from_candidates(const std::vector<retrieval::Candidate>& candidates,
                                   const sae::SaeTrainStats* stats) {
  FeatureStore s;
  for (const auto& c : candidates) {
    FeatureRecord r;
    r.candidate = c;
    if (stats && c.feature < stats->max_activation.size()) r.phi = stats->max_activation[c.feature];
    s.features.push_back(std::move(r));
  }
  s.validate();
  return s;
}

// ---- locking ---------------------------------------------------------------

StoreLock::StoreLock(std::filesystem::path store_path) : lock_path_(store_path += ".lock") {
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      std::string holder;
      std::ifstream in(lock_path_);
      std::getline(in, holder);
      throw LockError("store is locked by another writer (" + lock_path_.string() +
                      (holder.empty() ? "" : ", pid " + holder) + ")");
    }
    throw LockError("cannot create lock " + lock_path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

StoreLock::~StoreLock() {
  std::error_code ec;
  std::filesystem::remove(lock_path_, ec);
}

// ---- serialisation ---------------------------------------------------------

namespace {

json summary_json(const SweepSummary& s) {
  json levels = json::array();
  for (const auto& l : s.levels) levels.push_back(detail::level_json(l));
  return {{"run_id", s.run_id},
          {"report_path", s.report_path},
          {"verdict", detail::monotonicity_json(s.verdict)},
          {"levels", levels}};
}

SweepSummary summary_from(const json& j) {
  SweepSummary s;
  s.run_id = j.at("run_id").get<std::string>();
  s.report_path = j.at("report_path").get<std::string>();
  s.verdict = detail::monotonicity_from(j.at("verdict"));
  for (const auto& l : j.at("levels")) s.levels.push_back(detail::level_from(l));
  return s;
}

json verdict_json(const VerdictRecord& v) {
  return {{"verdict", validation::to_string(v.verdict)},
          {"annotator", v.annotator},
          {"note", v.note},
          {"timestamp", v.timestamp},
          {"disagreement", v.disagreement},
          {"without_sweep", v.without_sweep}};
}

VerdictRecord verdict_from(const json& j) {
  VerdictRecord v;
  v.verdict = validation::human_verdict_from_string(j.at("verdict").get<std::string>());
  v.annotator = j.at("annotator").get<std::string>();
  v.note = j.at("note").get<std::string>();
  v.timestamp = j.at("timestamp").get<std::string>();
  v.disagreement = j.at("disagreement").get<bool>();
  v.without_sweep = j.at("without_sweep").get<bool>();
  return v;
}

json store_json(const FeatureStore& store) {
  json features = json::array();
  for (const auto& f : store.features) {
    json verdicts = json::array();
    for (const auto& v : f.verdicts) verdicts.push_back(verdict_json(v));
    features.push_back({{"candidate", detail::candidate_json(f.candidate)},
                        {"phi", f.phi ? json(*f.phi) : json(nullptr)},
                        {"sweep", f.sweep ? summary_json(*f.sweep) : json(nullptr)},
                        {"verdicts", verdicts}});
  }
  return {{"store_version", store.version},
          {"sae_checkpoint", store.sae_checkpoint},
          {"lm_checkpoint", store.lm_checkpoint},
          {"vectors_path", store.vectors_path},
          {"features", features}};
}

FeatureStore store_from(const json& j) {
  FeatureStore s;
  s.version = j.at("store_version").get<int>();
  s.sae_checkpoint = j.at("sae_checkpoint").get<std::string>();
  s.lm_checkpoint = j.at("lm_checkpoint").get<std::string>();
  s.vectors_path = j.at("vectors_path").get<std::string>();
  for (const auto& fj : j.at("features")) {
    FeatureRecord f;
    f.candidate = detail::candidate_from(fj.at("candidate"));
    if (!fj.at("phi").is_null()) f.phi = fj.at("phi").get<double>();
    if (!fj.at("sweep").is_null()) f.sweep = summary_from(fj.at("sweep"));
    for (const auto& v : fj.at("verdicts")) f.verdicts.push_back(verdict_from(v));
    s.features.push_back(std::move(f));
  }
  return s;
}

}  // namespace

FeatureStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open store " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ParseError("store " + path.string() + ": corrupt at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("store_version") || !j["store_version"].is_number_integer())
    throw ParseError("store " + path.string() + ": missing store_version");
  const int version = j["store_version"].get<int>();
  if (version != kStoreVersion)
    throw VersionError("store " + path.string() + " has version " + std::to_string(version) +
                       "; this build reads version " + std::to_string(kStoreVersion) +
                       " and has no migration for it");
  FeatureStore s;
  try {
    s = store_from(j);
  } catch (const json::exception& e) {
    throw ParseError("store " + path.string() + ": " + e.what());
  }
  s.validate();
  return s;
}

void write_store_locked(const FeatureStore& store, const std::filesystem::path& path) {
  store.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << store_json(store).dump(2) << '\n';
    out.flush();
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_store(const FeatureStore& store, const std::filesystem::path& path) {
  StoreLock lock(path);
  write_store_locked(store, path);
}

// ---- mutations -------------------------------------------------------------

void attach_sweep(FeatureStore& store, std::size_t feature, const validation::SweepReport& report,
                  std::string run_id, std::string report_path) {
  FeatureRecord* f = store.find(feature);
  if (!f) throw NotFoundError("feature " + std::to_string(feature) + " is not in the store");
  f->sweep = SweepSummary{std::move(run_id), std::move(report_path), report.verdict, report.levels};
}

const VerdictRecord& record_verdict(FeatureStore& store, std::size_t feature, HumanVerdict verdict,
                                    std::string annotator, std::string note, std::string timestamp) {
  if (verdict == HumanVerdict::pending) throw ConfigError("verdict must be accepted or rejected");
  FeatureRecord* f = store.find(feature);
  if (!f) throw NotFoundError("feature " + std::to_string(feature) + " is not in the store");
  VerdictRecord v;
  v.verdict = verdict;
  v.annotator = std::move(annotator);
  v.note = std::move(note);
  v.timestamp = std::move(timestamp);
  if (!f->sweep) {
    v.without_sweep = true;
    log::warn("verdict on feature " + std::to_string(feature) + " recorded without a sweep summary");
  } else {
    const VerdictStatus automatic = f->sweep->verdict.status;
    v.disagreement = (automatic == VerdictStatus::fail && verdict == HumanVerdict::accepted) ||
                     (automatic == VerdictStatus::pass && verdict == HumanVerdict::rejected);
  }
  f->verdicts.push_back(std::move(v));
  return f->verdicts.back();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

}  // namespace knobs::service
