#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "knobs/corpus.hpp"
#include "knobs/harness.hpp"
#include "knobs/lm.hpp"
#include "knobs/retrieval.hpp"
#include "knobs/sae.hpp"
#include "knobs/steering.hpp"
#include "knobs/validation.hpp"

namespace knobs::service {

inline constexpr int kStoreVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// ---- feature store ---------------------------------------------------------

struct SweepSummary {
  std::string run_id;
  std::string report_path;  // empty when the report was not written out
  validation::Monotonicity verdict;
  std::vector<validation::LevelSummary> levels;

  bool operator==(const SweepSummary&) const = default;
};

struct VerdictRecord {
  validation::HumanVerdict verdict = validation::HumanVerdict::pending;
  std::string annotator;
  std::string note;
  std::string timestamp;  // UTC, ISO 8601
  bool disagreement = false;  // human and automatic verdicts point opposite ways
  bool without_sweep = false;

  bool operator==(const VerdictRecord&) const = default;
};

struct FeatureRecord {
  retrieval::Candidate candidate;
  std::optional<double> phi;
  std::optional<SweepSummary> sweep;
  std::vector<VerdictRecord> verdicts;  // append-only, latest last

  std::size_t id() const { return candidate.feature; }
  validation::HumanVerdict status() const;

  bool operator==(const FeatureRecord&) const = default;
};

struct FeatureStore {
  int version = kStoreVersion;
  std::string sae_checkpoint;
  std::string lm_checkpoint;
  std::string vectors_path;  // cached steering vectors
  std::vector<FeatureRecord> features;

  const FeatureRecord* find(std::size_t feature) const;
  FeatureRecord* find(std::size_t feature);
  void validate() const;  // unique ids, no pending entries in verdict history

  bool operator==(const FeatureStore&) const = default;
};

// Candidates in retrieval order; φ taken from the SAE statistics when given.
FeatureStore store_from_candidates(const std::vector<retrieval::Candidate>& candidates,
                                   const sae::SaeTrainStats* stats = nullptr);

// Advisory lock beside the store (`<path>.lock`, created exclusively). A second
// holder gets LockError.
class StoreLock {
 public:
  explicit StoreLock(std::filesystem::path store_path);
  ~StoreLock();
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

  const std::filesystem::path& path() const { return lock_path_; }

 private:
  std::filesystem::path lock_path_;
};

FeatureStore load_store(const std::filesystem::path& path);

// Takes the lock for the duration of the write.
void save_store(const FeatureStore& store, const std::filesystem::path& path);

// Temp file plus rename; the caller already holds the lock.
void write_store_locked(const FeatureStore& store, const std::filesystem::path& path);

void attach_sweep(FeatureStore& store, std::size_t feature, const validation::SweepReport& report,
                  std::string run_id, std::string report_path = {});

// Appends a verdict. Pending is not a verdict (ConfigError); an unknown
// feature is NotFoundError; a missing sweep only warns.
const VerdictRecord& record_verdict(FeatureStore& store, std::size_t feature,
                                    validation::HumanVerdict verdict, std::string annotator,
                                    std::string note, std::string timestamp);

std::string utc_timestamp();

// ---- run ledger ------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::string file_sha256(const std::filesystem::path& path);

struct LedgerInput {
  std::string path;
  std::string digest;

  bool operator==(const LedgerInput&) const = default;
};

struct LedgerRecord {
  std::string timestamp;
  std::string command;
  std::string config_digest;
  std::vector<LedgerInput> inputs;
  std::vector<std::string> outputs;
  std::string detail;

  bool operator==(const LedgerRecord&) const = default;
};

// Existing inputs are digested; missing ones get an empty digest.
LedgerRecord make_ledger_record(std::string command, std::string config_digest,
                                const std::vector<std::filesystem::path>& inputs,
                                std::vector<std::string> outputs, std::string detail = {});

// JSON lines, opened for append only.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path path);

  void append(const LedgerRecord& record);
  std::vector<LedgerRecord> records() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

// ---- configuration ---------------------------------------------------------

struct ServerSettings {
  std::string host = "127.0.0.1";
  int port = 8077;
  double alpha_bound = 10.0;
  std::size_t generation_workers = 2;
  std::size_t http_threads = 8;
  std::size_t steer_max_new_tokens = 64;  // upper limit per request
  std::string static_dir;                 // console assets, optional
};

struct AppConfig {
  std::uint64_t seed = 0;
  lm::TokenizerMode tokenizer = lm::TokenizerMode::byte;
  lm::LmConfig lm;
  lm::LmTrainOptions lm_train;
  std::size_t lm_steps = 2000;
  lm::SamplerSettings sampler;
  sae::SaeTrainConfig sae;
  retrieval::RetrievalConfig retrieval;
  double sae_alpha = steering::kDefaultSaeAlpha;
  double caa_alpha = steering::kDefaultCaaAlpha;
  validation::SweepConfig sweep;
  validation::MonotonicityConfig monotonicity;
  validation::JudgeConfig judge;
  harness::AdministerConfig questionnaire;
  corpus::PlantedSpec planted = corpus::PlantedSpec::defaults();
  ServerSettings server;

  void validate() const;
};

// JSON object; absent keys keep their defaults, unknown keys are a ConfigError.
AppConfig load_config(const std::filesystem::path& path);
AppConfig parse_config(std::string_view text, std::string_view origin = "config");
std::string config_text(const AppConfig& config);  // every key, pretty-printed
std::string config_digest(const AppConfig& config);

// ---- HTTP service ----------------------------------------------------------

struct ServiceResources {
  std::shared_ptr<const lm::LmWeights> lm;
  std::shared_ptr<const sae::TrainedSae> sae;  // heatmaps and uncached vectors
  std::vector<steering::SteeringVector> vectors;
  std::vector<corpus::ValidationQuestion> questions;  // sweep prompts
  std::optional<validation::Lexicon> lexicon;          // sweep scorer
  std::filesystem::path store_path;
  std::filesystem::path ledger_path;
  std::filesystem::path sweep_dir;  // reports land here when set
  AppConfig config;
};

// Holds the store lock for its lifetime; requests read immutable snapshots
// and mutations go through one writer.
class Server {
 public:
  explicit Server(ServiceResources resources);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

  void wait_for_sweeps();
  std::shared_ptr<const FeatureStore> snapshot() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace knobs::service
