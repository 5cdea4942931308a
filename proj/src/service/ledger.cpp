#include <openssl/evp.h>

#include <fstream>
#include <memory>

#include <json.hpp>

#include "knobs/service.hpp"

namespace knobs::service {

using nlohmann::json;

namespace {

struct Sha256 {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

  Sha256() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), data, n) != 1) throw Error("sha256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw Error("sha256 final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }
};

json record_json(const LedgerRecord& r) {
  json inputs = json::array();
  for (const auto& i : r.inputs) inputs.push_back({{"path", i.path}, {"digest", i.digest}});
  return {{"timestamp", r.timestamp}, {"command", r.command}, {"config_digest", r.config_digest},
          {"inputs", inputs},         {"outputs", r.outputs}, {"detail", r.detail}};
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

LedgerRecord make_ledger_record(std::string command, std::string config_digest,
                                const std::vector<std::filesystem::path>& inputs,
                                std::vector<std::string> outputs, std::string detail) {
  LedgerRecord r;
  r.timestamp = utc_timestamp();
  r.command = std::move(command);
  r.config_digest = std::move(config_digest);
  for (const auto& p : inputs) {
    std::error_code ec;
    const bool present = std::filesystem::is_regular_file(p, ec);
    r.inputs.push_back({p.string(), present ? file_sha256(p) : std::string()});
  }
  r.outputs = std::move(outputs);
  r.detail = std::move(detail);
  return r;
}

RunLedger::RunLedger(std::filesystem::path path) : path_(std::move(path)) {}

void RunLedger::append(const LedgerRecord& record) {
  const std::string line = record_json(record).dump() + "\n";
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot append to ledger " + path_.string());
  out << line;
  out.flush();
  if (!out) throw DataError("short write to ledger " + path_.string());
}

std::vector<LedgerRecord> RunLedger::records() const {
  std::lock_guard lock(mutex_);
  std::vector<LedgerRecord> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      LedgerRecord r;
      r.timestamp = j.at("timestamp").get<std::string>();
      r.command = j.at("command").get<std::string>();
      r.config_digest = j.at("config_digest").get<std::string>();
      for (const auto& i : j.at("inputs"))
        r.inputs.push_back({i.at("path").get<std::string>(), i.at("digest").get<std::string>()});
      r.outputs = j.at("outputs").get<std::vector<std::string>>();
      r.detail = j.at("detail").get<std::string>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError("ledger " + path_.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace knobs::service
