#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "knobs/log.hpp"
#include "knobs/validation.hpp"

namespace knobs::validation {

struct RemoteJudge::Gate {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t in_flight = 0;
  std::size_t cap = 1;
};

namespace {

constexpr const char* kRubric =
    "You rate how strongly a response expresses a target behaviour. Reply with a single "
    "integer from 0 (expresses the opposite pole) to 10 (fully expresses the target), "
    "then nothing else.";

class Slot {
 public:
  explicit Slot(RemoteJudge::Gate& g) : g_(g) {
    std::unique_lock lock(g_.mu);
    g_.cv.wait(lock, [&] { return g_.in_flight < g_.cap; });
    ++g_.in_flight;
  }
  ~Slot() {
    {
      std::lock_guard lock(g_.mu);
      --g_.in_flight;
    }
    g_.cv.notify_one();
  }

 private:
  RemoteJudge::Gate& g_;
};

}  // namespace

JudgeConfig JudgeConfig::from_env() {
  JudgeConfig c;
  if (const char* e = std::getenv("JUDGE_ENDPOINT")) c.base_url = e;
  return c;
}

std::string judge_prompt(std::string_view response, std::string_view target_description) {
  std::string p = "Target behaviour: ";
  p += target_description;
  p += "\n\nResponse:\n";
  p += response;
  p += "\n\nScore (0-10):";
  return p;
}

int parse_judge_reply(std::string_view reply) {
  auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  std::size_t end = reply.size();
  while (end > 0 && !is_digit(reply[end - 1])) --end;
  if (end == 0) throw ParseError("judge reply has no integer: '" + std::string(reply) + "'");
  std::size_t begin = end;
  while (begin > 0 && is_digit(reply[begin - 1])) --begin;
  std::string_view number = reply.substr(begin, end - begin);

  // "n/10": the rightmost integer is the denominator; read the numerator.
  std::size_t k = begin;
  while (k > 0 && reply[k - 1] == ' ') --k;
  if (k > 0 && reply[k - 1] == '/') {
    std::size_t nend = k - 1;
    while (nend > 0 && reply[nend - 1] == ' ') --nend;
    std::size_t nbegin = nend;
    while (nbegin > 0 && is_digit(reply[nbegin - 1])) --nbegin;
    if (nbegin < nend) {
      if (number != "10") throw ParseError("judge reply uses a scale other than 10: '" + std::string(reply) + "'");
      number = reply.substr(nbegin, nend - nbegin);
    }
  }
  if (number.size() > 2) throw ParseError("judge score out of range: '" + std::string(reply) + "'");
  const int value = std::stoi(std::string(number));
  if (value > 10) throw ParseError("judge score out of range: '" + std::string(reply) + "'");
  return value;
}

RemoteJudge::RemoteJudge(JudgeConfig config) : config_(std::move(config)), gate_(std::make_unique<Gate>()) {
  if (config_.base_url.empty()) throw ConfigError("judge: no endpoint configured");
  if (config_.max_attempts < 1) throw ConfigError("judge: max_attempts must be ≥ 1");
  gate_->cap = std::max<std::size_t>(1, config_.max_concurrent);
}

RemoteJudge::~RemoteJudge() = default;

BehaviorScore RemoteJudge::score(std::string_view response, std::string_view target_description) const {
  const nlohmann::json body = {{"model", config_.model},
                               {"temperature", 0},
                               {"messages",
                                {{{"role", "system"}, {"content", kRubric}},
                                 {{"role", "user"}, {"content", judge_prompt(response, target_description)}}}}};
  httplib::Headers headers;
  if (const char* token = std::getenv(config_.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  Slot slot(*gate_);
  httplib::Client client(config_.base_url);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  std::string last_error;
  double backoff = config_.backoff_seconds;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    auto res = client.Post(config_.route, headers, body.dump(), "application/json");
    if (res && res->status == 200) {
      std::string content;
      try {
        const auto reply = nlohmann::json::parse(res->body);
        content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("judge: malformed completion: ") + e.what());
      }
      BehaviorScore s;
      s.score = parse_judge_reply(content) / 10.0;
      s.scorer = "judge:" + config_.model;
      s.rationale = content;
      return s;
    }
    if (res && res->status != 429 && res->status < 500) {
      throw ScorerUnavailable("judge: endpoint answered HTTP " + std::to_string(res->status));
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    log::warn("judge: attempt " + std::to_string(attempt) + " failed (" + last_error + ")");
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2;
    }
  }
  throw ScorerUnavailable("judge: " + config_.base_url + " unavailable after " +
                          std::to_string(config_.max_attempts) + " attempts (" + last_error + ")");
}

}  // namespace knobs::validation
