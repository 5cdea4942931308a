#include <gtest/gtest.h>

#include <fstream>
#include <future>

#include "knobs/log.hpp"
#include "knobs/service.hpp"
#include "support/service_fixture.hpp"

using namespace knobs::service;
using knobs::testing::RunningService;
using knobs::testing::SeededStore;
using knobs::validation::HumanVerdict;
using knobs::validation::VerdictStatus;
using nlohmann::json;

namespace {

knobs::validation::SweepReport flat_report() {
  knobs::validation::SweepReport r;
  r.feature_id = "sae:0";
  r.layer = 1;
  r.delta_f = 1.0;
  r.levels = {{-5, 4, 4, 0.5}, {0, 4, 4, 0.5}, {5, 4, 4, 0.55}};
  r.verdict.status = VerdictStatus::fail;
  r.verdict.rho = 0.866;
  r.verdict.effect = 0.05;
  r.verdict.flat = true;
  r.verdict.polarity = 1;
  return r;
}

FeatureStore rich_store() {
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  s.sae_checkpoint = "sae.ckpt";
  s.lm_checkpoint = "lm.ckpt";
  s.vectors_path = "vectors.json";
  s.features[0].phi = 0.1 + 0.2;  // not exactly representable in decimal
  attach_sweep(s, 0, flat_report(), "run-1", "sweeps/run-1.json");
  record_verdict(s, 0, HumanVerdict::accepted, "ana", "looks right", "2026-01-01T00:00:00.000Z");
  record_verdict(s, 0, HumanVerdict::rejected, "bo", "", "2026-01-02T00:00:00.000Z");
  knobs::validation::SweepReport undefined = flat_report();
  undefined.verdict.rho.reset();
  undefined.verdict.status = VerdictStatus::inconclusive;
  attach_sweep(s, 1, undefined, "run-2");
  return s;
}

struct CapturedLog {
  std::vector<std::string> warnings;
  knobs::log::Sink previous;
  CapturedLog() {
    previous = knobs::log::set_sink([this](std::string_view level, std::string_view msg) {
      if (level == "warn") warnings.emplace_back(msg);
    });
  }
  ~CapturedLog() { knobs::log::set_sink(previous); }
};

}  // namespace

// ---- store -----------------------------------------------------------------

TEST(Store, RoundTripIdentity) {
  const auto dir = knobs::testing::fresh_dir("store");
  const auto path = dir / "store.json";
  const auto s = rich_store();
  save_store(s, path);
  EXPECT_EQ(load_store(path), s);
  save_store(load_store(path), path);
  EXPECT_EQ(load_store(path), s);
  std::filesystem::remove_all(dir);
}

TEST(Store, EmptyStoreRoundTrips) {
  const auto dir = knobs::testing::fresh_dir("store");
  save_store(FeatureStore{}, dir / "s.json");
  EXPECT_EQ(load_store(dir / "s.json"), FeatureStore{});
  std::filesystem::remove_all(dir);
}

TEST(Store, FutureVersionIsMigrationError) {
  const auto dir = knobs::testing::fresh_dir("store");
  const auto path = dir / "store.json";
  save_store(rich_store(), path);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto j = json::parse(text);
  j["store_version"] = kStoreVersion + 1;
  std::ofstream(path) << j.dump();
  EXPECT_THROW(load_store(path), knobs::VersionError);
  std::filesystem::remove_all(dir);
}

TEST(Store, CorruptionReportsOffset) {
  const auto dir = knobs::testing::fresh_dir("store");
  const auto path = dir / "store.json";
  std::ofstream(path) << "{\"store_version\": 1, \"features\": [";
  try {
    load_store(path);
    FAIL() << "expected ParseError";
  } catch (const knobs::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Store, SecondWriterGetsLockError) {
  const auto dir = knobs::testing::fresh_dir("store");
  const auto path = dir / "store.json";
  {
    StoreLock held(path);
    EXPECT_THROW(StoreLock second(path), knobs::LockError);
    EXPECT_THROW(save_store(rich_store(), path), knobs::LockError);
  }
  EXPECT_NO_THROW(save_store(rich_store(), path));
  EXPECT_FALSE(std::filesystem::exists(dir / "store.json.lock"));
  std::filesystem::remove_all(dir);
}

TEST(Store, WriteLeavesNoTemporaries) {
  const auto dir = knobs::testing::fresh_dir("store");
  save_store(rich_store(), dir / "store.json");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);
  std::filesystem::remove_all(dir);
}

TEST(Store, DuplicateFeatureRejected) {
  auto c = knobs::testing::fixture_candidates();
  c.push_back(c.front());
  EXPECT_THROW(store_from_candidates(c), knobs::DataError);
}

TEST(Store, PhiFromStats) {
  auto stats = knobs::testing::constructed_stats();
  stats.max_activation[1] = 2.5;
  const auto s = store_from_candidates(knobs::testing::fixture_candidates(), &stats);
  EXPECT_EQ(s.find(1)->phi, 2.5);
  EXPECT_EQ(s.find(0)->phi, 0.5);
}

TEST(Verdict, FirstAcceptOnPending) {
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  attach_sweep(s, 0, flat_report(), "run-1");
  EXPECT_EQ(s.find(0)->status(), HumanVerdict::pending);
  record_verdict(s, 0, HumanVerdict::accepted, "ana", "", utc_timestamp());
  EXPECT_EQ(s.find(0)->status(), HumanVerdict::accepted);
  EXPECT_EQ(s.find(0)->verdicts.size(), 1u);
}

TEST(Verdict, SecondVerdictAppendsAndLatestWins) {
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  record_verdict(s, 2, HumanVerdict::accepted, "ana", "", "t1");
  record_verdict(s, 2, HumanVerdict::rejected, "bo", "changed mind", "t2");
  const auto* f = s.find(2);
  ASSERT_EQ(f->verdicts.size(), 2u);
  EXPECT_EQ(f->verdicts[0].verdict, HumanVerdict::accepted);
  EXPECT_EQ(f->status(), HumanVerdict::rejected);
  EXPECT_EQ(f->verdicts[1].note, "changed mind");
}

TEST(Verdict, AcceptingFlatFailureFlagsDisagreement) {
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  attach_sweep(s, 0, flat_report(), "run-1");
  const auto& v = record_verdict(s, 0, HumanVerdict::accepted, "ana", "", "t");
  EXPECT_TRUE(v.disagreement);
  const auto& w = record_verdict(s, 0, HumanVerdict::rejected, "ana", "", "t");
  EXPECT_FALSE(w.disagreement);
}

TEST(Verdict, RejectingPassFlagsDisagreement) {
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  auto r = flat_report();
  r.verdict = {VerdictStatus::pass, 1.0, 0.9, false, 1};
  attach_sweep(s, 0, r, "run-1");
  EXPECT_TRUE(record_verdict(s, 0, HumanVerdict::rejected, "ana", "", "t").disagreement);
}

TEST(Verdict, WithoutSweepWarnsButRecords) {
  CapturedLog log;
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  const auto& v = record_verdict(s, 1, HumanVerdict::accepted, "ana", "", "t");
  EXPECT_TRUE(v.without_sweep);
  EXPECT_FALSE(v.disagreement);
  EXPECT_EQ(log.warnings.size(), 1u);
}

TEST(Verdict, UnknownFeatureAndPendingRejected) {
  auto s = store_from_candidates(knobs::testing::fixture_candidates());
  EXPECT_THROW(record_verdict(s, 99, HumanVerdict::accepted, "a", "", "t"), knobs::NotFoundError);
  EXPECT_THROW(record_verdict(s, 0, HumanVerdict::pending, "a", "", "t"), knobs::ConfigError);
  EXPECT_THROW(attach_sweep(s, 99, flat_report(), "run"), knobs::NotFoundError);
}

TEST(Timestamp, IsoUtc) {
  const auto t = utc_timestamp();
  ASSERT_EQ(t.size(), 24u);
  EXPECT_EQ(t[10], 'T');
  EXPECT_EQ(t.back(), 'Z');
}

// ---- ledger ----------------------------------------------------------------

TEST(Ledger, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Ledger, AppendOnlyAndStable) {
  const auto dir = knobs::testing::fresh_dir("ledger");
  const auto input = dir / "input.txt";
  std::ofstream(input) << "abc";
  RunLedger ledger(dir / "runs.jsonl");
  std::uintmax_t last = 0;
  for (int i = 0; i < 5; ++i) {
    ledger.append(make_ledger_record("cmd" + std::to_string(i), "digest", {input, dir / "missing"}, {"out"}, "x"));
    const auto size = std::filesystem::file_size(ledger.path());
    EXPECT_GT(size, last);
    last = size;
  }
  const auto records = ledger.records();
  ASSERT_EQ(records.size(), 5u);
  EXPECT_EQ(records[3].command, "cmd3");
  EXPECT_EQ(records[0].inputs[0].digest, sha256_hex("abc"));
  EXPECT_EQ(records[0].inputs[1].digest, "");
  EXPECT_EQ(records[0].outputs, std::vector<std::string>{"out"});
  EXPECT_EQ(file_sha256(input), records[4].inputs[0].digest);
  std::filesystem::remove_all(dir);
}

// ---- config ----------------------------------------------------------------

TEST(Config, DefaultsRoundTrip) {
  const AppConfig defaults;
  const auto again = parse_config(config_text(defaults));
  EXPECT_EQ(config_digest(again), config_digest(defaults));
  EXPECT_EQ(again.retrieval.tau1, 0.6);
  EXPECT_EQ(again.retrieval.tau2, 0.8);
  EXPECT_EQ(again.retrieval.top_k, 32u);
  EXPECT_EQ(again.sae_alpha, 5.0);
  EXPECT_EQ(again.caa_alpha, 2.0);
  EXPECT_EQ(again.server.alpha_bound, 10.0);
  EXPECT_EQ(again.sweep.alphas, (std::vector<double>{-5, -2.5, 0, 2.5, 5}));
  EXPECT_EQ(again.monotonicity.rho_threshold, 0.8);
  EXPECT_EQ(again.monotonicity.effect_floor, 0.15);
  EXPECT_EQ(again.lm.d_model, 64u);
  EXPECT_EQ(again.lm.n_layers, 4u);
}

TEST(Config, PartialFileOverlaysDefaults) {
  const auto c = parse_config(R"({"seed": 9, "retrieval": {"tau1": 0.7}, "planted": {"marker_token": "zq"}})");
  EXPECT_EQ(c.retrieval.tau1, 0.7);
  EXPECT_EQ(c.retrieval.tau2, 0.8);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.sae.seed, 9u);
  EXPECT_EQ(c.planted.marker_token, "zq");
  EXPECT_NE(config_digest(c), config_digest(AppConfig{}));
}

TEST(Config, UnknownKeyNamed) {
  try {
    parse_config(R"({"retrieval": {"tau3": 1}})");
    FAIL();
  } catch (const knobs::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("retrieval.tau3"), std::string::npos);
  }
}

TEST(Config, WrongTypeAndInvalidValues) {
  EXPECT_THROW(parse_config(R"({"sae": {"steps": "many"}})"), knobs::ConfigError);
  EXPECT_THROW(parse_config(R"({"lm": {"n_heads": 5}})"), knobs::ConfigError);
  EXPECT_THROW(parse_config(R"({"sweep": {"alphas": [1, 2]}})"), knobs::ConfigError);
  EXPECT_THROW(parse_config(R"({"lm": {"tokenizer": "bpe"}})"), knobs::ConfigError);
  EXPECT_THROW(parse_config("{nope"), knobs::ParseError);
}

// ---- HTTP API --------------------------------------------------------------

class Api : public ::testing::Test {
 protected:
  SeededStore fixture{"api"};
  RunningService service{fixture.resources()};
  httplib::Client client = service.client();

  json get(const std::string& path, int expect = 200) {
    auto r = client.Get(path);
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
  }

  json post(const std::string& path, const json& body, int expect) {
    auto r = client.Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
  }

  std::size_t ledger_count(const std::string& command) const {
    std::size_t n = 0;
    for (const auto& r : RunLedger(fixture.ledger_path).records()) n += r.command == command;
    return n;
  }
};

TEST_F(Api, Health) {
  const auto h = get("/api/health");
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["store_version"], kStoreVersion);
  EXPECT_EQ(h["features"], 3);
  EXPECT_EQ(h["config_digest"], config_digest(fixture.resources().config));
  EXPECT_EQ(h["checkpoints"]["lm"]["digest"], file_sha256(fixture.lm_path));
  EXPECT_EQ(h["checkpoints"]["sae"]["digest"], file_sha256(fixture.sae_path));
}

TEST_F(Api, FeatureList) {
  const auto l = get("/api/features");
  ASSERT_EQ(l["features"].size(), 3u);
  EXPECT_EQ(l["count"], 3);
  EXPECT_EQ(l["features"][0]["id"], 0);
  EXPECT_EQ(l["features"][1]["polarity"], "negative");
  EXPECT_EQ(l["features"][2]["status"], "pending");
  EXPECT_TRUE(l["features"][0]["steerable"].get<bool>());
  ASSERT_EQ(l["caa"].size(), 1u);
  EXPECT_EQ(l["caa"][0]["label"], "caa:planted");
}

TEST_F(Api, FeatureDetail) {
  const auto f = get("/api/features/0");
  EXPECT_EQ(f["delta_f"], 1.0);
  EXPECT_EQ(f["phi"], 0.5);
  EXPECT_TRUE(f["rho"].is_null());
  EXPECT_EQ(f["polarity"], "positive");
  EXPECT_EQ(get("/api/features/sae:1")["id"], 1);
  get("/api/features/42", 404);
  get("/api/features/bogus", 404);
}

TEST_F(Api, SteerZeroAlphaStreamsBaseline) {
  auto c = service.client();
  const std::string prompt = "i would go to the room";
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    const auto o = knobs::testing::post_steer(
        c, {{"feature", 0}, {"alpha", 0.0}, {"prompt", prompt}, {"max_new_tokens", 10}, {"seed", seed}});
    ASSERT_EQ(o.status, 200);
    knobs::lm::SamplerSettings s;
    s.max_new_tokens = 10;
    s.seed = seed;
    s.temperature = fixture.resources().config.sampler.temperature;
    const auto baseline = knobs::lm::generate(prompt, *fixture.lm, s);
    EXPECT_EQ(o.done["text"], baseline.continuation);
    EXPECT_EQ(o.done["full_text"], baseline.text);
    EXPECT_EQ(prompt + o.streamed, baseline.text);
    EXPECT_EQ(o.token_events, baseline.new_tokens.size());
    EXPECT_TRUE(o.done["baseline"].get<bool>());
    EXPECT_EQ(o.done["layer"], 1);
    EXPECT_EQ(o.done["seed"], seed);
    EXPECT_TRUE(o.done["validity"].contains("valid"));
  }
}

TEST_F(Api, SteerOppositeAlphasOrderLexiconScores) {
  auto c = service.client();
  double plus = 0, minus = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double a : {5.0, -5.0}) {
      const auto o = knobs::testing::post_steer(
          c, {{"feature", "sae:0"}, {"alpha", a}, {"prompt", "we talk"}, {"max_new_tokens", 16}, {"seed", seed}});
      ASSERT_EQ(o.status, 200);
      const double s = knobs::validation::lexicon_score(o.done["text"].get<std::string>(), fixture.lexicon()).score;
      (a > 0 ? plus : minus) += s;
    }
  }
  EXPECT_GT(plus, minus);
}

TEST_F(Api, SteerRejections) {
  auto c = service.client();
  auto o = knobs::testing::post_steer(c, {{"feature", 42}, {"alpha", 1.0}, {"prompt", "x"}});
  EXPECT_EQ(o.status, 404);
  o = knobs::testing::post_steer(c, {{"feature", 0}, {"alpha", 10.5}, {"prompt", "x"}});
  EXPECT_EQ(o.status, 400);
  EXPECT_EQ(o.error_body["bounds"], json::array({-10.0, 10.0}));
  o = knobs::testing::post_steer(c, {{"feature", 0}, {"caa", "planted"}, {"alpha", 1.0}, {"prompt", "x"}});
  EXPECT_EQ(o.status, 400);
  o = knobs::testing::post_steer(c, {{"feature", 0}, {"alpha", 1.0}});
  EXPECT_EQ(o.status, 400);
  auto r = c.Post("/api/steer", "{not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
}

TEST_F(Api, SteerWithBoundaryAlphaAndCaa) {
  auto c = service.client();
  auto o = knobs::testing::post_steer(c, {{"feature", 1}, {"alpha", -10.0}, {"prompt", "we"}, {"max_new_tokens", 4}});
  EXPECT_EQ(o.status, 200);
  EXPECT_EQ(o.done["alpha"], -10.0);
  o = knobs::testing::post_steer(c, {{"caa", "caa:planted"}, {"alpha", 2.0}, {"prompt", "we"}, {"max_new_tokens", 4}});
  EXPECT_EQ(o.status, 200);
  EXPECT_EQ(o.done["vector"], "caa:planted");
}

TEST_F(Api, ConcurrentSteersAreDeterministic) {
  std::vector<std::future<std::string>> results;
  for (int i = 0; i < 6; ++i)
    results.push_back(std::async(std::launch::async, [this] {
      auto c = service.client();
      const auto o = knobs::testing::post_steer(
          c, {{"feature", 0}, {"alpha", 2.5}, {"prompt", "we talk"}, {"max_new_tokens", 12}, {"seed", 5}});
      return o.done.value("text", std::string("<none>"));
    }));
  const auto first = results[0].get();
  EXPECT_NE(first, "<none>");
  for (std::size_t i = 1; i < results.size(); ++i) EXPECT_EQ(results[i].get(), first);
}

TEST_F(Api, Heatmap) {
  const auto h = get("/api/heatmap?text=we%20feel%20bright%20today&feature=0&layer=1");
  ASSERT_EQ(h["tokens"].size(), 4u);
  EXPECT_EQ(h["tokens"][2]["text"], " bright");
  EXPECT_EQ(h["tokens"][2]["activation"], 0.5);
  EXPECT_EQ(h["tokens"][0]["activation"], 0.0);
  EXPECT_EQ(h["max"], 0.5);
  const auto html = get("/api/heatmap?text=bright&feature=0&format=html");
  EXPECT_NE(html["rendered"].get<std::string>().find("class=\"tok\""), std::string::npos);
  get("/api/heatmap?feature=0", 400);
  get("/api/heatmap?text=x&feature=77", 404);
  get("/api/heatmap?text=x&feature=0&layer=9", 400);
}

TEST_F(Api, VerdictFlowAndLedger) {
  const auto first = post("/api/verdict", {{"feature", 2}, {"verdict", "accepted"}, {"annotator", "ana"}}, 200);
  EXPECT_EQ(first["feature"]["status"], "accepted");
  EXPECT_TRUE(first.contains("warning"));
  post("/api/verdict", {{"feature", 2}, {"verdict", "rejected"}, {"annotator", "bo"}, {"note", "no"}}, 200);
  const auto f = get("/api/features/2");
  EXPECT_EQ(f["status"], "rejected");
  ASSERT_EQ(f["verdicts"].size(), 2u);
  EXPECT_EQ(f["verdicts"][1]["note"], "no");

  post("/api/verdict", {{"feature", 99}, {"verdict", "accepted"}, {"annotator", "ana"}}, 404);
  post("/api/verdict", {{"feature", 2}, {"verdict", "pending"}, {"annotator", "ana"}}, 400);
  post("/api/verdict", {{"feature", 2}, {"verdict", "maybe"}, {"annotator", "ana"}}, 400);
  post("/api/verdict", {{"feature", 2}, {"verdict", "accepted"}, {"annotator", ""}}, 400);
  EXPECT_EQ(ledger_count("api:verdict"), 2u);

  const auto persisted = load_store(fixture.store_path);
  EXPECT_EQ(persisted, *service.server().snapshot());
  EXPECT_EQ(persisted.find(2)->verdicts.size(), 2u);
}

TEST_F(Api, SweepLaunchPollAndPersist) {
  const auto launched = post("/api/sweep/0", {{"questions", 3}}, 202);
  const std::string run = launched["run_id"];
  service.server().wait_for_sweeps();
  const auto polled = get("/api/sweep/" + run);
  EXPECT_EQ(polled["status"], "done");
  EXPECT_EQ(polled["levels"].size(), 5u);
  EXPECT_EQ(polled["cells"], 5 * 3 * 2);
  EXPECT_EQ(polled["delta_f"], 1.0);
  EXPECT_TRUE(std::filesystem::exists(polled["report_path"].get<std::string>()));
  const auto f = get("/api/features/0");
  EXPECT_EQ(f["sweep"]["run_id"], run);
  EXPECT_FALSE(f["automatic"].is_null());
  EXPECT_EQ(ledger_count("api:sweep"), 1u);
  get("/api/sweep/run-999", 404);
  post("/api/sweep/42", json::object(), 404);
  post("/api/sweep/0", {{"alphas", {-20, 0, 20}}}, 400);
  post("/api/sweep/0", {{"alphas", {1, 2}}}, 400);
  EXPECT_EQ(ledger_count("api:sweep"), 1u);
}

TEST_F(Api, ServingLeavesModelAndCheckpointsUntouched) {
  const auto lm_before = *fixture.lm;
  const auto sae_before = fixture.sae->params;
  const auto lm_digest = file_sha256(fixture.lm_path);
  const auto sae_digest = file_sha256(fixture.sae_path);
  auto c = service.client();
  knobs::testing::post_steer(c, {{"feature", 0}, {"alpha", 7.0}, {"prompt", "we"}, {"max_new_tokens", 8}});
  get("/api/heatmap?text=bright%20day&feature=1");
  post("/api/verdict", {{"feature", 0}, {"verdict", "accepted"}, {"annotator", "ana"}}, 200);
  post("/api/sweep/1", {{"questions", 1}, {"max_new_tokens", 4}}, 202);
  service.server().wait_for_sweeps();
  EXPECT_EQ(*fixture.lm, lm_before);
  EXPECT_EQ(fixture.sae->params, sae_before);
  EXPECT_EQ(file_sha256(fixture.lm_path), lm_digest);
  EXPECT_EQ(file_sha256(fixture.sae_path), sae_digest);
}

TEST_F(Api, ServerHoldsTheStoreLock) {
  EXPECT_THROW(save_store(FeatureStore{}, fixture.store_path), knobs::LockError);
}

TEST(ApiStartup, RequiresStoreAndModel) {
  SeededStore fixture("startup");
  auto r = fixture.resources();
  r.lm.reset();
  EXPECT_THROW(Server{r}, knobs::ConfigError);
  EXPECT_FALSE(std::filesystem::exists(fixture.dir / "store.json.lock"));
  auto missing = fixture.resources();
  missing.store_path = fixture.dir / "absent.json";
  EXPECT_THROW(Server{missing}, knobs::NotFoundError);
}

TEST(ApiStartup, HeatmapWithoutSaeIsUnavailable) {
  SeededStore fixture("nosae");
  auto r = fixture.resources();
  r.sae.reset();
  RunningService service(r);
  auto c = service.client();
  auto res = c.Get("/api/heatmap?text=x&feature=0");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 503);
  // No SAE and no cached vector: the feature is listed but not steerable.
  res = c.Get("/api/features/0");
  EXPECT_FALSE(json::parse(res->body)["steerable"].get<bool>());
}
