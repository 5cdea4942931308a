#include <algorithm>
#include <atomic>
#include <filesystem>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include "knobs/log.hpp"
#include "knobs/validation.hpp"
#include "support/constructed.hpp"

using namespace knobs::validation;

namespace {

const Lexicon kLex{{"bright", "eager", "bold"}, {"quiet", "gloomy", "dull"}};

std::string stuck_loop_reply() {
  std::string s = "Oh no, not again. ";
  for (int i = 0; i < 20; ++i) s += "I feel like I'm stuck in this situation. ";
  return s;
}

// Brute-force Spearman: average ranks by counting, then Pearson.
double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) { mx += rx[i] / n; my += ry[i] / n; }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<LevelSummary> levels(const std::vector<double>& alphas, const std::vector<double>& means) {
  std::vector<LevelSummary> out;
  for (std::size_t i = 0; i < alphas.size(); ++i) out.push_back({alphas[i], 4, 4, means[i]});
  return out;
}

const std::vector<double> kGrid{-5, -2.5, 0, 2.5, 5};

// Minimal chat-completion stand-in on an ephemeral port.
class StubJudge {
 public:
  explicit StubJudge(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      last_auth = req.get_header_value("Authorization");
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubJudge() {
    server_.stop();
    thread_.join();
  }
  JudgeConfig config() const {
    JudgeConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_);
    c.backoff_seconds = 0.01;
    c.timeout_seconds = 2;
    return c;
  }
  static void reply(httplib::Response& res, const std::string& content) {
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                    "application/json");
  }

  std::atomic<int> hits{0};
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

// ---- lexicon ---------------------------------------------------------------

TEST(LexiconScore, CountsHits) {
  EXPECT_DOUBLE_EQ(lexicon_score("Bright and eager, bold but quiet.", kLex).score, 0.75);
  EXPECT_DOUBLE_EQ(lexicon_score("nothing to see here", kLex).score, 0.5);
  EXPECT_DOUBLE_EQ(lexicon_score("a dull, GLOOMY day", kLex).score, 0.0);
}

TEST(LexiconScore, WholeTokensOnly) {
  EXPECT_DOUBLE_EQ(lexicon_score("brightness boldly", kLex).score, 0.5);
}

TEST(LexiconScore, OverlapRejected) {
  EXPECT_THROW(lexicon_score("x", Lexicon{{"calm"}, {"Calm"}}), knobs::ConfigError);
  EXPECT_THROW(lexicon_score("x", Lexicon{{}, {"dull"}}), knobs::ConfigError);
}

TEST(LexiconScore, SwapGivesComplement) {
  knobs::SeededRng rng(6);
  const std::vector<std::string> words{"bright", "eager", "bold", "quiet", "gloomy", "dull", "day", "the"};
  for (int t = 0; t < 200; ++t) {
    std::string text;
    for (std::size_t i = rng.below(12); i > 0; --i) text += words[rng.below(words.size())] + " ";
    // Equal up to the rounding of one division.
    EXPECT_DOUBLE_EQ(lexicon_score(text, kLex.swapped()).score, 1.0 - lexicon_score(text, kLex).score) << text;
  }
}

// ---- judge -----------------------------------------------------------------

TEST(JudgeParse, Fixtures) {
  EXPECT_EQ(parse_judge_reply("7"), 7);
  EXPECT_EQ(parse_judge_reply("I think 9/10"), 9);
  EXPECT_EQ(parse_judge_reply("Score: 3 / 10."), 3);
  EXPECT_EQ(parse_judge_reply("Between 2 and 4, I'd say 4"), 4);
  EXPECT_EQ(parse_judge_reply("10"), 10);
  EXPECT_EQ(parse_judge_reply("0"), 0);
  EXPECT_THROW(parse_judge_reply("no idea"), knobs::ParseError);
  EXPECT_THROW(parse_judge_reply("42"), knobs::ParseError);
  EXPECT_THROW(parse_judge_reply("4/5"), knobs::ParseError);
}

TEST(RemoteJudge, StubReplyIsRescaled) {
  StubJudge stub([](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    ASSERT_EQ(body.at("messages").size(), 2u);
    StubJudge::reply(res, "7");
  });
  ::setenv("KNOBS_TEST_JUDGE_TOKEN", "sekrit", 1);
  auto c = stub.config();
  c.token_env = "KNOBS_TEST_JUDGE_TOKEN";
  RemoteJudge judge(c);
  const auto s = judge.score("some answer", "extraversion");
  EXPECT_DOUBLE_EQ(s.score, 0.7);
  EXPECT_EQ(stub.last_auth, "Bearer sekrit");
}

TEST(RemoteJudge, RetriesTransientFailures) {
  std::atomic<int> calls{0};
  StubJudge stub([&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      return;
    }
    StubJudge::reply(res, "I think 9/10");
  });
  RemoteJudge judge(stub.config());
  EXPECT_DOUBLE_EQ(judge.score("a", "b").score, 0.9);
  EXPECT_EQ(stub.hits.load(), 3);
}

TEST(RemoteJudge, ThreeFailuresMeanUnavailable) {
  StubJudge stub([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  RemoteJudge judge(stub.config());
  EXPECT_THROW(judge.score("a", "b"), knobs::ScorerUnavailable);
  EXPECT_EQ(stub.hits.load(), 3);
}

TEST(RemoteJudge, UnreachableEndpointIsUnavailable) {
  JudgeConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.backoff_seconds = 0.01;
  c.timeout_seconds = 0.5;
  RemoteJudge judge(c);
  EXPECT_THROW(judge.score("a", "b"), knobs::ScorerUnavailable);
}

TEST(RemoteJudge, UnparseableReplyIsParseError) {
  StubJudge stub([](const httplib::Request&, httplib::Response& res) { StubJudge::reply(res, "cannot say"); });
  RemoteJudge judge(stub.config());
  EXPECT_THROW(judge.score("a", "b"), knobs::ParseError);
}

TEST(RemoteJudge, MissingEndpointIsConfigError) {
  EXPECT_THROW(RemoteJudge(JudgeConfig{}), knobs::ConfigError);
}

// ---- validity --------------------------------------------------------------

TEST(Validity, StuckLoopCollapses) {
  EXPECT_EQ(validity_check(stuck_loop_reply()), ValidityVerdict::invalid(InvalidReason::repetition_collapse));
}

TEST(Validity, CleanAndEmptyCases) {
  EXPECT_EQ(validity_check("I would go to the party. It sounds like fun."), ValidityVerdict::ok());
  EXPECT_EQ(validity_check(""), ValidityVerdict::invalid(InvalidReason::empty_output));
  EXPECT_EQ(validity_check(" \n\t"), ValidityVerdict::invalid(InvalidReason::empty_output));
  EXPECT_EQ(validity_check("?!... ;;"), ValidityVerdict::invalid(InvalidReason::nonsense));
}

TEST(Validity, RepetitionThresholds) {
  auto repeat = [](const std::string& s, int n) {
    std::string out;
    for (int i = 0; i < n; ++i) out += s;
    return out;
  };
  EXPECT_TRUE(validity_check(repeat("one two three four ", 4)).valid);  // only four copies
  EXPECT_FALSE(validity_check(repeat("one two three four ", 5)).valid);
  EXPECT_FALSE(validity_check("so " + repeat("one two three four five ", 5) + "end").valid);
  EXPECT_TRUE(validity_check(repeat("yes no ", 9)).valid);  // longest repeated 4-gram run is 4
  EXPECT_FALSE(validity_check(repeat("no ", 20)).valid);
}

TEST(Validity, ForcedChoiceNeedsAnOption) {
  const std::vector<std::string> keys{"A", "B", "C", "D"};
  EXPECT_TRUE(validity_check("Answer: B", &keys).valid);
  EXPECT_EQ(validity_check("I refuse to choose.", &keys), ValidityVerdict::invalid(InvalidReason::instruction_disobedience));
  EXPECT_EQ(validity_check(stuck_loop_reply(), &keys), ValidityVerdict::invalid(InvalidReason::repetition_collapse));
}

TEST(Validity, TotalAndDeterministic) {
  knobs::SeededRng rng(31);
  for (int t = 0; t < 300; ++t) {
    std::string s;
    for (std::size_t i = rng.below(40); i > 0; --i) s += static_cast<char>(rng.below(96) + 32);
    const auto a = validity_check(s);
    EXPECT_EQ(a, validity_check(s));
    EXPECT_EQ(a.valid, !a.reason.has_value());
  }
}

TEST(OptionKey, Forms) {
  const std::vector<std::string> keys{"A", "B", "C", "D"};
  EXPECT_EQ(find_option_key("B", keys), "B");
  EXPECT_EQ(find_option_key("(c)", keys), "C");
  EXPECT_EQ(find_option_key("d. Because I like it", keys), "D");
  EXPECT_EQ(find_option_key("My answer is a", keys), "A");
  EXPECT_EQ(find_option_key("I pick B here", keys), "B");
  EXPECT_EQ(find_option_key("either A or B", keys), std::nullopt);
  EXPECT_EQ(find_option_key("nothing", keys), std::nullopt);
}

// ---- spearman and verdicts -------------------------------------------------

TEST(Spearman, MatchesBruteForce) {
  knobs::SeededRng rng(17);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 3 + rng.below(8);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = double(rng.below(5));
      y[i] = double(rng.below(4)) / 4;
    }
    const auto got = spearman(x, y);
    const bool const_x = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
    const bool const_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    if (const_x || const_y) {
      EXPECT_FALSE(got.has_value());
      continue;
    }
    ASSERT_TRUE(got.has_value());
    EXPECT_NEAR(*got, spearman_oracle(x, y), 1e-12);
  }
}

TEST(Verdict, PerfectMonotonePasses) {
  const auto m = judge_levels(levels(kGrid, {0.1, 0.3, 0.5, 0.7, 0.9}));
  EXPECT_EQ(m.status, VerdictStatus::pass);
  EXPECT_DOUBLE_EQ(*m.rho, 1.0);
  EXPECT_EQ(m.polarity, 1);
}

TEST(Verdict, ConstantMeansFailFlat) {
  const auto m = judge_levels(levels(kGrid, {0.4, 0.4, 0.4, 0.4, 0.4}));
  EXPECT_EQ(m.status, VerdictStatus::fail);
  EXPECT_TRUE(m.flat);
  EXPECT_FALSE(m.rho.has_value());
}

TEST(Verdict, NonMonotoneExampleFollowsOracle) {
  const std::vector<double> means{0.2, 0.5, 0.4, 0.7, 0.9};
  const auto m = judge_levels(levels(kGrid, means));
  const double rho = spearman_oracle(kGrid, means);  // 0.9
  EXPECT_NEAR(*m.rho, rho, 1e-12);
  EXPECT_EQ(m.status, rho >= 0.8 ? VerdictStatus::pass : VerdictStatus::fail);
}

TEST(Verdict, CorrelatedButSmallEffectIsFlat) {
  const auto m = judge_levels(levels(kGrid, {0.40, 0.42, 0.44, 0.46, 0.48}));
  EXPECT_DOUBLE_EQ(*m.rho, 1.0);
  EXPECT_TRUE(m.flat);
  EXPECT_EQ(m.status, VerdictStatus::fail);
}

TEST(Verdict, TooFewValidLevelsIsInconclusive) {
  auto ls = levels(kGrid, {0.1, 0.3, 0.5, 0.7, 0.9});
  ls[0].valid_scored = ls[1].valid_scored = ls[2].valid_scored = 0;
  EXPECT_EQ(judge_levels(ls).status, VerdictStatus::inconclusive);
}

TEST(Verdict, NegatingAlphasNegatesRho) {
  knobs::SeededRng rng(41);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> means(5), neg_grid(5);
    for (double& m : means) m = double(rng.below(6)) / 5;
    for (std::size_t i = 0; i < 5; ++i) neg_grid[i] = -kGrid[i];
    const auto a = judge_levels(levels(kGrid, means));
    const auto b = judge_levels(levels(neg_grid, means));
    ASSERT_EQ(a.rho.has_value(), b.rho.has_value());
    if (a.rho) EXPECT_EQ(*b.rho, -*a.rho);
  }
}

// ---- sweeps ----------------------------------------------------------------

class SweepFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    plan_ = knobs::corpus::PlantedSpec::defaults();
    lm_ = knobs::testing::constructed_lm(plan_, true);
    vector_ = knobs::steering::make_sae_vector(knobs::testing::constructed_sae(), knobs::testing::constructed_stats(),
                                               0, 1.0, 1);
    questions_ = knobs::corpus::generate_planted_questions(plan_, 4, 3);
    config_.replicates = 2;
    config_.max_new_tokens = 8;
    config_.seed_base = 5;
  }
  knobs::corpus::PlantedSpec plan_;
  knobs::lm::LmWeights lm_;
  knobs::steering::SteeringVector vector_;
  std::vector<knobs::corpus::ValidationQuestion> questions_;
  SweepConfig config_;
};

TEST_F(SweepFixture, ArchivesEveryCellOnceInOrder) {
  const auto raw = alpha_sweep(vector_, questions_, lm_, config_);
  ASSERT_EQ(raw.cells.size(), 40u);
  std::size_t i = 0;
  for (double a : config_.alphas) {
    for (const auto& q : questions_) {
      for (std::size_t r = 0; r < 2; ++r, ++i) {
        EXPECT_EQ(raw.cells[i].alpha, a);
        EXPECT_EQ(raw.cells[i].question_id, q.id);
        EXPECT_EQ(raw.cells[i].replicate, r);
        EXPECT_EQ(raw.cells[i].status, CellStatus::generated);
      }
    }
  }
}

TEST_F(SweepFixture, ZeroAlphaRowsMatchBaseline) {
  const auto raw = alpha_sweep(vector_, questions_, lm_, config_);
  for (const auto& c : raw.cells) {
    if (c.alpha != 0.0) continue;
    const auto base = knobs::lm::generate(c.prompt, lm_, {config_.max_new_tokens, config_.temperature, c.seed});
    EXPECT_EQ(c.text, base.continuation);
  }
}

TEST_F(SweepFixture, WorkerCountDoesNotChangeResults) {
  config_.workers = 1;
  const auto one = alpha_sweep(vector_, questions_, lm_, config_);
  config_.workers = 4;
  EXPECT_EQ(alpha_sweep(vector_, questions_, lm_, config_).cells, one.cells);
}

TEST_F(SweepFixture, FailedCellsAreMarkedAndSweepContinues) {
  auto qs = questions_;
  qs[1].situation.clear();
  for (int i = 0; i < 80; ++i) qs[1].situation += "day ";
  const auto raw = alpha_sweep(vector_, qs, lm_, config_);
  std::size_t failed = 0;
  for (const auto& c : raw.cells) {
    if (c.question_id == qs[1].id) {
      EXPECT_EQ(c.status, CellStatus::failed);
      EXPECT_FALSE(c.error.empty());
      ++failed;
    } else {
      EXPECT_EQ(c.status, CellStatus::generated);
    }
  }
  EXPECT_EQ(failed, 10u);
}

TEST_F(SweepFixture, LexiconScoresOrderedWithAlpha) {
  config_.replicates = 5;
  auto raw = alpha_sweep(vector_, questions_, lm_, config_);
  score_sweep(raw, {plan_.lexicon_a, plan_.lexicon_b});
  const auto report = monotonicity_verdict(raw);
  for (std::size_t i = 1; i < report.levels.size(); ++i) {
    EXPECT_GE(report.levels[i].mean_score, report.levels[i - 1].mean_score);
  }
  EXPECT_EQ(report.verdict.status, VerdictStatus::pass);
  EXPECT_EQ(report.verdict.polarity, 1);
}

TEST_F(SweepFixture, JudgeOutageFallsBackToLexicon) {
  auto raw = alpha_sweep(vector_, questions_, lm_, config_);
  JudgeConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.backoff_seconds = 0.01;
  c.timeout_seconds = 0.5;
  RemoteJudge judge(c);
  auto old = knobs::log::set_sink({});
  score_sweep(raw, {plan_.lexicon_a, plan_.lexicon_b}, &judge, "cheerful");
  knobs::log::set_sink(old);
  for (const auto& cell : raw.cells) {
    ASSERT_TRUE(cell.score.has_value());
    EXPECT_EQ(cell.score->scorer, "lexicon");
    EXPECT_EQ(cell.note, "judge unavailable; lexicon fallback");
  }
}

TEST_F(SweepFixture, JudgeScoresWhenAvailable) {
  config_.alphas = {-1, 0, 1};
  config_.replicates = 1;
  auto raw = alpha_sweep(vector_, questions_, lm_, config_);
  StubJudge stub([](const httplib::Request&, httplib::Response& res) { StubJudge::reply(res, "6"); });
  RemoteJudge judge(stub.config());
  score_sweep(raw, {plan_.lexicon_a, plan_.lexicon_b}, &judge, "cheerful");
  for (const auto& cell : raw.cells) {
    EXPECT_EQ(cell.score->scorer, "judge:judge");
    EXPECT_DOUBLE_EQ(cell.score->score, 0.6);
  }
}

TEST_F(SweepFixture, GridMustBeAscendingWithZero) {
  config_.alphas = {1, 2, 3};
  EXPECT_THROW(alpha_sweep(vector_, questions_, lm_, config_), knobs::ConfigError);
  config_.alphas = {2, 0, -2};
  EXPECT_THROW(alpha_sweep(vector_, questions_, lm_, config_), knobs::ConfigError);
  config_.alphas = {-1, 0, 1};
  EXPECT_THROW(alpha_sweep(vector_, {}, lm_, config_), knobs::DataError);
}

TEST(Discrepancy, HighSeparationFlatSweepCarriesBoth) {
  // No readout: logits ignore the residual, so every α generates the same text.
  auto plan = knobs::corpus::PlantedSpec::defaults();
  plan.pair_count = 60;
  const auto lm = knobs::testing::constructed_lm(plan, false);
  const auto v = knobs::steering::make_sae_vector(knobs::testing::constructed_sae(),
                                                  knobs::testing::constructed_stats(), 0, 1.0, 1);
  SweepConfig c;
  c.replicates = 3;
  c.max_new_tokens = 12;
  auto raw = alpha_sweep(v, knobs::corpus::generate_planted_questions(plan, 4, 1), lm, c);
  score_sweep(raw, {plan.lexicon_a, plan.lexicon_b});
  const auto report = monotonicity_verdict(raw, {}, 1.0);
  EXPECT_GE(*report.delta_f, 0.8);
  EXPECT_EQ(report.verdict.status, VerdictStatus::fail);
  EXPECT_TRUE(report.verdict.flat);
}

TEST(Report, FileRoundTrip) {
  RawSweep raw;
  raw.feature_id = "sae:7";
  raw.layer = 2;
  for (double a : kGrid) {
    SweepCell c;
    c.alpha = a;
    c.question_id = "q1";
    c.seed = 99;
    c.prompt = "the day";
    c.text = a > 0 ? "bright \"day\"" : "";
    c.validity = validity_check(c.text);
    c.score = lexicon_score(c.text, kLex);
    raw.cells.push_back(c);
  }
  raw.cells[1].status = CellStatus::failed;
  raw.cells[1].error = "boom";
  raw.cells[1].score.reset();
  raw.cells[1].validity.reset();
  auto report = monotonicity_verdict(raw, {}, 0.875);
  report.human = HumanVerdict::accepted;
  const auto path = std::filesystem::temp_directory_path() / "knobs_test_report.json";
  save_report(report, path);
  EXPECT_EQ(load_report(path), report);
  std::filesystem::remove(path);
  EXPECT_NE(format_report(report).find("delta_f 0.875"), std::string::npos);
}
