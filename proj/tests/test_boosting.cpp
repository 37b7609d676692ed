#include "ctxlens/boosting.hpp"
#include "ctxlens/mock_backends.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <limits>

using namespace ctxlens;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<TokenId> seq(std::size_t n, TokenId vocab) {
  std::vector<TokenId> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<TokenId>(i % static_cast<std::size_t>(vocab));
  return s;
}

/// Prefixes shorter than d tokens see `near`; longer ones see `far`.
std::shared_ptr<PlantedDependencyMock> planted(const TokenDistribution& near, const TokenDistribution& far,
                                               std::size_t d = 33, std::optional<TokenId> eos = std::nullopt) {
  MockBackend::Options o;
  o.vocab_size = near.vocab_size();
  o.eos = eos;
  return std::make_shared<PlantedDependencyMock>(o, d, near, far);
}

class FlakyBackend final : public ForwardingBackend {
 public:
  FlakyBackend(std::shared_ptr<const Backend> inner, int ok) : ForwardingBackend(std::move(inner)), ok_(ok) {}
  TokenDistribution next_token_distribution(const OracleRequest& req) const override {
    if (calls_++ >= ok_) throw TransportError("connection reset", 4);
    return ForwardingBackend::next_token_distribution(req);
  }

 private:
  int ok_;
  mutable std::atomic<int> calls_{0};
};

void expect_close(const TokenDistribution& a, const TokenDistribution& b, double tol) {
  ASSERT_EQ(a.vocab_size(), b.vocab_size());
  for (std::size_t t = 0; t < a.vocab_size(); ++t) EXPECT_NEAR(a[t], b[t], tol) << "token " << t;
}

double total(const TokenDistribution& d) {
  double s = 0.0;
  for (double v : d.probs()) s += v;
  return s;
}

BoostConfig cfg_with(double lambda, DecodingStrategy strategy = DecodingStrategy::nucleus(0.9)) {
  BoostConfig c;
  c.lambda = lambda;
  c.strategy = strategy;
  return c;
}

}  // namespace

TEST(TabooStep, HandComputedBoost) {
  const auto m = planted(TokenDistribution{0.6, 0.3, 0.1}, TokenDistribution{0.2, 0.5, 0.3});
  const auto out = taboo_step(seq(40, 3), cfg_with(2.0, DecodingStrategy::nucleus(1.0)), *m);
  // the pair's JSD, 0.3018..., clears the 0.1225 gate
  ASSERT_TRUE(out.report.lsds.has_value());
  EXPECT_NEAR(*out.report.lsds, 0.30186221778398746, 1e-15);
  EXPECT_EQ(out.report.boosted_set, (SupportSet{1, 2}));
  EXPECT_NEAR(out.dist[0], 1.0 / 9, 1e-15);
  EXPECT_NEAR(out.dist[1], 5.0 / 9, 1e-15);
  EXPECT_NEAR(out.dist[2], 3.0 / 9, 1e-15);
  EXPECT_EQ(out.report.post_dist, out.dist);
  EXPECT_EQ(out.report.pre_dist, TokenDistribution({0.2, 0.5, 0.3}));
}

TEST(TabooStep, IdenticalContextsAreVanillaBitwise) {
  const TokenDistribution d{0.5, 0.3, 0.15, 0.05};
  const auto m = planted(d, d);
  const auto out = taboo_step(seq(40, 4), cfg_with(5.0), *m);
  EXPECT_EQ(*out.report.lsds, 0.0);
  EXPECT_TRUE(out.report.boosted_set.empty());
  EXPECT_EQ(out.dist, apply_strategy(d, DecodingStrategy::nucleus(0.9)));
}

TEST(TabooStep, ShortSequenceFallsBackWithWarning) {
  const auto m = planted(TokenDistribution{0.6, 0.3, 0.1}, TokenDistribution{0.2, 0.5, 0.3});
  const auto out = taboo_step(seq(32, 3), cfg_with(2.0), *m);
  EXPECT_TRUE(out.report.warning.has_value());
  EXPECT_FALSE(out.report.lsds.has_value());
  EXPECT_EQ(out.dist, apply_strategy(TokenDistribution({0.6, 0.3, 0.1}), DecodingStrategy::nucleus(0.9)));
}

TEST(TabooStep, GateIsInclusiveOfGamma) {
  const auto m = planted(TokenDistribution{0.6, 0.3, 0.1}, TokenDistribution{0.2, 0.5, 0.3});
  auto c = cfg_with(2.0, DecodingStrategy::nucleus(1.0));
  const double lsds_value = *taboo_step(seq(40, 3), c, *m).report.lsds;
  c.gamma = lsds_value;
  EXPECT_TRUE(taboo_step(seq(40, 3), c, *m).report.boosted_set.empty());
  c.gamma = std::nextafter(lsds_value, 0.0);
  EXPECT_FALSE(taboo_step(seq(40, 3), c, *m).report.boosted_set.empty());
}

TEST(TabooStep, NucleusReTruncationCanDropBoostedToken) {
  // nucleus 0.7 keeps {0, 1}; after boosting both, token 0 alone holds 6/8.2 > 0.7
  const TokenDistribution raw{0.6, 0.2, 0.2};
  const auto strategy = DecodingStrategy::nucleus(0.7);
  EXPECT_EQ(selected_tokens(raw, strategy).size(), 2u);
  const auto out = boost(raw, SupportSet{0, 1}, 10.0, strategy);
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(BoostConfig, Validation) {
  EXPECT_NO_THROW(cfg_with(1.0).validate());
  EXPECT_THROW(cfg_with(0.5).validate(), ConfigError);
  EXPECT_THROW(cfg_with(kInf).validate(), ConfigError);
  auto c = cfg_with(2.0);
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.epsilon = 0.05;
  c.gamma = kInf;
  EXPECT_NO_THROW(c.validate());
  c.gamma = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TabooProperty, LambdaOneIsVanilla) {
  CounterRng rng(51);
  for (int i = 0; i < 200; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 30));
    const TokenDistribution near(oracle::random_sparse_simplex(rng, n));
    const TokenDistribution far(oracle::random_sparse_simplex(rng, n));
    const auto m = planted(near, far);
    const double p = 0.3 + 0.7 * rng.next_double();
    auto c = cfg_with(1.0, DecodingStrategy::nucleus(p));
    c.gamma = 0.0;
    c.epsilon = 1e-9;
    const auto out = taboo_step(seq(40, static_cast<TokenId>(n)), c, *m);
    expect_close(out.dist, apply_strategy(far, c.strategy), 1e-12);
  }
}

TEST(TabooProperty, ConservationGateSoundnessAndLargeEpsilon) {
  CounterRng rng(52);
  for (int i = 0; i < 300; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 30));
    const TokenDistribution near(oracle::random_sparse_simplex(rng, n));
    const TokenDistribution far(oracle::random_sparse_simplex(rng, n));
    const auto m = planted(near, far);
    const auto s = seq(40, static_cast<TokenId>(n));
    auto c = cfg_with(1.0 + 9.0 * rng.next_double(), DecodingStrategy::nucleus(0.5 + 0.5 * rng.next_double()));
    c.gamma = 0.3 * rng.next_double();
    c.epsilon = 0.01 + 0.2 * rng.next_double();
    const auto out = taboo_step(s, c, *m);
    EXPECT_NEAR(total(out.dist), 1.0, 1e-9);
    if (*out.report.lsds <= c.gamma) {
      EXPECT_TRUE(out.report.boosted_set.empty());
    }
    // no decoded probability can rise by 1 or more
    c.epsilon = 1.0;
    EXPECT_EQ(taboo_step(s, c, *m).dist, apply_strategy(far, c.strategy));
  }
}

TEST(TabooProperty, SingleBoostedTokenStaysInSupport) {
  CounterRng rng(53);
  for (int i = 0; i < 300; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 12));
    const auto raw = oracle::random_simplex(rng, n);
    const auto strategy = DecodingStrategy::nucleus(0.3 + 0.7 * rng.next_double());
    const TokenDistribution d(raw);
    const auto keep = selected_tokens(d, strategy);
    const TokenId t = keep[rng.uniform_int(0, keep.size() - 1)];
    const auto out = boost(d, SupportSet{t}, 1.0 + 20.0 * rng.next_double(), strategy);
    EXPECT_GT(out[static_cast<std::size_t>(t)], 0.0);
  }
}

TEST(TabooProperty, BoostingNeverWorsensRankOfBoostedTokens) {
  CounterRng rng(54);
  auto rank = [](const TokenDistribution& d, TokenId t) {
    std::size_t above = 0;
    for (double v : d.probs()) above += v > d[static_cast<std::size_t>(t)];
    return above;
  };
  for (int i = 0; i < 200; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(3, 20));
    const TokenDistribution d(oracle::random_simplex(rng, n));
    std::vector<TokenId> b;
    for (std::size_t t = 0; t < n; ++t)
      if (rng.next_double() < 0.3) b.push_back(static_cast<TokenId>(t));
    if (b.empty()) b.push_back(0);
    const SupportSet boosted(b);
    double lambda = 1.0;
    auto prev = boost(d, boosted, lambda, DecodingStrategy::nucleus(1.0));
    for (int k = 0; k < 6; ++k) {
      lambda *= 1.0 + 3.0 * rng.next_double();
      const auto next = boost(d, boosted, lambda, DecodingStrategy::nucleus(1.0));
      for (TokenId t : boosted) EXPECT_LE(rank(next, t), rank(prev, t));
      prev = next;
    }
  }
}

TEST(TabooProperty, BestScenarioWinsForLargeLambda) {
  CounterRng rng(55);
  for (int i = 0; i < 200; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(3, 20));
    const TokenDistribution d(oracle::random_simplex(rng, n));
    const auto t_hat = static_cast<TokenId>(rng.uniform_int(0, n - 1));
    // B holds t_hat and only tokens less probable than it
    std::vector<TokenId> b{t_hat};
    for (std::size_t t = 0; t < n; ++t)
      if (d[t] < d[static_cast<std::size_t>(t_hat)] && rng.next_double() < 0.5) b.push_back(static_cast<TokenId>(t));
    const SupportSet boosted(b);
    ASSERT_EQ(scenario(t_hat, boosted, d), Scenario::best);
    EXPECT_EQ(top1(boost(d, boosted, 1e9, DecodingStrategy::nucleus(0.9))), t_hat);
  }
}

TEST(Cad, AlphaZeroIsVanilla) {
  CounterRng rng(56);
  for (int i = 0; i < 100; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 30));
    const ShortFull raw{TokenDistribution(oracle::random_sparse_simplex(rng, n)),
                        TokenDistribution(oracle::random_sparse_simplex(rng, n))};
    expect_close(cad_reweight(raw, 0.0, DecodingStrategy::nucleus(0.9)),
                 apply_strategy(raw.full_ctx, DecodingStrategy::nucleus(0.9)), 1e-12);
  }
}

TEST(Cad, ClosedForm) {
  const ShortFull raw{TokenDistribution{0.9, 0.1}, TokenDistribution{0.5, 0.5}};
  const auto d = cad_reweight(raw, 1.0, DecodingStrategy::nucleus(1.0));
  EXPECT_NEAR(d[0], 0.1, 1e-12);
  EXPECT_NEAR(d[1], 0.9, 1e-12);
}

TEST(Cad, MatchesLogSpaceEvaluation) {
  CounterRng rng(57);
  for (int i = 0; i < 300; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 40));
    const auto full = oracle::random_sparse_simplex(rng, n);
    const auto shrt = oracle::random_sparse_simplex(rng, n);
    const double alpha = 2.0 * rng.next_double();
    const auto d = cad_reweight({TokenDistribution(shrt), TokenDistribution(full)}, alpha,
                                DecodingStrategy::nucleus(1.0));
    const auto ref = oracle::cad_ref(full, shrt, alpha);
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(d[t], ref[t], 1e-9);
  }
}

TEST(Cad, ContinuousInAlpha) {
  CounterRng rng(58);
  for (int i = 0; i < 200; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 40));
    auto floored = [&] {
      auto p = oracle::random_simplex(rng, n);
      for (auto& v : p) v = std::max(v, 1e-6);
      return TokenDistribution::normalized(p);
    };
    const ShortFull raw{floored(), floored()};
    const double alpha = 2.0 * rng.next_double();
    const auto a = cad_reweight(raw, alpha, DecodingStrategy::nucleus(1.0));
    const auto b = cad_reweight(raw, alpha + 1e-6, DecodingStrategy::nucleus(1.0));
    double l1 = 0.0;
    for (std::size_t t = 0; t < n; ++t) l1 += std::fabs(a[t] - b[t]);
    EXPECT_LE(l1, 1e-3);
  }
}

TEST(Cad, RejectsNegativeAlpha) {
  const ShortFull raw{TokenDistribution{0.9, 0.1}, TokenDistribution{0.5, 0.5}};
  EXPECT_THROW(cad_reweight(raw, -0.1, DecodingStrategy::greedy()), ConfigError);
}

TEST(Generate, PointMassIsSeedIndependent) {
  const auto m = planted(TokenDistribution::point_mass(20, 7), TokenDistribution::point_mass(20, 7));
  GenerationConfig cfg;
  const auto prompt = seq(10, 20);
  const auto a = generate(prompt, 8, cfg, 1, *m);
  const auto b = generate(prompt, 8, cfg, 99, *m);
  EXPECT_EQ(a.tokens, std::vector<TokenId>(8, 7));
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.reports.size(), 8u);
  EXPECT_EQ(a.reports[3].step, 3u);
  EXPECT_EQ(a.reports[3].chosen, 7);
}

TEST(Generate, SameSeedSameOutput) {
  MockBackend::Options o;
  o.vocab_size = 50;
  const NeedleMock m(o, 49, 0.6, 48);
  for (Method method : {Method::vanilla, Method::cad, Method::taboo}) {
    GenerationConfig cfg;
    cfg.method = method;
    cfg.boost.lambda = 3.0;
    const auto prompt = seq(60, 40);
    const auto a = generate(prompt, 20, cfg, 7, m);
    const auto b = generate(prompt, 20, cfg, 7, m);
    EXPECT_EQ(a.tokens, b.tokens) << to_string(method);
    EXPECT_FALSE(a.error.has_value());
  }
}

TEST(Generate, TabooWithInfiniteGammaMatchesVanilla) {
  MockBackend::Options o;
  o.vocab_size = 50;
  const NeedleMock m(o, 49, 0.6, 48);
  auto prompt = seq(60, 40);
  prompt[10] = 49;
  prompt[11] = 17;
  GenerationConfig vanilla;
  GenerationConfig taboo;
  taboo.method = Method::taboo;
  taboo.boost.gamma = kInf;
  taboo.boost.lambda = 10.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    EXPECT_EQ(generate(prompt, 30, vanilla, seed, m).tokens, generate(prompt, 30, taboo, seed, m).tokens);
}

TEST(Generate, StopsOnEndOfSequence) {
  // from 8 visible tokens on, the model emits the terminator
  const auto m = planted(TokenDistribution::point_mass(20, 3), TokenDistribution::point_mass(20, 10), 8, 10);
  const auto r = generate(seq(5, 20), 50, GenerationConfig{}, 0, *m);
  EXPECT_EQ(r.tokens, (std::vector<TokenId>{3, 3, 3, 10}));
  EXPECT_TRUE(r.stopped_on_eos);
}

TEST(Generate, BackendFailureKeepsTokensSoFar) {
  auto flaky = std::make_shared<FlakyBackend>(
      planted(TokenDistribution::point_mass(20, 7), TokenDistribution::point_mass(20, 7)), 3);
  const auto r = generate(seq(5, 20), 10, GenerationConfig{}, 0, *flaky);
  EXPECT_EQ(r.tokens.size(), 3u);
  ASSERT_TRUE(r.error.has_value());
  EXPECT_EQ(r.error_code, ExitCode::backend);
}

TEST(Generate, RejectsBadArguments) {
  const auto m = planted(TokenDistribution::point_mass(20, 7), TokenDistribution::point_mass(20, 7));
  EXPECT_THROW(generate(seq(5, 20), 0, GenerationConfig{}, 0, *m), ConfigError);
  EXPECT_THROW(generate({}, 5, GenerationConfig{}, 0, *m), DataError);
  EXPECT_EQ(parse_method("taboo"), Method::taboo);
  EXPECT_THROW(parse_method("beam"), ConfigError);
}
