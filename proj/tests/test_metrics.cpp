#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "gradcf/error.hpp"
#include "gradcf/metrics.hpp"
#include "oracles.hpp"

namespace gradcf::metrics {
namespace {

using V = std::vector<double>;

TEST(Phi1, Examples) {
  EXPECT_EQ(phi1(V{0.1, 0.2}, V{0.1, 0.2}), 0u);
  EXPECT_EQ(phi1(V{0.0, 0.0}, V{0.0005, 0.5}), 1u);
  EXPECT_EQ(phi1(V{0.0}, V{0.001}), 1u);
  EXPECT_EQ(phi1(V{0.001}, V{0.0}), 1u);
  EXPECT_EQ(phi1(V{0.0}, V{std::nextafter(0.001, 0.0)}), 0u);
  EXPECT_THROW(phi1(V{0.0}, V{0.0, 1.0}), DimensionError);
}

TEST(Phi2, Examples) {
  EXPECT_EQ(phi2(V{1, 2}, V{1, 2}), 0.0);
  EXPECT_EQ(phi2(V{0, 0}, V{3, 4}), 5.0);
  EXPECT_THROW(phi2(V{0.0}, V{0.0, 1.0}), DimensionError);
}

TEST(Coherence, Examples) {
  const V xo{0, 0, 0}, xo_cf{1, 1, 1};
  const V x1{0.1, 0, 0}, x1_cf{1.2, 1, 1};
  std::vector<Neighbor> one{{x1, x1_cf}};
  EXPECT_NEAR(*coherence(xo, xo_cf, one, 3), 2.0, 1e-15);

  const V x2{0.2, 0, 0}, x2_cf{1.6, 1, 1};  // ratio 3.0
  const V x3{0, 0.2, 0}, x3_cf{1, 1.1, 1};  // ratio 0.5
  std::vector<Neighbor> two{{x2, x2_cf}, {x3, x3_cf}};
  EXPECT_NEAR(*coherence(xo, xo_cf, two, 3), 3.0, 1e-12);
  EXPECT_FALSE(coherence(xo, xo_cf, two, 0).has_value());
}

TEST(Coherence, ZeroDistanceNeighbourSkipped) {
  const V xo{0.5, 0.5}, xo_cf{0.9, 0.5};
  std::vector<Neighbor> self{{xo, xo_cf}};
  EXPECT_FALSE(coherence(xo, xo_cf, self, 3).has_value());
}

// Pairs drawn so that many differences fall right at the 0.001 boundary.
V random_near(std::mt19937_64& rng, const V& base) {
  V out = base;
  std::uniform_int_distribution<int> pick(0, 4);
  for (double& v : out) {
    switch (pick(rng)) {
      case 0: break;
      case 1: v += 0.0005; break;
      case 2: v = v + 0.001; break;
      case 3: v -= 0.25; break;
      default: v += std::uniform_real_distribution<double>(-1, 1)(rng);
    }
  }
  return out;
}

TEST(Oracles, ThousandRandomCasesMatchExactly) {
  std::mt19937_64 rng(2024);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t d = 1 + c % 12;
    const V a = oracle::random_vector(rng, d);
    const V b = random_near(rng, a);
    ASSERT_EQ(phi1(a, b), oracle::brute_phi1(a, b));
    ASSERT_EQ(phi2(a, b), oracle::brute_phi2(a, b));

    const V a_cf = random_near(rng, a);
    std::vector<V> xs, cfs;
    const int k = c % 6;
    for (int i = 0; i < k; ++i) {
      xs.push_back(random_near(rng, a));
      cfs.push_back(random_near(rng, a_cf));
    }
    std::vector<Neighbor> nb;
    for (int i = 0; i < k; ++i) nb.push_back({xs[i], cfs[i]});
    const std::size_t eps = c % 5;
    const auto got = coherence(a, a_cf, nb, eps);
    const auto want = oracle::brute_coherence(a, a_cf, xs, cfs, eps);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) ASSERT_EQ(*got, *want);
  }
}

TEST(Properties, Phi1SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  for (int c = 0; c < 300; ++c) {
    const V a = oracle::random_vector(rng, 7);
    const V b = random_near(rng, a);
    EXPECT_EQ(phi1(a, b), phi1(b, a));
    EXPECT_LE(phi1(a, b), 7u);
    EXPECT_EQ(phi1(a, a), 0u);
  }
}

TEST(Properties, Phi2TriangleInequality) {
  std::mt19937_64 rng(6);
  for (int c = 0; c < 1000; ++c) {
    const V a = oracle::random_vector(rng, 5, -3, 3);
    const V b = oracle::random_vector(rng, 5, -3, 3);
    const V z = oracle::random_vector(rng, 5, -3, 3);
    EXPECT_LE(phi2(a, z), phi2(a, b) + phi2(b, z) + 1e-9);
  }
}

TEST(Properties, CoherenceIsMaxOfRatios) {
  std::mt19937_64 rng(7);
  for (int c = 0; c < 200; ++c) {
    const V a = oracle::random_vector(rng, 4);
    const V a_cf = oracle::random_vector(rng, 4);
    std::vector<V> xs, cfs;
    for (int i = 0; i < 5; ++i) {
      xs.push_back(random_near(rng, a));
      cfs.push_back(oracle::random_vector(rng, 4));
    }
    std::vector<Neighbor> nb;
    for (int i = 0; i < 5; ++i) nb.push_back({xs[i], cfs[i]});
    const auto coh = coherence(a, a_cf, nb, 4);
    for (int i = 0; i < 5; ++i) {
      const double den = phi2(xs[i], a);
      if (den == 0.0) continue;
      ASSERT_TRUE(coh.has_value());
      EXPECT_GE(*coh, phi2(cfs[i], a_cf) / den);
    }
  }
}

TEST(Quartiles, LinearInterpolation) {
  const auto q = quartiles({4, 1, 3, 2, 5});
  EXPECT_EQ(q.min, 1.0);
  EXPECT_EQ(q.q1, 2.0);
  EXPECT_EQ(q.median, 3.0);
  EXPECT_EQ(q.q3, 4.0);
  EXPECT_EQ(q.max, 5.0);
  const auto q2 = quartiles({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(q2.q1, 1.75);
  EXPECT_DOUBLE_EQ(q2.median, 2.5);
  EXPECT_THROW(quartiles({}), ValidationError);
}

TEST(Summary, PopulationStd) {
  const V v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto s = summarize(v);
  EXPECT_EQ(s.mean, 5.0);
  EXPECT_EQ(s.std, 2.0);
  EXPECT_EQ(s.count, 8u);
}

TEST(LogitDivergence, SelfConsistency) {
  data::ReferenceLogitStats ref;
  ref.sample_logits = {{1, 0}, {3, 0}, {2, 2}};
  ref.mean_logits = {2, 2.0 / 3.0};
  ref.count = 3;
  const auto div = logit_divergence(ref.sample_logits, ref);
  double want = 0.0;
  for (const auto& z : ref.sample_logits) want += oracle::brute_phi2(z, ref.mean_logits);
  EXPECT_NEAR(div.mean_distance, want / 3.0, 1e-15);
  EXPECT_GT(div.mean_distance, 0.0);
  ASSERT_EQ(div.reference.size(), 2u);
  EXPECT_EQ(div.reference[0].max, 3.0);

  const std::vector<net::LogitVector> at_mean{ref.mean_logits};
  EXPECT_EQ(logit_divergence(at_mean, ref).mean_distance, 0.0);
  EXPECT_THROW(logit_divergence(std::vector<net::LogitVector>{}, ref), ValidationError);
}

struct Blobs {
  data::Dataset train, test;
  net::NetworkModel model;
};

const Blobs& blobs() {
  static const Blobs b = [] {
    Blobs out;
    std::tie(out.train, out.test) = data::synth_gaussian({10, 2, 200, 6.0, 7});
    const std::vector<std::size_t> widths{10, 32, 16, 2};
    out.model = net::make_mlp(widths, 7);
    net::train(out.model, out.train.views(), out.test.views(), {30, 32, 1e-3, 7});
    return out;
  }();
  return b;
}

BatchResult run_batch(std::size_t n, std::uint64_t seed, explain::Objective objective) {
  const auto& b = blobs();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * (b.test.size() / n);
  std::map<std::size_t, data::ReferenceLogitStats> cache;
  for (std::size_t t = 0; t < 2; ++t) cache[t] = data::sample_reference_set(b.train, b.model, t, 100, seed);
  BatchOptions opt;
  opt.method = explain::to_string(objective);
  opt.dataset = "synth";
  opt.config = explain::ExplainConfig::tabular();
  opt.config.objective = objective;
  opt.config.seed = seed;
  opt.epsilon = 10;
  return evaluate_batch(b.model, b.test, idx, next_class_policy(2),
                        [&](std::size_t t) -> const data::ReferenceLogitStats& { return cache.at(t); }, opt);
}

TEST(EvaluateBatch, HundredInstancesPopulateEveryMetric) {
  const auto r = run_batch(100, 11, explain::Objective::gradual);
  const auto& rep = r.report;
  ASSERT_EQ(rep.rows.size(), 100u);
  EXPECT_GT(rep.success_rate, 0.9);
  EXPECT_GT(rep.phi1.count, 0u);
  EXPECT_GT(rep.phi2.mean, 0.0);
  EXPECT_GT(rep.coherence.count, 0u);
  EXPECT_TRUE(std::isfinite(rep.coherence.mean));
  EXPECT_GT(rep.logit_distance.count, 0u);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    EXPECT_EQ(rep.rows[i].index, i * 4);
    const auto& s = r.sessions[i];
    EXPECT_LE(rep.rows[i].phi1, s.mask.count());
    EXPECT_EQ(rep.rows[i].phi1, oracle::brute_phi1(s.original.values, s.counterfactual.values));
  }
}

TEST(EvaluateBatch, SameSeedSameReport) {
  const auto a = run_batch(30, 5, explain::Objective::gradual);
  const auto b = run_batch(30, 5, explain::Objective::gradual);
  EXPECT_EQ(report_csv_row(a.report), report_csv_row(b.report));
  EXPECT_EQ(report_to_json(a.report).dump(), report_to_json(b.report).dump());
}

TEST(EvaluateBatch, EmptySubsetRejected) {
  EXPECT_THROW(run_batch(0, 1, explain::Objective::gradual), ValidationError);
}

TEST(EvaluateBatch, CsvShape) {
  const auto r = run_batch(10, 2, explain::Objective::ablation);
  EXPECT_EQ(report_csv_header(),
            "method,dataset,phi1_mean,phi1_std,phi2_mean,phi2_std,coherence_mean,coherence_std,logit_dist_mean,success_rate");
  const auto row = report_csv_row(r.report);
  EXPECT_EQ(row.rfind("ablation,synth,", 0), 0u);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 9);
}

TEST(Seeds, InstanceSeedsDiffer) {
  EXPECT_NE(instance_seed(1, 0), instance_seed(1, 1));
  EXPECT_NE(instance_seed(1, 0), instance_seed(2, 0));
  EXPECT_EQ(instance_seed(3, 4), instance_seed(3, 4));
}

}  // namespace
}  // namespace gradcf::metrics
