#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "advdev/deviation.hpp"
#include "advdev/io.hpp"
#include "support.hpp"

namespace advdev {
namespace {

using testing::random_tensor;

RepresentationSet from_rows(const std::vector<std::vector<std::vector<double>>>& per_checkpoint) {
  RepresentationSet reps;
  const std::size_t n = per_checkpoint.at(0).size();
  for (std::size_t i = 0; i < n; ++i) reps.image_ids.push_back(i);
  for (std::size_t k = 0; k < per_checkpoint.size(); ++k) {
    reps.checkpoints.push_back(k + 1);
    RepresentationMatrix m;
    m.rows = n;
    m.dim = per_checkpoint[k].at(0).size();
    for (const auto& row : per_checkpoint[k]) m.data.insert(m.data.end(), row.begin(), row.end());
    reps.matrices.push_back(std::move(m));
  }
  return reps;
}

RepresentationSet random_reps(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
  for (auto& r : rows)
    for (double& v : r) v = rng.uniform(-2, 2);
  return from_rows({rows});
}

double brute_mean(const RepresentationSet& reps, Metric metric) {
  const RepresentationMatrix& m = reps.matrices[0];
  long double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.rows; ++j) {
      if (j <= i) continue;
      long double d = 0.0;
      if (metric == Metric::euclidean) {
        for (std::size_t k = 0; k < m.dim; ++k) {
          const long double t = m.data[i * m.dim + k] - m.data[j * m.dim + k];
          d += t * t;
        }
        d = std::sqrt(d);
      } else {
        long double uv = 0, uu = 0, vv = 0;
        for (std::size_t k = 0; k < m.dim; ++k) {
          uv += static_cast<long double>(m.data[i * m.dim + k]) * m.data[j * m.dim + k];
          uu += static_cast<long double>(m.data[i * m.dim + k]) * m.data[i * m.dim + k];
          vv += static_cast<long double>(m.data[j * m.dim + k]) * m.data[j * m.dim + k];
        }
        d = 1.0L - uv / std::sqrt(uu * vv);
      }
      total += d;
      ++pairs;
    }
  return static_cast<double>(total / pairs);
}

TEST(Distance, Examples) {
  const std::vector<double> o{0, 0}, p{3, 4};
  EXPECT_EQ(distance(o, p, Metric::euclidean), 5.0);
  const std::vector<double> e1{1, 0}, e2{0, 1}, a{1, 1}, b{2, 2}, neg{-1, 0};
  EXPECT_EQ(distance(e1, e2, Metric::cosine), 1.0);
  EXPECT_NEAR(distance(a, b, Metric::cosine), 0.0, 1e-15);
  EXPECT_EQ(distance(e1, neg, Metric::cosine), 2.0);
  const std::vector<double> h1{0, 0, 1, 0}, h2{1, 0, 0, 0};
  EXPECT_EQ(distance(h1, h2, Metric::euclidean), std::numbers::sqrt2);
  EXPECT_EQ(distance(h1, h2, Metric::cosine), 1.0);
  EXPECT_THROW(distance(e1, h1, Metric::euclidean), Error);
}

TEST(Distance, ZeroVectorConvention) {
  const std::vector<double> z{0, 0}, u{1, 2};
  std::size_t hits = 0;
  EXPECT_EQ(distance(z, z, Metric::cosine, hits), 0.0);
  EXPECT_EQ(distance(z, u, Metric::cosine, hits), 1.0);
  EXPECT_EQ(distance(u, z, Metric::cosine, hits), 1.0);
  EXPECT_EQ(hits, 3u);
  EXPECT_EQ(distance(u, u, Metric::cosine, hits), 0.0);
  EXPECT_EQ(hits, 3u);
}

TEST(Distance, MetricAxioms) {
  Rng rng(40);
  for (int t = 0; t < 200; ++t) {
    const Tensor u = random_tensor({12}, rng), v = random_tensor({12}, rng), w = random_tensor({12}, rng);
    for (Metric m : {Metric::euclidean, Metric::cosine}) {
      EXPECT_NEAR(distance(u.values(), u.values(), m), 0.0, 1e-15);
      EXPECT_EQ(distance(u.values(), v.values(), m), distance(v.values(), u.values(), m));
      const double d = distance(u.values(), v.values(), m);
      EXPECT_GE(d, 0.0);
      if (m == Metric::cosine) EXPECT_LE(d, 2.0);
    }
    EXPECT_LE(distance(u.values(), w.values(), Metric::euclidean),
              distance(u.values(), v.values(), Metric::euclidean) +
                  distance(v.values(), w.values(), Metric::euclidean) + 1e-12);
  }
}

TEST(Distance, CosineIgnoresPositiveScaling) {
  Rng rng(41);
  const Tensor u = random_tensor({9}, rng), v = random_tensor({9}, rng);
  Tensor su = u;
  for (double& x : su.values()) x *= 7.5;
  EXPECT_NEAR(distance(su.values(), v.values(), Metric::cosine),
              distance(u.values(), v.values(), Metric::cosine), 1e-14);
}

TEST(PairCount, Values) {
  EXPECT_EQ(pair_count(9267), 42934011u);
  EXPECT_EQ(pair_count(2), 1u);
  EXPECT_EQ(pair_count(1), 0u);
  EXPECT_EQ(pair_count(0), 0u);
}

TEST(PairwiseSum, MatchesExactSumOfIntegers) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  EXPECT_EQ(pairwise_sum(v), 499500.0);
}

TEST(Normalization, HandComputedExample) {
  const RepresentationSet reps = from_rows({{{0, 0}, {3, 4}, {6, 8}}});
  const NormalizationConstants c = normalization_constants(reps, Metric::euclidean);
  EXPECT_NEAR(c.at(1), 20.0 / 3.0, 1e-15);
  EXPECT_EQ(c.pairs_used, 3u);
  EXPECT_TRUE(c.exhaustive);
  EXPECT_EQ(c.sample_size, 3u);
}

TEST(Normalization, MatchesBruteForce) {
  Rng rng(42);
  for (std::size_t n : {3u, 50u, 200u}) {
    const RepresentationSet reps = random_reps(n, 17, rng);
    for (Metric m : {Metric::euclidean, Metric::cosine}) {
      EXPECT_NEAR(normalization_constants(reps, m).at(1), brute_mean(reps, m), 1e-9);
    }
  }
}

TEST(Normalization, Degenerate) {
  const RepresentationSet same = from_rows({{{1, 2}, {1, 2}, {1, 2}}});
  try {
    normalization_constants(same, Metric::euclidean);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate checkpoint 1"), std::string::npos);
  }
  EXPECT_THROW(normalization_constants(from_rows({{{1, 2}}}), Metric::euclidean), Error);
}

TEST(Normalization, SampledMode) {
  Rng rng(43);
  const RepresentationSet reps = random_reps(40, 5, rng);
  const auto full = normalization_constants(reps, Metric::euclidean);
  const auto same = normalization_constants(reps, Metric::euclidean, pair_count(40), 9);
  EXPECT_EQ(full.values, same.values);
  EXPECT_TRUE(same.exhaustive);
  const auto a = normalization_constants(reps, Metric::euclidean, 200, 9);
  const auto b = normalization_constants(reps, Metric::euclidean, 200, 9);
  const auto c = normalization_constants(reps, Metric::euclidean, 200, 10);
  EXPECT_FALSE(a.exhaustive);
  EXPECT_EQ(a.pairs_used, 200u);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  EXPECT_NEAR(a.values[0], full.values[0], 0.1 * full.values[0]);
}

TEST(Normalization, ScaleBehaviour) {
  Rng rng(44);
  const RepresentationSet clean = random_reps(20, 6, rng);
  RepresentationSet adv = random_reps(20, 6, rng);
  RepresentationSet clean2 = clean, adv2 = adv;
  for (double& v : clean2.matrices[0].data) v *= 3.5;
  for (double& v : adv2.matrices[0].data) v *= 3.5;
  const std::vector<bool> all(20, true);
  const auto c1 = normalization_constants(clean, Metric::euclidean);
  const auto c2 = normalization_constants(clean2, Metric::euclidean);
  EXPECT_NEAR(c2.at(1), 3.5 * c1.at(1), 1e-9);
  const DeviationTable t1 = compute_deviations(clean, adv, c1, all, "x");
  const DeviationTable t2 = compute_deviations(clean2, adv2, c2, all, "x");
  for (std::size_t i = 0; i < t1.rows.size(); ++i) {
    EXPECT_NEAR(t2.rows[i].raw, 3.5 * t1.rows[i].raw, 1e-9);
    EXPECT_NEAR(t2.rows[i].normalized, t1.rows[i].normalized, 1e-9);
  }
}

TEST(Deviations, IdenticalInputsGiveZero) {
  Rng rng(45);
  const RepresentationSet reps = random_reps(5, 4, rng);
  const auto c = normalization_constants(reps, Metric::euclidean);
  const DeviationTable t = compute_deviations(reps, reps, c, std::vector<bool>(5, true), "a");
  ASSERT_EQ(t.rows.size(), 5u);
  for (const DeviationRow& r : t.rows) EXPECT_EQ(r.raw, 0.0);
}

TEST(Deviations, HandOracle) {
  const RepresentationSet clean = from_rows({{{0, 0}, {4, 0}}, {{1, 0, 0}, {0, 1, 0}}});
  const RepresentationSet adv = from_rows({{{3, 4}, {4, 0}}, {{0, 0, 1}, {0, 1, 0}}});
  const auto ce = normalization_constants(clean, Metric::euclidean);
  EXPECT_EQ(ce.at(1), 4.0);
  EXPECT_EQ(ce.at(2), std::numbers::sqrt2);
  const DeviationTable t = compute_deviations(clean, adv, ce, {true, false}, "bim");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].image_id, 0u);
  EXPECT_EQ(t.rows[0].checkpoint, 1u);
  EXPECT_EQ(t.rows[0].raw, 5.0);
  EXPECT_EQ(t.rows[0].normalized, 1.25);
  EXPECT_EQ(t.rows[1].checkpoint, 2u);
  EXPECT_EQ(t.rows[1].raw, std::numbers::sqrt2);
  EXPECT_EQ(t.rows[1].normalized, 1.0);
  EXPECT_EQ(t.attack, "bim");
  EXPECT_TRUE(t.success_filtered);
}

TEST(Deviations, RejectsMisalignment) {
  Rng rng(46);
  const RepresentationSet a = random_reps(4, 3, rng);
  RepresentationSet b = random_reps(4, 3, rng);
  const auto c = normalization_constants(a, Metric::euclidean);
  EXPECT_THROW(compute_deviations(a, b, c, {true, true, true}, "x"), Error);
  b.image_ids[2] = 99;
  EXPECT_THROW(compute_deviations(a, b, c, std::vector<bool>(4, true), "x"), Error);
  NormalizationConstants missing = c;
  missing.checkpoints = {7};
  EXPECT_THROW(compute_deviations(a, a, missing, std::vector<bool>(4, true), "x"), Error);
}

TEST(Extract, SmallNetLengthsAndDuplicates) {
  const Model m = build_model(ArchitectureSpec::small_net(), 2);
  Dataset d = generate_synthetic(2, 1, 3);
  d.images.push_back(d.images[0]);
  d.labels.push_back(d.labels[0]);
  d.ids.push_back(7);
  const RepresentationSet reps = extract_representations(m, d);
  std::vector<std::size_t> dims;
  for (const auto& mat : reps.matrices) dims.push_back(mat.dim);
  EXPECT_EQ(dims, (std::vector<std::size_t>{3072, 16384, 8192, 4096, 64, 10, 10, 10}));
  EXPECT_EQ(reps.image_ids, (std::vector<std::size_t>{0, 1, 7}));
  for (const auto& mat : reps.matrices) {
    EXPECT_EQ(mat.rows, 3u);
    EXPECT_TRUE(std::equal(mat.row(0).begin(), mat.row(0).end(), mat.row(2).begin()));
  }
  const RepresentationSet some = extract_representations(m, d, {6, 2});
  EXPECT_EQ(some.checkpoints, (std::vector<std::size_t>{2, 6}));
  EXPECT_THROW(extract_representations(m, d, {9}), Error);
}

TEST(Kde, ScottFactor) {
  EXPECT_NEAR(scott_factor(100), 0.398107, 1e-6);
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_NEAR(scott_bandwidth(s), std::sqrt(5.0 / 3.0) * std::pow(4.0, -0.2), 1e-15);
}

TEST(Kde, SymmetricSamplesGiveSymmetricDensity) {
  const std::vector<double> s{-3, -1, -0.5, 0.5, 1, 3};
  const KdeCurve k = kde(s, 101);
  ASSERT_EQ(k.grid.size(), 101u);
  EXPECT_EQ(k.grid.front(), -3.0);
  EXPECT_EQ(k.grid.back(), 3.0);
  for (std::size_t i = 0; i < 101; ++i) EXPECT_NEAR(k.density[i], k.density[100 - i], 1e-14);
  for (std::size_t i = 1; i < 101; ++i) EXPECT_GT(k.grid[i], k.grid[i - 1]);
}

TEST(Kde, IntegratesToOneOnExtendedGrid) {
  Rng rng(47);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> s(30 + 20 * t);
    for (double& v : s) v = t % 2 ? rng.normal() : rng.uniform(0, 4);
    const double h = scott_bandwidth(s);
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    std::vector<double> grid;
    const std::size_t pts = 2000;
    for (std::size_t i = 0; i < pts; ++i) {
      grid.push_back(*lo - 5 * h + (*hi - *lo + 10 * h) * static_cast<double>(i) / (pts - 1));
    }
    const std::vector<double> dens = kde_evaluate(s, h, grid);
    double area = 0.0;
    for (std::size_t i = 1; i < pts; ++i) area += 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
    EXPECT_NEAR(area, 1.0, 0.02);
  }
}

TEST(Kde, Degenerate) {
  const std::vector<double> one{1.0}, flat{2, 2, 2};
  EXPECT_THROW(kde(one), Error);
  EXPECT_THROW(kde(flat), Error);
}

TEST(Summarize, GroupsMeansAndPointMass) {
  DeviationTable t;
  t.attack = "cw";
  for (std::size_t i = 0; i < 3; ++i) {
    t.rows.push_back({i, 1, Metric::euclidean, 0.0, static_cast<double>(i + 1)});
    t.rows.push_back({i, 2, Metric::euclidean, 0.0, 0.75});
    t.rows.push_back({i, 1, Metric::cosine, 0.0, 0.5 * static_cast<double>(i)});
  }
  const auto s = summarize(t);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].metric, Metric::euclidean);
  EXPECT_EQ(s[0].checkpoint, 1u);
  EXPECT_EQ(s[0].mean, 2.0);
  EXPECT_EQ(s[0].count, 3u);
  EXPECT_FALSE(s[0].point_mass);
  EXPECT_EQ(s[0].kde.grid.size(), 100u);
  EXPECT_EQ(s[1].checkpoint, 2u);
  EXPECT_TRUE(s[1].point_mass);
  EXPECT_EQ(s[1].mean, 0.75);
  EXPECT_TRUE(s[1].kde.grid.empty());
  EXPECT_EQ(s[2].metric, Metric::cosine);
  for (const auto& g : s) {
    for (double d : g.kde.density) EXPECT_GE(d, 0.0);
  }
  EXPECT_THROW(summarize(DeviationTable{}), Error);
}

}  // namespace
}  // namespace advdev
