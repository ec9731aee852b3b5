#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace gesturelab;

namespace {

struct Instance {
  Matrix x;
  std::vector<int> y;
  KernelParams params;
};

Instance random_instance(std::mt19937_64& gen, std::size_t n, std::size_t d) {
  Instance inst;
  inst.x = testutil::random_matrix(gen, n, d);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) inst.y.push_back(coin(gen) ? 1 : -1);
  inst.y[0] = 1;
  inst.y[1] = -1;
  std::uniform_real_distribution<double> lc(-1.0, 2.0), lg(-1.5, 0.5);
  inst.params = {std::pow(10.0, lc(gen)), std::pow(10.0, lg(gen))};
  return inst;
}

oracle::Dense kernel_matrix(const Matrix& x, double gamma) {
  const auto rows = testutil::to_dense(x);
  oracle::Dense k(rows.size(), std::vector<double>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) k[i][j] = oracle::rbf(rows[i], rows[j], gamma);
  return k;
}

/// Brute-force kernel expansion of a model over its own stored support vectors.
double expansion(const BinarySvmModel& m, std::span<const double> x) {
  double s = m.bias;
  for (std::size_t i = 0; i < m.dual_coefs.size(); ++i) {
    const auto sv = m.support_vectors.row(i);
    s += m.dual_coefs[i] * oracle::rbf({sv.begin(), sv.end()}, {x.begin(), x.end()}, m.params.gamma);
  }
  return s;
}

}  // namespace

TEST(Rbf, Examples) {
  const std::vector<double> x{1.0, 2.0, 3.0}, y{1.0, 2.0, 4.0};
  EXPECT_EQ(rbf_kernel(x, x, 0.7), 1.0);
  EXPECT_NEAR(rbf_kernel(x, y, 1.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(rbf_kernel(x, y, 1.0), 0.36788, 1e-5);
  double prev = 0.0;
  for (double g : {10.0, 1.0, 0.1, 0.01, 0.001}) {
    const double v = rbf_kernel(x, y, g);
    EXPECT_GT(v, prev);
    EXPECT_LE(v, 1.0);
    prev = v;
  }
  EXPECT_EQ(rbf_kernel(x, y, 0.3), rbf_kernel(y, x, 0.3));
  try {
    rbf_kernel(x, std::vector<double>{1.0}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Rbf, KernelMatrixIsPsd) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = testutil::random_matrix(gen, 20, 3);
    const auto ev = oracle::jacobi_eigen(kernel_matrix(x, 0.5));
    EXPECT_GE(ev.values.back(), -1e-8);
  }
}

TEST(SquaredDistance, TrailingZerosAndSymmetry) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = testutil::random_matrix(gen, 2, 1 + trial);
    std::vector<double> a(x.row(0).begin(), x.row(0).end()), b(x.row(1).begin(), x.row(1).end());
    const double d = squared_distance(a, b);
    EXPECT_EQ(d, squared_distance(b, a));
    a.resize(a.size() + 1 + trial % 7, 0.0);
    b.resize(b.size() + 1 + trial % 7, 0.0);
    EXPECT_EQ(squared_distance(a, b), d);
  }
}

TEST(BinarySvm, TwoPoints) {
  const Matrix x = Matrix::from_rows({{0.0, 0.0}, {1.0, 1.0}});
  const std::vector<int> y{1, -1};
  const auto m = train_binary(x, y, {1.0, 1.0});
  EXPECT_EQ(m.dual_coefs.size(), 2u);
  EXPECT_GT(m.decision_value(x.row(0)), 0.0);
  EXPECT_LT(m.decision_value(x.row(1)), 0.0);
  EXPECT_TRUE(m.converged);
}

TEST(BinarySvm, Xor) {
  const Matrix x = Matrix::from_rows({{0, 0}, {1, 1}, {0, 1}, {1, 0}});
  const std::vector<int> y{1, 1, -1, -1};
  const auto m = train_binary(x, y, {1000.0, 1.0});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m.decision_value(x.row(i)) > 0.0, y[i] > 0) << i;
}

TEST(BinarySvm, Errors) {
  const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {2.0}});
  try {
    train_binary(x, std::vector<int>{1, 1, 1}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClassData);
  }
  EXPECT_THROW(train_binary(x, std::vector<int>{1, 0, -1}, {}), Error);
  EXPECT_THROW(train_binary(x, std::vector<int>{1, -1}, {}), Error);
  EXPECT_THROW(train_binary(x, std::vector<int>{1, -1, 1}, {0.0, 1.0}), Error);
  EXPECT_THROW(train_binary(x, std::vector<int>{1, -1, 1}, {1.0, 1.0}, 0.0, 100), Error);
  const auto m = train_binary(x, std::vector<int>{1, -1, 1}, {});
  EXPECT_THROW(m.decision_value(std::vector<double>{1.0, 2.0}), Error);
}

TEST(BinarySvm, MatchesProjectedGradientOracle) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_instance(gen, 4 + trial % 9, 1 + trial % 4);
    const DataKernel kernel{&inst.x, inst.params.gamma};
    const auto sol = solve_smo(kernel, inst.y, inst.params.c);
    const auto ref = oracle::projected_gradient_dual(kernel_matrix(inst.x, inst.params.gamma), inst.y, inst.params.c);
    EXPECT_NEAR(sol.dual_objective, ref.objective, 1e-4) << "trial " << trial;
    EXPECT_LE(sol.dual_objective, ref.objective + 1e-9);
    double balance = 0.0;
    for (std::size_t i = 0; i < sol.alpha.size(); ++i) {
      EXPECT_GE(sol.alpha[i], 0.0);
      EXPECT_LE(sol.alpha[i], inst.params.c);
      balance += sol.alpha[i] * inst.y[i];
    }
    EXPECT_LE(std::abs(balance), 1e-8);
  }
}

TEST(BinarySvm, ModelInvariants) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(gen, 30, 3);
    const auto m = train_binary(inst.x, inst.y, inst.params);
    ASSERT_GE(m.dual_coefs.size(), 1u);
    EXPECT_EQ(m.support_vectors.rows(), m.dual_coefs.size());
    double balance = 0.0;
    for (double c : m.dual_coefs) {
      EXPECT_LE(std::abs(c), inst.params.c + 1e-8);
      balance += c;
    }
    EXPECT_LE(std::abs(balance), 1e-8);

    for (std::size_t i = 0; i < inst.x.rows(); ++i) {
      const double v = m.decision_value(inst.x.row(i));
      EXPECT_NEAR(v, expansion(m, inst.x.row(i)), 1e-12);
      EXPECT_TRUE(std::isfinite(v));
    }
    // Free support vectors sit on the margin.
    for (std::size_t k = 0; k < m.dual_coefs.size(); ++k) {
      const double a = std::abs(m.dual_coefs[k]);
      if (a > 1e-6 && a < inst.params.c - 1e-6)
        EXPECT_NEAR(std::abs(m.decision_value(m.support_vectors.row(k))), 1.0, 1e-3);
    }
  }
}

TEST(BinarySvm, SupportVectorOrderDoesNotMatter) {
  std::mt19937_64 gen(5);
  const auto inst = random_instance(gen, 25, 2);
  const auto m = train_binary(inst.x, inst.y, inst.params);
  BinarySvmModel r = m;
  const std::size_t k = m.dual_coefs.size();
  r.support_vectors = Matrix(k, m.support_vectors.cols());
  for (std::size_t i = 0; i < k; ++i) {
    std::copy(m.support_vectors.row(k - 1 - i).begin(), m.support_vectors.row(k - 1 - i).end(),
              r.support_vectors.row(i).begin());
    r.dual_coefs[i] = m.dual_coefs[k - 1 - i];
  }
  const Matrix probe = testutil::random_matrix(gen, 20, 2);
  for (std::size_t i = 0; i < 20; ++i)
    EXPECT_NEAR(m.decision_value(probe.row(i)), r.decision_value(probe.row(i)), 1e-12);
}

TEST(BinarySvm, SeparableTrainingAccuracy) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto [x, labels] = testutil::blobs(gen, 2, 15, 2, 0.4);
    std::vector<int> y;
    for (int l : labels) y.push_back(l == 0 ? 1 : -1);
    const auto m = train_binary(x, y, {1000.0, 0.5});
    bool zero_slack = true;
    for (std::size_t i = 0; i < x.rows(); ++i)
      zero_slack = zero_slack && y[i] * m.decision_value(x.row(i)) >= 1.0 - 1e-3;
    if (!zero_slack) continue;
    for (std::size_t i = 0; i < x.rows(); ++i) EXPECT_EQ(m.decision_value(x.row(i)) > 0.0, y[i] > 0);
  }
}

TEST(BinarySvm, CacheModesAreBitIdentical) {
  std::mt19937_64 gen(7);
  const auto inst = random_instance(gen, 60, 3);
  SmoOptions dense, lru;
  lru.dense_cache_limit = 0;
  lru.row_cache_rows = 3;
  const DataKernel kernel{&inst.x, inst.params.gamma};
  const auto a = solve_smo(kernel, inst.y, inst.params.c, dense);
  const auto b = solve_smo(kernel, inst.y, inst.params.c, lru);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.bias, b.bias);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(BinarySvm, IterationBudgetFlagsNonConvergence) {
  std::mt19937_64 gen(8);
  const auto inst = random_instance(gen, 40, 2);
  const auto m = train_binary(inst.x, inst.y, {100.0, 1.0}, 1e-3, 2);
  EXPECT_FALSE(m.converged);
  EXPECT_EQ(m.iterations, 2u);
}

TEST(BinarySvm, DistanceTableKernelMatchesDirect) {
  std::mt19937_64 gen(9);
  const auto inst = random_instance(gen, 30, 4);
  const auto table = DistanceTable::pairwise(inst.x);
  std::vector<std::size_t> rows(30);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto via_table = train_binary_with(SubsetKernel{&table, rows, inst.params.gamma}, inst.y, inst.params, {},
                                           rows, &inst.x);
  const auto direct = train_binary(inst.x, inst.y, inst.params);
  EXPECT_EQ(via_table.dual_coefs, direct.dual_coefs);
  EXPECT_EQ(via_table.bias, direct.bias);
}

TEST(BinarySvm, JsonRoundTripIsExact) {
  std::mt19937_64 gen(10);
  const auto inst = random_instance(gen, 20, 3);
  const auto m = train_binary(inst.x, inst.y, inst.params);
  const auto back = nlohmann::json::parse(nlohmann::json(m).dump()).get<BinarySvmModel>();
  EXPECT_EQ(back.support_vectors, m.support_vectors);
  EXPECT_EQ(back.dual_coefs, m.dual_coefs);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.params, m.params);
}
