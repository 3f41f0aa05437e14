#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "demotune/autograd.hpp"
#include "demotune/error.hpp"
#include "demotune/random.hpp"
#include "oracles.hpp"

using namespace demotune;
using ag::Matrix;
using ag::Var;

namespace {

Matrix random(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Checks analytic gradients of a scalar builder against central differences
// for every entry of every input.
void check_gradients(std::vector<Var> inputs, const std::function<Var(const std::vector<Var>&)>& build) {
  auto loss = build(inputs);
  loss.backward();
  for (auto& in : inputs) {
    const Matrix analytic = in.grad();
    Matrix numeric(in.rows(), in.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      for (Eigen::Index c = 0; c < in.cols(); ++c) {
        numeric(r, c) = oracle::central_difference([&] { return build(inputs).item(); }, in.mutable_value(), r, c);
      }
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
    CHECK((analytic - numeric).norm() / scale < 1e-6);
  }
}

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  Rng rng(1);
  auto a = Var::parameter(random(rng, 3, 4));
  auto b = Var::parameter(random(rng, 4, 2));
  auto row = Var::parameter(random(rng, 1, 2));
  check_gradients({a, b, row}, [](const std::vector<Var>& v) {
    auto y = ag::gelu(ag::add_row(ag::matmul(v[0], v[1]), v[2]));
    return ag::sum(ag::hadamard(y, y)) * 0.5;
  });
}

TEST_CASE("layer norm, softmax and attention-style products") {
  Rng rng(2);
  auto x = Var::parameter(random(rng, 4, 6));
  auto g = Var::parameter(random(rng, 1, 6));
  auto b = Var::parameter(random(rng, 1, 6));
  auto w = Var::parameter(random(rng, 4, 6));
  check_gradients({x, g, b, w}, [](const std::vector<Var>& v) {
    auto n = ag::layer_norm(v[0], v[1], v[2]);
    auto s = ag::softmax_rows(ag::matmul_nt(n, v[3]));
    return ag::sum(ag::hadamard(s, ag::slice_cols(v[0], 0, 4)));
  });
}

TEST_CASE("row plumbing: gather, replace, concat, select") {
  Rng rng(3);
  auto table = Var::parameter(random(rng, 5, 3));
  auto inject = Var::parameter(random(rng, 2, 3));
  auto other = Var::parameter(random(rng, 2, 3));
  const std::vector<int> ids = {4, 1, 1, 0};
  const std::vector<int> positions = {2, 0};
  check_gradients({table, inject, other}, [&](const std::vector<Var>& v) {
    auto x = ag::replace_rows(ag::gather_rows(v[0], ids), positions, v[1]);
    std::vector<Var> parts = {x, v[2]};
    auto stacked = ag::concat_rows(parts);
    std::vector<Var> cols = {stacked, stacked};
    auto wide = ag::concat_cols(cols);
    const std::vector<int> pick = {0, 4, 5};
    auto picked = ag::select_cols(wide, pick);
    return ag::sum(ag::row_squared_norms(picked)) + ag::sum(ag::select_row(stacked, 5));
  });
}

TEST_CASE("normalisation and cross entropy") {
  Rng rng(4);
  auto x = Var::parameter(random(rng, 3, 5));
  const std::vector<int> targets = {1, 0, 4};
  check_gradients({x}, [&](const std::vector<Var>& v) {
    return ag::cross_entropy_rows(ag::l2_normalize_rows(v[0]) * 3.0, targets);
  });
}

TEST_CASE("mean and detach") {
  Rng rng(5);
  auto x = Var::parameter(random(rng, 2, 2));
  std::vector<Var> parts = {ag::sum(x), ag::sum(ag::hadamard(x, ag::detach(x)))};
  auto m = ag::mean(parts);
  m.backward();
  // d/dx [ (sum x + sum x*c) / 2 ] = (1 + c) / 2 with c held constant
  const Matrix expected = (Matrix::Ones(2, 2) + x.value()) * 0.5;
  CHECK((x.grad() - expected).norm() < 1e-12);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  auto x = Var::parameter(Matrix::Ones(1, 3));
  ag::sum(x).backward();
  ag::sum(x).backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("degenerate rows and shape errors raise") {
  auto zero = Var(Matrix::Zero(1, 3));
  CHECK_THROWS_AS(ag::l2_normalize_rows(zero), Error);
  auto a = Var(Matrix::Ones(2, 3));
  auto b = Var(Matrix::Ones(2, 3));
  CHECK_THROWS_AS(ag::matmul(a, b), Error);
  CHECK_THROWS_AS(ag::sum(a).item() + a.item(), Error);
}
