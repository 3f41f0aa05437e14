#pragma once

// Central-difference check of analytic gradients, one report per named
// parameter group.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "demotune/encoder.hpp"
#include "demotune/random.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct GroupReport {
  std::string name;
  double relative_error = 0.0;  // ||a - n|| / max(||a||, ||n||); 0 for zero-gradient groups
  bool zero_gradient = false;
  int entries = 0;
};

// Below this norm both gradients are at finite-difference round-off (about
// eps * |loss| / step per entry), e.g. attention key biases, whose gradient is
// exactly zero by softmax shift invariance; relative error is meaningless there.
inline constexpr double kZeroGradientNorm = 1e-7;

// Compares d loss / d p on up to `samples` random entries of every group.
inline std::vector<GroupReport> check(const std::function<demotune::ag::Var()>& loss,
                                      const std::vector<demotune::NamedParameter>& params, int samples,
                                      std::uint64_t seed, double step = 1e-5) {
  for (const auto& p : params) {
    auto var = p.var;
    var.zero_grad();
  }
  loss().backward();
  demotune::Rng rng(seed);
  std::vector<GroupReport> out;
  for (const auto& p : params) {
    auto var = p.var;
    const auto analytic_full = var.grad();
    const auto size = static_cast<std::size_t>(var.value().size());
    std::vector<std::size_t> picks;
    if (size <= static_cast<std::size_t>(samples)) {
      for (std::size_t i = 0; i < size; ++i) picks.push_back(i);
    } else {
      for (int i = 0; i < samples; ++i) picks.push_back(rng.index(size));
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (auto flat : picks) {
      const auto r = static_cast<Eigen::Index>(flat) / var.cols();
      const auto c = static_cast<Eigen::Index>(flat) % var.cols();
      const double a = analytic_full(r, c);
      const double n = oracle::central_difference([&] { return loss().item(); }, var.mutable_value(), r, c, step);
      diff += (a - n) * (a - n);
      na += a * a;
      nn += n * n;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    GroupReport report{.name = p.name, .relative_error = 0.0, .zero_gradient = scale < kZeroGradientNorm,
                       .entries = static_cast<int>(picks.size())};
    if (!report.zero_gradient) report.relative_error = std::sqrt(diff) / scale;
    out.push_back(report);
  }
  return out;
}

inline double worst(const std::vector<GroupReport>& reports) {
  double w = 0.0;
  for (const auto& r : reports) w = std::max(w, r.relative_error);
  return w;
}

}  // namespace gradcheck
