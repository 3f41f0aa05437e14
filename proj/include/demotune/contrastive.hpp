#pragma once

#include <span>
#include <string_view>

#include "demotune/autograd.hpp"

namespace demotune {

enum class ClMode { NoNegatives, InBatchNegatives, Off };
enum class ClTarget { Cls, Mask };

std::string_view to_string(ClMode mode);
ClMode cl_mode_from_string(std::string_view name);

struct JointLossConfig {
  double lambda = 1.0;
  ClMode mode = ClMode::NoNegatives;
  double tau = 0.05;
  bool stop_grad_positive = false;
  ClTarget target = ClTarget::Cls;

  void validate() const;
};

// Anchor/positive representations, one pair per row.
struct PairBatch {
  ag::Matrix anchors;
  ag::Matrix positives;
  double tau = 0.05;

  void validate() const;
};

inline constexpr double kNormEpsilon = 1e-12;

double cosine_sim(std::span<const double> a, std::span<const double> b);

// Mean over rows of -log softmax_j(sim(h_i, h_j+)/tau)[i].
ag::Var infonce_loss(const ag::Var& anchors, const ag::Var& positives, double tau);
// Mean over rows of ||h_i/|h_i| - h_i+/|h_i+|||^2 = 2 - 2 cos(h_i, h_i+).
ag::Var byol_style_loss(const ag::Var& anchors, const ag::Var& positives);

double infonce_loss(const PairBatch& batch);
double byol_style_loss(const PairBatch& batch);

// Dispatches on cfg.mode; Off yields an undefined Var.
ag::Var contrastive_loss(const ag::Var& anchors, const ag::Var& positives, const JointLossConfig& cfg);

ag::Var joint_loss(const ag::Var& ce, const ag::Var& contrastive, const JointLossConfig& cfg);
double joint_loss(double ce, double contrastive, const JointLossConfig& cfg);

}  // namespace demotune
