#include "demotune/contrastive.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "demotune/error.hpp"

namespace demotune {

std::string_view to_string(ClMode mode) {
  switch (mode) {
    case ClMode::NoNegatives: return "no_negatives";
    case ClMode::InBatchNegatives: return "in_batch_negatives";
    case ClMode::Off: return "off";
  }
  return "off";
}

ClMode cl_mode_from_string(std::string_view name) {
  if (name == "no_negatives") return ClMode::NoNegatives;
  if (name == "in_batch_negatives") return ClMode::InBatchNegatives;
  if (name == "off") return ClMode::Off;
  throw Error(ErrorKind::InvalidArgument, "unknown cl mode '" + std::string(name) + "'");
}

void JointLossConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw Error(ErrorKind::InvalidArgument, "lambda must be finite and >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::InvalidArgument, "tau must be positive");
}

void PairBatch::validate() const {
  if (anchors.rows() < 1) throw Error(ErrorKind::InvalidArgument, "pair batch is empty");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols()) {
    throw Error(ErrorKind::InvalidArgument, "anchor/positive shapes differ");
  }
  if (!anchors.allFinite() || !positives.allFinite()) throw Error(ErrorKind::InvalidArgument, "pair batch has non-finite values");
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau must be positive");
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::InvalidArgument, "cosine_sim: length mismatch");
  const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
  const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (na < kNormEpsilon || nb < kNormEpsilon) throw Error(ErrorKind::DegenerateNorm, "cosine_sim: zero-norm input");
  return dot / (na * nb);
}

ag::Var infonce_loss(const ag::Var& anchors, const ag::Var& positives, double tau) {
  const auto sims = ag::matmul_nt(ag::l2_normalize_rows(anchors, kNormEpsilon), ag::l2_normalize_rows(positives, kNormEpsilon));
  std::vector<int> targets(static_cast<std::size_t>(anchors.rows()));
  std::iota(targets.begin(), targets.end(), 0);
  return ag::cross_entropy_rows(sims * (1.0 / tau), targets);
}

ag::Var byol_style_loss(const ag::Var& anchors, const ag::Var& positives) {
  const auto diff = ag::l2_normalize_rows(anchors, kNormEpsilon) - ag::l2_normalize_rows(positives, kNormEpsilon);
  return ag::sum(ag::row_squared_norms(diff)) * (1.0 / static_cast<double>(anchors.rows()));
}

double infonce_loss(const PairBatch& batch) {
  batch.validate();
  return infonce_loss(ag::Var(batch.anchors), ag::Var(batch.positives), batch.tau).item();
}

double byol_style_loss(const PairBatch& batch) {
  batch.validate();
  return byol_style_loss(ag::Var(batch.anchors), ag::Var(batch.positives)).item();
}

ag::Var contrastive_loss(const ag::Var& anchors, const ag::Var& positives, const JointLossConfig& cfg) {
  const auto pos = cfg.stop_grad_positive ? ag::detach(positives) : positives;
  switch (cfg.mode) {
    case ClMode::NoNegatives: return byol_style_loss(anchors, pos);
    case ClMode::InBatchNegatives: return infonce_loss(anchors, pos, cfg.tau);
    case ClMode::Off: return {};
  }
  return {};
}

ag::Var joint_loss(const ag::Var& ce, const ag::Var& contrastive, const JointLossConfig& cfg) {
  if (cfg.mode == ClMode::Off || !contrastive.defined()) return ce;
  return ce + contrastive * cfg.lambda;
}

double joint_loss(double ce, double contrastive, const JointLossConfig& cfg) {
  if (!std::isfinite(ce) || !std::isfinite(contrastive)) throw Error(ErrorKind::InvalidArgument, "joint_loss: non-finite input");
  if (cfg.mode == ClMode::Off) return ce;
  return ce + cfg.lambda * contrastive;
}

}  // namespace demotune
