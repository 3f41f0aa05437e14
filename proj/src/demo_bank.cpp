#include "demotune/demo_bank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "demotune/contrastive.hpp"
#include "demotune/error.hpp"

namespace demotune {

std::string_view to_string(InitMethod method) {
  return method == InitMethod::VocabSample ? "vocab_sample" : "gaussian";
}

InitMethod init_method_from_string(std::string_view name) {
  if (name == "vocab_sample") return InitMethod::VocabSample;
  if (name == "gaussian") return InitMethod::Gaussian;
  throw Error(ErrorKind::InvalidArgument, "unknown init method '" + std::string(name) + "'");
}

std::string_view to_string(SamplingStrategy strategy) {
  switch (strategy) {
    case SamplingStrategy::Random: return "random";
    case SamplingStrategy::FilterBased: return "filter_based";
    case SamplingStrategy::MeanVirtual: return "mean_virtual";
  }
  return "random";
}

SamplingStrategy sampling_strategy_from_string(std::string_view name) {
  if (name == "random") return SamplingStrategy::Random;
  if (name == "filter_based") return SamplingStrategy::FilterBased;
  if (name == "mean_virtual") return SamplingStrategy::MeanVirtual;
  throw Error(ErrorKind::InvalidArgument, "unknown sampling strategy '" + std::string(name) + "'");
}

VirtualDemoBank::VirtualDemoBank(std::vector<ag::Var> blocks, InitMethod method)
    : blocks_(std::move(blocks)), method_(method) {
  for (const auto& b : blocks_) {
    if (b.rows() != blocks_.front().rows() || b.cols() != blocks_.front().cols()) {
      throw Error(ErrorKind::InvalidArgument, "virtual demonstration blocks must share one shape");
    }
  }
}

ag::Var VirtualDemoBank::rows_for(const TokenPlan& plan) const {
  std::vector<ag::Var> parts;
  for (std::size_t c = 0; c < plan.virtual_positions.size(); ++c) {
    const auto& group = plan.virtual_positions[c];
    if (group.empty()) continue;
    if (static_cast<int>(group.size()) != length()) {
      throw Error(ErrorKind::InvalidArgument, "plan virtual length differs from the bank length");
    }
    parts.push_back(block(static_cast<int>(c)));
  }
  if (parts.empty()) return {};
  return ag::concat_rows(parts);
}

bool VirtualDemoBank::all_finite() const {
  return std::all_of(blocks_.begin(), blocks_.end(), [](const ag::Var& b) { return b.value().allFinite(); });
}

VirtualDemoBank init_virtual(InitMethod method, const EncoderContract& encoder, int n, int num_classes, Rng& rng) {
  if (n < 1 || num_classes < 1) throw Error(ErrorKind::InvalidArgument, "bank needs n >= 1 and at least one class");
  const auto& table = encoder.token_embeddings();
  const auto first = static_cast<ag::Index>(Vocab::kNumSpecials);
  const auto words = table.rows() - first;
  if (words < 1) throw Error(ErrorKind::InvalidArgument, "vocabulary has no non-special tokens");
  std::vector<ag::Var> blocks;
  if (method == InitMethod::VocabSample) {
    for (int c = 0; c < num_classes; ++c) {
      ag::Matrix block(n, table.cols());
      for (int r = 0; r < n; ++r) block.row(r) = table.row(first + static_cast<ag::Index>(rng.index(static_cast<std::size_t>(words))));
      blocks.push_back(ag::Var::parameter(std::move(block)));
    }
  } else {
    const auto body = table.bottomRows(words);
    const double mean = body.mean();
    const double std = std::sqrt((body.array() - mean).square().mean());
    for (int c = 0; c < num_classes; ++c) {
      ag::Matrix block(n, table.cols());
      for (ag::Index i = 0; i < block.size(); ++i) block.data()[i] = std * rng.normal();
      blocks.push_back(ag::Var::parameter(std::move(block)));
    }
  }
  return VirtualDemoBank(std::move(blocks), method);
}

Injection make_injection(const TokenPlan& plan, const ag::Var* prompt, const VirtualDemoBank* bank) {
  Injection inj;
  std::vector<ag::Var> rows;
  if (!plan.prompt_positions.empty()) {
    if (prompt == nullptr || !prompt->defined()) throw Error(ErrorKind::InvalidArgument, "plan has prompt positions but no prompt embeddings");
    const auto m = prompt->rows();
    if (static_cast<ag::Index>(plan.prompt_positions.size()) % m != 0) {
      throw Error(ErrorKind::InvalidArgument, "prompt positions are not a multiple of the prompt length");
    }
    for (std::size_t i = 0; i < plan.prompt_positions.size(); i += static_cast<std::size_t>(m)) rows.push_back(*prompt);
    inj.positions = plan.prompt_positions;
  }
  const auto virtual_positions = plan.all_virtual_positions();
  if (!virtual_positions.empty()) {
    if (bank == nullptr) throw Error(ErrorKind::InvalidArgument, "plan has virtual positions but no bank");
    rows.push_back(bank->rows_for(plan));
    inj.positions.insert(inj.positions.end(), virtual_positions.begin(), virtual_positions.end());
  }
  if (!rows.empty()) inj.rows = rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
  return inj;
}

SimilarityProvider bag_of_words_provider(const Vocab& vocab) {
  return [&vocab](const LabeledText& ex) {
    std::vector<double> counts(static_cast<std::size_t>(vocab.size()), 0.0);
    for (int id : vocab.tokenize(ex.text_a)) counts[static_cast<std::size_t>(id)] += 1.0;
    if (ex.text_b) {
      for (int id : vocab.tokenize(*ex.text_b)) counts[static_cast<std::size_t>(id)] += 1.0;
    }
    return counts;
  };
}

namespace {

const std::vector<LabeledText>& class_pool(const ClassPools& pools, int c) {
  if (c < 0 || c >= static_cast<int>(pools.size())) throw Error(ErrorKind::UnknownLabel, "class index out of range");
  const auto& pool = pools[static_cast<std::size_t>(c)];
  if (pool.empty()) throw Error(ErrorKind::EmptyClass, "class " + std::to_string(c) + " has no training examples");
  return pool;
}

double safe_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  try {
    return cosine_sim(a, b);
  } catch (const Error&) {
    return 0.0;  // empty texts have no direction
  }
}

}  // namespace

const LabeledText& sample_random(const ClassPools& pools, int c, Rng& rng) {
  const auto& pool = class_pool(pools, c);
  return pool[rng.index(pool.size())];
}

std::vector<std::size_t> filtered_pool(const ClassPools& pools, int c, const LabeledText& anchor,
                                       const SimilarityProvider& provider) {
  const auto& pool = class_pool(pools, c);
  const auto anchor_vec = provider(anchor);
  std::vector<double> sims;
  sims.reserve(pool.size());
  for (const auto& cand : pool) sims.push_back(safe_cosine(anchor_vec, provider(cand)));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
  order.resize((pool.size() + 1) / 2);
  std::sort(order.begin(), order.end());
  return order;
}

const LabeledText& sample_filtered(const ClassPools& pools, int c, const LabeledText& anchor,
                                   const SimilarityProvider& provider, Rng& rng) {
  const auto kept = filtered_pool(pools, c, anchor, provider);
  return pools[static_cast<std::size_t>(c)][kept[rng.index(kept.size())]];
}

ag::Matrix mean_virtual(const ClassPools& pools, int c, const EncoderContract& encoder, int n, MeanSource source) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "n must be >= 1");
  const auto& pool = class_pool(pools, c);
  const auto& vocab = encoder.vocab();
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(encoder.dim());
  for (const auto& ex : pool) {
    std::vector<int> ids = vocab.tokenize(ex.text_a);
    if (ex.text_b) {
      const auto more = vocab.tokenize(*ex.text_b);
      ids.insert(ids.end(), more.begin(), more.end());
    }
    if (ids.empty()) continue;  // contributes a zero vector
    if (source == MeanSource::Embedding) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(encoder.dim());
      for (int id : ids) acc += encoder.token_embeddings().row(id);
      total += acc / static_cast<double>(ids.size());
    } else {
      if (static_cast<int>(ids.size()) > encoder.max_length()) ids.resize(static_cast<std::size_t>(encoder.max_length()));
      total += encoder.forward(ids, {}).value().colwise().mean();
    }
  }
  const Eigen::RowVectorXd mean = total / static_cast<double>(pool.size());
  ag::Matrix block(n, encoder.dim());
  for (int r = 0; r < n; ++r) block.row(r) = mean;
  return block;
}

}  // namespace demotune
