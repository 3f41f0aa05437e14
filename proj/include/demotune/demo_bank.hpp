#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "demotune/autograd.hpp"
#include "demotune/encoder.hpp"
#include "demotune/random.hpp"
#include "demotune/template.hpp"

namespace demotune {

enum class InitMethod { VocabSample, Gaussian };

std::string_view to_string(InitMethod method);
InitMethod init_method_from_string(std::string_view name);

// Trainable n x d block per class, in verbalizer label order.
class VirtualDemoBank {
 public:
  VirtualDemoBank() = default;
  VirtualDemoBank(std::vector<ag::Var> blocks, InitMethod method);

  int num_classes() const { return static_cast<int>(blocks_.size()); }
  int length() const { return blocks_.empty() ? 0 : static_cast<int>(blocks_.front().rows()); }
  int dim() const { return blocks_.empty() ? 0 : static_cast<int>(blocks_.front().cols()); }
  InitMethod init_method() const { return method_; }

  const ag::Var& block(int c) const { return blocks_.at(static_cast<std::size_t>(c)); }
  ag::Var& block(int c) { return blocks_.at(static_cast<std::size_t>(c)); }
  const std::vector<ag::Var>& blocks() const { return blocks_; }

  // Rows for every virtual position of the plan, class by class.
  ag::Var rows_for(const TokenPlan& plan) const;
  bool all_finite() const;

 private:
  std::vector<ag::Var> blocks_;
  InitMethod method_ = InitMethod::VocabSample;
};

// VocabSample copies rows of random non-special token embeddings; Gaussian
// draws N(0, s^2) with s the std of the non-special embedding table.
VirtualDemoBank init_virtual(InitMethod method, const EncoderContract& encoder, int n, int num_classes, Rng& rng);

// Injection covering prompt positions (tiled prompt rows) and virtual positions.
Injection make_injection(const TokenPlan& plan, const ag::Var* prompt, const VirtualDemoBank* bank);

enum class SamplingStrategy { Random, FilterBased, MeanVirtual };

std::string_view to_string(SamplingStrategy strategy);
SamplingStrategy sampling_strategy_from_string(std::string_view name);

// Sentence embedding used by the filtered sampler.
using SimilarityProvider = std::function<std::vector<double>(const LabeledText&)>;

// Normalised bag-of-words counts over the encoder vocabulary.
SimilarityProvider bag_of_words_provider(const Vocab& vocab);

// Class pools are the training split grouped by class index.
using ClassPools = std::vector<std::vector<LabeledText>>;

const LabeledText& sample_random(const ClassPools& pools, int c, Rng& rng);

// Indices into pools[c] of the ceil(|pool|/2) candidates most similar to the anchor
// (ties broken by lower index).
std::vector<std::size_t> filtered_pool(const ClassPools& pools, int c, const LabeledText& anchor,
                                       const SimilarityProvider& provider);
const LabeledText& sample_filtered(const ClassPools& pools, int c, const LabeledText& anchor,
                                   const SimilarityProvider& provider, Rng& rng);

enum class MeanSource { Embedding, Encoder };

// Every row is the class average of per-instance mean input-token vectors.
ag::Matrix mean_virtual(const ClassPools& pools, int c, const EncoderContract& encoder, int n,
                        MeanSource source = MeanSource::Embedding);

}  // namespace demotune
