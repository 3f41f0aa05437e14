#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "demotune/autograd.hpp"
#include "demotune/random.hpp"
#include "demotune/template.hpp"
#include "demotune/vocab.hpp"

namespace demotune {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// Rows injected in place of token embeddings at prompt/virtual positions.
struct Injection {
  std::vector<int> positions;
  ag::Var rows;  // positions.size() x d

  bool empty() const { return positions.empty(); }
};

struct Encoded {
  ag::Var hidden;  // T x d
  int cls_pos = 0;
  int mask_pos = -1;

  ag::Var h_cls() const { return ag::select_row(hidden, cls_pos); }
  ag::Var h_mask() const;
};

// Integration point for any masked-LM encoder: a tokenizer, a differentiable
// f(.), and the MLM output weight W_v. Only the tiny transformer ships here.
class EncoderContract {
 public:
  virtual ~EncoderContract() = default;

  virtual const Vocab& vocab() const = 0;
  virtual int dim() const = 0;
  virtual int max_length() const = 0;

  virtual ag::Var forward(std::span<const int> token_ids, const Injection& injection) const = 0;
  // Logits for the given vocabulary ids at each row of h: rows x ids.size().
  virtual ag::Var mlm_logits(const ag::Var& h, std::span<const int> token_ids) const = 0;
  virtual const ag::Matrix& token_embeddings() const = 0;
  virtual std::vector<NamedParameter> parameters() const = 0;

  Encoded encode(const TokenPlan& plan, const Injection& injection = {}) const;
};

struct TinyTransformerConfig {
  int layers = 2;
  int heads = 4;
  int dim = 64;
  int ff_dim = 128;
  int max_length = 128;
  int vocab_size = 0;
  double init_std = 0.02;
  double embedding_std = 0.1;

  void validate() const;
};

// Pre-LayerNorm bidirectional transformer with learned positions and an
// untied MLM output matrix.
class TinyTransformer final : public EncoderContract {
 public:
  TinyTransformer(TinyTransformerConfig config, Vocab vocab, std::uint64_t seed);
  // Parameters are shared handles; copying would alias them.
  TinyTransformer(const TinyTransformer&) = delete;
  TinyTransformer& operator=(const TinyTransformer&) = delete;
  TinyTransformer(TinyTransformer&&) = default;
  TinyTransformer& operator=(TinyTransformer&&) = default;

  const Vocab& vocab() const override { return vocab_; }
  int dim() const override { return config_.dim; }
  int max_length() const override { return config_.max_length; }
  const TinyTransformerConfig& config() const { return config_; }

  ag::Var forward(std::span<const int> token_ids, const Injection& injection) const override;
  ag::Var mlm_logits(const ag::Var& h, std::span<const int> token_ids) const override;
  const ag::Matrix& token_embeddings() const override { return token_embedding_.value(); }
  std::vector<NamedParameter> parameters() const override;

  ag::Var& token_embedding() { return token_embedding_; }
  ag::Var& position_embedding() { return position_embedding_; }
  ag::Var& output_weight() { return output_weight_; }

 private:
  struct Layer {
    ag::Var ln1_gain, ln1_bias;
    ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
    ag::Var ln2_gain, ln2_bias;
    ag::Var ff1, ff1_bias, ff2, ff2_bias;
  };

  ag::Var attention(const Layer& layer, const ag::Var& x) const;

  TinyTransformerConfig config_;
  Vocab vocab_;
  ag::Var token_embedding_;     // |V| x d
  ag::Var position_embedding_;  // L x d
  std::vector<Layer> layers_;
  ag::Var final_gain_, final_bias_;
  ag::Var output_weight_;  // d x |V|
};

// W_o in R^{|Y| x d} plus bias over h_[CLS].
struct ClassifierHead {
  ag::Var weight;
  ag::Var bias;

  static ClassifierHead init(int num_classes, int dim, Rng& rng, double std = 0.02);
  ag::Var logits(const ag::Var& h_cls) const;
};

// p(y|x) over verbalizer tokens at the mask position.
ag::Var mlm_label_logits(const EncoderContract& encoder, const TokenPlan& plan, std::span<const int> label_token_ids,
                         const Injection& injection = {});
std::vector<double> mlm_label_distribution(const EncoderContract& encoder, const TokenPlan& plan,
                                           std::span<const int> label_token_ids, const Injection& injection = {});

std::vector<double> standard_finetune_forward(const EncoderContract& encoder, const ClassifierHead& head,
                                              const LabeledText& example, const RenderOptions& opts = {});

std::vector<double> softmax(std::span<const double> logits);

}  // namespace demotune
