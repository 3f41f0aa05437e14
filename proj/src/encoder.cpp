#include "demotune/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "demotune/error.hpp"

namespace demotune {

namespace {

ag::Matrix random_matrix(Rng& rng, int rows, int cols, double std) {
  ag::Matrix m(rows, cols);
  for (ag::Index r = 0; r < rows; ++r) {
    for (ag::Index c = 0; c < cols; ++c) m(r, c) = std * rng.normal();
  }
  return m;
}

ag::Var random_param(Rng& rng, int rows, int cols, double std) { return ag::Var::parameter(random_matrix(rng, rows, cols, std)); }
ag::Var zeros(int rows, int cols) { return ag::Var::parameter(ag::Matrix::Zero(rows, cols)); }
ag::Var ones(int rows, int cols) { return ag::Var::parameter(ag::Matrix::Ones(rows, cols)); }

}  // namespace

ag::Var Encoded::h_mask() const {
  if (mask_pos < 0) throw Error(ErrorKind::NoMaskPosition, "plan has no mask position");
  return ag::select_row(hidden, mask_pos);
}

Encoded EncoderContract::encode(const TokenPlan& plan, const Injection& injection) const {
  return {.hidden = forward(plan.token_ids, injection), .cls_pos = plan.cls_pos, .mask_pos = plan.mask_pos};
}

void TinyTransformerConfig::validate() const {
  if (layers < 1 || heads < 1 || dim < 1 || ff_dim < 1 || max_length < 1 || vocab_size < Vocab::kNumSpecials) {
    throw Error(ErrorKind::InvalidArgument, "transformer config has a non-positive size");
  }
  if (dim % heads != 0) throw Error(ErrorKind::InvalidArgument, "dim must be divisible by heads");
}

TinyTransformer::TinyTransformer(TinyTransformerConfig config, Vocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.vocab_size = vocab_.size();
  config_.validate();
  Rng rng(seed);
  const int d = config_.dim;
  token_embedding_ = random_param(rng, config_.vocab_size, d, config_.embedding_std);
  position_embedding_ = random_param(rng, config_.max_length, d, config_.embedding_std);
  const double attn_std = config_.init_std;
  for (int l = 0; l < config_.layers; ++l) {
    Layer layer;
    layer.ln1_gain = ones(1, d);
    layer.ln1_bias = zeros(1, d);
    layer.wq = random_param(rng, d, d, attn_std);
    layer.bq = zeros(1, d);
    layer.wk = random_param(rng, d, d, attn_std);
    layer.bk = zeros(1, d);
    layer.wv = random_param(rng, d, d, attn_std);
    layer.bv = zeros(1, d);
    layer.wo = random_param(rng, d, d, attn_std);
    layer.bo = zeros(1, d);
    layer.ln2_gain = ones(1, d);
    layer.ln2_bias = zeros(1, d);
    layer.ff1 = random_param(rng, d, config_.ff_dim, attn_std);
    layer.ff1_bias = zeros(1, config_.ff_dim);
    layer.ff2 = random_param(rng, config_.ff_dim, d, attn_std);
    layer.ff2_bias = zeros(1, d);
    layers_.push_back(std::move(layer));
  }
  final_gain_ = ones(1, d);
  final_bias_ = zeros(1, d);
  output_weight_ = random_param(rng, d, config_.vocab_size, config_.init_std);
}

ag::Var TinyTransformer::attention(const Layer& layer, const ag::Var& x) const {
  const int head_dim = config_.dim / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const auto q = ag::add_row(ag::matmul(x, layer.wq), layer.bq);
  const auto k = ag::add_row(ag::matmul(x, layer.wk), layer.bk);
  const auto v = ag::add_row(ag::matmul(x, layer.wv), layer.bv);
  std::vector<ag::Var> heads;
  heads.reserve(static_cast<std::size_t>(config_.heads));
  for (int h = 0; h < config_.heads; ++h) {
    const auto qh = ag::slice_cols(q, h * head_dim, head_dim);
    const auto kh = ag::slice_cols(k, h * head_dim, head_dim);
    const auto vh = ag::slice_cols(v, h * head_dim, head_dim);
    const auto weights = ag::softmax_rows(ag::matmul_nt(qh, kh) * scale);
    heads.push_back(ag::matmul(weights, vh));
  }
  return ag::add_row(ag::matmul(ag::concat_cols(heads), layer.wo), layer.bo);
}

ag::Var TinyTransformer::forward(std::span<const int> token_ids, const Injection& injection) const {
  const int length = static_cast<int>(token_ids.size());
  if (length == 0) throw Error(ErrorKind::InvalidArgument, "empty token sequence");
  if (length > config_.max_length) {
    throw Error(ErrorKind::OverLength, std::to_string(length) + " tokens exceed encoder max length " + std::to_string(config_.max_length));
  }
  auto x = ag::gather_rows(token_embedding_, token_ids);
  if (!injection.empty()) x = ag::replace_rows(x, injection.positions, injection.rows);
  std::vector<int> positions(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) positions[static_cast<std::size_t>(i)] = i;
  x = x + ag::gather_rows(position_embedding_, positions);
  for (const auto& layer : layers_) {
    x = x + attention(layer, ag::layer_norm(x, layer.ln1_gain, layer.ln1_bias));
    const auto normed = ag::layer_norm(x, layer.ln2_gain, layer.ln2_bias);
    const auto hidden = ag::gelu(ag::add_row(ag::matmul(normed, layer.ff1), layer.ff1_bias));
    x = x + ag::add_row(ag::matmul(hidden, layer.ff2), layer.ff2_bias);
  }
  return ag::layer_norm(x, final_gain_, final_bias_);
}

ag::Var TinyTransformer::mlm_logits(const ag::Var& h, std::span<const int> token_ids) const {
  return ag::matmul(h, ag::select_cols(output_weight_, token_ids));
}

std::vector<NamedParameter> TinyTransformer::parameters() const {
  std::vector<NamedParameter> out{{"embed.token", token_embedding_}, {"embed.position", position_embedding_}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.insert(out.end(), {{p + "ln1.gain", L.ln1_gain}, {p + "ln1.bias", L.ln1_bias}, {p + "attn.wq", L.wq},
                           {p + "attn.bq", L.bq}, {p + "attn.wk", L.wk}, {p + "attn.bk", L.bk},
                           {p + "attn.wv", L.wv}, {p + "attn.bv", L.bv}, {p + "attn.wo", L.wo},
                           {p + "attn.bo", L.bo}, {p + "ln2.gain", L.ln2_gain}, {p + "ln2.bias", L.ln2_bias},
                           {p + "ff1.weight", L.ff1}, {p + "ff1.bias", L.ff1_bias}, {p + "ff2.weight", L.ff2},
                           {p + "ff2.bias", L.ff2_bias}});
  }
  out.insert(out.end(), {{"final_ln.gain", final_gain_}, {"final_ln.bias", final_bias_}, {"mlm.output", output_weight_}});
  return out;
}

ClassifierHead ClassifierHead::init(int num_classes, int dim, Rng& rng, double std) {
  return {.weight = random_param(rng, num_classes, dim, std), .bias = zeros(1, num_classes)};
}

ag::Var ClassifierHead::logits(const ag::Var& h_cls) const { return ag::add_row(ag::matmul_nt(h_cls, weight), bias); }

ag::Var mlm_label_logits(const EncoderContract& encoder, const TokenPlan& plan, std::span<const int> label_token_ids,
                         const Injection& injection) {
  if (!plan.has_mask()) throw Error(ErrorKind::NoMaskPosition, "plan has no mask position");
  const auto encoded = encoder.encode(plan, injection);
  return encoder.mlm_logits(encoded.h_mask(), label_token_ids);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double m = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> mlm_label_distribution(const EncoderContract& encoder, const TokenPlan& plan,
                                           std::span<const int> label_token_ids, const Injection& injection) {
  const auto logits = mlm_label_logits(encoder, plan, label_token_ids, injection);
  std::vector<double> row(logits.value().data(), logits.value().data() + logits.cols());
  return softmax(row);
}

std::vector<double> standard_finetune_forward(const EncoderContract& encoder, const ClassifierHead& head,
                                              const LabeledText& example, const RenderOptions& opts) {
  const auto plan = render_plain(example, encoder.vocab(), opts);
  const auto logits = head.logits(encoder.encode(plan).h_cls());
  std::vector<double> row(logits.value().data(), logits.value().data() + logits.cols());
  return softmax(row);
}

}  // namespace demotune
