#include "demotune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "demotune/checkpoint.hpp"
#include "demotune/error.hpp"

namespace demotune {

using nlohmann::json;

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Finetune: return "finetune";
    case Method::PromptManual: return "prompt_manual";
    case Method::PromptContinuous: return "prompt_continuous";
    case Method::DemoReal: return "demo_real";
    case Method::DemoTuning: return "demo_tuning";
  }
  return "demo_tuning";
}

Method method_from_string(std::string_view name) {
  if (name == "finetune") return Method::Finetune;
  if (name == "prompt_manual") return Method::PromptManual;
  if (name == "prompt_continuous") return Method::PromptContinuous;
  if (name == "demo_real") return Method::DemoReal;
  if (name == "demo_tuning") return Method::DemoTuning;
  throw Error(ErrorKind::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

std::string_view to_string(PromptStyle style) { return style == PromptStyle::Manual ? "manual" : "continuous"; }

PromptStyle prompt_style_from_string(std::string_view name) {
  if (name == "manual") return PromptStyle::Manual;
  if (name == "continuous") return PromptStyle::Continuous;
  throw Error(ErrorKind::InvalidArgument, "unknown prompt style '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::InvalidArgument, "lr must be positive");
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be positive");
  if (max_steps < 0) throw Error(ErrorKind::InvalidArgument, "max_steps must be >= 0");
  if (eval_every < 1) throw Error(ErrorKind::InvalidArgument, "eval_every must be positive");
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be positive");
  if (prompt_length < 1) throw Error(ErrorKind::InvalidArgument, "prompt_length must be positive");
  if (n != 0) validate_demo_length(n, allow_any_n);
  loss.validate();
  if (render.max_length < 1) throw Error(ErrorKind::InvalidArgument, "max_length must be positive");
}

std::string train_config_to_json(const TrainConfig& c) {
  json doc = {
      {"lr", c.lr},
      {"batch_size", c.batch_size},
      {"max_steps", c.max_steps},
      {"eval_every", c.eval_every},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"weight_decay", c.weight_decay},
      {"adam_eps", c.adam_eps},
      {"method", to_string(c.method)},
      {"prompt_style", to_string(c.prompt_style)},
      {"prompt_length", c.prompt_length},
      {"cl_mode", to_string(c.loss.mode)},
      {"lambda", c.loss.lambda},
      {"tau", c.loss.tau},
      {"stop_grad_positive", c.loss.stop_grad_positive},
      {"cl_target", c.loss.target == ClTarget::Cls ? "cls" : "mask"},
      {"n", c.n},
      {"allow_any_n", c.allow_any_n},
      {"sampling", to_string(c.sampling)},
      {"init", to_string(c.init)},
      {"mean_source", c.mean_source == MeanSource::Embedding ? "embedding" : "encoder"},
      {"freeze_encoder", c.freeze_encoder},
      {"k", c.k},
      {"global_seed", c.global_seed},
      {"encoder",
       {{"layers", c.encoder.layers},
        {"heads", c.encoder.heads},
        {"dim", c.encoder.dim},
        {"ff_dim", c.encoder.ff_dim},
        {"init_std", c.encoder.init_std},
        {"embedding_std", c.encoder.embedding_std}}},
      {"max_length", c.render.max_length},
      {"truncate_inputs", c.render.truncate_inputs},
      {"placement", c.render.placement == Placement::After ? "after" : "before"},
  };
  return doc.dump();
}

TrainConfig train_config_from_json(std::string_view json_text, TrainConfig c) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("train config: ") + e.what());
  }
  try {
    c.lr = doc.value("lr", c.lr);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.max_steps = doc.value("max_steps", c.max_steps);
    c.eval_every = doc.value("eval_every", c.eval_every);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.weight_decay = doc.value("weight_decay", c.weight_decay);
    c.adam_eps = doc.value("adam_eps", c.adam_eps);
    if (doc.contains("method")) c.method = method_from_string(doc["method"].get<std::string>());
    if (doc.contains("prompt_style")) c.prompt_style = prompt_style_from_string(doc["prompt_style"].get<std::string>());
    c.prompt_length = doc.value("prompt_length", c.prompt_length);
    if (doc.contains("cl_mode")) c.loss.mode = cl_mode_from_string(doc["cl_mode"].get<std::string>());
    c.loss.lambda = doc.value("lambda", c.loss.lambda);
    c.loss.tau = doc.value("tau", c.loss.tau);
    c.loss.stop_grad_positive = doc.value("stop_grad_positive", c.loss.stop_grad_positive);
    if (doc.contains("cl_target")) c.loss.target = doc["cl_target"].get<std::string>() == "mask" ? ClTarget::Mask : ClTarget::Cls;
    c.n = doc.value("n", c.n);
    c.allow_any_n = doc.value("allow_any_n", c.allow_any_n);
    if (doc.contains("sampling")) c.sampling = sampling_strategy_from_string(doc["sampling"].get<std::string>());
    if (doc.contains("init")) c.init = init_method_from_string(doc["init"].get<std::string>());
    if (doc.contains("mean_source")) c.mean_source = doc["mean_source"].get<std::string>() == "encoder" ? MeanSource::Encoder : MeanSource::Embedding;
    c.freeze_encoder = doc.value("freeze_encoder", c.freeze_encoder);
    c.k = doc.value("k", c.k);
    c.global_seed = doc.value("global_seed", c.global_seed);
    if (doc.contains("encoder")) {
      const auto& e = doc["encoder"];
      c.encoder.layers = e.value("layers", c.encoder.layers);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.dim = e.value("dim", c.encoder.dim);
      c.encoder.ff_dim = e.value("ff_dim", c.encoder.ff_dim);
      c.encoder.init_std = e.value("init_std", c.encoder.init_std);
      c.encoder.embedding_std = e.value("embedding_std", c.encoder.embedding_std);
    }
    c.render.max_length = doc.value("max_length", c.render.max_length);
    c.render.truncate_inputs = doc.value("truncate_inputs", c.render.truncate_inputs);
    if (doc.contains("placement")) c.render.placement = doc["placement"].get<std::string>() == "before" ? Placement::Before : Placement::After;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const TaskConfig& task, const TrainConfig& config) {
  const std::string canonical = json::parse(task_config_to_json(task)).dump() + "|" + json::parse(train_config_to_json(config)).dump();
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical);
  return out.str();
}

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(std::vector<NamedParameter> params, double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (auto& p : params) {
    const bool no_decay = p.name.ends_with(".bias") || p.name.ends_with(".gain");
    slots_.push_back({.var = p.var,
                      .m = ag::Matrix::Zero(p.var.rows(), p.var.cols()),
                      .v = ag::Matrix::Zero(p.var.rows(), p.var.cols()),
                      .decay = !no_decay});
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.var.zero_grad();
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (auto& s : slots_) {
    if (!s.var.has_grad()) continue;
    const ag::Matrix& g = s.var.node()->grad;
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
    auto& w = s.var.mutable_value();
    if (s.decay) w *= 1.0 - lr_ * weight_decay_;
    w.array() -= lr_ * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Model

int TrainedModel::n() const { return config.n != 0 ? config.n : task.n; }

bool TrainedModel::uses_virtual() const {
  return config.method == Method::DemoTuning ||
         (config.method == Method::DemoReal && config.sampling == SamplingStrategy::MeanVirtual);
}

std::vector<NamedParameter> TrainedModel::trainable() const {
  std::vector<NamedParameter> out;
  if (!config.freeze_encoder) out = encoder->parameters();
  for (int c = 0; c < bank.num_classes(); ++c) {
    if (bank.block(c).requires_grad()) out.push_back({"bank." + task.verbalizer.labels()[static_cast<std::size_t>(c)], bank.block(c)});
  }
  if (prompt.defined()) out.push_back({"prompt", prompt});
  if (head) {
    out.push_back({"head.weight", head->weight});
    out.push_back({"head.bias", head->bias});
  }
  return out;
}

std::vector<NamedParameter> TrainedModel::all_parameters() const {
  auto out = encoder->parameters();
  for (int c = 0; c < bank.num_classes(); ++c) out.push_back({"bank." + task.verbalizer.labels()[static_cast<std::size_t>(c)], bank.block(c)});
  if (prompt.defined()) out.push_back({"prompt", prompt});
  if (head) {
    out.push_back({"head.weight", head->weight});
    out.push_back({"head.bias", head->bias});
  }
  return out;
}

Vocab build_task_vocab(const TaskConfig& task, std::span<const Dataset* const> datasets) {
  std::vector<std::string> texts;
  for (const auto* ds : datasets) {
    if (ds == nullptr) continue;
    for (const auto& ex : ds->examples) {
      texts.push_back(ex.text_a);
      if (ex.text_b) texts.push_back(*ex.text_b);
    }
  }
  for (const auto& seg : task.manual_spec().segments) {
    if (const auto* lit = std::get_if<Literal>(&seg)) texts.push_back(lit->text);
  }
  for (const auto& word : task.verbalizer.words()) texts.push_back(word);
  return Vocab::build(texts);
}

namespace {

TemplateSpec spec_for(const TaskConfig& task, const TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::Finetune:
    case Method::PromptManual: return task.manual_spec();
    case Method::PromptContinuous: return task.continuous_spec(cfg.prompt_length);
    case Method::DemoReal:
    case Method::DemoTuning:
      return cfg.prompt_style == PromptStyle::Manual ? task.manual_spec() : task.continuous_spec(cfg.prompt_length);
  }
  return task.manual_spec();
}

ag::Var vocab_rows(const EncoderContract& encoder, int rows, Rng& rng) {
  const auto& table = encoder.token_embeddings();
  const auto words = static_cast<std::size_t>(table.rows() - Vocab::kNumSpecials);
  ag::Matrix m(rows, table.cols());
  for (int r = 0; r < rows; ++r) m.row(r) = table.row(Vocab::kNumSpecials + static_cast<ag::Index>(rng.index(words)));
  return ag::Var::parameter(std::move(m));
}

// Pool for class c without the anchor itself, unless that would empty it.
std::vector<LabeledText> pool_without(const ClassPools& pools, int c, const std::string& uid) {
  const auto& pool = pools.at(static_cast<std::size_t>(c));
  std::vector<LabeledText> out;
  for (const auto& ex : pool) {
    if (ex.uid != uid) out.push_back(ex);
  }
  return out.empty() ? pool : out;
}

LabeledText sample_demo(const TrainedModel& model, int c, const LabeledText& anchor, Rng& rng) {
  ClassPools single(model.demo_pools.size());
  single[static_cast<std::size_t>(c)] = pool_without(model.demo_pools, c, anchor.uid);
  if (model.config.sampling == SamplingStrategy::FilterBased) {
    return sample_filtered(single, c, anchor, bag_of_words_provider(model.encoder->vocab()), rng);
  }
  return sample_random(single, c, rng);
}

TokenPlan plan_with(const TrainedModel& model, const LabeledText& example, Rng& rng) {
  const auto& vocab = model.encoder->vocab();
  const auto& opts = model.config.render;
  switch (model.config.method) {
    case Method::Finetune: return render_plain(example, vocab, opts);
    case Method::PromptManual:
    case Method::PromptContinuous: return render_anchor(model.spec, example, vocab, opts);
    case Method::DemoTuning: return build_virtual(model.spec, example, model.n(), model.task.verbalizer, vocab, opts);
    case Method::DemoReal: {
      if (model.config.sampling == SamplingStrategy::MeanVirtual) {
        return build_virtual(model.spec, example, model.n(), model.task.verbalizer, vocab, opts);
      }
      std::vector<LabeledText> demos;
      for (int c = 0; c < model.task.verbalizer.num_classes(); ++c) demos.push_back(sample_demo(model, c, example, rng));
      return build_demo_augmented(model.spec, example, demos, model.task.verbalizer, vocab, opts);
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unhandled method");
}

ag::Var label_logits(const TrainedModel& model, const TokenPlan& plan, Encoded* encoded_out = nullptr) {
  const auto injection = make_injection(plan, model.prompt.defined() ? &model.prompt : nullptr, &model.bank);
  auto encoded = model.encoder->encode(plan, injection);
  ag::Var logits = model.head ? model.head->logits(encoded.h_cls()) : model.encoder->mlm_logits(encoded.h_mask(), model.label_ids);
  if (encoded_out != nullptr) *encoded_out = std::move(encoded);
  return logits;
}

ag::Var contrast_vector(const Encoded& encoded, ClTarget target) {
  return target == ClTarget::Cls ? encoded.h_cls() : encoded.h_mask();
}

Rng inference_rng(const TrainedModel& model, const LabeledText& example) {
  return Rng(mix_seed(fnv1a(example.uid), model.config.global_seed));
}

}  // namespace

TrainedModel init_model(const TaskConfig& task, const TrainConfig& config, Vocab vocab, const FewShotSplit& split,
                        std::uint64_t seed) {
  config.validate();
  TrainedModel model;
  model.task = task;
  model.config = config;
  auto enc_cfg = config.encoder;
  enc_cfg.max_length = config.render.max_length;
  model.encoder = std::make_unique<TinyTransformer>(enc_cfg, std::move(vocab), mix_seed(seed, 0));
  model.spec = spec_for(task, config);
  model.label_ids = task.verbalizer.token_ids(model.encoder->vocab());
  Dataset train{.task_id = task.task_id, .examples = split.train};
  model.demo_pools = train.by_class(task.verbalizer);

  Rng rng(mix_seed(seed, 1));
  if (model.spec.prompt_length() > 0) model.prompt = vocab_rows(*model.encoder, model.spec.prompt_length(), rng);
  const int classes = task.verbalizer.num_classes();
  if (config.method == Method::DemoTuning) {
    model.bank = init_virtual(config.init, *model.encoder, model.n(), classes, rng);
  } else if (config.method == Method::DemoReal && config.sampling == SamplingStrategy::MeanVirtual) {
    std::vector<ag::Var> blocks;
    for (int c = 0; c < classes; ++c) {
      blocks.emplace_back(mean_virtual(model.demo_pools, c, *model.encoder, model.n(), config.mean_source));
    }
    model.bank = VirtualDemoBank(std::move(blocks), config.init);
  }
  if (config.method == Method::Finetune) model.head = ClassifierHead::init(classes, model.encoder->dim(), rng);
  return model;
}

TokenPlan inference_plan(const TrainedModel& model, const LabeledText& example) {
  Rng rng = inference_rng(model, example);
  return plan_with(model, example, rng);
}

BatchLoss batch_loss(const TrainedModel& model, std::span<const LabeledText> batch, Rng& demo_rng) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty minibatch");
  const auto& verbalizer = model.task.verbalizer;
  const bool contrast = model.config.method == Method::DemoTuning && model.config.loss.mode != ClMode::Off;
  std::vector<ag::Var> logits;
  std::vector<int> targets;
  std::vector<ag::Var> anchors;
  BatchLoss out;
  for (const auto& ex : batch) {
    const auto plan = plan_with(model, ex, demo_rng);
    Encoded encoded;
    logits.push_back(label_logits(model, plan, &encoded));
    targets.push_back(verbalizer.index_of(ex.label));
    if (contrast) anchors.push_back(contrast_vector(encoded, model.config.loss.target));
  }
  const auto ce = ag::cross_entropy_rows(ag::concat_rows(logits), targets);
  out.ce = ce.item();
  out.total = ce;
  if (!contrast) return out;

  const auto& vocab = model.encoder->vocab();
  std::vector<ag::Var> positives;
  for (const auto& ex : batch) {
    const int c = static_cast<int>(demo_rng.index(static_cast<std::size_t>(verbalizer.num_classes())));
    ClassPools single(model.demo_pools.size());
    single[static_cast<std::size_t>(c)] = pool_without(model.demo_pools, c, ex.uid);
    const auto& demo = sample_random(single, c, demo_rng);
    auto plan = build_positive(model.spec, ex, demo, c, model.n(), verbalizer, vocab, model.config.render);
    Encoded encoded;
    (void)label_logits(model, plan, &encoded);
    positives.push_back(contrast_vector(encoded, model.config.loss.target));
    out.positives.push_back(std::move(plan));
  }
  const auto cl = contrastive_loss(ag::concat_rows(anchors), ag::concat_rows(positives), model.config.loss);
  out.contrastive = cl.item();
  out.total = joint_loss(ce, cl, model.config.loss);
  return out;
}

std::vector<double> predict_distribution(const TrainedModel& model, const LabeledText& example) {
  const auto plan = inference_plan(model, example);
  const auto logits = label_logits(model, plan);
  std::vector<double> row(logits.value().data(), logits.value().data() + logits.cols());
  return softmax(row);
}

namespace {

int argmax(const std::vector<double>& values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace

std::string infer(const LabeledText& example, const TrainedModel& model) {
  return model.task.verbalizer.labels()[static_cast<std::size_t>(argmax(predict_distribution(model, example)))];
}

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.empty()) throw Error(ErrorKind::EmptyTestSet, "no predictions to score");
  if (predicted.size() != gold.size()) throw Error(ErrorKind::InvalidArgument, "prediction/gold length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double binary_f1(std::span<const int> predicted, std::span<const int> gold, int positive) {
  if (predicted.empty()) throw Error(ErrorKind::EmptyTestSet, "no predictions to score");
  if (predicted.size() != gold.size()) throw Error(ErrorKind::InvalidArgument, "prediction/gold length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == positive;
    const bool g = gold[i] == positive;
    tp += (p && g) ? 1 : 0;
    fp += (p && !g) ? 1 : 0;
    fn += (!p && g) ? 1 : 0;
  }
  if (tp == 0) return 0.0;
  const double precision = tp / (tp + fp);
  const double recall = tp / (tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double evaluate(std::span<const LabeledText> test, const TrainedModel& model, Metric metric) {
  if (test.empty()) throw Error(ErrorKind::EmptyTestSet, "test set is empty");
  std::vector<int> predicted;
  std::vector<int> gold;
  for (const auto& ex : test) {
    predicted.push_back(argmax(predict_distribution(model, ex)));
    gold.push_back(model.task.verbalizer.index_of(ex.label));
  }
  return metric == Metric::Accuracy ? accuracy(predicted, gold) : binary_f1(predicted, gold, model.task.positive_class());
}

TrainOutcome train_one(const FewShotSplit& split, const TaskConfig& task, const TrainConfig& config, const Vocab& vocab) {
  if (split.train.empty()) throw Error(ErrorKind::InvalidArgument, "empty training split");
  TrainOutcome outcome{.model = init_model(task, config, vocab, split, mix_seed(config.global_seed, split.seed)),
                       .curve = {}, .best_step = 0, .best_dev = 0.0};
  auto& model = outcome.model;
  const auto params = model.trainable();
  AdamW optimizer(params, config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay);

  Rng batch_rng(mix_seed(mix_seed(config.global_seed, split.seed), 2));
  Rng demo_rng(mix_seed(mix_seed(config.global_seed, split.seed), 3));
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  auto snapshot = [&] {
    std::vector<ag::Matrix> values;
    for (const auto& p : params) values.push_back(p.var.value());
    return values;
  };
  const auto& dev = split.dev.empty() ? split.train : split.dev;
  outcome.best_dev = evaluate(dev, model, task.metric);
  outcome.curve.push_back({.step = 0, .train_loss = 0.0, .dev_metric = outcome.best_dev});
  auto best = snapshot();

  double running = 0.0;
  int since_eval = 0;
  for (int step = 1; step <= config.max_steps; ++step) {
    std::vector<LabeledText> batch;
    while (static_cast<int>(batch.size()) < config.batch_size && static_cast<int>(batch.size()) < static_cast<int>(order.size())) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[batch_rng.index(i)]);
        cursor = 0;
      }
      batch.push_back(split.train[order[cursor++]]);
    }
    optimizer.zero_grad();
    const auto loss = batch_loss(model, batch, demo_rng);
    const double value = loss.total.item();
    if (!std::isfinite(value)) {
      throw Error(ErrorKind::DivergedLoss, "non-finite loss at step " + std::to_string(step));
    }
    loss.total.backward();
    optimizer.step();
    running += value;
    ++since_eval;
    if (step % config.eval_every == 0 || step == config.max_steps) {
      const double metric = evaluate(dev, model, task.metric);
      outcome.curve.push_back({.step = step, .train_loss = running / since_eval, .dev_metric = metric});
      running = 0.0;
      since_eval = 0;
      if (metric > outcome.best_dev) {
        outcome.best_dev = metric;
        outcome.best_step = step;
        best = snapshot();
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto var = params[i].var;
    var.mutable_value() = best[i];
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Suites

std::string RunResult::to_json() const {
  json seeds_json = json::array();
  for (const auto& s : seeds) {
    seeds_json.push_back({{"seed", s.seed}, {"metric", s.metric}, {"dev_metric", s.dev_metric}, {"best_step", s.best_step}});
  }
  json doc = {{"task", task}, {"method", method}, {"seeds", seeds_json}, {"mean", mean}, {"std", std}, {"config_hash", config_hash}};
  return doc.dump(2);
}

RunResult aggregate(std::string task, std::string method, std::vector<SeedResult> seeds, std::string hash) {
  if (seeds.empty()) throw Error(ErrorKind::InvalidArgument, "no seed results to aggregate");
  RunResult r{.task = std::move(task), .method = std::move(method), .seeds = std::move(seeds), .mean = 0.0, .std = 0.0,
              .config_hash = std::move(hash)};
  // Two passes over offsets from the first value, so equal metrics give std 0 exactly.
  const double origin = r.seeds.front().metric;
  const auto count = static_cast<double>(r.seeds.size());
  double offset = 0.0;
  for (const auto& s : r.seeds) offset += s.metric - origin;
  offset /= count;
  double sq = 0.0;
  for (const auto& s : r.seeds) sq += (s.metric - origin - offset) * (s.metric - origin - offset);
  r.mean = origin + offset;
  r.std = std::sqrt(sq / count);
  return r;
}

std::string method_label(const TrainConfig& config) {
  std::string label(to_string(config.method));
  if (config.method == Method::DemoTuning) label += "(" + std::string(to_string(config.loss.mode)) + ")";
  if (config.method == Method::DemoReal) label += "(" + std::string(to_string(config.sampling)) + ")";
  return label;
}

namespace {

SeedResult run_seed(const Dataset& dataset, const Dataset& test, const TaskConfig& task, const TrainConfig& config,
                    const Vocab& vocab, std::uint64_t seed, const std::optional<std::filesystem::path>& checkpoint_dir) {
  try {
    const auto split = sample_kshot(dataset, task.verbalizer, config.k, seed);
    std::vector<LabeledText> held_out;
    if (test.examples.empty()) {
      std::unordered_set<std::string> used;
      for (const auto& ex : split.train) used.insert(ex.uid);
      for (const auto& ex : split.dev) used.insert(ex.uid);
      for (const auto& ex : dataset.examples) {
        if (!used.contains(ex.uid)) held_out.push_back(ex);
      }
    }
    const auto& test_examples = test.examples.empty() ? held_out : test.examples;
    auto outcome = train_one(split, task, config, vocab);
    const double metric = evaluate(test_examples, outcome.model, task.metric);
    if (checkpoint_dir) {
      save_checkpoint(*checkpoint_dir / ("seed_" + std::to_string(seed) + ".ckpt"), outcome.model);
    }
    return {.seed = seed, .metric = metric, .dev_metric = outcome.best_dev, .best_step = outcome.best_step};
  } catch (const Error& e) {
    throw Error(e.kind(), "seed " + std::to_string(seed) + ": " + e.message());
  }
}

}  // namespace

RunResult run_suite(const Dataset& dataset, const Dataset& test, const TaskConfig& task, const TrainConfig& config,
                    const SuiteOptions& options) {
  config.validate();
  if (options.seeds.empty()) throw Error(ErrorKind::InvalidArgument, "run_suite needs at least one seed");
  const Dataset* sources[] = {&dataset, &test};
  const Vocab vocab = build_task_vocab(task, sources);
  std::vector<SeedResult> results(options.seeds.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, options.parallel_seeds));
  for (std::size_t start = 0; start < options.seeds.size(); start += width) {
    const std::size_t end = std::min(options.seeds.size(), start + width);
    if (width == 1) {
      results[start] = run_seed(dataset, test, task, config, vocab, options.seeds[start], options.checkpoint_dir);
      continue;
    }
    std::vector<std::future<SeedResult>> jobs;
    for (std::size_t i = start; i < end; ++i) {
      jobs.push_back(std::async(std::launch::async, run_seed, std::cref(dataset), std::cref(test), std::cref(task),
                                std::cref(config), std::cref(vocab), options.seeds[i], std::cref(options.checkpoint_dir)));
    }
    for (std::size_t i = start; i < end; ++i) results[i] = jobs[i - start].get();
  }
  return aggregate(task.task_id, method_label(config), std::move(results), config_hash(task, config));
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::NegVsNoNeg: return "neg_vs_noneg";
    case AblationAxis::LengthN: return "length_n";
    case AblationAxis::SamplingStrategy: return "sampling_strategy";
  }
  return "neg_vs_noneg";
}

AblationAxis ablation_axis_from_string(std::string_view name) {
  if (name == "neg_vs_noneg") return AblationAxis::NegVsNoNeg;
  if (name == "length_n") return AblationAxis::LengthN;
  if (name == "sampling_strategy") return AblationAxis::SamplingStrategy;
  throw Error(ErrorKind::InvalidArgument, "unknown ablation axis '" + std::string(name) + "'");
}

TrainConfig apply_ablation_cell(const TrainConfig& base, AblationAxis axis, const std::string& value) {
  TrainConfig cfg = base;
  switch (axis) {
    case AblationAxis::NegVsNoNeg:
      cfg.method = Method::DemoTuning;
      cfg.loss.mode = cl_mode_from_string(value);
      if (cfg.loss.mode == ClMode::Off) throw Error(ErrorKind::InvalidArgument, "neg_vs_noneg compares two contrastive modes");
      break;
    case AblationAxis::LengthN: {
      int n = 0;
      try {
        std::size_t used = 0;
        n = std::stoi(value, &used);
        if (used != value.size()) n = 0;
      } catch (const std::exception&) {
        n = 0;
      }
      if (n < 1) throw Error(ErrorKind::InvalidArgument, "length grid value '" + value + "' is not a positive integer");
      cfg.n = n;
      break;
    }
    case AblationAxis::SamplingStrategy:
      if (value == "demo_tuning") {
        cfg.method = Method::DemoTuning;
      } else {
        cfg.method = Method::DemoReal;
        cfg.sampling = sampling_strategy_from_string(value);
      }
      break;
  }
  cfg.validate();
  return cfg;
}

AblationTable ablate(const Dataset& dataset, const Dataset& test, const TaskConfig& task, const TrainConfig& base,
                     AblationAxis axis, const std::vector<std::string>& grid, const SuiteOptions& options) {
  if (grid.empty()) throw Error(ErrorKind::InvalidArgument, "ablation grid is empty");
  std::vector<TrainConfig> cells;
  for (const auto& value : grid) cells.push_back(apply_ablation_cell(base, axis, value));
  AblationTable table{.axis = axis, .rows = {}};
  for (std::size_t i = 0; i < grid.size(); ++i) table.rows.push_back({grid[i], run_suite(dataset, test, task, cells[i], options)});
  return table;
}

std::string AblationTable::to_json() const {
  json rows_json = json::array();
  for (const auto& row : rows) rows_json.push_back({{"value", row.value}, {"result", json::parse(row.result.to_json())}});
  return json({{"axis", to_string(axis)}, {"rows", rows_json}}).dump(2);
}

std::string AblationTable::to_text() const {
  std::size_t value_width = std::string("value").size();
  std::size_t method_width = std::string("method").size();
  for (const auto& row : rows) {
    value_width = std::max(value_width, row.value.size());
    method_width = std::max(method_width, row.result.method.size());
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(value_width)) << "value" << "  " << std::setw(static_cast<int>(method_width))
      << "method" << "  " << std::right << std::setw(8) << "mean" << "  " << std::setw(8) << "std" << "  per-seed\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    out << std::left << std::setw(static_cast<int>(value_width)) << row.value << "  " << std::setw(static_cast<int>(method_width))
        << row.result.method << "  " << std::right << std::setw(8) << row.result.mean << "  " << std::setw(8) << row.result.std << " ";
    for (const auto& s : row.result.seeds) out << " " << s.metric;
    out << "\n";
  }
  return out.str();
}

}  // namespace demotune
