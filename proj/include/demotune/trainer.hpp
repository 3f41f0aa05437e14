#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "demotune/contrastive.hpp"
#include "demotune/data.hpp"
#include "demotune/demo_bank.hpp"
#include "demotune/encoder.hpp"
#include "demotune/task.hpp"

namespace demotune {

enum class Method { Finetune, PromptManual, PromptContinuous, DemoReal, DemoTuning };
enum class PromptStyle { Manual, Continuous };

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);
std::string_view to_string(PromptStyle style);
PromptStyle prompt_style_from_string(std::string_view name);

struct TrainConfig {
  double lr = 1e-5;
  int batch_size = 8;
  int max_steps = 1000;
  int eval_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;

  Method method = Method::DemoTuning;
  PromptStyle prompt_style = PromptStyle::Manual;  // base template for the demo methods
  int prompt_length = 4;
  JointLossConfig loss;
  int n = 0;  // 0 takes the task config's n
  bool allow_any_n = false;
  SamplingStrategy sampling = SamplingStrategy::Random;
  InitMethod init = InitMethod::VocabSample;
  MeanSource mean_source = MeanSource::Embedding;
  bool freeze_encoder = false;
  int k = 16;
  std::uint64_t global_seed = 0;

  TinyTransformerConfig encoder;
  RenderOptions render{.max_length = 128, .truncate_inputs = true, .placement = Placement::After};

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view json_text, TrainConfig base = {});
std::string config_hash(const TaskConfig& task, const TrainConfig& config);

// Decoupled-weight-decay Adam; biases and norm gains are not decayed.
class AdamW {
 public:
  AdamW(std::vector<NamedParameter> params, double lr, double beta1, double beta2, double eps, double weight_decay);

  void zero_grad();
  void step();
  int steps() const { return t_; }

 private:
  struct Slot {
    ag::Var var;
    ag::Matrix m, v;
    bool decay = true;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  int t_ = 0;
};

// Everything needed to predict: encoder, trainable extras, and the demo pools.
struct TrainedModel {
  std::unique_ptr<TinyTransformer> encoder;
  VirtualDemoBank bank;
  ag::Var prompt;  // m x d, undefined unless the template has prompt slots
  std::optional<ClassifierHead> head;
  TaskConfig task;
  TrainConfig config;
  TemplateSpec spec;
  std::vector<int> label_ids;
  ClassPools demo_pools;

  int n() const;
  bool uses_virtual() const;
  std::vector<NamedParameter> trainable() const;
  std::vector<NamedParameter> all_parameters() const;
};

// Vocabulary over every text the run can see plus template and label words.
Vocab build_task_vocab(const TaskConfig& task, std::span<const Dataset* const> datasets);

TrainedModel init_model(const TaskConfig& task, const TrainConfig& config, Vocab vocab, const FewShotSplit& split,
                        std::uint64_t seed);

// Inference-time plan: T(x), T*(x), or T~(x) by method. Real demos for T*
// come from a generator seeded by the example uid.
TokenPlan inference_plan(const TrainedModel& model, const LabeledText& example);

struct BatchLoss {
  ag::Var total;
  double ce = 0.0;
  double contrastive = 0.0;
  std::vector<TokenPlan> positives;  // empty unless the contrastive term is on
};

// One minibatch objective. For demo_tuning with CL on, each example draws a
// replaced class and a real demonstration of it from demo_rng.
BatchLoss batch_loss(const TrainedModel& model, std::span<const LabeledText> batch, Rng& demo_rng);

std::vector<double> predict_distribution(const TrainedModel& model, const LabeledText& example);
std::string infer(const LabeledText& example, const TrainedModel& model);

double accuracy(std::span<const int> predicted, std::span<const int> gold);
double binary_f1(std::span<const int> predicted, std::span<const int> gold, int positive);
double evaluate(std::span<const LabeledText> test, const TrainedModel& model, Metric metric);

struct CurvePoint {
  int step = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
};

struct TrainOutcome {
  TrainedModel model;  // restored to the best-dev state
  std::vector<CurvePoint> curve;
  int best_step = 0;
  double best_dev = 0.0;
};

TrainOutcome train_one(const FewShotSplit& split, const TaskConfig& task, const TrainConfig& config, const Vocab& vocab);

struct SeedResult {
  std::uint64_t seed = 0;
  double metric = 0.0;
  double dev_metric = 0.0;
  int best_step = 0;
};

struct RunResult {
  std::string task;
  std::string method;
  std::vector<SeedResult> seeds;
  double mean = 0.0;
  double std = 0.0;  // population
  std::string config_hash;

  std::string to_json() const;
};

// Mean and population std of per-seed metrics.
RunResult aggregate(std::string task, std::string method, std::vector<SeedResult> seeds, std::string hash);

std::string method_label(const TrainConfig& config);

struct SuiteOptions {
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  int parallel_seeds = 1;
  std::optional<std::filesystem::path> checkpoint_dir;
};

// Per seed: sample the K-shot split, train, select on dev, score on test.
// An empty test set falls back to the examples outside that seed's split.
RunResult run_suite(const Dataset& dataset, const Dataset& test, const TaskConfig& task, const TrainConfig& config,
                    const SuiteOptions& options = {});

enum class AblationAxis { NegVsNoNeg, LengthN, SamplingStrategy };

std::string_view to_string(AblationAxis axis);
AblationAxis ablation_axis_from_string(std::string_view name);

struct AblationRow {
  std::string value;
  RunResult result;
};

struct AblationTable {
  AblationAxis axis;
  std::vector<AblationRow> rows;

  std::string to_json() const;
  std::string to_text() const;
};

// Grid values: neg_vs_noneg {in_batch_negatives, no_negatives}; length_n
// positive ints; sampling_strategy {random, filter_based, mean_virtual, demo_tuning}.
AblationTable ablate(const Dataset& dataset, const Dataset& test, const TaskConfig& task, const TrainConfig& base,
                     AblationAxis axis, const std::vector<std::string>& grid, const SuiteOptions& options = {});
TrainConfig apply_ablation_cell(const TrainConfig& base, AblationAxis axis, const std::string& value);

}  // namespace demotune
