// Acceptance suite: one PASS/FAIL line per criterion; exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "demotune/contrastive.hpp"
#include "demotune/error.hpp"
#include "demotune/trainer.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace demotune;
using ag::Matrix;

namespace {

// Tolerances and budgets.
constexpr double kLossTolerance = 1e-6;
constexpr double kGradientTolerance = 1e-4;
constexpr double kInvariantTolerance = 1e-10;
constexpr double kAggregationTolerance = 1e-9;
constexpr double kAccuracyFloor = 0.9;
constexpr double kLossBudgetSeconds = 10.0;
constexpr double kGradientBudgetSeconds = 120.0;
constexpr double kDeskBudgetSeconds = 300.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome loss_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst = 0.0;
  const int batches = 2000;
  for (int b = 0; b < batches; ++b) {
    const int n = 1 + static_cast<int>(rng.index(8));
    const int d = 1 + static_cast<int>(rng.index(16));
    const double tau = 0.02 + 2.0 * rng.uniform();
    const PairBatch batch{.anchors = random_matrix(rng, n, d), .positives = random_matrix(rng, n, d), .tau = tau};
    const auto h = oracle::to_rows(batch.anchors);
    const auto hp = oracle::to_rows(batch.positives);
    worst = std::max(worst, std::abs(infonce_loss(batch) - oracle::infonce(h, hp, tau)));
    worst = std::max(worst, std::abs(byol_style_loss(batch) - oracle::byol(h, hp)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kLossTolerance && secs < kLossBudgetSeconds,
          fmt("%d batches, max abs diff %.2e (tol %.0e), %.2fs", batches, worst, kLossTolerance, secs)};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto task = synthetic_sentiment_task();
  const auto data = make_synthetic_sentiment(8, 21);
  const Dataset* sources[] = {&data};
  const auto vocab = build_task_vocab(task, sources);
  const auto split = sample_kshot(data, task.verbalizer, 4, 13);

  TrainConfig cfg;
  cfg.prompt_style = PromptStyle::Continuous;
  cfg.prompt_length = 2;
  cfg.n = 2;
  cfg.encoder = {.layers = 2, .heads = 2, .dim = 16, .ff_dim = 32, .max_length = 48, .vocab_size = 0, .init_std = 0.2,
                 .embedding_std = 0.5};
  cfg.render.max_length = 48;
  const auto model = init_model(task, cfg, vocab, split, 5);
  const std::span<const LabeledText> batch(split.train.data(), 3);
  const auto params = model.trainable();

  // Fixed positives so every loss below is a deterministic function of the parameters.
  Rng draw(77);
  const auto positives = batch_loss(model, batch, draw).positives;
  auto reps = [&](bool positive) {
    std::vector<ag::Var> rows;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto plan = positive ? positives[i] : build_virtual(model.spec, batch[i], model.n(), task.verbalizer, vocab, cfg.render);
      rows.push_back(model.encoder->encode(plan, make_injection(plan, &model.prompt, &model.bank)).h_cls());
    }
    return ag::concat_rows(rows);
  };
  auto with_mode = [&](ClMode mode, double lambda) {
    return [&model, &batch, mode, lambda] {
      auto m = const_cast<TrainedModel*>(&model);
      const auto saved = m->config.loss;
      m->config.loss.mode = mode;
      m->config.loss.lambda = lambda;
      Rng rng(77);
      auto total = batch_loss(model, batch, rng).total;
      m->config.loss = saved;
      return total;
    };
  };
  const std::vector<std::pair<std::string, std::function<ag::Var()>>> losses = {
      {"ce", with_mode(ClMode::Off, 1.0)},
      {"infonce", [&] { return infonce_loss(reps(false), reps(true), 0.05); }},
      {"negative_free", [&] { return byol_style_loss(reps(false), reps(true)); }},
      {"joint(no_negatives)", with_mode(ClMode::NoNegatives, 0.5)},
      {"joint(in_batch)", with_mode(ClMode::InBatchNegatives, 0.5)},
  };
  double worst = 0.0;
  std::string worst_at;
  std::size_t groups = 0;
  int zero_groups = 0;
  bool bank_checked = false;
  for (const auto& [name, fn] : losses) {
    const auto reports = gradcheck::check(fn, params, 4, 31);
    groups = reports.size();
    for (const auto& r : reports) {
      bank_checked = bank_checked || (r.name.starts_with("bank.") && !r.zero_gradient);
      zero_groups += r.zero_gradient ? 1 : 0;
      if (r.relative_error > worst) {
        worst = r.relative_error;
        worst_at = name + "/" + r.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradientTolerance && bank_checked && secs < kGradientBudgetSeconds,
          fmt("%zu losses x %zu parameter groups (%d zero-gradient), worst rel err %.2e at %s (tol %.0e), %.2fs",
              losses.size(), groups, zero_groups, worst, worst_at.c_str(), kGradientTolerance, secs)};
}

Outcome template_goldens() {
  const auto goldens = fixtures::load_goldens();
  int golden_checks = 0, golden_fail = 0, diff_cases = 0, diff_fail = 0;
  for (const auto& name : fixtures::kTaskNames) {
    const auto task = fixtures::load_task(name);
    const auto spec = task.manual_spec();
    const auto ex = fixtures::golden_example(task);
    for (const auto& [view, got] : {std::pair{std::string("anchor"), render_text(spec, ex)},
                                    std::pair{std::string("demo0"), render_text(spec, ex, task.verbalizer.words()[0])}}) {
      ++golden_checks;
      const auto it = goldens.find({name, view});
      if (it == goldens.end() || it->second != got) ++golden_fail;
    }
    const auto vocab = fixtures::vocab_for(task);
    Rng rng(fixtures::fnv1a_seed(name));
    for (int trial = 0; trial < 100; ++trial) {
      const auto x = fixtures::random_example(rng, task, 10, "x");
      const int c = static_cast<int>(rng.index(static_cast<std::size_t>(task.verbalizer.num_classes())));
      auto demo = fixtures::random_example(rng, task, 10, "d");
      demo.label = task.verbalizer.labels()[static_cast<std::size_t>(c)];
      const int n = 1 + static_cast<int>(rng.index(5));
      const auto tilde = build_virtual(spec, x, n, task.verbalizer, vocab);
      const auto plus = build_positive(spec, x, demo, c, n, task.verbalizer, vocab);
      ++diff_cases;
      if (plus.token_ids != fixtures::expected_positive(tilde.token_ids, fixtures::demo_tokens(spec, demo, task.verbalizer, vocab), c)) {
        ++diff_fail;
      }
    }
  }
  return {golden_fail == 0 && diff_fail == 0,
          fmt("%d golden renders (%d mismatched), %d diff-confinement cases over %zu tasks (%d violations)", golden_checks,
              golden_fail, diff_cases, fixtures::kTaskNames.size(), diff_fail)};
}

Outcome protocol_determinism() {
  const auto binary = make_synthetic_sentiment(60, 5);
  const auto multi = make_synthetic_multiclass(14, 40, 12, 6);
  const std::vector<std::pair<const Dataset*, TaskConfig>> corpora = {{&binary, synthetic_sentiment_task()},
                                                                      {&multi, synthetic_multiclass_task(14)}};
  int checks = 0;
  std::string problem;
  for (const auto& [ds, task] : corpora) {
    for (auto seed : kDefaultSeeds) {
      const auto split = sample_kshot(*ds, task.verbalizer, 16, seed);
      std::map<std::string, int> train_hist, dev_hist;
      std::set<std::string> train_uids;
      for (const auto& ex : split.train) {
        ++train_hist[ex.label];
        train_uids.insert(ex.uid);
      }
      for (const auto& ex : split.dev) {
        ++dev_hist[ex.label];
        if (train_uids.contains(ex.uid)) problem = "train/dev overlap";
      }
      for (const auto& label : task.verbalizer.labels()) {
        if (train_hist[label] != 16 || dev_hist[label] != 16) problem = "non-flat histogram";
      }
      if (split_manifest_json(split) != split_manifest_json(sample_kshot(*ds, task.verbalizer, 16, seed))) {
        problem = "manifest differs on rerun";
      }
      ++checks;
    }
  }
  return {problem.empty(), fmt("%d (corpus, seed) splits at K=16%s%s", checks, problem.empty() ? "" : ": ", problem.c_str())};
}

Outcome multiclass_feasibility() {
  const auto task = synthetic_multiclass_task(14);
  const auto data = make_synthetic_multiclass(14, 2, 40, 3);
  const Dataset* sources[] = {&data};
  const auto vocab = build_task_vocab(task, sources);
  const auto spec = task.manual_spec();
  const auto& anchor = data.examples.front();
  const auto groups = data.by_class(task.verbalizer);
  std::vector<LabeledText> demos;
  for (const auto& g : groups) demos.push_back(g.back());
  bool raised = false;
  for (bool truncate : {false, true}) {
    const RenderOptions opts{.max_length = 128, .truncate_inputs = truncate, .placement = Placement::After};
    try {
      build_demo_augmented(spec, anchor, demos, task.verbalizer, vocab, opts);
      raised = false;
      break;
    } catch (const Error& e) {
      raised = e.kind() == ErrorKind::OverLength;
      if (!raised) break;
    }
  }
  const RenderOptions opts{.max_length = 128, .truncate_inputs = false, .placement = Placement::After};
  int virtual_len = -1;
  try {
    virtual_len = static_cast<int>(build_virtual(spec, anchor, 1, task.verbalizer, vocab, opts).token_ids.size());
  } catch (const Error&) {
  }
  return {raised && virtual_len > 0 && virtual_len <= 128,
          fmt("T* with 14 x 40-token demos %s OverLength; T~ (n=1) length %d of 128", raised ? "raises" : "does not raise",
              virtual_len)};
}

TrainConfig desk_config() {
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.batch_size = 8;
  cfg.max_steps = 150;
  cfg.eval_every = 10;
  cfg.k = 16;
  cfg.method = Method::DemoTuning;
  cfg.encoder = {.layers = 2, .heads = 4, .dim = 64, .ff_dim = 128, .max_length = 32, .vocab_size = 0, .init_std = 0.02,
                 .embedding_std = 0.1};
  cfg.render.max_length = 32;
  return cfg;
}

Outcome desk_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto task = synthetic_sentiment_task();
  const auto data = make_synthetic_sentiment(200, 7);
  auto with_cl = desk_config();
  with_cl.loss.mode = ClMode::NoNegatives;
  auto without = desk_config();
  without.loss.mode = ClMode::Off;
  const auto a = run_suite(data, Dataset{}, task, with_cl);
  const auto b = run_suite(data, Dataset{}, task, without);
  int paired = 0;
  for (std::size_t i = 0; i < a.seeds.size(); ++i) paired += a.seeds[i].metric >= b.seeds[i].metric ? 1 : 0;
  const double secs = seconds_since(t0);
  const bool ordering = a.mean >= b.mean || paired >= 4;
  std::size_t params = 0;
  {
    const auto split = sample_kshot(data, task.verbalizer, 16, 13);
    const Dataset* sources[] = {&data};
    for (const auto& p : init_model(task, with_cl, build_task_vocab(task, sources), split, 1).trainable()) {
      params += static_cast<std::size_t>(p.var.value().size());
    }
  }
  return {ordering && a.mean >= kAccuracyFloor && b.mean >= kAccuracyFloor && secs < kDeskBudgetSeconds,
          fmt("%zu params; no_negatives %.4f +- %.4f vs off %.4f +- %.4f; paired >= on %d/5; %.1fs", params, a.mean, a.std,
              b.mean, b.std, paired, secs)};
}

Outcome negative_free_invariants() {
  Rng rng(4242);
  const int pairs = 10000;
  double worst = 0.0;
  bool in_range = true;
  for (int i = 0; i < pairs; ++i) {
    const int d = 1 + static_cast<int>(rng.index(16));
    const Matrix x = random_matrix(rng, 1, d);
    const Matrix y = random_matrix(rng, 1, d);
    const double s = std::exp(4.0 * rng.uniform() - 2.0);
    const double t = std::exp(4.0 * rng.uniform() - 2.0);
    const double xy = byol_style_loss({.anchors = x, .positives = y, .tau = 1});
    in_range = in_range && xy >= 0.0 && xy <= 4.0 + kInvariantTolerance;
    worst = std::max(worst, std::abs(xy - byol_style_loss({.anchors = y, .positives = x, .tau = 1})));
    worst = std::max(worst, std::abs(xy - byol_style_loss({.anchors = s * x, .positives = t * y, .tau = 1})));
    worst = std::max(worst, std::abs(byol_style_loss({.anchors = x, .positives = x, .tau = 1})));
    worst = std::max(worst, std::abs(byol_style_loss({.anchors = x, .positives = s * x, .tau = 1})));
  }
  return {in_range && worst <= kInvariantTolerance,
          fmt("%d pairs: range [0, 4] %s, max symmetry/scale/identity deviation %.2e (tol %.0e)", pairs,
              in_range ? "holds" : "VIOLATED", worst, kInvariantTolerance)};
}

Outcome aggregation() {
  Rng rng(88);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<SeedResult> seeds;
    std::vector<double> values;
    const int n = 1 + static_cast<int>(rng.index(10));
    for (int i = 0; i < n; ++i) {
      values.push_back(rng.uniform());
      seeds.push_back({.seed = static_cast<std::uint64_t>(i), .metric = values.back()});
    }
    const auto r = aggregate("t", "m", seeds, "h");
    const auto o = oracle::welford(values);
    worst = std::max({worst, std::abs(r.mean - o.mean), std::abs(r.std - o.population_std)});
  }
  // One real suite: its reported numbers must be recomputable from its own per-seed values.
  const auto task = synthetic_sentiment_task();
  const auto data = make_synthetic_sentiment(24, 2);
  auto cfg = desk_config();
  cfg.k = 4;
  cfg.max_steps = 4;
  cfg.eval_every = 2;
  cfg.encoder.dim = 16;
  cfg.encoder.ff_dim = 32;
  const auto suite = run_suite(data, Dataset{}, task, cfg);
  std::vector<double> per_seed;
  for (const auto& s : suite.seeds) per_seed.push_back(s.metric);
  const auto o = oracle::welford(per_seed);
  worst = std::max({worst, std::abs(suite.mean - o.mean), std::abs(suite.std - o.population_std)});
  return {worst <= kAggregationTolerance && suite.seeds.size() == kDefaultSeeds.size(),
          fmt("1000 synthetic seed sets + one run_suite, max deviation from oracle %.2e (tol %.0e)", worst,
              kAggregationTolerance)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"loss oracle equivalence", loss_oracles},
      {"gradient suite", gradient_suite},
      {"template goldens and diff confinement", template_goldens},
      {"protocol determinism", protocol_determinism},
      {"multi-class feasibility", multiclass_feasibility},
      {"desk-scale directional experiment", desk_experiment},
      {"negative-free loss invariants", negative_free_invariants},
      {"aggregation vs statistics oracle", aggregation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    failed += out.pass ? 0 : 1;
    std::printf("[%s] %zu %s: %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
