// demotune command-line tool: synth, sample-splits, train, ablate.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 training divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "demotune/checkpoint.hpp"
#include "demotune/error.hpp"
#include "demotune/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace demotune;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

fs::path config_dir() {
  if (const char* env = std::getenv("DEMOTUNE_CONFIG_DIR")) return env;
  return DEMOTUNE_CONFIG_DIR;
}

// A task is either a path to a JSON config or the name of a shipped one.
TaskConfig resolve_task(const std::string& task) {
  if (task.empty()) throw UsageError("--task is required");
  const fs::path as_path(task);
  if (as_path.extension() == ".json" || fs::exists(as_path)) return load_task_config(as_path);
  return load_task_config(config_dir() / (task + ".json"));
}

fs::path resolve_data(const std::string& data, const std::string& data_dir, const TaskConfig& task, const char* split) {
  if (!data.empty()) return data;
  for (const char* ext : {".jsonl", ".tsv"}) {
    const auto candidate = fs::path(data_dir) / task.task_id / (std::string(split) + ext);
    if (fs::exists(candidate)) return candidate;
  }
  return fs::path(data_dir) / task.task_id / (std::string(split) + ".jsonl");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "5" means the first five protocol seeds; "13,21,42" lists them.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  const auto items = split_list(text);
  if (items.empty()) throw UsageError("--seeds is empty");
  std::vector<std::uint64_t> out;
  try {
    if (items.size() == 1) {
      const auto count = std::stoull(items.front());
      if (count == 0) throw UsageError("--seeds count must be positive");
      for (std::uint64_t i = 0; i < count; ++i) {
        out.push_back(i < kDefaultSeeds.size() ? kDefaultSeeds[i] : mix_seed(kDefaultSeeds.back(), i));
      }
      return out;
    }
    for (const auto& item : items) out.push_back(std::stoull(item));
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse --seeds '" + text + "'");
  }
  return out;
}

// Flags mirror TrainConfig keys; each given flag becomes a key of an override object.
struct TrainFlags {
  std::optional<double> lr, beta1, beta2, weight_decay, adam_eps, lambda, tau, init_std, embedding_std;
  std::optional<int> batch_size, max_steps, eval_every, prompt_length, n, k, layers, heads, dim, ff_dim, max_length;
  std::optional<std::string> method, prompt_style, cl_mode, cl_target, sampling, init, mean_source, placement;
  std::optional<bool> stop_grad_positive, allow_any_n, freeze_encoder, truncate_inputs;
  std::optional<std::uint64_t> global_seed;

  void attach(CLI::App* app) {
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--batch-size", batch_size);
    app->add_option("--max-steps", max_steps);
    app->add_option("--eval-every", eval_every);
    app->add_option("--beta1", beta1);
    app->add_option("--beta2", beta2);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--adam-eps", adam_eps);
    app->add_option("--method", method, "finetune|prompt_manual|prompt_continuous|demo_real|demo_tuning");
    app->add_option("--prompt-style", prompt_style, "manual|continuous");
    app->add_option("--prompt-length", prompt_length);
    app->add_option("--cl-mode", cl_mode, "no_negatives|in_batch_negatives|off");
    app->add_option("--lambda", lambda);
    app->add_option("--tau", tau);
    app->add_option("--stop-grad-positive", stop_grad_positive);
    app->add_option("--cl-target", cl_target, "cls|mask");
    app->add_option("--n", n, "virtual demonstration length");
    app->add_option("--allow-any-n", allow_any_n);
    app->add_option("--sampling", sampling, "random|filter_based|mean_virtual");
    app->add_option("--init", init, "vocab_sample|gaussian");
    app->add_option("--mean-source", mean_source, "embedding|encoder");
    app->add_option("--freeze-encoder", freeze_encoder);
    app->add_option("--k", k, "examples per class");
    app->add_option("--global-seed", global_seed);
    app->add_option("--layers", layers);
    app->add_option("--heads", heads);
    app->add_option("--dim", dim);
    app->add_option("--ff-dim", ff_dim);
    app->add_option("--init-std", init_std);
    app->add_option("--embedding-std", embedding_std);
    app->add_option("--max-length", max_length);
    app->add_option("--truncate-inputs", truncate_inputs);
    app->add_option("--placement", placement, "after|before");
  }

  json overrides() const {
    json doc = json::object();
    auto put = [&](const char* key, const auto& value) {
      if (value) doc[key] = *value;
    };
    put("lr", lr);
    put("batch_size", batch_size);
    put("max_steps", max_steps);
    put("eval_every", eval_every);
    put("beta1", beta1);
    put("beta2", beta2);
    put("weight_decay", weight_decay);
    put("adam_eps", adam_eps);
    put("method", method);
    put("prompt_style", prompt_style);
    put("prompt_length", prompt_length);
    put("cl_mode", cl_mode);
    put("lambda", lambda);
    put("tau", tau);
    put("stop_grad_positive", stop_grad_positive);
    put("cl_target", cl_target);
    put("n", n);
    put("allow_any_n", allow_any_n);
    put("sampling", sampling);
    put("init", init);
    put("mean_source", mean_source);
    put("freeze_encoder", freeze_encoder);
    put("k", k);
    put("global_seed", global_seed);
    put("max_length", max_length);
    put("truncate_inputs", truncate_inputs);
    put("placement", placement);
    json enc = json::object();
    auto put_enc = [&](const char* key, const auto& value) {
      if (value) enc[key] = *value;
    };
    put_enc("layers", layers);
    put_enc("heads", heads);
    put_enc("dim", dim);
    put_enc("ff_dim", ff_dim);
    put_enc("init_std", init_std);
    put_enc("embedding_std", embedding_std);
    if (!enc.empty()) doc["encoder"] = enc;
    return doc;
  }
};

struct RunFlags {
  std::string config;
  std::string task;
  std::string data;
  std::string data_dir = "data";
  std::string test;
  std::string seeds;
  std::string out;
  int parallel_seeds = 1;
  bool no_checkpoints = false;
  TrainFlags train;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "run spec JSON {task, data, test, method, seeds, out, train: {...}}");
    app->add_option("--task", task, "task name under the config dir or a task JSON path");
    app->add_option("--data", data, "training pool (.jsonl or .tsv)");
    app->add_option("--data-dir", data_dir, "looks up <dir>/<task>/train.jsonl when --data is absent");
    app->add_option("--test", test, "test set; defaults to the pool minus each seed's split");
    app->add_option("--seeds", seeds, "count or comma-separated list");
    app->add_option("--out", out, "output directory");
    app->add_option("--parallel-seeds", parallel_seeds, "seeds trained concurrently");
    app->add_flag("--no-checkpoints", no_checkpoints, "skip per-seed checkpoints");
    train.attach(app);
  }
};

struct ResolvedRun {
  TaskConfig task;
  Dataset data;
  Dataset test;
  TrainConfig config;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  fs::path out = "runs";
};

// Precedence: built-in defaults < run spec file < DEMOTUNE_SEED < flags.
ResolvedRun resolve_run(const RunFlags& flags) {
  json spec = json::object();
  fs::path base;
  if (!flags.config.empty()) {
    try {
      spec = json::parse(read_text(flags.config));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, flags.config + ": " + e.what());
    }
    base = fs::path(flags.config).parent_path();
  }
  auto from_spec = [&](const char* key) -> std::string {
    if (!spec.contains(key)) return {};
    const auto value = spec[key].get<std::string>();
    if (value.empty() || fs::path(value).is_absolute() || base.empty()) return value;
    const auto rel = base / value;
    return fs::exists(rel) || std::string(key) != "task" ? rel.string() : value;
  };
  auto pick = [](const std::string& flag, const std::string& file) { return flag.empty() ? file : flag; };

  ResolvedRun run;
  run.task = resolve_task(pick(flags.task, from_spec("task")));
  const auto data_path = resolve_data(pick(flags.data, from_spec("data")), flags.data_dir, run.task, "train");
  if (!fs::exists(data_path)) throw Error(ErrorKind::Io, "dataset " + data_path.string() + " does not exist");
  run.data = load_dataset(data_path, run.task);
  const auto test_path = pick(flags.test, from_spec("test"));
  if (!test_path.empty()) {
    if (!fs::exists(test_path)) throw Error(ErrorKind::Io, "test set " + test_path + " does not exist");
    run.test = load_dataset(test_path, run.task);
  }

  json train = spec.value("train", json::object());
  if (spec.contains("method")) train["method"] = spec["method"];
  if (const char* env = std::getenv("DEMOTUNE_SEED")) {
    try {
      train["global_seed"] = std::stoull(env);
    } catch (const std::logic_error&) {
      throw UsageError(std::string("DEMOTUNE_SEED='") + env + "' is not an unsigned integer");
    }
  }
  run.config = train_config_from_json(train.dump());
  run.config = train_config_from_json(flags.train.overrides().dump(), run.config);

  if (!flags.seeds.empty()) {
    run.seeds = parse_seeds(flags.seeds);
  } else if (spec.contains("seeds")) {
    run.seeds = spec["seeds"].is_array() ? spec["seeds"].get<std::vector<std::uint64_t>>() : parse_seeds(spec["seeds"].dump());
  }
  run.out = pick(flags.out, from_spec("out"));
  if (run.out.empty()) run.out = "runs";
  return run;
}

SuiteOptions suite_options(const ResolvedRun& run, const RunFlags& flags, bool checkpoints) {
  SuiteOptions opts{.seeds = run.seeds, .parallel_seeds = flags.parallel_seeds, .checkpoint_dir = std::nullopt};
  if (checkpoints) {
    opts.checkpoint_dir = run.out / "checkpoints";
    fs::create_directories(*opts.checkpoint_dir);
  }
  return opts;
}

int cmd_train(const RunFlags& flags) {
  const auto run = resolve_run(flags);
  const auto result = run_suite(run.data, run.test, run.task, run.config, suite_options(run, flags, !flags.no_checkpoints));
  write_text(run.out / "metrics.json", result.to_json() + "\n");
  write_text(run.out / "train_config.json", json::parse(train_config_to_json(run.config)).dump(2) + "\n");
  std::cout << result.task << " " << result.method << " mean=" << result.mean << " std=" << result.std
            << " config_hash=" << result.config_hash << "\n";
  return 0;
}

std::vector<std::string> default_grid(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::NegVsNoNeg: return {"in_batch_negatives", "no_negatives"};
    case AblationAxis::LengthN: return {"1", "2", "3", "5"};
    case AblationAxis::SamplingStrategy: return {"random", "filter_based", "mean_virtual", "demo_tuning"};
  }
  return {};
}

int cmd_ablate(const RunFlags& flags, const std::string& axis_name, const std::optional<std::string>& grid_text) {
  AblationAxis axis;
  try {
    axis = ablation_axis_from_string(axis_name);
  } catch (const Error& e) {
    throw UsageError(e.message());
  }
  const auto grid = grid_text ? split_list(*grid_text) : default_grid(axis);
  if (grid.empty()) throw UsageError("--grid is empty");
  const auto run = resolve_run(flags);
  const auto table = ablate(run.data, run.test, run.task, run.config, axis, grid, suite_options(run, flags, false));
  const std::string stem = "ablation_" + std::string(to_string(axis));
  write_text(run.out / (stem + ".json"), table.to_json() + "\n");
  write_text(run.out / (stem + ".txt"), table.to_text());
  std::cout << table.to_text();
  return 0;
}

int cmd_sample_splits(const RunFlags& flags) {
  if (flags.train.k && *flags.train.k < 1) throw UsageError("--k must be >= 1");
  const auto task = resolve_task(flags.task);
  const auto data_path = resolve_data(flags.data, flags.data_dir, task, "train");
  const auto data = load_dataset(data_path, task);
  const int k = flags.train.k.value_or(16);
  const auto seeds = flags.seeds.empty() ? kDefaultSeeds : parse_seeds(flags.seeds);
  TrainConfig hashed;
  hashed.k = k;
  const auto hash = config_hash(task, hashed);
  const fs::path out = flags.out.empty() ? fs::path("splits") / task.task_id : fs::path(flags.out);
  for (const auto& split : make_seed_suite(data, task.verbalizer, k, seeds)) {
    auto doc = json::parse(split_manifest_json(split));
    doc["config_hash"] = hash;
    const auto path = out / (task.task_id + "_k" + std::to_string(k) + "_seed" + std::to_string(split.seed) + ".json");
    write_text(path, doc.dump(2) + "\n");
    std::cout << path.string() << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& kind, int per_class, std::uint64_t seed, int classes, int length, const std::string& out) {
  Dataset data;
  if (kind == "sentiment") {
    data = make_synthetic_sentiment(per_class, seed);
  } else if (kind == "multiclass") {
    data = make_synthetic_multiclass(classes, per_class, length, seed);
  } else {
    throw UsageError("--kind must be sentiment or multiclass");
  }
  if (out.empty() || out == "-") {
    std::cout << to_jsonl(data);
  } else {
    write_text(out, to_jsonl(data));
  }
  return 0;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return kExitUsage;
    case ErrorKind::DivergedLoss: return kExitDiverged;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive demonstration tuning for few-shot text classification"};
  app.require_subcommand(1);
  // Later flags win, so a command line can override an earlier value.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  RunFlags train_flags, ablate_flags, split_flags;
  auto* train = app.add_subcommand("train", "train and evaluate one method over the seed suite");
  train_flags.attach(train);

  auto* ablate_cmd = app.add_subcommand("ablate", "run one ablation axis and emit a comparison table");
  ablate_flags.attach(ablate_cmd);
  std::string axis;
  std::optional<std::string> grid;
  ablate_cmd->add_option("--axis", axis, "neg_vs_noneg|length_n|sampling_strategy")->required();
  ablate_cmd->add_option("--grid", grid, "comma-separated cell values");

  auto* splits = app.add_subcommand("sample-splits", "write per-seed K-shot split manifests");
  splits->add_option("--task", split_flags.task)->required();
  splits->add_option("--data", split_flags.data);
  splits->add_option("--data-dir", split_flags.data_dir);
  splits->add_option("--k", split_flags.train.k);
  splits->add_option("--seeds", split_flags.seeds);
  splits->add_option("--out", split_flags.out);

  auto* synth = app.add_subcommand("synth", "generate a synthetic JSONL corpus");
  std::string kind = "sentiment", synth_out;
  int per_class = 200, classes = 14, length = 40;
  std::uint64_t synth_seed = 7;
  synth->add_option("--kind", kind, "sentiment|multiclass");
  synth->add_option("--per-class", per_class);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--classes", classes);
  synth->add_option("--length", length, "tokens per multiclass sentence");
  synth->add_option("--out", synth_out, "output path, '-' for stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*ablate_cmd) return cmd_ablate(ablate_flags, axis, grid);
    if (*splits) return cmd_sample_splits(split_flags);
    if (*synth) return cmd_synth(kind, per_class, synth_seed, classes, length, synth_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
