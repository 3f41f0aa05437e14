#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "demotune/checkpoint.hpp"
#include "demotune/contrastive.hpp"
#include "demotune/error.hpp"
#include "demotune/trainer.hpp"

namespace py = pybind11;
using namespace demotune;

namespace {

LabeledText make_example(std::string text_a, std::optional<std::string> text_b, std::string label, std::string uid) {
  return {.text_a = std::move(text_a), .text_b = std::move(text_b), .label = std::move(label), .uid = std::move(uid)};
}

}  // namespace

PYBIND11_MODULE(_demotune, m) {
  m.doc() = "Contrastive demonstration tuning core";
  m.attr("CONFIG_DIR") = DEMOTUNE_CONFIG_DIR;

  static py::exception<Error> error_type(m, "DemotuneError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object instance = py::reinterpret_borrow<py::object>(error_type)(e.what());
      instance.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), instance.ptr());
    }
  });

  py::class_<LabeledText>(m, "LabeledText")
      .def(py::init(&make_example), py::arg("text_a"), py::arg("text_b") = std::nullopt, py::arg("label") = "",
           py::arg("uid") = "")
      .def_readwrite("text_a", &LabeledText::text_a)
      .def_readwrite("text_b", &LabeledText::text_b)
      .def_readwrite("label", &LabeledText::label)
      .def_readwrite("uid", &LabeledText::uid);

  py::class_<Vocab>(m, "Vocab")
      .def_static("build", [](const std::vector<std::string>& texts, int min_freq) { return Vocab::build(texts, min_freq); },
                  py::arg("texts"), py::arg("min_freq") = 1)
      .def("__len__", &Vocab::size)
      .def("id", &Vocab::id)
      .def("token", &Vocab::token)
      .def("tokenize", &Vocab::tokenize)
      .def("detokenize", [](const Vocab& v, const std::vector<int>& ids) { return v.detokenize(ids); });

  py::class_<Verbalizer>(m, "Verbalizer")
      .def(py::init<std::vector<std::string>, std::vector<std::string>>(), py::arg("labels"), py::arg("words"))
      .def_property_readonly("labels", &Verbalizer::labels)
      .def_property_readonly("words", &Verbalizer::words)
      .def("index_of", &Verbalizer::index_of);

  py::enum_<BlockKind>(m, "BlockKind").value("none", BlockKind::None).value("virtual", BlockKind::Virtual).value("real", BlockKind::Real);

  py::class_<TokenPlan>(m, "TokenPlan")
      .def_readonly("token_ids", &TokenPlan::token_ids)
      .def_readonly("cls_pos", &TokenPlan::cls_pos)
      .def_readonly("mask_pos", &TokenPlan::mask_pos)
      .def_readonly("prompt_positions", &TokenPlan::prompt_positions)
      .def_readonly("virtual_positions", &TokenPlan::virtual_positions)
      .def_readonly("block_kinds", &TokenPlan::block_kinds)
      .def_readonly("truncated_tokens", &TokenPlan::truncated_tokens);

  py::class_<TemplateSpec>(m, "TemplateSpec")
      .def("is_pair", &TemplateSpec::is_pair)
      .def("prompt_length", &TemplateSpec::prompt_length)
      .def("__str__", &format_template);
  m.def("parse_template", &parse_template, py::arg("dsl"), py::arg("task_id") = "");

  py::class_<TaskConfig>(m, "TaskConfig")
      .def_readonly("task_id", &TaskConfig::task_id)
      .def_readonly("template", &TaskConfig::template_text)
      .def_readonly("verbalizer", &TaskConfig::verbalizer)
      .def_readonly("n", &TaskConfig::n)
      .def("manual_spec", &TaskConfig::manual_spec)
      .def("continuous_spec", &TaskConfig::continuous_spec, py::arg("prompt_length") = 4)
      .def("to_json", &task_config_to_json);
  m.def("load_task_config", &load_task_config);
  m.def("parse_task_config", &parse_task_config);
  m.def("synthetic_sentiment_task", &synthetic_sentiment_task);

  auto opts = [](int max_length, bool truncate, const std::string& placement) {
    return RenderOptions{.max_length = max_length, .truncate_inputs = truncate,
                         .placement = placement == "before" ? Placement::Before : Placement::After};
  };
  m.def("render_text", &render_text, py::arg("spec"), py::arg("example"), py::arg("label_word") = std::nullopt);
  m.def("render_anchor",
        [opts](const TemplateSpec& s, const LabeledText& x, const Vocab& v, int max_length, bool truncate, const std::string& placement) {
          return render_anchor(s, x, v, opts(max_length, truncate, placement));
        },
        py::arg("spec"), py::arg("example"), py::arg("vocab"), py::arg("max_length") = 128, py::arg("truncate") = false,
        py::arg("placement") = "after");
  m.def("build_virtual",
        [opts](const TemplateSpec& s, const LabeledText& x, int n, const Verbalizer& vb, const Vocab& v, int max_length,
               bool truncate, const std::string& placement) { return build_virtual(s, x, n, vb, v, opts(max_length, truncate, placement)); },
        py::arg("spec"), py::arg("example"), py::arg("n"), py::arg("verbalizer"), py::arg("vocab"), py::arg("max_length") = 128,
        py::arg("truncate") = false, py::arg("placement") = "after");
  m.def("build_positive",
        [opts](const TemplateSpec& s, const LabeledText& x, const LabeledText& d, int c, int n, const Verbalizer& vb,
               const Vocab& v, int max_length, bool truncate, const std::string& placement) {
          return build_positive(s, x, d, c, n, vb, v, opts(max_length, truncate, placement));
        },
        py::arg("spec"), py::arg("example"), py::arg("demo"), py::arg("replaced_class"), py::arg("n"), py::arg("verbalizer"),
        py::arg("vocab"), py::arg("max_length") = 128, py::arg("truncate") = false, py::arg("placement") = "after");
  m.def("build_demo_augmented",
        [opts](const TemplateSpec& s, const LabeledText& x, const std::vector<LabeledText>& demos, const Verbalizer& vb,
               const Vocab& v, int max_length, bool truncate, const std::string& placement) {
          return build_demo_augmented(s, x, demos, vb, v, opts(max_length, truncate, placement));
        },
        py::arg("spec"), py::arg("example"), py::arg("demos"), py::arg("verbalizer"), py::arg("vocab"),
        py::arg("max_length") = 128, py::arg("truncate") = false, py::arg("placement") = "after");

  m.def("infonce_loss", [](const ag::Matrix& a, const ag::Matrix& p, double tau) { return infonce_loss(PairBatch{a, p, tau}); },
        py::arg("anchors"), py::arg("positives"), py::arg("tau") = 0.05);
  m.def("byol_style_loss", [](const ag::Matrix& a, const ag::Matrix& p) { return byol_style_loss(PairBatch{a, p, 1.0}); },
        py::arg("anchors"), py::arg("positives"));

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](std::string task_id, std::vector<LabeledText> examples) { return Dataset{std::move(task_id), std::move(examples)}; }),
           py::arg("task_id"), py::arg("examples"))
      .def_readonly("task_id", &Dataset::task_id)
      .def_readonly("examples", &Dataset::examples)
      .def("__len__", [](const Dataset& d) { return d.examples.size(); })
      .def("to_jsonl", &to_jsonl);
  m.def("load_dataset", &load_dataset);
  m.def("parse_jsonl", &parse_jsonl);
  m.def("make_synthetic_sentiment", &make_synthetic_sentiment, py::arg("per_class"), py::arg("seed"),
        py::arg("task_id") = "synth_sentiment");

  py::class_<FewShotSplit>(m, "FewShotSplit")
      .def_readonly("train", &FewShotSplit::train)
      .def_readonly("dev", &FewShotSplit::dev)
      .def_readonly("k", &FewShotSplit::k)
      .def_readonly("seed", &FewShotSplit::seed)
      .def("manifest_json", &split_manifest_json);
  m.def("sample_kshot", &sample_kshot, py::arg("dataset"), py::arg("verbalizer"), py::arg("k"), py::arg("seed"));
  m.attr("DEFAULT_SEEDS") = kDefaultSeeds;

  m.def("default_train_config_json", [] { return train_config_to_json(TrainConfig{}); });
  m.def("train_config_json", [](const std::string& overrides) { return train_config_to_json(train_config_from_json(overrides)); });
  m.def("run_suite_json",
        [](const Dataset& data, const Dataset& test, const TaskConfig& task, const std::string& config_json,
           const std::vector<std::uint64_t>& seeds, int parallel_seeds) {
          const auto cfg = train_config_from_json(config_json);
          py::gil_scoped_release release;
          return run_suite(data, test, task, cfg, {.seeds = seeds, .parallel_seeds = parallel_seeds, .checkpoint_dir = std::nullopt}).to_json();
        },
        py::arg("dataset"), py::arg("test"), py::arg("task"), py::arg("config_json"), py::arg("seeds"), py::arg("parallel_seeds") = 1);
  m.def("aggregate_json",
        [](const std::vector<double>& metrics) {
          std::vector<SeedResult> seeds;
          for (std::size_t i = 0; i < metrics.size(); ++i) seeds.push_back({.seed = i, .metric = metrics[i]});
          return aggregate("", "", std::move(seeds), "").to_json();
        });
  m.def("accuracy", [](const std::vector<int>& p, const std::vector<int>& g) { return accuracy(p, g); });
  m.def("binary_f1", [](const std::vector<int>& p, const std::vector<int>& g, int positive) { return binary_f1(p, g, positive); });
}
