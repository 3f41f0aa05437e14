#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "demotune/demo_bank.hpp"
#include "demotune/encoder.hpp"
#include "demotune/error.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace demotune;

namespace {

TinyTransformerConfig small_config() {
  return {.layers = 2, .heads = 2, .dim = 16, .ff_dim = 32, .max_length = 64, .vocab_size = 0, .init_std = 0.2,
          .embedding_std = 0.5};
}

struct Setup {
  TaskConfig task = fixtures::load_task("sst5");
  Vocab vocab = fixtures::vocab_for(task);
  TinyTransformer encoder{small_config(), vocab, 11};
  LabeledText example{.text_a = "alpha bravo , delta", .text_b = std::nullopt, .label = "2", .uid = "x"};
};

std::vector<double> row_of(const ag::Var& v) { return {v.value().data(), v.value().data() + v.cols()}; }

}  // namespace

TEST_CASE("softmax of logits (2, 0)") {
  const std::vector<double> logits = {2.0, 0.0};
  const auto p = softmax(logits);
  CHECK(p[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / (std::exp(2.0) + 1.0)).epsilon(1e-12));
}

TEST_CASE("label distribution reads the MLM head at the mask position") {
  Setup s;
  const auto plan = render_anchor(s.task.manual_spec(), s.example, s.vocab);
  const auto h = row_of(s.encoder.encode(plan).h_mask());
  const auto ids = s.task.verbalizer.token_ids(s.vocab);
  double hh = 0.0;
  for (double v : h) hh += v * v;
  // Arrange W_v so the first two label logits are exactly 2 and 0.
  auto& w = s.encoder.output_weight().mutable_value();
  for (int k = 0; k < s.encoder.dim(); ++k) {
    w(k, ids[0]) = 2.0 * h[static_cast<std::size_t>(k)] / hh;
    w(k, ids[1]) = 0.0;
  }
  const std::vector<int> two = {ids[0], ids[1]};
  const auto p = mlm_label_distribution(s.encoder, plan, two);
  CHECK(p[0] == doctest::Approx(0.8807970779778823).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(0.11920292202211755).epsilon(1e-9));
}

TEST_CASE("classifier head is softmax(W h_cls + b)") {
  Setup s;
  Rng rng(3);
  auto head = ClassifierHead::init(5, s.encoder.dim(), rng, 0.5);
  head.bias.mutable_value() << 0.1, -0.2, 0.3, 0.0, 0.5;
  const auto p = standard_finetune_forward(s.encoder, head, s.example);
  const auto h = row_of(s.encoder.encode(render_plain(s.example, s.vocab)).h_cls());
  std::vector<double> logits(5, 0.0);
  for (int y = 0; y < 5; ++y) {
    long double acc = head.bias.value()(0, y);
    for (int k = 0; k < s.encoder.dim(); ++k) acc += head.weight.value()(y, k) * h[static_cast<std::size_t>(k)];
    logits[static_cast<std::size_t>(y)] = static_cast<double>(acc);
  }
  long double z = 0;
  for (double l : logits) z += std::exp(static_cast<long double>(l));
  for (int y = 0; y < 5; ++y) CHECK(p[static_cast<std::size_t>(y)] == doctest::Approx(static_cast<double>(std::exp(static_cast<long double>(logits[static_cast<std::size_t>(y)])) / z)).epsilon(1e-12));
}

TEST_CASE("encoder gradients match finite differences for every parameter group") {
  Setup s;
  const auto spec = s.task.continuous_spec(2);
  const auto plan = build_virtual(spec, s.example, 2, s.task.verbalizer, s.vocab);
  Rng rng(4);
  auto bank = init_virtual(InitMethod::Gaussian, s.encoder, 2, s.task.verbalizer.num_classes(), rng);
  auto prompt = ag::Var::parameter(ag::Matrix::Random(2, s.encoder.dim()));
  const auto ids = s.task.verbalizer.token_ids(s.vocab);
  const std::vector<int> target = {s.task.verbalizer.index_of(s.example.label)};
  auto loss = [&] {
    const auto inj = make_injection(plan, &prompt, &bank);
    return ag::cross_entropy_rows(mlm_label_logits(s.encoder, plan, ids, inj), target);
  };
  auto params = s.encoder.parameters();
  params.push_back({"prompt", prompt});
  for (int c = 0; c < bank.num_classes(); ++c) params.push_back({"bank." + std::to_string(c), bank.block(c)});
  const auto reports = gradcheck::check(loss, params, 6, 9);
  CHECK(reports.size() == params.size());
  for (const auto& r : reports) {
    CAPTURE(r.name);
    CHECK(r.relative_error < 1e-4);
  }
}

TEST_CASE("without positions the encoder is permutation equivariant") {
  Setup s;
  s.encoder.position_embedding().mutable_value().setZero();
  const std::vector<int> ids = {9, 10, 11, 12, 13};
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  std::vector<int> permuted;
  for (int p : perm) permuted.push_back(ids[static_cast<std::size_t>(p)]);
  const auto a = s.encoder.forward(ids, {}).value();
  const auto b = s.encoder.forward(permuted, {}).value();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    CHECK((b.row(static_cast<Eigen::Index>(i)) - a.row(perm[i])).norm() < 1e-12);
  }
}

TEST_CASE("injected rows reach the output") {
  Setup s;
  const auto plan = build_virtual(s.task.manual_spec(), s.example, 1, s.task.verbalizer, s.vocab);
  Rng rng(6);
  auto bank = init_virtual(InitMethod::VocabSample, s.encoder, 1, s.task.verbalizer.num_classes(), rng);
  const auto inj = make_injection(plan, nullptr, &bank);
  const auto h = s.encoder.encode(plan, inj).h_mask();
  // A plain sum of a layer-normalised row is constant, so weight it.
  ag::sum(ag::hadamard(h, ag::Var(ag::Matrix::Random(1, h.cols())))).backward();
  for (int c = 0; c < bank.num_classes(); ++c) CHECK(bank.block(c).grad().norm() > 1e-8);
  const auto before = h.value();
  bank.block(0).mutable_value() *= -1.0;
  CHECK((s.encoder.encode(plan, make_injection(plan, nullptr, &bank)).h_mask().value() - before).norm() > 1e-8);
}

TEST_CASE("encoder errors") {
  Setup s;
  std::vector<int> too_long(65, 9);
  CHECK_THROWS_AS(s.encoder.forward(too_long, {}), Error);
  const auto plain = render_plain(s.example, s.vocab);
  CHECK_THROWS_AS(s.encoder.encode(plain).h_mask(), Error);
  auto bad = small_config();
  bad.heads = 3;
  CHECK_THROWS_AS(TinyTransformer(bad, s.vocab, 1), Error);
}
