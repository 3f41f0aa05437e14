#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "demotune/demo_bank.hpp"
#include "demotune/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace demotune;

namespace {

struct Setup {
  TaskConfig task = fixtures::load_task("sst2");
  Vocab vocab = fixtures::vocab_for(task);
  TinyTransformer encoder{{.layers = 1, .heads = 2, .dim = 8, .ff_dim = 16, .max_length = 64}, vocab, 5};
};

ClassPools make_pools(int per_class, std::uint64_t seed) {
  Rng rng(seed);
  ClassPools pools(2);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < per_class; ++i) {
      pools[static_cast<std::size_t>(c)].push_back({.text_a = fixtures::random_text(rng, 1, 6),
                                                    .text_b = std::nullopt,
                                                    .label = std::to_string(c),
                                                    .uid = std::to_string(c) + "-" + std::to_string(i)});
    }
  }
  return pools;
}

}  // namespace

TEST_CASE("vocabulary-sampled blocks copy non-special embedding rows") {
  Setup s;
  Rng rng(1);
  const auto bank = init_virtual(InitMethod::VocabSample, s.encoder, 3, 4, rng);
  CHECK(bank.num_classes() == 4);
  CHECK(bank.length() == 3);
  CHECK(bank.dim() == 8);
  const auto& table = s.encoder.token_embeddings();
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < 3; ++r) {
      bool found = false;
      for (Eigen::Index v = Vocab::kNumSpecials; v < table.rows(); ++v) found = found || (table.row(v) == bank.block(c).value().row(r));
      CHECK(found);
    }
  }
  CHECK(bank.all_finite());
}

TEST_CASE("gaussian blocks match the embedding table's spread") {
  Setup s;
  Rng rng(2);
  const auto bank = init_virtual(InitMethod::Gaussian, s.encoder, 500, 2, rng);
  const auto body = s.encoder.token_embeddings().bottomRows(s.encoder.token_embeddings().rows() - Vocab::kNumSpecials);
  std::vector<double> table_values(body.data(), body.data() + body.size());
  std::vector<double> drawn(bank.block(0).value().data(), bank.block(0).value().data() + bank.block(0).value().size());
  const auto expected = oracle::welford(table_values).population_std;
  const auto got = oracle::welford(drawn);
  // 4000 normal draws: the sample std has relative standard error ~1/sqrt(2N) ~ 1.1%
  CHECK(std::abs(got.population_std / expected - 1.0) < 0.05);
  CHECK(std::abs(got.mean) < 5.0 * expected / std::sqrt(4000.0));
}

TEST_CASE("injection tiles the prompt per occurrence and appends virtual rows") {
  Setup s;
  const auto spec = s.task.continuous_spec(2);
  const LabeledText x{.text_a = "alpha bravo", .text_b = std::nullopt, .label = "0", .uid = "x"};
  const auto plan = build_virtual(spec, x, 1, s.task.verbalizer, s.vocab);
  Rng rng(3);
  const auto bank = init_virtual(InitMethod::Gaussian, s.encoder, 1, 2, rng);
  const auto prompt = ag::Var::parameter(ag::Matrix::Random(2, 8));
  const auto inj = make_injection(plan, &prompt, &bank);
  REQUIRE(inj.positions.size() == 4);
  CHECK(inj.rows.value().row(0) == prompt.value().row(0));
  CHECK(inj.rows.value().row(1) == prompt.value().row(1));
  CHECK(inj.rows.value().row(2) == bank.block(0).value().row(0));
  CHECK(inj.rows.value().row(3) == bank.block(1).value().row(0));
  CHECK(inj.positions[2] == plan.virtual_positions[0][0]);
  CHECK_THROWS_AS(make_injection(plan, nullptr, &bank), Error);
}

TEST_CASE("random sampling is uniform within the class") {
  const auto pools = make_pools(5, 7);
  Rng rng(8);
  std::map<std::string, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample_random(pools, 1, rng).uid];
  CHECK(counts.size() == 5);
  const double p = 0.2;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [uid, n] : counts) {
    CAPTURE(uid);
    CHECK(uid[0] == '1');
    CHECK(std::abs(n - draws * p) < 3.0 * sigma);
  }
  ClassPools empty(2);
  CHECK_THROWS_AS(sample_random(empty, 0, rng), Error);
}

TEST_CASE("filtered pool keeps the most similar half") {
  Setup s;
  const auto provider = bag_of_words_provider(s.vocab);
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pools = make_pools(1 + static_cast<int>(rng.index(9)), 100 + trial);
    const LabeledText anchor{.text_a = fixtures::random_text(rng, 1, 6), .text_b = std::nullopt, .label = "0", .uid = "a"};
    const auto& pool = pools[0];
    // brute force: rank by cosine with ties to the lower index
    std::vector<std::pair<double, std::size_t>> scored;
    const auto av = provider(anchor);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto cv = provider(pool[i]);
      scored.push_back({-static_cast<double>(oracle::cosine(av, cv)), i});
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < (pool.size() + 1) / 2; ++i) expected.push_back(scored[i].second);
    std::sort(expected.begin(), expected.end());
    CHECK(filtered_pool(pools, 0, anchor, provider) == expected);
    const auto& picked = sample_filtered(pools, 0, anchor, provider, rng);
    const auto at = static_cast<std::size_t>(&picked - pool.data());
    CHECK(std::find(expected.begin(), expected.end(), at) != expected.end());
  }
}

TEST_CASE("constant similarity keeps the first half") {
  const auto pools = make_pools(7, 4);
  const SimilarityProvider constant = [](const LabeledText&) { return std::vector<double>{1.0, 1.0}; };
  const LabeledText anchor{.text_a = "x", .text_b = std::nullopt, .label = "0", .uid = "a"};
  CHECK(filtered_pool(pools, 1, anchor, constant) == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("mean virtual rows are class averages of mean token embeddings") {
  Setup s;
  const auto pools = make_pools(4, 12);
  const auto block = mean_virtual(pools, 0, s.encoder, 2);
  const auto& table = s.encoder.token_embeddings();
  std::vector<long double> expected(8, 0.0L);
  for (const auto& ex : pools[0]) {
    const auto ids = s.vocab.tokenize(ex.text_a);
    for (int k = 0; k < 8; ++k) {
      long double acc = 0;
      for (int id : ids) acc += table(id, k);
      expected[static_cast<std::size_t>(k)] += acc / ids.size() / pools[0].size();
    }
  }
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 8; ++k) CHECK(block(r, k) == doctest::Approx(static_cast<double>(expected[static_cast<std::size_t>(k)])).epsilon(1e-12));
  }
  const auto contextual = mean_virtual(pools, 0, s.encoder, 1, MeanSource::Encoder);
  CHECK(contextual.allFinite());
  CHECK((contextual.row(0) - block.row(0)).norm() > 1e-6);
}

TEST_CASE("strategy names round-trip") {
  for (auto st : {SamplingStrategy::Random, SamplingStrategy::FilterBased, SamplingStrategy::MeanVirtual}) {
    CHECK(sampling_strategy_from_string(to_string(st)) == st);
  }
  CHECK(init_method_from_string(to_string(InitMethod::Gaussian)) == InitMethod::Gaussian);
  CHECK_THROWS_AS(sampling_strategy_from_string("knn"), Error);
}
