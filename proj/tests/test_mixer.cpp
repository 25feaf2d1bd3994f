#include <doctest.h>

#include <cmath>

#include "forge/mixer.hpp"

using namespace forge;

namespace {

InfluenceRecord rec(std::uint64_t id, const std::string& src, double joint,
                    std::size_t s_i) {
  InfluenceRecord r;
  r.doc_id = id;
  r.source_id = src;
  r.joint = joint;
  r.token_count = s_i;
  return r;
}

DatasetStats st(const std::string& src, std::uint64_t tokens) {
  return DatasetStats{src, tokens, 100};
}

}  // namespace

TEST_CASE("weights: symmetric sources split evenly") {
  std::vector<InfluenceRecord> records;
  for (std::uint64_t i = 0; i < 10; ++i) {
    records.push_back(rec(i, "a", 0.5, 20));
    records.push_back(rec(100 + i, "b", 0.5, 20));
  }
  std::map<std::string, DatasetStats> stats = {{"a", st("a", 5000)},
                                               {"b", st("b", 5000)}};
  auto spec = compute_weights(records, stats, 1000, 0);
  CHECK(spec.weights["a"] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(spec.weights["b"] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("weights: rho_A = 2 rho_B gives w_A = 2/3") {
  std::vector<InfluenceRecord> records = {rec(1, "a", 2.0, 10),
                                          rec(2, "b", 1.0, 10)};
  std::map<std::string, DatasetStats> stats = {{"a", st("a", 1000)},
                                               {"b", st("b", 1000)}};
  std::vector<SourceWeight> detail;
  auto spec = compute_weights(records, stats, 1000, 0, {}, &detail);
  CHECK(spec.weights["a"] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(detail.size() == 2);
}

TEST_CASE("weights: negative aggregate clamps to the floor") {
  std::vector<InfluenceRecord> records = {rec(1, "good", 1.0, 10),
                                          rec(2, "bad", -5.0, 10)};
  std::map<std::string, DatasetStats> stats = {{"good", st("good", 100)},
                                               {"bad", st("bad", 100)}};
  std::vector<SourceWeight> detail;
  auto spec = compute_weights(records, stats, 1000, 0, {}, &detail);
  CHECK(spec.weights["bad"] > 0.0);
  CHECK(spec.weights["bad"] < 1e-4);
  CHECK(spec.weights["good"] + spec.weights["bad"] ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weights: error cases") {
  std::map<std::string, DatasetStats> stats = {{"a", st("a", 100)}};
  // all non-positive
  CHECK_THROWS_AS(compute_weights({rec(1, "a", -1.0, 5)}, stats, 100, 0),
                  ForgeError);
  // record without stats
  CHECK_THROWS_AS(compute_weights({rec(1, "ghost", 1.0, 5)}, stats, 100, 0),
                  ForgeError);
  // source without records
  std::map<std::string, DatasetStats> stats2 = {{"a", st("a", 100)},
                                                {"b", st("b", 100)}};
  CHECK_THROWS_AS(compute_weights({rec(1, "a", 1.0, 5)}, stats2, 100, 0),
                  ForgeError);
}

TEST_CASE("weights: scale invariance under positive scaling of I_joint") {
  Rng rng(31);
  std::vector<InfluenceRecord> records;
  std::map<std::string, DatasetStats> stats;
  for (int s = 0; s < 4; ++s) {
    std::string src = "s" + std::to_string(s);
    stats[src] = st(src, 1000 + static_cast<std::uint64_t>(s) * 500);
    for (std::uint64_t i = 0; i < 20; ++i)
      records.push_back(rec(static_cast<std::uint64_t>(s) * 100 + i, src,
                            rng.next_gaussian() + 0.3,
                            1 + rng.next_below(40)));
  }
  auto base = compute_weights(records, stats, 1000, 0);
  auto scaled_records = records;
  for (auto& r : scaled_records) r.joint *= 17.5;
  auto scaled = compute_weights(scaled_records, stats, 1000, 0);
  for (const auto& [src, w] : base.weights)
    CHECK(scaled.weights[src] == doctest::Approx(w).epsilon(1e-12));
}

TEST_CASE("weights: invariant to splitting records into equal halves") {
  // one source's records split into two synthetic sources with identical
  // statistics and merged stats: the combined weight is unchanged
  std::vector<InfluenceRecord> merged = {rec(1, "x", 1.0, 10),
                                         rec(2, "x", 3.0, 10),
                                         rec(3, "y", 2.0, 10)};
  std::map<std::string, DatasetStats> stats = {{"x", st("x", 200)},
                                               {"y", st("y", 200)}};
  auto w_merged = compute_weights(merged, stats, 1000, 0);

  std::vector<InfluenceRecord> split = {rec(1, "x1", 1.0, 10),
                                        rec(2, "x2", 3.0, 10),
                                        rec(3, "y", 2.0, 10)};
  std::map<std::string, DatasetStats> stats2 = {
      {"x1", st("x1", 100)}, {"x2", st("x2", 100)}, {"y", st("y", 200)}};
  auto w_split = compute_weights(split, stats2, 1000, 0);
  // rho doubles for each half (half the tokens), so renormalize by hand:
  double combined =
      (w_split.weights["x1"] + w_split.weights["x2"]) / 2.0;
  double denom = combined + w_split.weights["y"];
  CHECK(combined / denom == doctest::Approx(w_merged.weights["x"]).epsilon(1e-9));
}

TEST_CASE("weights: sum to one over 1000 random record sets (property)") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n_sources = 2 + rng.next_below(5);
    std::vector<InfluenceRecord> records;
    std::map<std::string, DatasetStats> stats;
    bool any_positive = false;
    for (std::size_t s = 0; s < n_sources; ++s) {
      std::string src = "s" + std::to_string(s);
      stats[src] = st(src, 100 + rng.next_below(10000));
      std::size_t n_recs = 1 + rng.next_below(8);
      for (std::size_t i = 0; i < n_recs; ++i) {
        double joint = rng.next_gaussian();
        if (joint > 0) any_positive = true;
        records.push_back(rec(s * 1000 + i, src, joint, 1 + rng.next_below(100)));
      }
    }
    if (!any_positive) continue;
    // sources can still aggregate non-positive; skip the all-bad case
    try {
      auto spec = compute_weights(records, stats, 1000, 0);
      double sum = 0.0;
      for (const auto& [src, w] : spec.weights) {
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    } catch (const ForgeError&) {
      // legitimate all-non-positive aggregate
    }
  }
}

TEST_CASE("weights file round-trips") {
  std::vector<SourceWeight> w = {{"a", 0.25, 0.2}, {"b", 1.0, 0.8}};
  std::string path = "/tmp/forge_test_weights.jsonl";
  write_weights_jsonl(path, w);
  auto back = read_weights_jsonl(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].source_id == "a");
  CHECK(back[1].weight == doctest::Approx(0.8));
}

namespace {

Corpus digits_corpus(const std::string& src, std::uint64_t base, int n,
                     const std::string& flavor) {
  std::vector<Document> docs;
  for (int i = 0; i < n; ++i) {
    Document d;
    d.doc_id = base + static_cast<std::uint64_t>(i);
    d.text = flavor + " " + std::to_string(i % 10) + " " + flavor;
    docs.push_back(d);
  }
  return ingest_docs(docs, src);
}

LooSpec quick_loo_spec() {
  LooSpec spec;
  spec.model.layers = 1;
  spec.model.dim = 16;
  spec.model.heads = 2;
  spec.model.kv_heads = 1;
  spec.model.hidden_dim = 32;
  spec.model.vocab_size = 256;
  spec.model.seq_len = 32;
  spec.steps = 10;
  spec.batch_size = 2;
  spec.token_budget = 600;
  spec.checkpoint_every = 5;
  spec.seed = 3;
  return spec;
}

}  // namespace

TEST_CASE("loo: removing nothing gives exactly zero delta") {
  auto a = digits_corpus("a", 0, 40, "alpha beta");
  auto b = digits_corpus("b", 1000, 40, "gamma delta");
  std::map<Domain, std::vector<TokenizedSample>> probes;
  probes[Domain::Knowledge] = {tokenize(a.docs[0]), tokenize(b.docs[0])};
  auto res = run_loo({a, b}, "", probes, quick_loo_spec());
  CHECK(res.delta_nll[Domain::Knowledge] == 0.0);
  auto curves = normalized_nll_curves(res);
  for (double v : curves[Domain::Knowledge]) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("loo: determinism and unknown source error") {
  auto a = digits_corpus("a", 0, 40, "alpha beta");
  auto b = digits_corpus("b", 1000, 40, "gamma delta");
  std::map<Domain, std::vector<TokenizedSample>> probes;
  probes[Domain::Knowledge] = {tokenize(a.docs[1])};
  auto spec = quick_loo_spec();
  auto r1 = run_loo({a, b}, "b", probes, spec);
  auto r2 = run_loo({a, b}, "b", probes, spec);
  CHECK(r1.delta_nll[Domain::Knowledge] == r2.delta_nll[Domain::Knowledge]);
  CHECK(r1.full.nll[Domain::Knowledge] == r2.full.nll[Domain::Knowledge]);
  CHECK_THROWS_AS(run_loo({a, b}, "ghost", probes, spec), ForgeError);
}

TEST_CASE("loo: infeasible budget under strict no-repeat errors") {
  auto a = digits_corpus("a", 0, 3, "tiny");
  std::map<Domain, std::vector<TokenizedSample>> probes;
  probes[Domain::Knowledge] = {tokenize(a.docs[0])};
  auto spec = quick_loo_spec();
  spec.token_budget = 100000;
  CHECK_THROWS_WITH_AS(run_loo({a}, "", probes, spec),
                       doctest::Contains("no-repeat"), ForgeError);
}

TEST_CASE("normalized curves: delta > 0 puts the final value above 1") {
  LooResult res;
  res.removed_source = "x";
  res.full.steps = {10, 20};
  res.loo.steps = {10, 20};
  res.full.nll[Domain::Math] = {2.0, 1.0};
  res.loo.nll[Domain::Math] = {2.2, 1.3};
  res.delta_nll[Domain::Math] = 0.3;
  auto curves = normalized_nll_curves(res);
  CHECK(curves[Domain::Math].back() == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(curves[Domain::Math].back() > 1.0);
  // independent trajectory-wise division
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(curves[Domain::Math][i] ==
          doctest::Approx(res.loo.nll[Domain::Math][i] /
                          res.full.nll[Domain::Math][i]));

  res.loo.steps = {10, 30};
  CHECK_THROWS_AS(normalized_nll_curves(res), ForgeError);
}
