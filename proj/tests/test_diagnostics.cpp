#include <doctest.h>

#include <cmath>
#include <fstream>

#include "forge/diagnostics.hpp"

using namespace forge;

namespace {

std::vector<std::vector<double>> diag_matrix(const std::vector<double>& d) {
  std::vector<std::vector<double>> z(d.size(),
                                     std::vector<double>(d.size(), 0.0));
  for (std::size_t i = 0; i < d.size(); ++i) z[i][i] = d[i];
  return z;
}

Corpus words_corpus(const std::string& src, std::uint64_t base, int n,
                    const std::string& flavor) {
  std::vector<Document> docs;
  for (int i = 0; i < n; ++i) {
    Document d;
    d.doc_id = base + static_cast<std::uint64_t>(i);
    d.text = flavor + " " + std::to_string(i % 5) + " " + flavor + " tail";
    docs.push_back(d);
  }
  return ingest_docs(docs, src);
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.kv_heads = 1;
  cfg.hidden_dim = 32;
  cfg.seq_len = 32;
  return cfg;
}

}  // namespace

TEST_CASE("eigenvalues: hand-checked 2x2 and 3x3 invariants") {
  // [[2,1],[1,2]] has eigenvalues 3 and 1
  auto eig = symmetric_eigenvalues({2, 1, 1, 2}, 2);
  CHECK(eig[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eig[1] == doctest::Approx(1.0).epsilon(1e-12));

  // random symmetric 3x3: eigenvalue sum = trace, product = determinant
  std::vector<double> a = {4.0, 1.0, -2.0, 1.0, 3.0, 0.5, -2.0, 0.5, 1.0};
  auto e3 = symmetric_eigenvalues(a, 3);
  CHECK(e3[0] >= e3[1]);
  CHECK(e3[1] >= e3[2]);
  CHECK(e3[0] + e3[1] + e3[2] == doctest::Approx(8.0).epsilon(1e-10));
  double det = 4.0 * (3.0 * 1.0 - 0.25) - 1.0 * (1.0 + 1.0) +
               (-2.0) * (0.5 + 6.0);
  CHECK(e3[0] * e3[1] * e3[2] == doctest::Approx(det).epsilon(1e-9));
}

TEST_CASE("singular values of a diagonal matrix are its absolute entries") {
  auto sv = singular_values(diag_matrix({3.0, 4.0}));
  CHECK(sv[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(sv[1] == doctest::Approx(3.0).epsilon(1e-12));

  CHECK_THROWS_AS(singular_values({{1.0, std::nan("")}}), ForgeError);
}

TEST_CASE("rank score: identity matrix scores exactly its dimension") {
  auto rep = rankme(diag_matrix({1, 1, 1, 1, 1}));
  CHECK(rep.score == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(rep.rows == 5);
  CHECK(rep.cols == 5);
}

TEST_CASE("rank score: rank-1 matrix scores 1") {
  std::vector<std::vector<double>> z(6, {2.0, -1.0, 0.5});
  auto rep = rankme(z);
  CHECK(rep.score == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rank score: diag(2,1,1) hand-computed entropy") {
  // p = {0.5, 0.25, 0.25}, entropy = 1.5 ln 2, score = 2^1.5
  auto rep = rankme(diag_matrix({2.0, 1.0, 1.0}));
  CHECK(rep.score == doctest::Approx(std::exp(1.5 * std::log(2.0)))
                         .epsilon(1e-12));
  CHECK(rep.p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.p[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("rank score invariances") {
  Rng rng(5);
  std::vector<std::vector<double>> z(12, std::vector<double>(4));
  for (auto& row : z)
    for (auto& v : row) v = rng.next_gaussian();
  double base = rankme(z).score;

  SUBCASE("positive scalar") {
    auto scaled = z;
    for (auto& row : scaled)
      for (auto& v : row) v *= 37.5;
    CHECK(rankme(scaled).score == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("row permutation") {
    auto perm = z;
    std::swap(perm[0], perm[7]);
    std::swap(perm[3], perm[11]);
    CHECK(rankme(perm).score == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("orthogonal column rotation") {
    double c = std::cos(0.7), s = std::sin(0.7);
    auto rot = z;
    for (std::size_t i = 0; i < z.size(); ++i) {
      rot[i][1] = c * z[i][1] - s * z[i][2];
      rot[i][2] = s * z[i][1] + c * z[i][2];
    }
    CHECK(rankme(rot).score == doctest::Approx(base).epsilon(1e-10));
  }
  SUBCASE("stacking an exact duplicate") {
    auto stacked = z;
    stacked.insert(stacked.end(), z.begin(), z.end());
    CHECK(rankme(stacked).score == doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("literal-epsilon mode approaches the default as eps -> 0") {
  auto z = diag_matrix({2.0, 1.0, 1.0});
  RankMeOptions literal;
  literal.literal_epsilon = true;
  literal.eps = 1e-12;
  double d = rankme(z).score;
  CHECK(rankme(z, literal).score == doctest::Approx(d).epsilon(1e-9));
  literal.eps = 0.1;  // visibly different when eps is large
  CHECK(rankme(z, literal).score != doctest::Approx(d).epsilon(1e-6));
}

TEST_CASE("checkpoint rank score is deterministic and carries the digest") {
  auto ckpt = init_checkpoint(tiny_cfg(), 3);
  auto corpus = words_corpus("a", 0, 4, "alpha beta");
  std::vector<TokenizedSample> probe = {tokenize(corpus.docs[0]),
                                        tokenize(corpus.docs[1])};
  auto r1 = rankme_checkpoint(ckpt, probe);
  auto r2 = rankme_checkpoint(ckpt, probe);
  CHECK(r1.score == r2.score);
  CHECK(r1.checkpoint_digest == ckpt.digest());
  CHECK(r1.score >= 1.0);
  CHECK(r1.score <= static_cast<double>(std::min(r1.rows, r1.cols)) + 1e-9);
}

TEST_CASE("lr sweep: identical rates give identical rows, needs >= 3 rates") {
  auto pre = words_corpus("pre", 0, 10, "alpha beta gamma");
  auto mid = words_corpus("mid", 100, 10, "delta epsilon");
  std::vector<TokenizedSample> probe = {tokenize(mid.docs[0]),
                                        tokenize(mid.docs[1])};
  LrSweepSpec spec;
  spec.model = tiny_cfg();
  spec.pretrain_steps = 8;
  spec.midtrain_steps = 4;
  spec.batch_size = 2;
  spec.token_budget = 500;
  spec.seed = 17;
  auto result =
      lr_sweep_correlation({1e-3, 1e-3, 3e-3}, {pre}, {mid}, probe, spec);
  REQUIRE(result.rows.size() == 3);
  CHECK(result.rows[0].rankme_after_pretrain ==
        result.rows[1].rankme_after_pretrain);
  CHECK(result.rows[0].probe_nll_after_midtrain ==
        result.rows[1].probe_nll_after_midtrain);
  CHECK_FALSE(result.rows[0].diverged);

  CHECK_THROWS_AS(lr_sweep_correlation({1e-3, 2e-3}, {pre}, {mid}, probe, spec),
                  ForgeError);
}

TEST_CASE("spearman of a strictly monotone pairing is 1") {
  std::vector<double> x = {1.0, 2.0, 5.0, 9.0};
  std::vector<double> y = {-3.0, 0.0, 0.1, 40.0};
  CHECK(spearman(x, y) == doctest::Approx(1.0));
}

TEST_CASE("nll tracker: rows, ordering, and training direction") {
  auto corpus = words_corpus("a", 0, 12, "omega sigma tau");
  std::vector<TokenizedSample> eval_set;
  for (int i = 0; i < 4; ++i) eval_set.push_back(tokenize(corpus.docs[i]));

  auto init = init_checkpoint(tiny_cfg(), 21);
  auto mix = MixtureSpec::uniform({"a"}, 400, 9);
  auto stream = draw_stream({corpus}, mix, {});
  OptimState optim;
  optim.schedule.peak_lr = 3e-3;
  optim.schedule.warmup_steps = 2;
  TrainOptions topts;
  topts.steps = 40;
  topts.batch_size = 2;
  topts.checkpoint_every = 20;
  auto ckpts = train(init, stream, optim, topts);

  std::map<std::string, std::vector<TokenizedSample>> sets = {
      {"probe", eval_set}};
  auto rows = nll_tracker({{"init", {init}}, {"train", ckpts}}, sets);
  REQUIRE(rows.size() == 1 + ckpts.size());
  CHECK(rows[0].stage == "init");
  for (std::size_t i = 2; i < rows.size(); ++i)
    CHECK(rows[i].step >= rows[i - 1].step);
  // in-distribution loss falls from the untrained model
  CHECK(rows.back().nll < rows[0].nll);

  write_nll_csv("/tmp/forge_test_nll.csv", rows);
  std::ifstream in("/tmp/forge_test_nll.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "stage,step,set,nll");
}

TEST_CASE("single checkpoint and set gives one row") {
  auto corpus = words_corpus("a", 0, 2, "pi rho");
  auto init = init_checkpoint(tiny_cfg(), 2);
  std::map<std::string, std::vector<TokenizedSample>> sets = {
      {"s", {tokenize(corpus.docs[0])}}};
  auto rows = nll_tracker({{"only", {init}}}, sets);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].set_name == "s");
}
