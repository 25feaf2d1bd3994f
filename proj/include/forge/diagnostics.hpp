#pragma once

// Effective-rank scoring of model output embeddings via the spectral
// entropy of normalized singular values, a learning-rate sweep correlating
// that score with downstream probe loss, and NLL trajectory tracking.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/tinylm.hpp"

namespace forge {

struct RankMeOptions {
  // Default: entropy over exactly normalized singular values with the
  // 0*log(0) = 0 convention, keeping the score in [1, min(N,K)].
  // literal_epsilon adds eps to each p_k before the entropy instead,
  // matching the published formula at the cost of that range.
  bool literal_epsilon = false;
  double eps = 1e-7;
  bool logits = false;  // score logits instead of final hidden states
};

struct RankMeReport {
  std::uint64_t checkpoint_digest = 0;
  std::size_t rows = 0, cols = 0;  // N, K
  std::vector<double> singular_values;
  std::vector<double> p;  // normalized spectrum
  double score = 0.0;
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
// eigenvalues in descending order; a is row-major n x n.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n);

// Singular values of an N x K matrix through the K x K Gram matrix
// (eigenvalues clamped at zero before the square root).
std::vector<double> singular_values(const std::vector<std::vector<double>>& z);

RankMeReport rankme(const std::vector<std::vector<double>>& z,
                    const RankMeOptions& opts = {});

// Convenience: embeddings of the probe batch under a checkpoint, scored.
RankMeReport rankme_checkpoint(const ModelCheckpoint& ckpt,
                               const std::vector<TokenizedSample>& probe,
                               const RankMeOptions& opts = {});

// ------------------------------------------------------------------ sweep

struct LrSweepRow {
  double lr = 0.0;
  double rankme_after_pretrain = 0.0;
  double probe_nll_after_midtrain = 0.0;
  bool diverged = false;
  std::string note;
};

struct LrSweepSpec {
  ModelConfig model;
  OptimState optim;  // peak_lr overridden per row
  std::uint64_t pretrain_steps = 100;
  std::uint64_t midtrain_steps = 50;
  std::size_t batch_size = 4;
  std::uint64_t token_budget = 20000;
  std::uint64_t seed = 0;
  RankMeOptions rankme;
};

struct LrSweepResult {
  std::vector<LrSweepRow> rows;
  // Spearman rank correlation of rankme vs -probe NLL over converged rows
  double spearman = 0.0;
};

// For each learning rate: pretrain on the pretrain corpus, score the
// effective rank on a fixed probe batch, mid-train on the midtrain corpus,
// measure probe NLL. Diverging runs (non-finite loss) are excluded from
// the correlation and flagged in their note.
LrSweepResult lr_sweep_correlation(const std::vector<double>& learning_rates,
                                   const std::vector<Corpus>& pretrain,
                                   const std::vector<Corpus>& midtrain,
                                   const std::vector<TokenizedSample>& probe,
                                   const LrSweepSpec& spec);

// ---------------------------------------------------------------- tracker

struct NllPoint {
  std::string stage;
  std::uint64_t step = 0;
  std::string set_name;
  double nll = 0.0;
};

// One row per (checkpoint, eval set), sorted by (stage, step, set).
std::vector<NllPoint> nll_tracker(
    const std::vector<std::pair<std::string, std::vector<ModelCheckpoint>>>&
        stages,
    const std::map<std::string, std::vector<TokenizedSample>>& eval_sets);

void write_nll_csv(const std::string& path, const std::vector<NllPoint>& rows);
void write_lr_sweep_csv(const std::string& path, const LrSweepResult& result);

}  // namespace forge
