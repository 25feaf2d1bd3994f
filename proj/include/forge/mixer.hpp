#pragma once

// Dataset-level sampling weights from joint influence, and leave-one-out
// group-impact ablations with NLL trajectories.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/influence.hpp"
#include "forge/tinylm.hpp"

namespace forge {

struct WeightPolicy {
  // Negative per-source aggregates are clamped to this floor before
  // normalization; an all-non-positive set is an error.
  double clamp_floor = 1e-6;
};

struct SourceWeight {
  std::string source_id;
  double rho = 0.0;
  double weight = 0.0;
};

// rho_g = (1/N_g) * sum_i I_joint(x_i) * s_i over the source's records;
// w_g = rho_g / sum rho. Every record's source needs stats, every source
// in stats needs at least one record.
MixtureSpec compute_weights(const std::vector<InfluenceRecord>& records,
                            const std::map<std::string, DatasetStats>& stats,
                            std::uint64_t token_budget, std::uint64_t seed,
                            const WeightPolicy& policy = {},
                            std::vector<SourceWeight>* detail = nullptr);

// ------------------------------------------------------------------- loo

struct LooTrajectory {
  std::vector<std::uint64_t> steps;
  std::map<Domain, std::vector<double>> nll;  // per capability, per step
};

struct LooResult {
  std::string removed_source;  // empty: full-set run
  std::map<Domain, double> delta_nll;  // final-step mean l(theta_-j) - l(theta)
  LooTrajectory full, loo;
};

struct LooSpec {
  ModelConfig model;
  OptimState optim;
  std::uint64_t steps = 300;
  std::size_t batch_size = 8;
  std::uint64_t token_budget = 50000;
  std::uint64_t checkpoint_every = 50;
  std::uint64_t seed = 0;
  std::set<std::uint64_t> excluded_ids;
};

// Trains theta-hat on all sources and theta-hat_{-j} without the held-out
// one, equal per-source probability, strict no-repeat, same seed and step
// count. An empty held_out id runs the control (delta identically 0).
LooResult run_loo(const std::vector<Corpus>& corpora,
                  const std::string& held_out,
                  const std::map<Domain, std::vector<TokenizedSample>>& probes,
                  const LooSpec& spec);

// Each curve divided by the full-set run's value at the matching step;
// the full-set curve becomes identically 1.
std::map<Domain, std::vector<double>> normalized_nll_curves(
    const LooResult& result);

// ----------------------------------------------------------------- persist

void write_weights_jsonl(const std::string& path,
                         const std::vector<SourceWeight>& weights);
std::vector<SourceWeight> read_weights_jsonl(const std::string& path);

struct LooReportRow {
  std::string removed_source;
  Domain capability;
  double delta_nll = 0.0;
  double std_dev = 0.0;
};

void write_loo_report(const std::string& path,
                      const std::vector<LooReportRow>& rows);

}  // namespace forge
