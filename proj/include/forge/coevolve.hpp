#pragma once

// Iterative mid-training loop: keep only samples with positive joint
// influence, recompute the mixture over what's left, continue training, and
// rescore with the new model until the influence distribution collapses.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/influence.hpp"
#include "forge/mixer.hpp"
#include "forge/tinylm.hpp"

namespace forge {

// Symmetric fixed-width bins around zero; the range is chosen from the
// first phase's records and reused afterwards so histograms stay
// comparable across phases.
struct HistogramSpec {
  double max_abs = 1.0;
  std::size_t bins = 21;

  static HistogramSpec from_records(const std::vector<InfluenceRecord>& records,
                                    std::size_t bins = 21);
  double bin_lo(std::size_t b) const;
  double bin_hi(std::size_t b) const;
  std::size_t bin_of(double value) const;  // out-of-range clamps to edge bins
};

using CapabilityHistogram = std::map<Domain, std::vector<std::uint64_t>>;

struct PhaseState {
  int phase = 1;
  ModelCheckpoint model;               // theta_t, the scoring model
  std::set<std::uint64_t> retained;    // D_t, ids surviving the filter
  MixtureSpec mixture;                 // mixture used to train this model
  std::vector<InfluenceRecord> records;  // scored set under theta_t
  CapabilityHistogram histogram;
  double positive_fraction = 0.0;      // joint > 0 over the scored set
  bool converged = false;
  std::string objective = "cross_entropy";
};

struct CoevolvePolicy {
  double tau = 0.05;            // converged when positive_fraction < tau
  std::size_t max_phases = 4;
  std::uint64_t phase_steps = 200;
  std::size_t batch_size = 8;
  std::uint64_t token_budget = 20000;
  std::size_t histogram_bins = 21;
  std::size_t d_proj = 1024;
  std::uint64_t seed = 0;
  bool filter = true;           // false: control path, plain mid-training
  bool distill = false;
  std::optional<ModelCheckpoint> teacher;  // required when distill is set
  OptimState optim;             // per-phase optimizer template
  std::set<std::uint64_t> excluded_ids;
};

// Ids with strictly positive joint influence; zero is excluded. Every
// record must carry the expected phase index. Rejected records land in
// *rejected when given.
std::set<std::uint64_t> filter_positive(
    const std::vector<InfluenceRecord>& records, int phase,
    std::vector<InfluenceRecord>* rejected = nullptr);

CapabilityHistogram influence_histogram(
    const std::vector<InfluenceRecord>& records, const HistogramSpec& spec);

double positive_fraction(const std::vector<InfluenceRecord>& records);

// Converged when the positive fraction drops below tau or nothing is
// retained.
bool convergence_check(const PhaseState& state, double tau);

// Scores every document of every corpus against a single model (one shared
// checkpoint per capability).
std::vector<InfluenceRecord> score_with_model(
    const ModelCheckpoint& model, const std::vector<Corpus>& corpora,
    const std::map<Domain, std::vector<TokenizedSample>>& probes,
    const GradientProjector& proj, int phase);

// One iteration: mixture over the retained set, continued training from
// state.model, rescoring with the new model. An empty retained set returns
// a converged copy of the state instead of erroring.
PhaseState run_phase(const PhaseState& state,
                     const std::vector<Corpus>& corpora,
                     const std::map<Domain, std::vector<TokenizedSample>>& probes,
                     const CoevolvePolicy& policy, const HistogramSpec& hist);

// Full loop: phase-1 scoring with the initial model fixes the histogram
// range, then phases run until convergence or max_phases.
std::vector<PhaseState> run_coevolve(
    const ModelCheckpoint& init, const std::vector<Corpus>& corpora,
    const std::map<Domain, std::vector<TokenizedSample>>& probes,
    const CoevolvePolicy& policy, HistogramSpec* hist_out = nullptr);

// ----------------------------------------------------------------- persist

// One JSON line per phase: {phase, positive_fraction, retained_count,
// mixture, converged}.
void write_phase_report(const std::string& path,
                        const std::vector<PhaseState>& phases);

// Rows: capability,bin_lo,bin_hi,count.
void write_histogram_csv(const std::string& path,
                         const CapabilityHistogram& histogram,
                         const HistogramSpec& spec);

}  // namespace forge
