#pragma once

// Gradient-inner-product influence scores: per-sample gradients against
// capability probe gradients, ensembled over training checkpoints with
// linearly increasing weights, then summed across capabilities.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/tinylm.hpp"

namespace forge {

// Signed sparse random projection (count-sketch): each parameter coordinate
// lands in one bucket with a +/-1 sign, both derived from the seed. d_proj
// of 0 selects the identity (exact) projection.
class GradientProjector {
 public:
  GradientProjector(std::size_t d_proj, std::uint64_t seed)
      : d_proj_(d_proj), seed_(seed) {}

  std::size_t dim(std::size_t full_dim) const {
    return d_proj_ == 0 ? full_dim : d_proj_;
  }
  std::uint64_t seed() const { return seed_; }
  bool identity() const { return d_proj_ == 0; }

  std::vector<double> project(std::span<const double> grad) const;

 private:
  std::size_t d_proj_;
  std::uint64_t seed_;
};

struct GradientFeature {
  std::uint64_t doc_id = 0;
  std::uint64_t ckpt_step = 0;
  std::vector<double> vector;
  std::uint64_t projection_seed = 0;
};

struct CheckpointSchedule {
  // per capability: T checkpoints, evenly spaced over its training run
  std::map<Domain, std::vector<ModelCheckpoint>> checkpoints;
  // alpha_t proportional to t (1-based), normalized per capability
  static std::vector<double> alphas(std::size_t T);
};

struct InfluenceRecord {
  std::uint64_t doc_id = 0;
  std::string source_id;
  std::size_t token_count = 0;  // s_i
  int phase = 0;
  std::map<Domain, double> capability_scores;  // I_C, I_M, I_K
  double joint = 0.0;                          // I_joint
};

// Mean gradient over a probe batch (each sample's mean-NLL gradient,
// equally weighted), optionally projected.
std::vector<double> probe_gradient(const Model& model,
                                   std::span<const double> params,
                                   std::span<const TokenizedSample> probe,
                                   const GradientProjector& proj);

std::vector<double> sample_feature(const Model& model,
                                   std::span<const double> params,
                                   const TokenizedSample& sample,
                                   const GradientProjector& proj);

// g_test . g_train; positive means training on the sample reduces probe
// loss. Errors on non-finite gradients.
double influence_pair(const Model& model, const ModelCheckpoint& ckpt,
                      const TokenizedSample& train_sample,
                      std::span<const TokenizedSample> probe_batch,
                      const GradientProjector& proj);

// I_c = sum_t alpha_t * <probe-grad_c at ckpt t, sample grad at ckpt t>.
// Probe gradients are precomputed once per (capability, checkpoint).
class InfluenceEngine {
 public:
  InfluenceEngine(const ModelConfig& cfg, CheckpointSchedule schedule,
                  std::map<Domain, std::vector<TokenizedSample>> probes,
                  GradientProjector proj);

  // per-capability scores for one sample
  std::map<Domain, double> capability_scores(const TokenizedSample& sample) const;

  InfluenceRecord score(const TokenizedSample& sample,
                        const std::string& source_id, int phase = 0) const;

  const GradientProjector& projector() const { return proj_; }

 private:
  Model model_;
  CheckpointSchedule schedule_;
  GradientProjector proj_;
  // (capability, checkpoint index) -> frozen probe gradient
  std::map<Domain, std::vector<std::vector<double>>> probe_grads_;
};

double joint_influence(const std::map<Domain, double>& capability_scores);

// Trains one model per capability on the equal-weight mixture of its source
// list, emitting T evenly spaced checkpoints each.
struct CapabilityTrainSpec {
  ModelConfig model;
  OptimState optim;
  std::uint64_t steps = 500;
  std::size_t batch_size = 8;
  std::size_t T = 10;
  std::uint64_t token_budget = 100000;
  std::uint64_t seed = 0;
  std::set<std::uint64_t> excluded_ids;  // probe members
};

std::map<Domain, std::vector<ModelCheckpoint>> train_capability_models(
    const std::vector<Corpus>& corpora,
    const std::map<Domain, std::vector<std::string>>& capability_sources,
    const CapabilityTrainSpec& spec);

// ----------------------------------------------------------------- persist

void write_influence_csv(const std::string& path,
                         const std::vector<InfluenceRecord>& records);
std::vector<InfluenceRecord> read_influence_csv(const std::string& path);

// Binary feature cache keyed by (checkpoint digest, projection seed).
void write_feature_cache(const std::string& path,
                         std::uint64_t ckpt_digest, std::uint64_t proj_seed,
                         const std::vector<GradientFeature>& features);
std::vector<GradientFeature> read_feature_cache(const std::string& path,
                                                std::uint64_t ckpt_digest,
                                                std::uint64_t proj_seed);

}  // namespace forge
