#pragma once

// Single-file JSON run configuration: every pipeline stage reads its knobs
// from here, all defaults are embedded, and one global seed governs every
// derived seed (seed mixed with the stage-name hash).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/probeset.hpp"
#include "forge/synth.hpp"
#include "forge/tinylm.hpp"

namespace forge {

// Validation failure naming the offending field; maps to exit status 3.
struct ConfigError : ForgeError {
  std::string field;
  ConfigError(std::string f, const std::string& msg)
      : ForgeError("config field '" + f + "': " + msg), field(std::move(f)) {}
};

// Missing upstream artifact; maps to exit status 2.
struct MissingArtifact : ForgeError {
  std::string path;
  explicit MissingArtifact(std::string p)
      : ForgeError("missing upstream artifact: " + p), path(std::move(p)) {}
};

struct CorpusDecl {
  std::string source_id;
  std::string path;  // empty: produced by the synth stage
};

struct RunConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 0;

  bool use_synth = true;       // bundled benchmark unless corpora given
  double synth_scale = 1.0;    // document-count multiplier on the benchmark
  std::vector<CorpusDecl> corpora;

  ModelConfig model;

  struct Optimizer {
    double peak_lr = 3e-3;
    std::uint64_t warmup_steps = 10;
    double decay_floor = 0.1;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
  } optimizer;

  std::vector<ScorerSpec> scorers;
  std::map<Domain, std::vector<std::string>> capabilities;

  struct Schedule {
    std::size_t T = 10;
  } schedule;

  struct Representative {
    std::size_t target_size = 120;
    double dedup_threshold = 0.9;
  } representative;

  struct Probes {
    std::size_t per_capability = 8;
  } probes;

  struct Capmodels {
    std::uint64_t steps = 60;
    std::size_t batch_size = 4;
    std::uint64_t token_budget = 6000;
  } capmodels;

  struct Influence {
    std::size_t d_proj = 1024;
  } influence;

  struct Mixture {
    double clamp_floor = 1e-6;
    double tolerance = 0.005;
    std::uint64_t token_budget = 6000;
  } mixture;

  struct Loo {
    std::uint64_t steps = 40;
    std::size_t batch_size = 4;
    std::uint64_t token_budget = 4000;
    std::uint64_t checkpoint_every = 10;
  } loo;

  struct Coevolve {
    double tau = 0.05;
    std::size_t max_phases = 4;
    std::uint64_t phase_steps = 30;
    std::size_t batch_size = 4;
    std::uint64_t token_budget = 4000;
    std::size_t histogram_bins = 21;
    bool distill = false;
  } coevolve;

  struct Diag {
    std::vector<double> learning_rates = {4e-3, 1e-3, 4e-4};
    std::uint64_t pretrain_steps = 60;
    std::uint64_t midtrain_steps = 30;
    std::size_t batch_size = 4;
    std::uint64_t token_budget = 6000;
  } diag;

  // Declared source ids (synth benchmark sources or explicit corpora).
  std::vector<std::string> source_ids() const;

  // Seed for one pipeline stage: mix64(seed, fnv1a64(stage)).
  std::uint64_t stage_seed(const std::string& stage) const;

  void validate() const;  // throws ConfigError naming the field
  std::string dump() const;  // full JSON with every default embedded
  std::uint64_t config_hash() const;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);
};

RunConfig default_run_config();

}  // namespace forge
