#pragma once

// Small decoder-only language model with exact analytic gradients, all in
// double precision. Parameters live in one flat vector so checkpoints,
// optimizers and influence features can treat the model as a point in R^P.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/corpus.hpp"

namespace forge {

struct ModelConfig {
  int layers = 4;
  int heads = 4;
  int kv_heads = 2;
  int dim = 128;
  int hidden_dim = 512;
  int vocab_size = 256;
  int seq_len = 256;
  bool qk_norm = true;
  bool tied_embeddings = true;

  int head_dim() const { return dim / heads; }
  int kv_dim() const { return kv_heads * head_dim(); }
  void validate() const;
  std::size_t param_count() const;
};

// Offsets into the flat parameter vector. Per layer:
//   ln1_g, wq, wk, wv, wo, ln2_g, w1, w2
// Matrices are row-major [in][out].
struct ParamLayout {
  explicit ParamLayout(const ModelConfig& cfg);

  std::size_t tok_emb;  // vocab x dim
  struct Layer {
    std::size_t ln1_g, wq, wk, wv, wo, ln2_g, w1, w2;
  };
  std::vector<Layer> layer;
  std::size_t lnf_g;
  std::size_t out_w;  // dim x vocab, only when untied
  std::size_t total;
};

struct ModelCheckpoint {
  std::uint64_t step = 0;
  std::vector<double> params;
  ModelConfig config;
  std::uint64_t rng_state = 0;

  std::uint64_t digest() const;  // content address over (step, params)
};

ModelCheckpoint init_checkpoint(const ModelConfig& cfg, std::uint64_t seed,
                                double init_scale = 0.02);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

// ------------------------------------------------------------------ model

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }

  // Mean per-token NLL in nats. Requires sample length >= 2.
  double forward_nll(std::span<const double> params,
                     const TokenizedSample& sample) const;

  // Accumulates d(mean NLL)/d(theta) * weight into grad (same length as
  // params). Returns the NLL.
  double grad_nll(std::span<const double> params, const TokenizedSample& sample,
                  std::span<double> grad, double weight = 1.0) const;

  // Token-weighted batch loss; batch mean equals the (s_i - 1)-weighted
  // mean of per-sample NLLs.
  double batch_loss_and_grad(std::span<const double> params,
                             std::span<const TokenizedSample> batch,
                             std::span<double> grad) const;

  // Mean per-token KL(teacher || student) and its gradient w.r.t. the
  // student. Teacher shares the config's vocabulary.
  double distill_loss_and_grad(std::span<const double> student_params,
                               std::span<const double> teacher_params,
                               std::span<const TokenizedSample> batch,
                               std::span<double> grad) const;

  // Final hidden states (post final norm, pre output projection), one row
  // per predicted position; with logits=true, rows are logits instead.
  std::vector<std::vector<double>> output_embeddings(
      std::span<const double> params, std::span<const TokenizedSample> samples,
      bool logits = false) const;

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
};

// --------------------------------------------------------------- training

struct LrSchedule {
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 20;
  std::uint64_t total_steps = 0;  // 0: filled in by train() from its budget
  double decay_floor = 0.1;       // final lr = floor * peak

  double lr_at(std::uint64_t step) const;
};

struct OptimState {
  std::vector<double> m, v;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  LrSchedule schedule;
  std::uint64_t step = 0;

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }

  // Decoupled weight decay applied before the Adam update.
  void apply(std::span<double> params, std::span<const double> grad);
};

struct TrainOptions {
  std::uint64_t steps = 1000;
  std::size_t batch_size = 8;
  std::uint64_t checkpoint_every = 0;  // 0: final checkpoint only
  // Hook called after every optimizer step with (step, loss).
  std::function<void(std::uint64_t, double)> on_step;
};

// Runs the training loop over the stream (wrapping when exhausted),
// returning checkpoints at the requested cadence plus the final step.
// NaN loss aborts with the offending step index.
std::vector<ModelCheckpoint> train(const ModelCheckpoint& init,
                                   const TokenStream& stream,
                                   OptimState optim, const TrainOptions& opts);

// One distillation step on the student; teacher is fixed.
void distill_step(ModelCheckpoint& student, const ModelCheckpoint& teacher,
                  std::span<const TokenizedSample> batch, OptimState& optim);

}  // namespace forge
