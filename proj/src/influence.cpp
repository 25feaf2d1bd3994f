#include "forge/influence.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace forge {

std::vector<double> GradientProjector::project(
    std::span<const double> grad) const {
  if (identity()) return std::vector<double>(grad.begin(), grad.end());
  std::vector<double> out(d_proj_, 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    std::uint64_t h = mix64(seed_, i);
    std::size_t bucket = static_cast<std::size_t>(h >> 1) % d_proj_;
    double sign = (h & 1u) ? 1.0 : -1.0;
    out[bucket] += sign * grad[i];
  }
  return out;
}

std::vector<double> CheckpointSchedule::alphas(std::size_t T) {
  if (T == 0) fail("checkpoint schedule: T must be >= 1");
  std::vector<double> a(T);
  double sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    a[t] = static_cast<double>(t + 1);
    sum += a[t];
  }
  for (double& v : a) v /= sum;
  return a;
}

std::vector<double> sample_feature(const Model& model,
                                   std::span<const double> params,
                                   const TokenizedSample& sample,
                                   const GradientProjector& proj) {
  std::vector<double> grad(params.size(), 0.0);
  model.grad_nll(params, sample, grad);
  if (!all_finite(grad))
    fail("non-finite gradient for doc " + std::to_string(sample.doc_id));
  return proj.project(grad);
}

std::vector<double> probe_gradient(const Model& model,
                                   std::span<const double> params,
                                   std::span<const TokenizedSample> probe,
                                   const GradientProjector& proj) {
  if (probe.empty()) fail("probe batch is empty");
  std::vector<double> grad(params.size(), 0.0);
  double w = 1.0 / static_cast<double>(probe.size());
  for (const auto& s : probe) model.grad_nll(params, s, grad, w);
  if (!all_finite(grad)) fail("non-finite probe gradient");
  return proj.project(grad);
}

double influence_pair(const Model& model, const ModelCheckpoint& ckpt,
                      const TokenizedSample& train_sample,
                      std::span<const TokenizedSample> probe_batch,
                      const GradientProjector& proj) {
  auto g_test = probe_gradient(model, ckpt.params, probe_batch, proj);
  auto g_train = sample_feature(model, ckpt.params, train_sample, proj);
  double v = dot(g_test, g_train);
  if (!std::isfinite(v))
    fail("non-finite influence at checkpoint step " +
         std::to_string(ckpt.step));
  return v;
}

InfluenceEngine::InfluenceEngine(
    const ModelConfig& cfg, CheckpointSchedule schedule,
    std::map<Domain, std::vector<TokenizedSample>> probes,
    GradientProjector proj)
    : model_(cfg), schedule_(std::move(schedule)), proj_(proj) {
  for (const auto& [cap, probe] : probes) {
    auto it = schedule_.checkpoints.find(cap);
    if (it == schedule_.checkpoints.end() || it->second.empty())
      fail("no checkpoints for capability " + domain_name(cap));
    auto& grads = probe_grads_[cap];
    for (const auto& ckpt : it->second)
      grads.push_back(probe_gradient(model_, ckpt.params, probe, proj_));
  }
  for (const auto& [cap, cks] : schedule_.checkpoints)
    if (!probe_grads_.count(cap))
      fail("no probe batch for capability " + domain_name(cap));
}

std::map<Domain, double> InfluenceEngine::capability_scores(
    const TokenizedSample& sample) const {
  std::map<Domain, double> out;
  for (const auto& [cap, ckpts] : schedule_.checkpoints) {
    const auto& grads = probe_grads_.at(cap);
    auto alpha = CheckpointSchedule::alphas(ckpts.size());
    double score = 0.0;
    for (std::size_t t = 0; t < ckpts.size(); ++t) {
      auto feat = sample_feature(model_, ckpts[t].params, sample, proj_);
      score += alpha[t] * dot(grads[t], feat);
    }
    if (!std::isfinite(score))
      fail("non-finite influence for doc " + std::to_string(sample.doc_id));
    out[cap] = score;
  }
  return out;
}

InfluenceRecord InfluenceEngine::score(const TokenizedSample& sample,
                                       const std::string& source_id,
                                       int phase) const {
  InfluenceRecord rec;
  rec.doc_id = sample.doc_id;
  rec.source_id = source_id;
  rec.token_count = sample.length();
  rec.phase = phase;
  rec.capability_scores = capability_scores(sample);
  rec.joint = joint_influence(rec.capability_scores);
  return rec;
}

double joint_influence(const std::map<Domain, double>& capability_scores) {
  // uniform capability weights; alphas already normalized per capability
  double joint = 0.0;
  for (const auto& [cap, v] : capability_scores) joint += v;
  return joint;
}

std::map<Domain, std::vector<ModelCheckpoint>> train_capability_models(
    const std::vector<Corpus>& corpora,
    const std::map<Domain, std::vector<std::string>>& capability_sources,
    const CapabilityTrainSpec& spec) {
  std::map<Domain, std::vector<ModelCheckpoint>> out;
  for (const auto& [cap, sources] : capability_sources) {
    MixtureSpec mix = MixtureSpec::uniform(
        sources, spec.token_budget,
        mix64(spec.seed, fnv1a64(domain_name(cap))));
    DrawOptions opts;
    opts.excluded_ids = spec.excluded_ids;
    auto stream = draw_stream(corpora, mix, opts);

    auto init = init_checkpoint(spec.model, mix64(spec.seed, 0xca9));
    TrainOptions topts;
    topts.steps = spec.steps;
    topts.batch_size = spec.batch_size;
    topts.checkpoint_every = std::max<std::uint64_t>(1, spec.steps / spec.T);
    auto ckpts = train(init, stream, spec.optim, topts);
    // keep the last T (evenly spaced by construction)
    if (ckpts.size() > spec.T)
      ckpts.erase(ckpts.begin(),
                  ckpts.begin() + static_cast<long>(ckpts.size() - spec.T));
    out[cap] = std::move(ckpts);
  }
  return out;
}

// ----------------------------------------------------------------- persist

void write_influence_csv(const std::string& path,
                         const std::vector<InfluenceRecord>& records) {
  std::ofstream out(path);
  if (!out) fail("cannot write influence csv: " + path);
  out.precision(17);
  out << "doc_id,source_id,phase,I_C,I_M,I_K,I_joint\n";
  for (const auto& r : records) {
    auto get = [&](Domain d) {
      auto it = r.capability_scores.find(d);
      return it == r.capability_scores.end() ? 0.0 : it->second;
    };
    out << r.doc_id << "," << r.source_id << "," << r.phase << ","
        << get(Domain::Code) << "," << get(Domain::Math) << ","
        << get(Domain::Knowledge) << "," << r.joint << "\n";
  }
}

std::vector<InfluenceRecord> read_influence_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open influence csv: " + path);
  std::vector<InfluenceRecord> records;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    InfluenceRecord r;
    std::getline(ss, field, ',');
    r.doc_id = std::stoull(field);
    std::getline(ss, r.source_id, ',');
    std::getline(ss, field, ',');
    r.phase = std::stoi(field);
    std::getline(ss, field, ',');
    r.capability_scores[Domain::Code] = std::stod(field);
    std::getline(ss, field, ',');
    r.capability_scores[Domain::Math] = std::stod(field);
    std::getline(ss, field, ',');
    r.capability_scores[Domain::Knowledge] = std::stod(field);
    std::getline(ss, field, ',');
    r.joint = std::stod(field);
    records.push_back(std::move(r));
  }
  return records;
}

namespace {
constexpr std::uint64_t kFeatMagic = 0x31544145464752ull;  // "FRGFEAT1"
}

void write_feature_cache(const std::string& path, std::uint64_t ckpt_digest,
                         std::uint64_t proj_seed,
                         const std::vector<GradientFeature>& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write feature cache: " + path);
  auto put = [&](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  put(kFeatMagic);
  put(ckpt_digest);
  put(proj_seed);
  put(features.size());
  for (const auto& f : features) {
    put(f.doc_id);
    put(f.ckpt_step);
    put(f.vector.size());
    out.write(reinterpret_cast<const char*>(f.vector.data()),
              static_cast<std::streamsize>(f.vector.size() * sizeof(double)));
  }
}

std::vector<GradientFeature> read_feature_cache(const std::string& path,
                                                std::uint64_t ckpt_digest,
                                                std::uint64_t proj_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open feature cache: " + path);
  auto get = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) fail("truncated feature cache: " + path);
    return v;
  };
  if (get() != kFeatMagic) fail("bad feature cache magic: " + path);
  if (get() != ckpt_digest) fail("feature cache digest mismatch: " + path);
  if (get() != proj_seed) fail("feature cache projection seed mismatch: " + path);
  std::uint64_t n = get();
  std::vector<GradientFeature> out(n);
  for (auto& f : out) {
    f.doc_id = get();
    f.ckpt_step = get();
    f.projection_seed = proj_seed;
    std::uint64_t len = get();
    f.vector.resize(len);
    in.read(reinterpret_cast<char*>(f.vector.data()),
            static_cast<std::streamsize>(len * sizeof(double)));
    if (!in) fail("truncated feature cache: " + path);
  }
  return out;
}

}  // namespace forge
