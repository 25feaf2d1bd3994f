#include "forge/coevolve.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace forge {

using nlohmann::json;

HistogramSpec HistogramSpec::from_records(
    const std::vector<InfluenceRecord>& records, std::size_t bins) {
  if (records.empty()) fail("histogram: no records");
  if (bins < 3) fail("histogram: need at least 3 bins");
  double max_abs = 0.0;
  for (const auto& r : records) {
    for (const auto& [cap, v] : r.capability_scores)
      max_abs = std::max(max_abs, std::abs(v));
    max_abs = std::max(max_abs, std::abs(r.joint));
  }
  if (max_abs == 0.0) max_abs = 1.0;
  return HistogramSpec{max_abs, bins};
}

double HistogramSpec::bin_lo(std::size_t b) const {
  double width = 2.0 * max_abs / static_cast<double>(bins);
  return -max_abs + width * static_cast<double>(b);
}

double HistogramSpec::bin_hi(std::size_t b) const { return bin_lo(b + 1); }

std::size_t HistogramSpec::bin_of(double value) const {
  double width = 2.0 * max_abs / static_cast<double>(bins);
  double offset = (value + max_abs) / width;
  if (offset < 0.0) return 0;
  auto b = static_cast<std::size_t>(offset);
  return std::min(b, bins - 1);
}

std::set<std::uint64_t> filter_positive(
    const std::vector<InfluenceRecord>& records, int phase,
    std::vector<InfluenceRecord>* rejected) {
  std::set<std::uint64_t> retained;
  for (const auto& r : records) {
    if (r.phase != phase)
      fail("filter: record for doc " + std::to_string(r.doc_id) +
           " is from phase " + std::to_string(r.phase) + ", expected " +
           std::to_string(phase));
    if (r.joint > 0.0)
      retained.insert(r.doc_id);
    else if (rejected)
      rejected->push_back(r);
  }
  return retained;
}

CapabilityHistogram influence_histogram(
    const std::vector<InfluenceRecord>& records, const HistogramSpec& spec) {
  if (records.empty()) fail("histogram: no records");
  CapabilityHistogram hist;
  for (const auto& r : records)
    for (const auto& [cap, v] : r.capability_scores) {
      auto& counts = hist[cap];
      if (counts.empty()) counts.assign(spec.bins, 0);
      counts[spec.bin_of(v)] += 1;
    }
  return hist;
}

double positive_fraction(const std::vector<InfluenceRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t pos = 0;
  for (const auto& r : records)
    if (r.joint > 0.0) ++pos;
  return static_cast<double>(pos) / static_cast<double>(records.size());
}

bool convergence_check(const PhaseState& state, double tau) {
  return state.retained.empty() || state.positive_fraction < tau;
}

std::vector<InfluenceRecord> score_with_model(
    const ModelCheckpoint& model, const std::vector<Corpus>& corpora,
    const std::map<Domain, std::vector<TokenizedSample>>& probes,
    const GradientProjector& proj, int phase) {
  CheckpointSchedule schedule;
  for (const auto& [cap, probe] : probes)
    schedule.checkpoints[cap] = {model};
  InfluenceEngine engine(model.config, std::move(schedule), probes, proj);
  std::vector<InfluenceRecord> records;
  for (const auto& corpus : corpora)
    for (const auto& doc : corpus.docs) {
      auto sample = tokenize(doc);
      if (sample.length() < 2) continue;
      records.push_back(engine.score(sample, corpus.source_id, phase));
    }
  return records;
}

namespace {

// Sub-corpora restricted to the retained ids; sources left empty vanish.
std::vector<Corpus> restrict_corpora(const std::vector<Corpus>& corpora,
                                     const std::set<std::uint64_t>& retained) {
  std::vector<Corpus> out;
  for (const auto& c : corpora) {
    Corpus sub;
    sub.source_id = c.source_id;
    for (const auto& d : c.docs)
      if (retained.count(d.doc_id)) sub.docs.push_back(d);
    if (!sub.docs.empty()) out.push_back(std::move(sub));
  }
  return out;
}

MixtureSpec phase_mixture(const PhaseState& state,
                          const std::vector<Corpus>& sub,
                          const CoevolvePolicy& policy,
                          std::uint64_t draw_seed) {
  std::vector<std::string> sources;
  for (const auto& c : sub) sources.push_back(c.source_id);
  if (!policy.filter)
    return MixtureSpec::uniform(sources, policy.token_budget, draw_seed);
  std::map<std::string, DatasetStats> stats;
  for (const auto& c : sub) stats[c.source_id] = c.stats();
  std::vector<InfluenceRecord> kept;
  for (const auto& r : state.records)
    if (state.retained.count(r.doc_id) && stats.count(r.source_id))
      kept.push_back(r);
  return compute_weights(kept, stats, policy.token_budget, draw_seed);
}

ModelCheckpoint train_phase_model(const PhaseState& state,
                                  const TokenStream& stream,
                                  const CoevolvePolicy& policy,
                                  std::string* objective) {
  if (!policy.distill) {
    *objective = "cross_entropy";
    TrainOptions topts;
    topts.steps = policy.phase_steps;
    topts.batch_size = policy.batch_size;
    auto ckpts = train(state.model, stream, policy.optim, topts);
    return ckpts.back();
  }
  if (!policy.teacher) fail("distill phase requires a teacher checkpoint");
  *objective = "distill";
  ModelCheckpoint student = state.model;
  OptimState optim = policy.optim;
  if (optim.schedule.total_steps == 0)
    optim.schedule.total_steps = policy.phase_steps;
  optim.init(student.params.size());
  std::vector<TokenizedSample> usable;
  for (const auto& s : stream.samples)
    if (s.length() >= 2) usable.push_back(s);
  if (usable.empty()) fail("distill phase: no usable samples");
  std::size_t cursor = 0;
  for (std::uint64_t step = 0; step < policy.phase_steps; ++step) {
    std::vector<TokenizedSample> batch;
    for (std::size_t b = 0; b < policy.batch_size; ++b) {
      batch.push_back(usable[cursor]);
      cursor = (cursor + 1) % usable.size();
    }
    distill_step(student, *policy.teacher, batch, optim);
  }
  return student;
}

PhaseState converged_copy(const PhaseState& state) {
  PhaseState next = state;
  next.converged = true;
  return next;
}

}  // namespace

PhaseState run_phase(const PhaseState& state,
                     const std::vector<Corpus>& corpora,
                     const std::map<Domain, std::vector<TokenizedSample>>& probes,
                     const CoevolvePolicy& policy, const HistogramSpec& hist) {
  if (state.retained.empty()) return converged_copy(state);

  auto sub = restrict_corpora(corpora, state.retained);
  if (sub.empty()) return converged_copy(state);

  std::uint64_t draw_seed =
      mix64(policy.seed, static_cast<std::uint64_t>(state.phase));
  MixtureSpec mix = phase_mixture(state, sub, policy, draw_seed);
  DrawOptions opts;
  opts.excluded_ids = policy.excluded_ids;
  auto stream = draw_stream(sub, mix, opts);

  PhaseState next;
  next.phase = state.phase + 1;
  next.mixture = mix;
  next.model = train_phase_model(state, stream, policy, &next.objective);
  GradientProjector proj(policy.d_proj, mix64(policy.seed, 0xfea7));
  next.records = score_with_model(next.model, sub, probes, proj, next.phase);
  next.histogram = influence_histogram(next.records, hist);
  next.positive_fraction = positive_fraction(next.records);
  next.retained = policy.filter ? filter_positive(next.records, next.phase)
                                : state.retained;
  next.converged = convergence_check(next, policy.tau);
  return next;
}

std::vector<PhaseState> run_coevolve(
    const ModelCheckpoint& init, const std::vector<Corpus>& corpora,
    const std::map<Domain, std::vector<TokenizedSample>>& probes,
    const CoevolvePolicy& policy, HistogramSpec* hist_out) {
  GradientProjector proj(policy.d_proj, mix64(policy.seed, 0xfea7));

  PhaseState first;
  first.phase = 1;
  first.model = init;
  first.records = score_with_model(init, corpora, probes, proj, 1);
  if (first.records.empty()) fail("coevolve: nothing to score");
  HistogramSpec hist =
      HistogramSpec::from_records(first.records, policy.histogram_bins);
  if (hist_out) *hist_out = hist;
  first.histogram = influence_histogram(first.records, hist);
  first.positive_fraction = positive_fraction(first.records);
  if (policy.filter) {
    first.retained = filter_positive(first.records, 1);
  } else {
    for (const auto& c : corpora)
      for (const auto& d : c.docs) first.retained.insert(d.doc_id);
  }
  first.converged = convergence_check(first, policy.tau);

  std::vector<PhaseState> phases = {first};
  while (!phases.back().converged && phases.size() < policy.max_phases)
    phases.push_back(run_phase(phases.back(), corpora, probes, policy, hist));
  return phases;
}

// ----------------------------------------------------------------- persist

void write_phase_report(const std::string& path,
                        const std::vector<PhaseState>& phases) {
  std::ofstream out(path);
  if (!out) fail("cannot write phase report: " + path);
  out.precision(17);
  for (const auto& p : phases) {
    json j;
    j["phase"] = p.phase;
    j["positive_fraction"] = p.positive_fraction;
    j["retained_count"] = p.retained.size();
    json mix = json::object();
    for (const auto& [src, w] : p.mixture.weights) mix[src] = w;
    j["mixture"] = mix;
    j["converged"] = p.converged;
    j["objective"] = p.objective;
    out << j.dump() << "\n";
  }
}

void write_histogram_csv(const std::string& path,
                         const CapabilityHistogram& histogram,
                         const HistogramSpec& spec) {
  std::ofstream out(path);
  if (!out) fail("cannot write histogram csv: " + path);
  out.precision(17);
  out << "capability,bin_lo,bin_hi,count\n";
  for (const auto& [cap, counts] : histogram)
    for (std::size_t b = 0; b < counts.size(); ++b)
      out << domain_name(cap) << "," << spec.bin_lo(b) << "," << spec.bin_hi(b)
          << "," << counts[b] << "\n";
}

}  // namespace forge
