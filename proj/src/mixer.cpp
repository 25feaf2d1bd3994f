#include "forge/mixer.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace forge {

using nlohmann::json;

MixtureSpec compute_weights(const std::vector<InfluenceRecord>& records,
                            const std::map<std::string, DatasetStats>& stats,
                            std::uint64_t token_budget, std::uint64_t seed,
                            const WeightPolicy& policy,
                            std::vector<SourceWeight>* detail) {
  if (records.empty()) fail("compute_weights: no records");
  std::map<std::string, double> weighted_sum;
  for (const auto& r : records) {
    if (!stats.count(r.source_id))
      fail("record for doc " + std::to_string(r.doc_id) +
           " names source '" + r.source_id + "' with no stats");
    weighted_sum[r.source_id] +=
        r.joint * static_cast<double>(r.token_count);
  }
  for (const auto& [src, st] : stats)
    if (!weighted_sum.count(src))
      fail("source '" + src + "' has no influence records");

  std::vector<SourceWeight> rows;
  double total = 0.0;
  bool any_positive = false;
  for (const auto& [src, sum] : weighted_sum) {
    const auto& st = stats.at(src);
    if (st.total_tokens == 0) fail("source '" + src + "' has zero tokens");
    SourceWeight sw;
    sw.source_id = src;
    sw.rho = sum / static_cast<double>(st.total_tokens);
    if (sw.rho > 0.0) any_positive = true;
    rows.push_back(sw);
  }
  if (!any_positive)
    fail("compute_weights: no source has positive aggregate influence");
  for (auto& sw : rows) {
    if (sw.rho <= 0.0) sw.rho = policy.clamp_floor;
    total += sw.rho;
  }
  MixtureSpec spec;
  for (auto& sw : rows) {
    sw.weight = sw.rho / total;
    spec.weights[sw.source_id] = sw.weight;
  }
  spec.token_budget = token_budget;
  spec.seed = seed;
  if (detail) *detail = std::move(rows);
  return spec;
}

// ------------------------------------------------------------------- loo

namespace {

double probe_nll(const Model& model, std::span<const double> params,
                 const std::vector<TokenizedSample>& probe) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : probe) {
    if (s.length() < 2) continue;
    sum += model.forward_nll(params, s);
    ++n;
  }
  if (n == 0) fail("probe set has no scoreable samples");
  return sum / static_cast<double>(n);
}

LooTrajectory run_one(const std::vector<Corpus>& corpora,
                      const std::vector<std::string>& sources,
                      const std::map<Domain, std::vector<TokenizedSample>>& probes,
                      const LooSpec& spec) {
  MixtureSpec mix =
      MixtureSpec::uniform(sources, spec.token_budget, spec.seed);
  DrawOptions opts;
  opts.strict_no_repeat = true;
  opts.excluded_ids = spec.excluded_ids;
  auto stream = draw_stream(corpora, mix, opts);

  auto init = init_checkpoint(spec.model, mix64(spec.seed, 0x100));
  Model model(spec.model);
  TrainOptions topts;
  topts.steps = spec.steps;
  topts.batch_size = spec.batch_size;
  topts.checkpoint_every = spec.checkpoint_every;
  auto ckpts = train(init, stream, spec.optim, topts);

  LooTrajectory traj;
  for (const auto& ckpt : ckpts) {
    traj.steps.push_back(ckpt.step);
    for (const auto& [cap, probe] : probes)
      traj.nll[cap].push_back(probe_nll(model, ckpt.params, probe));
  }
  return traj;
}

}  // namespace

LooResult run_loo(const std::vector<Corpus>& corpora,
                  const std::string& held_out,
                  const std::map<Domain, std::vector<TokenizedSample>>& probes,
                  const LooSpec& spec) {
  std::vector<std::string> all_sources, kept_sources;
  bool found = held_out.empty();
  for (const auto& c : corpora) {
    all_sources.push_back(c.source_id);
    if (c.source_id == held_out)
      found = true;
    else
      kept_sources.push_back(c.source_id);
  }
  if (!found) fail("run_loo: unknown held-out source '" + held_out + "'");

  LooResult res;
  res.removed_source = held_out;
  res.full = run_one(corpora, all_sources, probes, spec);
  res.loo = held_out.empty() ? res.full
                             : run_one(corpora, kept_sources, probes, spec);
  for (const auto& [cap, curve] : res.full.nll)
    res.delta_nll[cap] = res.loo.nll.at(cap).back() - curve.back();
  return res;
}

std::map<Domain, std::vector<double>> normalized_nll_curves(
    const LooResult& result) {
  if (result.full.steps != result.loo.steps)
    fail("normalized_nll_curves: step grids differ");
  std::map<Domain, std::vector<double>> out;
  for (const auto& [cap, full_curve] : result.full.nll) {
    const auto& loo_curve = result.loo.nll.at(cap);
    std::vector<double> norm(full_curve.size());
    for (std::size_t i = 0; i < full_curve.size(); ++i)
      norm[i] = loo_curve[i] / full_curve[i];
    out[cap] = std::move(norm);
  }
  return out;
}

// ----------------------------------------------------------------- persist

void write_weights_jsonl(const std::string& path,
                         const std::vector<SourceWeight>& weights) {
  std::ofstream out(path);
  if (!out) fail("cannot write weights file: " + path);
  out.precision(17);
  for (const auto& w : weights) {
    json j;
    j["source_id"] = w.source_id;
    j["rho"] = w.rho;
    j["weight"] = w.weight;
    out << j.dump() << "\n";
  }
}

std::vector<SourceWeight> read_weights_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open weights file: " + path);
  std::vector<SourceWeight> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out.push_back(SourceWeight{j.at("source_id").get<std::string>(),
                               j.at("rho").get<double>(),
                               j.at("weight").get<double>()});
  }
  return out;
}

void write_loo_report(const std::string& path,
                      const std::vector<LooReportRow>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write loo report: " + path);
  out.precision(17);
  out << "removed_source,capability,delta_nll,std\n";
  for (const auto& r : rows)
    out << r.removed_source << "," << domain_name(r.capability) << ","
        << r.delta_nll << "," << r.std_dev << "\n";
}

}  // namespace forge
