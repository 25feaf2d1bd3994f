#include "forge/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "forge/coevolve.hpp"
#include "forge/diagnostics.hpp"
#include "forge/influence.hpp"
#include "forge/mixer.hpp"
#include "forge/probeset.hpp"
#include "forge/synth.hpp"

namespace forge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1";

std::string stage_dir(const RunConfig& cfg, const std::string& stage) {
  return cfg.out_dir + "/" + stage;
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

void write_manifest(const RunConfig& cfg, const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json j;
  j["stage"] = stage;
  j["config_hash"] = hex64(cfg.config_hash());
  j["seed"] = cfg.seed;
  j["version"] = kToolVersion;
  json in = json::object(), out = json::object();
  for (const auto& p : inputs) in[p] = file_digest(p);
  for (const auto& p : outputs) out[p] = file_digest(p);
  j["inputs"] = in;
  j["outputs"] = out;
  std::string path = stage_dir(cfg, stage) + "/manifest.json";
  std::ofstream f(path);
  if (!f) fail("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
  f.close();

  // top-level manifest: stage -> digest of the stage manifest
  std::string top_path = cfg.out_dir + "/manifest.json";
  json top = json::object();
  if (fs::exists(top_path)) {
    std::ifstream tf(top_path);
    try {
      tf >> top;
    } catch (const json::exception&) {
      top = json::object();
    }
  }
  top[stage] = file_digest(path);
  std::ofstream tf(top_path);
  tf << top.dump(2) << "\n";
}

OptimState make_optim(const RunConfig& cfg) {
  OptimState o;
  o.beta1 = cfg.optimizer.beta1;
  o.beta2 = cfg.optimizer.beta2;
  o.weight_decay = cfg.optimizer.weight_decay;
  o.schedule.peak_lr = cfg.optimizer.peak_lr;
  o.schedule.warmup_steps = cfg.optimizer.warmup_steps;
  o.schedule.decay_floor = cfg.optimizer.decay_floor;
  return o;
}

std::vector<Corpus> load_ingested(const RunConfig& cfg) {
  std::vector<Corpus> out;
  for (const auto& src : cfg.source_ids()) {
    std::string path = stage_dir(cfg, "ingest") + "/" + src + ".jsonl";
    require_artifact(path);
    out.push_back(ingest_corpus(path, src));
  }
  return out;
}

std::map<std::uint64_t, const Document*> doc_index(
    const std::vector<Corpus>& corpora) {
  std::map<std::uint64_t, const Document*> idx;
  for (const auto& c : corpora)
    for (const auto& d : c.docs) idx[d.doc_id] = &d;
  return idx;
}

std::map<std::string, RepresentativeSet> load_repsets(const RunConfig& cfg) {
  std::map<std::string, RepresentativeSet> reps;
  for (const auto& src : cfg.source_ids()) {
    std::string path = stage_dir(cfg, "probes") + "/rep_" + src + ".jsonl";
    require_artifact(path);
    RepresentativeSet rep;
    rep.source_id = src;
    rep.members = read_idset_jsonl(path);
    reps[src] = std::move(rep);
  }
  return reps;
}

struct LoadedProbes {
  std::map<Domain, std::vector<TokenizedSample>> samples;
  std::set<std::uint64_t> ids;
};

LoadedProbes load_probes(const RunConfig& cfg,
                         const std::vector<Corpus>& corpora) {
  auto idx = doc_index(corpora);
  LoadedProbes out;
  for (const auto& [cap, sources] : cfg.capabilities) {
    std::string path =
        stage_dir(cfg, "probes") + "/probe_" + domain_name(cap) + ".jsonl";
    require_artifact(path);
    for (auto id : read_idset_jsonl(path)) {
      auto it = idx.find(id);
      if (it == idx.end())
        fail("probe id " + std::to_string(id) + " not found in the corpora");
      out.samples[cap].push_back(tokenize(*it->second));
      out.ids.insert(id);
    }
  }
  return out;
}

std::string ckpt_path(const RunConfig& cfg, Domain cap, std::size_t t) {
  return stage_dir(cfg, "capmodels") + "/" + domain_name(cap) + "_" +
         std::to_string(t) + ".ckpt";
}

}  // namespace

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

void require_artifact(const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifact(path);
}

const std::vector<std::string> kPipelineOrder = {
    "synth", "ingest",    "probes", "capmodels", "influence",
    "mix",   "loo",       "coevolve", "diag"};

// --------------------------------------------------------------- commands

void cmd_synth(const RunConfig& cfg) {
  if (!cfg.use_synth)
    fail("synth stage disabled: config declares external corpora");
  auto spec = default_benchmark(cfg.seed);
  for (auto& s : spec.sources)
    s.docs = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               static_cast<double>(s.docs) * cfg.synth_scale));
  auto corpora = generate_synthetic(spec);
  ensure_dir(stage_dir(cfg, "synth"));
  std::vector<std::string> outputs;
  for (const auto& c : corpora) {
    std::string path = stage_dir(cfg, "synth") + "/" + c.source_id + ".jsonl";
    write_corpus_jsonl(c, path);
    outputs.push_back(path);
  }
  write_manifest(cfg, "synth", {}, outputs);
}

void cmd_ingest(const RunConfig& cfg) {
  std::vector<std::string> inputs, outputs;
  std::vector<Corpus> corpora;
  if (cfg.use_synth) {
    for (const auto& src : cfg.source_ids()) {
      std::string path = stage_dir(cfg, "synth") + "/" + src + ".jsonl";
      require_artifact(path);
      inputs.push_back(path);
      corpora.push_back(ingest_corpus(path, src));
    }
  } else {
    for (const auto& decl : cfg.corpora) {
      require_artifact(decl.path);
      inputs.push_back(decl.path);
      corpora.push_back(ingest_corpus(decl.path, decl.source_id));
    }
  }
  ensure_dir(stage_dir(cfg, "ingest"));
  json stats = json::object();
  for (const auto& c : corpora) {
    std::string path = stage_dir(cfg, "ingest") + "/" + c.source_id + ".jsonl";
    write_corpus_jsonl(c, path);
    outputs.push_back(path);
    auto st = c.stats();
    stats[c.source_id] = {{"total_tokens", st.total_tokens},
                          {"row_count", st.row_count}};
  }
  std::string stats_path = stage_dir(cfg, "ingest") + "/stats.json";
  {
    std::ofstream f(stats_path);
    f << stats.dump(2) << "\n";
  }
  outputs.push_back(stats_path);
  write_manifest(cfg, "ingest", inputs, outputs);
}

void cmd_probes(const RunConfig& cfg) {
  auto corpora = load_ingested(cfg);
  std::vector<std::string> inputs;
  for (const auto& src : cfg.source_ids())
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");

  ensure_dir(stage_dir(cfg, "probes"));
  std::vector<std::string> outputs;
  std::map<std::string, RepresentativeSet> reps;
  json report = json::object();
  for (auto& c : corpora) {
    for (const auto& sc : cfg.scorers) attach_heuristic_scores(c.docs, sc);
    BuildReport br;
    auto rep = build_representative(c, cfg.scorers,
                                    cfg.representative.target_size,
                                    cfg.representative.dedup_threshold,
                                    cfg.stage_seed("probes"), &br);
    json stages = json::array();
    for (const auto& [stage, n] : br.stage_survivors)
      stages.push_back({{"stage", stage}, {"survivors", n}});
    report[c.source_id] = {{"stages", stages},
                           {"empty", br.empty_warning},
                           {"members", rep.members.size()}};
    std::string path =
        stage_dir(cfg, "probes") + "/rep_" + c.source_id + ".jsonl";
    write_idset_jsonl(path, rep.members, c.source_id);
    outputs.push_back(path);
    reps[c.source_id] = std::move(rep);
  }

  auto probe_sets = build_probes(reps, cfg.capabilities);
  for (auto& [cap, probe] : probe_sets) {
    auto members = probe.members;
    Rng rng(mix64(cfg.stage_seed("probes"), fnv1a64(domain_name(cap))));
    rng.shuffle(members);
    if (members.size() > cfg.probes.per_capability)
      members.resize(cfg.probes.per_capability);
    std::sort(members.begin(), members.end());
    std::string path =
        stage_dir(cfg, "probes") + "/probe_" + domain_name(cap) + ".jsonl";
    write_idset_jsonl(path, members, "", domain_name(cap));
    outputs.push_back(path);
  }
  std::string report_path = stage_dir(cfg, "probes") + "/report.json";
  {
    std::ofstream f(report_path);
    f << report.dump(2) << "\n";
  }
  outputs.push_back(report_path);
  write_manifest(cfg, "probes", inputs, outputs);
}

void cmd_capmodels(const RunConfig& cfg) {
  auto corpora = load_ingested(cfg);
  auto probes = load_probes(cfg, corpora);
  std::vector<std::string> inputs;
  for (const auto& src : cfg.source_ids())
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");
  for (const auto& [cap, sources] : cfg.capabilities)
    inputs.push_back(stage_dir(cfg, "probes") + "/probe_" + domain_name(cap) +
                     ".jsonl");

  CapabilityTrainSpec spec;
  spec.model = cfg.model;
  spec.optim = make_optim(cfg);
  spec.steps = cfg.capmodels.steps;
  spec.batch_size = cfg.capmodels.batch_size;
  spec.T = cfg.schedule.T;
  spec.token_budget = cfg.capmodels.token_budget;
  spec.seed = cfg.stage_seed("capmodels");
  spec.excluded_ids = probes.ids;
  auto models = train_capability_models(corpora, cfg.capabilities, spec);

  ensure_dir(stage_dir(cfg, "capmodels"));
  std::vector<std::string> outputs;
  for (const auto& [cap, ckpts] : models)
    for (std::size_t t = 0; t < ckpts.size(); ++t) {
      std::string path = ckpt_path(cfg, cap, t);
      save_checkpoint(ckpts[t], path);
      outputs.push_back(path);
    }
  write_manifest(cfg, "capmodels", inputs, outputs);
}

void cmd_influence(const RunConfig& cfg) {
  auto corpora = load_ingested(cfg);
  auto probes = load_probes(cfg, corpora);
  auto reps = load_repsets(cfg);
  std::vector<std::string> inputs;
  for (const auto& src : cfg.source_ids()) {
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");
    inputs.push_back(stage_dir(cfg, "probes") + "/rep_" + src + ".jsonl");
  }

  CheckpointSchedule schedule;
  for (const auto& [cap, sources] : cfg.capabilities) {
    // a short training run can emit fewer than T checkpoints
    for (std::size_t t = 0; t < cfg.schedule.T; ++t) {
      std::string path = ckpt_path(cfg, cap, t);
      if (t > 0 && !fs::exists(path)) break;
      require_artifact(path);
      inputs.push_back(path);
      schedule.checkpoints[cap].push_back(load_checkpoint(path));
    }
  }

  GradientProjector proj(cfg.influence.d_proj,
                         cfg.stage_seed("influence-projection"));
  InfluenceEngine engine(cfg.model, std::move(schedule), probes.samples, proj);

  auto idx = doc_index(corpora);
  std::vector<InfluenceRecord> records;
  for (const auto& src : cfg.source_ids())
    for (auto id : reps.at(src).members) {
      auto it = idx.find(id);
      if (it == idx.end())
        fail("representative id " + std::to_string(id) + " not in corpora");
      auto sample = tokenize(*it->second);
      if (sample.length() < 2) continue;
      records.push_back(engine.score(sample, src, 1));
    }

  ensure_dir(stage_dir(cfg, "influence"));
  std::string path = stage_dir(cfg, "influence") + "/records.csv";
  write_influence_csv(path, records);
  write_manifest(cfg, "influence", inputs, {path});
}

void cmd_mix(const RunConfig& cfg) {
  std::string records_path = stage_dir(cfg, "influence") + "/records.csv";
  require_artifact(records_path);
  auto records = read_influence_csv(records_path);
  auto corpora = load_ingested(cfg);

  // the dump format carries no token counts; rehydrate s_i from the corpora
  auto idx = doc_index(corpora);
  for (auto& r : records) {
    auto it = idx.find(r.doc_id);
    if (it == idx.end())
      fail("influence record for doc " + std::to_string(r.doc_id) +
           " has no matching corpus document");
    r.token_count = it->second->text.size();
  }

  std::set<std::string> with_records;
  for (const auto& r : records) with_records.insert(r.source_id);
  std::map<std::string, DatasetStats> stats;
  for (const auto& c : corpora)
    if (with_records.count(c.source_id)) stats[c.source_id] = c.stats();

  WeightPolicy policy;
  policy.clamp_floor = cfg.mixture.clamp_floor;
  std::vector<SourceWeight> detail;
  auto spec = compute_weights(records, stats, cfg.mixture.token_budget,
                              cfg.stage_seed("mix"), policy, &detail);
  spec.validate_and_normalize(cfg.mixture.tolerance);

  ensure_dir(stage_dir(cfg, "mix"));
  std::string path = stage_dir(cfg, "mix") + "/weights.jsonl";
  write_weights_jsonl(path, detail);
  std::vector<std::string> inputs = {records_path};
  for (const auto& src : cfg.source_ids())
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");
  write_manifest(cfg, "mix", inputs, {path});
}

void cmd_loo(const RunConfig& cfg) {
  auto corpora = load_ingested(cfg);
  auto probes = load_probes(cfg, corpora);
  std::vector<std::string> inputs;
  for (const auto& src : cfg.source_ids())
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");

  LooSpec spec;
  spec.model = cfg.model;
  spec.optim = make_optim(cfg);
  spec.steps = cfg.loo.steps;
  spec.batch_size = cfg.loo.batch_size;
  spec.token_budget = cfg.loo.token_budget;
  spec.checkpoint_every = cfg.loo.checkpoint_every;
  spec.seed = cfg.stage_seed("loo");
  spec.excluded_ids = probes.ids;

  std::vector<LooReportRow> rows;
  for (const auto& src : cfg.source_ids()) {
    auto res = run_loo(corpora, src, probes.samples, spec);
    for (const auto& [cap, delta] : res.delta_nll)
      rows.push_back({src, cap, delta, 0.0});
  }
  ensure_dir(stage_dir(cfg, "loo"));
  std::string path = stage_dir(cfg, "loo") + "/report.csv";
  write_loo_report(path, rows);
  write_manifest(cfg, "loo", inputs, {path});
}

void cmd_coevolve(const RunConfig& cfg) {
  auto corpora = load_ingested(cfg);
  auto probes = load_probes(cfg, corpora);
  auto reps = load_repsets(cfg);
  std::vector<std::string> inputs;
  for (const auto& src : cfg.source_ids()) {
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");
    inputs.push_back(stage_dir(cfg, "probes") + "/rep_" + src + ".jsonl");
  }

  // the loop runs on the representative surrogate of each source
  std::set<std::uint64_t> rep_ids;
  for (const auto& [src, rep] : reps)
    rep_ids.insert(rep.members.begin(), rep.members.end());
  std::vector<Corpus> restricted;
  for (const auto& c : corpora) {
    Corpus sub;
    sub.source_id = c.source_id;
    for (const auto& d : c.docs)
      if (rep_ids.count(d.doc_id) && !probes.ids.count(d.doc_id))
        sub.docs.push_back(d);
    if (!sub.docs.empty()) restricted.push_back(std::move(sub));
  }

  CoevolvePolicy policy;
  policy.tau = cfg.coevolve.tau;
  policy.max_phases = cfg.coevolve.max_phases;
  policy.phase_steps = cfg.coevolve.phase_steps;
  policy.batch_size = cfg.coevolve.batch_size;
  policy.token_budget = cfg.coevolve.token_budget;
  policy.histogram_bins = cfg.coevolve.histogram_bins;
  policy.d_proj = cfg.influence.d_proj;
  policy.seed = cfg.stage_seed("coevolve");
  policy.distill = cfg.coevolve.distill;
  policy.optim = make_optim(cfg);

  auto init = init_checkpoint(cfg.model, mix64(policy.seed, 1));
  if (policy.distill) policy.teacher = init;
  HistogramSpec hist;
  auto phases = run_coevolve(init, restricted, probes.samples, policy, &hist);

  ensure_dir(stage_dir(cfg, "coevolve"));
  std::vector<std::string> outputs;
  std::string report_path = stage_dir(cfg, "coevolve") + "/phases.jsonl";
  write_phase_report(report_path, phases);
  outputs.push_back(report_path);
  for (const auto& p : phases) {
    std::string path = stage_dir(cfg, "coevolve") + "/hist_phase" +
                       std::to_string(p.phase) + ".csv";
    write_histogram_csv(path, p.histogram, hist);
    outputs.push_back(path);
  }
  std::string ids_path = stage_dir(cfg, "coevolve") + "/retained.jsonl";
  std::vector<std::uint64_t> final_ids(phases.back().retained.begin(),
                                       phases.back().retained.end());
  write_idset_jsonl(ids_path, final_ids, "");
  outputs.push_back(ids_path);
  write_manifest(cfg, "coevolve", inputs, outputs);
}

void cmd_diag(const RunConfig& cfg) {
  auto corpora = load_ingested(cfg);
  auto probes = load_probes(cfg, corpora);
  std::vector<std::string> inputs;
  for (const auto& src : cfg.source_ids())
    inputs.push_back(stage_dir(cfg, "ingest") + "/" + src + ".jsonl");

  std::vector<TokenizedSample> probe_all;
  for (const auto& [cap, samples] : probes.samples)
    probe_all.insert(probe_all.end(), samples.begin(), samples.end());

  LrSweepSpec sweep;
  sweep.model = cfg.model;
  sweep.optim = make_optim(cfg);
  sweep.pretrain_steps = cfg.diag.pretrain_steps;
  sweep.midtrain_steps = cfg.diag.midtrain_steps;
  sweep.batch_size = cfg.diag.batch_size;
  sweep.token_budget = cfg.diag.token_budget;
  sweep.seed = cfg.stage_seed("diag");
  auto result = lr_sweep_correlation(cfg.diag.learning_rates, corpora, corpora,
                                     probe_all, sweep);

  ensure_dir(stage_dir(cfg, "diag"));
  std::vector<std::string> outputs;
  std::string sweep_path = stage_dir(cfg, "diag") + "/lr_sweep.csv";
  write_lr_sweep_csv(sweep_path, result);
  outputs.push_back(sweep_path);

  // loss trajectories under the default optimizer on the uniform mixture
  auto mix = MixtureSpec::uniform(cfg.source_ids(), cfg.diag.token_budget,
                                  cfg.stage_seed("diag-nll"));
  DrawOptions opts;
  opts.excluded_ids = probes.ids;
  auto stream = draw_stream(corpora, mix, opts);
  auto init = init_checkpoint(cfg.model, mix64(cfg.stage_seed("diag"), 2));
  TrainOptions topts;
  topts.steps = cfg.diag.pretrain_steps;
  topts.batch_size = cfg.diag.batch_size;
  topts.checkpoint_every = std::max<std::uint64_t>(1, topts.steps / 4);
  auto ckpts = train(init, stream, make_optim(cfg), topts);
  std::map<std::string, std::vector<TokenizedSample>> sets;
  for (const auto& [cap, samples] : probes.samples)
    sets[domain_name(cap)] = samples;
  auto rows = nll_tracker({{"init", {init}}, {"pretrain", ckpts}}, sets);
  std::string nll_path = stage_dir(cfg, "diag") + "/nll.csv";
  write_nll_csv(nll_path, rows);
  outputs.push_back(nll_path);
  write_manifest(cfg, "diag", inputs, outputs);
}

int run_command(const std::string& name, const RunConfig& cfg) {
  try {
    cfg.validate();
    if (name == "all") {
      for (const auto& stage : kPipelineOrder) {
        int rc = run_command(stage, cfg);
        if (rc != 0) return rc;
      }
      return 0;
    }
    if (name == "synth") cmd_synth(cfg);
    else if (name == "ingest") cmd_ingest(cfg);
    else if (name == "probes") cmd_probes(cfg);
    else if (name == "capmodels") cmd_capmodels(cfg);
    else if (name == "influence") cmd_influence(cfg);
    else if (name == "mix") cmd_mix(cfg);
    else if (name == "loo") cmd_loo(cfg);
    else if (name == "coevolve") cmd_coevolve(cfg);
    else if (name == "diag") cmd_diag(cfg);
    else {
      std::cerr << "unknown command: " << name << "\n";
      return 1;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const MissingArtifact& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}

}  // namespace forge
