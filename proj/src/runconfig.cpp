#include "forge/runconfig.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace forge {

using nlohmann::json;

namespace {

template <typename T>
void get_field(const json& j, const char* key, T& out,
               const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError(prefix + key, "invalid value");
  }
}

ScorerKind scorer_kind_from(const std::string& s, const std::string& field) {
  if (s == "threshold") return ScorerKind::ThresholdClassifier;
  if (s == "relevance") return ScorerKind::RelevanceJudge;
  if (s == "domain") return ScorerKind::DomainJudge;
  throw ConfigError(field, "unknown scorer kind '" + s + "'");
}

std::string scorer_kind_name(ScorerKind k) {
  switch (k) {
    case ScorerKind::ThresholdClassifier: return "threshold";
    case ScorerKind::RelevanceJudge: return "relevance";
    case ScorerKind::DomainJudge: return "domain";
  }
  return "threshold";
}

}  // namespace

std::vector<std::string> RunConfig::source_ids() const {
  std::vector<std::string> out;
  if (use_synth) {
    for (const auto& s : default_benchmark(seed).sources)
      out.push_back(s.source_id);
  } else {
    for (const auto& c : corpora) out.push_back(c.source_id);
  }
  return out;
}

std::uint64_t RunConfig::stage_seed(const std::string& stage) const {
  return mix64(seed, fnv1a64(stage));
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir", "must not be empty");
  try {
    model.validate();
  } catch (const ForgeError& e) {
    throw ConfigError("model", e.what());
  }
  if (!use_synth) {
    if (corpora.empty())
      throw ConfigError("corpora", "required when use_synth is false");
    std::set<std::string> seen;
    for (const auto& c : corpora) {
      if (c.source_id.empty())
        throw ConfigError("corpora.source_id", "must not be empty");
      if (c.path.empty())
        throw ConfigError("corpora.path",
                          "must not be empty for source '" + c.source_id + "'");
      if (!seen.insert(c.source_id).second)
        throw ConfigError("corpora.source_id",
                          "duplicate source '" + c.source_id + "'");
    }
  }
  if (synth_scale <= 0.0)
    throw ConfigError("synth_scale", "must be positive");
  if (optimizer.peak_lr <= 0.0)
    throw ConfigError("optimizer.peak_lr", "must be positive");

  auto declared = source_ids();
  std::set<std::string> decl_set(declared.begin(), declared.end());
  if (capabilities.empty())
    throw ConfigError("capabilities", "at least one capability is required");
  for (const auto& [cap, sources] : capabilities) {
    std::string field = "capabilities." + domain_name(cap);
    if (sources.empty()) throw ConfigError(field, "empty source list");
    for (const auto& src : sources)
      if (!decl_set.count(src))
        throw ConfigError(field, "undeclared source '" + src + "'");
  }
  for (const auto& sc : scorers) {
    try {
      sc.validate();
    } catch (const ForgeError& e) {
      throw ConfigError("scorers." + sc.name, e.what());
    }
  }
  if (schedule.T == 0) throw ConfigError("schedule.T", "must be >= 1");
  if (representative.target_size == 0)
    throw ConfigError("representative.target_size", "must be >= 1");
  if (representative.dedup_threshold <= 0.0 ||
      representative.dedup_threshold > 1.0)
    throw ConfigError("representative.dedup_threshold", "must be in (0,1]");
  if (probes.per_capability == 0)
    throw ConfigError("probes.per_capability", "must be >= 1");
  if (mixture.tolerance < 0.0)
    throw ConfigError("mixture.tolerance", "must be >= 0");
  if (mixture.clamp_floor <= 0.0)
    throw ConfigError("mixture.clamp_floor", "must be positive");
  if (coevolve.tau <= 0.0 || coevolve.tau >= 1.0)
    throw ConfigError("coevolve.tau", "must be in (0,1)");
  if (coevolve.max_phases == 0)
    throw ConfigError("coevolve.max_phases", "must be >= 1");
  if (coevolve.histogram_bins < 3)
    throw ConfigError("coevolve.histogram_bins", "must be >= 3");
  if (diag.learning_rates.size() < 3)
    throw ConfigError("diag.learning_rates", "need at least 3 rates");
}

std::string RunConfig::dump() const {
  json j;
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  j["use_synth"] = use_synth;
  j["synth_scale"] = synth_scale;
  json corp = json::array();
  for (const auto& c : corpora)
    corp.push_back({{"source_id", c.source_id}, {"path", c.path}});
  j["corpora"] = corp;
  j["model"] = {{"layers", model.layers},
                {"heads", model.heads},
                {"kv_heads", model.kv_heads},
                {"dim", model.dim},
                {"hidden_dim", model.hidden_dim},
                {"vocab_size", model.vocab_size},
                {"seq_len", model.seq_len},
                {"qk_norm", model.qk_norm},
                {"tied_embeddings", model.tied_embeddings}};
  j["optimizer"] = {{"peak_lr", optimizer.peak_lr},
                    {"warmup_steps", optimizer.warmup_steps},
                    {"decay_floor", optimizer.decay_floor},
                    {"weight_decay", optimizer.weight_decay},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2}};
  json sc = json::array();
  for (const auto& s : scorers) {
    json e = {{"name", s.name},
              {"kind", scorer_kind_name(s.kind)},
              {"threshold", s.threshold},
              {"top_fraction", s.top_fraction}};
    if (s.domain) e["domain"] = domain_name(*s.domain);
    sc.push_back(e);
  }
  j["scorers"] = sc;
  json caps = json::object();
  for (const auto& [cap, sources] : capabilities)
    caps[domain_name(cap)] = sources;
  j["capabilities"] = caps;
  j["schedule"] = {{"T", schedule.T}};
  j["representative"] = {{"target_size", representative.target_size},
                         {"dedup_threshold", representative.dedup_threshold}};
  j["probes"] = {{"per_capability", probes.per_capability}};
  j["capmodels"] = {{"steps", capmodels.steps},
                    {"batch_size", capmodels.batch_size},
                    {"token_budget", capmodels.token_budget}};
  j["influence"] = {{"d_proj", influence.d_proj}};
  j["mixture"] = {{"clamp_floor", mixture.clamp_floor},
                  {"tolerance", mixture.tolerance},
                  {"token_budget", mixture.token_budget}};
  j["loo"] = {{"steps", loo.steps},
              {"batch_size", loo.batch_size},
              {"token_budget", loo.token_budget},
              {"checkpoint_every", loo.checkpoint_every}};
  j["coevolve"] = {{"tau", coevolve.tau},
                   {"max_phases", coevolve.max_phases},
                   {"phase_steps", coevolve.phase_steps},
                   {"batch_size", coevolve.batch_size},
                   {"token_budget", coevolve.token_budget},
                   {"histogram_bins", coevolve.histogram_bins},
                   {"distill", coevolve.distill}};
  j["diag"] = {{"learning_rates", diag.learning_rates},
               {"pretrain_steps", diag.pretrain_steps},
               {"midtrain_steps", diag.midtrain_steps},
               {"batch_size", diag.batch_size},
               {"token_budget", diag.token_budget}};
  return j.dump(2) + "\n";
}

std::uint64_t RunConfig::config_hash() const { return fnv1a64(dump()); }

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("(root)", std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("(root)", "top level must be an object");

  RunConfig cfg = default_run_config();
  get_field(j, "out_dir", cfg.out_dir, "");
  get_field(j, "seed", cfg.seed, "");
  get_field(j, "use_synth", cfg.use_synth, "");
  get_field(j, "synth_scale", cfg.synth_scale, "");

  if (j.contains("corpora")) {
    if (!j["corpora"].is_array())
      throw ConfigError("corpora", "must be an array");
    cfg.corpora.clear();
    for (const auto& e : j["corpora"]) {
      CorpusDecl d;
      get_field(e, "source_id", d.source_id, "corpora.");
      get_field(e, "path", d.path, "corpora.");
      cfg.corpora.push_back(std::move(d));
    }
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    get_field(m, "layers", cfg.model.layers, "model.");
    get_field(m, "heads", cfg.model.heads, "model.");
    get_field(m, "kv_heads", cfg.model.kv_heads, "model.");
    get_field(m, "dim", cfg.model.dim, "model.");
    get_field(m, "hidden_dim", cfg.model.hidden_dim, "model.");
    get_field(m, "vocab_size", cfg.model.vocab_size, "model.");
    get_field(m, "seq_len", cfg.model.seq_len, "model.");
    get_field(m, "qk_norm", cfg.model.qk_norm, "model.");
    get_field(m, "tied_embeddings", cfg.model.tied_embeddings, "model.");
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    get_field(o, "peak_lr", cfg.optimizer.peak_lr, "optimizer.");
    get_field(o, "warmup_steps", cfg.optimizer.warmup_steps, "optimizer.");
    get_field(o, "decay_floor", cfg.optimizer.decay_floor, "optimizer.");
    get_field(o, "weight_decay", cfg.optimizer.weight_decay, "optimizer.");
    get_field(o, "beta1", cfg.optimizer.beta1, "optimizer.");
    get_field(o, "beta2", cfg.optimizer.beta2, "optimizer.");
  }
  if (j.contains("scorers")) {
    if (!j["scorers"].is_array())
      throw ConfigError("scorers", "must be an array");
    cfg.scorers.clear();
    for (const auto& e : j["scorers"]) {
      ScorerSpec s;
      get_field(e, "name", s.name, "scorers.");
      std::string kind = "threshold";
      get_field(e, "kind", kind, "scorers.");
      s.kind = scorer_kind_from(kind, "scorers." + s.name + ".kind");
      get_field(e, "threshold", s.threshold, "scorers.");
      get_field(e, "top_fraction", s.top_fraction, "scorers.");
      if (e.contains("domain")) {
        std::string dn;
        get_field(e, "domain", dn, "scorers.");
        auto d = domain_from_name(dn);
        if (!d)
          throw ConfigError("scorers." + s.name + ".domain",
                            "unknown capability '" + dn + "'");
        s.domain = *d;
      }
      cfg.scorers.push_back(std::move(s));
    }
  }
  if (j.contains("capabilities")) {
    if (!j["capabilities"].is_object())
      throw ConfigError("capabilities", "must be an object");
    cfg.capabilities.clear();
    for (const auto& [name, list] : j["capabilities"].items()) {
      auto d = domain_from_name(name);
      if (!d)
        throw ConfigError("capabilities." + name, "unknown capability");
      std::vector<std::string> sources;
      try {
        list.get_to(sources);
      } catch (const json::exception&) {
        throw ConfigError("capabilities." + name, "must be a string array");
      }
      cfg.capabilities[*d] = std::move(sources);
    }
  }
  if (j.contains("schedule"))
    get_field(j["schedule"], "T", cfg.schedule.T, "schedule.");
  if (j.contains("representative")) {
    const auto& r = j["representative"];
    get_field(r, "target_size", cfg.representative.target_size,
              "representative.");
    get_field(r, "dedup_threshold", cfg.representative.dedup_threshold,
              "representative.");
  }
  if (j.contains("probes"))
    get_field(j["probes"], "per_capability", cfg.probes.per_capability,
              "probes.");
  if (j.contains("capmodels")) {
    const auto& c = j["capmodels"];
    get_field(c, "steps", cfg.capmodels.steps, "capmodels.");
    get_field(c, "batch_size", cfg.capmodels.batch_size, "capmodels.");
    get_field(c, "token_budget", cfg.capmodels.token_budget, "capmodels.");
  }
  if (j.contains("influence"))
    get_field(j["influence"], "d_proj", cfg.influence.d_proj, "influence.");
  if (j.contains("mixture")) {
    const auto& m = j["mixture"];
    get_field(m, "clamp_floor", cfg.mixture.clamp_floor, "mixture.");
    get_field(m, "tolerance", cfg.mixture.tolerance, "mixture.");
    get_field(m, "token_budget", cfg.mixture.token_budget, "mixture.");
  }
  if (j.contains("loo")) {
    const auto& l = j["loo"];
    get_field(l, "steps", cfg.loo.steps, "loo.");
    get_field(l, "batch_size", cfg.loo.batch_size, "loo.");
    get_field(l, "token_budget", cfg.loo.token_budget, "loo.");
    get_field(l, "checkpoint_every", cfg.loo.checkpoint_every, "loo.");
  }
  if (j.contains("coevolve")) {
    const auto& c = j["coevolve"];
    get_field(c, "tau", cfg.coevolve.tau, "coevolve.");
    get_field(c, "max_phases", cfg.coevolve.max_phases, "coevolve.");
    get_field(c, "phase_steps", cfg.coevolve.phase_steps, "coevolve.");
    get_field(c, "batch_size", cfg.coevolve.batch_size, "coevolve.");
    get_field(c, "token_budget", cfg.coevolve.token_budget, "coevolve.");
    get_field(c, "histogram_bins", cfg.coevolve.histogram_bins, "coevolve.");
    get_field(c, "distill", cfg.coevolve.distill, "coevolve.");
  }
  if (j.contains("diag")) {
    const auto& d = j["diag"];
    get_field(d, "learning_rates", cfg.diag.learning_rates, "diag.");
    get_field(d, "pretrain_steps", cfg.diag.pretrain_steps, "diag.");
    get_field(d, "midtrain_steps", cfg.diag.midtrain_steps, "diag.");
    get_field(d, "batch_size", cfg.diag.batch_size, "diag.");
    get_field(d, "token_budget", cfg.diag.token_budget, "diag.");
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.model.layers = 2;
  cfg.model.dim = 32;
  cfg.model.heads = 4;
  cfg.model.kv_heads = 2;
  cfg.model.hidden_dim = 64;
  cfg.model.seq_len = 64;

  ScorerSpec quality;
  quality.name = "quality";
  quality.kind = ScorerKind::ThresholdClassifier;
  quality.threshold = 4.0;
  ScorerSpec relevance;
  relevance.name = "relevance";
  relevance.kind = ScorerKind::RelevanceJudge;
  relevance.top_fraction = 0.8;
  cfg.scorers = {quality, relevance};

  cfg.capabilities = {{Domain::Math, {"math", "web"}},
                      {Domain::Code, {"code", "web"}},
                      {Domain::Knowledge, {"facts", "web"}}};
  return cfg;
}

}  // namespace forge
