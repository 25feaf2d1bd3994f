#include "forge/probeset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace forge {

using nlohmann::json;

void ScorerSpec::validate() const {
  if (name.empty()) fail("scorer spec: empty name");
  if (kind != ScorerKind::ThresholdClassifier &&
      (top_fraction <= 0.0 || top_fraction > 1.0))
    fail("scorer '" + name + "': top_fraction must be in (0,1]");
}

// ----------------------------------------------------------------- scorers

namespace {

bool is_printable(unsigned char c) {
  return (c >= 0x20 && c <= 0x7e) || c == '\n';
}

bool is_wordish(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == ' ' || c == '.' || c == ',' ||
         c == '=' || c == '+' || c == '-' || c == '(' || c == ')' || c == '\n';
}

}  // namespace

double heuristic_quality_score(const std::string& text) {
  if (text.empty()) return 0.0;
  std::size_t printable = 0, wordish = 0;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_printable(c)) ++printable;
    if (is_wordish(c)) ++wordish;
  }
  double n = static_cast<double>(text.size());
  double p = static_cast<double>(printable) / n;
  double w = static_cast<double>(wordish) / n;
  return 5.0 * p * w * w;
}

double heuristic_domain_score(const std::string& text, Domain domain) {
  if (text.empty()) return 0.0;
  double n = static_cast<double>(text.size());
  std::size_t digits = 0, mathsym = 0, brackets = 0, letters = 0;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= '0' && c <= '9') ++digits;
    if (c == '+' || c == '-' || c == '*' || c == '=') ++mathsym;
    if (c == '{' || c == '}' || c == '(' || c == ')' || c == ';') ++brackets;
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) ++letters;
  }
  auto has = [&](const char* needle) {
    return text.find(needle) != std::string::npos;
  };
  switch (domain) {
    case Domain::Math: {
      double f = (static_cast<double>(digits + mathsym)) / n;
      return std::min(1.0, 3.0 * f + (has(" = ") ? 0.2 : 0.0));
    }
    case Domain::Code: {
      double f = static_cast<double>(brackets) / n;
      double bonus = (has("fn ") || has("return") || has("def ")) ? 0.4 : 0.0;
      return std::min(1.0, 5.0 * f + bonus);
    }
    case Domain::Knowledge: {
      double f = static_cast<double>(letters) / n;
      double bonus = (has(" is ") || has(" the ")) ? 0.3 : 0.0;
      return std::min(1.0, 0.8 * f + bonus);
    }
  }
  return 0.0;
}

double nll_judge_probability(const Model& model, std::span<const double> params,
                             const Document& doc, double ref_nll,
                             double temperature) {
  auto sample = tokenize(doc);
  if (sample.length() < 2) return 0.0;
  double nll = model.forward_nll(params, sample);
  return 1.0 / (1.0 + std::exp((nll - ref_nll) / temperature));
}

void attach_heuristic_scores(std::vector<Document>& docs,
                             const ScorerSpec& spec) {
  spec.validate();
  for (auto& d : docs) {
    double v = spec.kind == ScorerKind::ThresholdClassifier
                   ? heuristic_quality_score(d.text)
                   : (spec.domain ? heuristic_domain_score(d.text, *spec.domain)
                                  : heuristic_quality_score(d.text) / 5.0);
    d.quality_scores[spec.name] = v;
  }
}

void attach_nll_judge_scores(std::vector<Document>& docs, const ScorerSpec& spec,
                             const ModelCheckpoint& judge, double ref_nll,
                             double temperature) {
  spec.validate();
  Model model(judge.config);
  for (auto& d : docs)
    d.quality_scores[spec.name] =
        nll_judge_probability(model, judge.params, d, ref_nll, temperature);
}

// ------------------------------------------------------------------ stages

namespace {

double score_of(const Document& d, const ScorerSpec& scorer) {
  auto it = d.quality_scores.find(scorer.name);
  if (it == d.quality_scores.end())
    fail("doc " + std::to_string(d.doc_id) + " has no score from '" +
         scorer.name + "'");
  return it->second;
}

}  // namespace

std::vector<Document> score_threshold(const std::vector<Document>& docs,
                                      const ScorerSpec& scorer) {
  std::vector<Document> out;
  for (const auto& d : docs)
    if (score_of(d, scorer) > scorer.threshold) out.push_back(d);
  return out;
}

std::vector<Document> score_topfraction(const std::vector<Document>& docs,
                                        const ScorerSpec& scorer) {
  if (docs.empty()) return {};
  std::vector<std::size_t> idx(docs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    double sa = score_of(docs[a], scorer), sb = score_of(docs[b], scorer);
    if (sa != sb) return sa > sb;
    return docs[a].doc_id < docs[b].doc_id;
  });
  std::size_t keep = static_cast<std::size_t>(
      std::ceil(scorer.top_fraction * static_cast<double>(docs.size())));
  keep = std::min(keep, docs.size());
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());  // preserve original order
  std::vector<Document> out;
  out.reserve(keep);
  for (std::size_t i : idx) out.push_back(docs[i]);
  return out;
}

// ------------------------------------------------------------------- dedup

std::vector<std::uint64_t> minhash_signature(const std::string& text,
                                             std::uint64_t seed) {
  std::vector<std::uint64_t> sig(kMinHashCount,
                                 std::numeric_limits<std::uint64_t>::max());
  auto update = [&](std::uint64_t shingle_hash) {
    for (std::size_t i = 0; i < kMinHashCount; ++i) {
      std::uint64_t h = mix64(shingle_hash, seed + i);
      sig[i] = std::min(sig[i], h);
    }
  };
  if (text.size() < kShingleSize) {
    update(fnv1a64(text));
    return sig;
  }
  for (std::size_t i = 0; i + kShingleSize <= text.size(); ++i)
    update(fnv1a64(text.data() + i, kShingleSize));
  return sig;
}

double minhash_similarity(const std::vector<std::uint64_t>& a,
                          const std::vector<std::uint64_t>& b) {
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] == b[i]) ++agree;
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

std::vector<Document> dedup_semantic(const std::vector<Document>& docs,
                                     double threshold) {
  std::vector<const Document*> ordered;
  ordered.reserve(docs.size());
  for (const auto& d : docs) ordered.push_back(&d);
  std::sort(ordered.begin(), ordered.end(),
            [](const Document* a, const Document* b) {
              return a->doc_id < b->doc_id;
            });
  std::vector<Document> kept;
  std::vector<std::vector<std::uint64_t>> kept_sigs;
  for (const Document* d : ordered) {
    auto sig = minhash_signature(d->text);
    bool dup = false;
    for (const auto& ks : kept_sigs) {
      if (minhash_similarity(sig, ks) >= threshold) {
        dup = true;
        break;
      }
    }
    if (!dup) {
      kept.push_back(*d);
      kept_sigs.push_back(std::move(sig));
    }
  }
  return kept;
}

// ---------------------------------------------------------------- builders

RepresentativeSet build_representative(const Corpus& corpus,
                                       const std::vector<ScorerSpec>& chain,
                                       std::size_t target_size,
                                       double dedup_threshold,
                                       std::uint64_t seed,
                                       BuildReport* report) {
  // stage order is fixed: threshold stages first, then judges
  int last_rank = 0;
  for (const auto& sc : chain) {
    int rank = sc.kind == ScorerKind::ThresholdClassifier ? 1
               : sc.kind == ScorerKind::RelevanceJudge    ? 2
                                                          : 3;
    if (rank < last_rank)
      fail("scorer chain out of order at '" + sc.name +
           "' (threshold -> relevance -> domain)");
    last_rank = rank;
  }

  std::vector<Document> docs = corpus.docs;
  auto note = [&](const std::string& stage) {
    if (report) report->stage_survivors.emplace_back(stage, docs.size());
  };
  note("input");
  for (const auto& sc : chain) {
    docs = sc.kind == ScorerKind::ThresholdClassifier
               ? score_threshold(docs, sc)
               : score_topfraction(docs, sc);
    note(sc.name);
  }
  docs = dedup_semantic(docs, dedup_threshold);
  note("dedup");

  RepresentativeSet rep;
  rep.source_id = corpus.source_id;
  rep.target_size = target_size;
  if (docs.empty()) {
    if (report) report->empty_warning = true;
    return rep;
  }
  if (docs.size() > target_size) {
    Rng rng(mix64(seed, fnv1a64(corpus.source_id)));
    std::vector<std::size_t> idx(docs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(target_size);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) rep.members.push_back(docs[i].doc_id);
  } else {
    for (const auto& d : docs) rep.members.push_back(d.doc_id);
  }
  std::sort(rep.members.begin(), rep.members.end());
  return rep;
}

std::map<Domain, ProbeSet> build_probes(
    const std::map<std::string, RepresentativeSet>& rep_sets,
    const std::map<Domain, std::vector<std::string>>& capability_sources) {
  std::map<Domain, ProbeSet> probes;
  for (const auto& [cap, sources] : capability_sources) {
    ProbeSet p;
    p.capability = cap;
    std::set<std::uint64_t> members;
    for (const auto& src : sources) {
      auto it = rep_sets.find(src);
      if (it == rep_sets.end())
        fail("capability " + domain_name(cap) +
             " references unknown source '" + src + "'");
      members.insert(it->second.members.begin(), it->second.members.end());
    }
    p.members.assign(members.begin(), members.end());
    probes[cap] = std::move(p);
  }
  return probes;
}

// --------------------------------------------------------------- persist

void write_idset_jsonl(const std::string& path,
                       const std::vector<std::uint64_t>& ids,
                       const std::string& source_id,
                       const std::string& capability) {
  std::ofstream out(path);
  if (!out) fail("cannot write id set: " + path);
  for (auto id : ids) {
    json j;
    j["doc_id"] = id;
    j["source_id"] = source_id;
    if (!capability.empty()) j["capability"] = capability;
    out << j.dump() << "\n";
  }
}

std::vector<std::uint64_t> read_idset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open id set: " + path);
  std::vector<std::uint64_t> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ids.push_back(json::parse(line).at("doc_id").get<std::uint64_t>());
  }
  return ids;
}

}  // namespace forge
