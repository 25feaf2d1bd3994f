#pragma once

// Hierarchical rejection sampling: quality thresholding, top-fraction
// relevance selection, domain filtering, and MinHash-based semantic
// deduplication, producing representative sets and capability probes.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/tinylm.hpp"

namespace forge {

enum class ScorerKind { ThresholdClassifier, RelevanceJudge, DomainJudge };

struct ScorerSpec {
  std::string name;
  ScorerKind kind = ScorerKind::ThresholdClassifier;
  double threshold = 4.0;     // threshold scorers (0-5 scale)
  double top_fraction = 0.1;  // judge scorers, in (0, 1]
  std::optional<Domain> domain;

  void validate() const;
};

struct RepresentativeSet {
  std::string source_id;
  std::vector<std::uint64_t> members;
  std::size_t target_size = 0;
};

struct ProbeSet {
  Domain capability = Domain::Knowledge;
  std::vector<std::uint64_t> members;
};

// ----------------------------------------------------------------- scorers

// Deterministic heuristic quality score on a 0-5 scale. Rewards printable,
// structured text; random byte noise lands well below 4.
double heuristic_quality_score(const std::string& text);

// Domain relevance in [0,1] from simple symbol-density features.
double heuristic_domain_score(const std::string& text, Domain domain);

// Relevance probability from per-token NLL under a judge checkpoint:
// prob = sigmoid((ref_nll - nll) / temperature). Lower NLL, higher prob.
double nll_judge_probability(const Model& model,
                             std::span<const double> params,
                             const Document& doc, double ref_nll,
                             double temperature = 0.5);

// Attaches scorer values to documents under spec.name.
void attach_heuristic_scores(std::vector<Document>& docs,
                             const ScorerSpec& spec);
void attach_nll_judge_scores(std::vector<Document>& docs,
                             const ScorerSpec& spec, const ModelCheckpoint& judge,
                             double ref_nll, double temperature = 0.5);

// ------------------------------------------------------------------ stages

// Keeps docs with score strictly above the threshold, order preserved.
std::vector<Document> score_threshold(const std::vector<Document>& docs,
                                      const ScorerSpec& scorer);

// Keeps the ceil(fraction * n) docs with highest judge probability; ties
// broken by ascending doc_id.
std::vector<Document> score_topfraction(const std::vector<Document>& docs,
                                        const ScorerSpec& scorer);

// ------------------------------------------------------------------- dedup

constexpr std::size_t kShingleSize = 8;     // token 8-grams
constexpr std::size_t kMinHashCount = 128;  // signature width

std::vector<std::uint64_t> minhash_signature(const std::string& text,
                                             std::uint64_t seed = 0x5eed);

// Estimated Jaccard similarity: fraction of agreeing signature slots.
double minhash_similarity(const std::vector<std::uint64_t>& a,
                          const std::vector<std::uint64_t>& b);

// Greedy scan in doc_id order; a doc is dropped when its similarity to any
// retained doc reaches the threshold.
std::vector<Document> dedup_semantic(const std::vector<Document>& docs,
                                     double threshold);

// ---------------------------------------------------------------- builders

struct BuildReport {
  std::vector<std::pair<std::string, std::size_t>> stage_survivors;
  bool empty_warning = false;
};

// Full pipeline: threshold -> relevance top-fraction -> domain top-fraction
// -> dedup -> uniform down-sample to target_size (seeded).
RepresentativeSet build_representative(const Corpus& corpus,
                                       const std::vector<ScorerSpec>& chain,
                                       std::size_t target_size,
                                       double dedup_threshold,
                                       std::uint64_t seed,
                                       BuildReport* report = nullptr);

// Union of the capability's representative sets; members are tagged with
// the capability domain. Unknown sources are an error.
std::map<Domain, ProbeSet> build_probes(
    const std::map<std::string, RepresentativeSet>& rep_sets,
    const std::map<Domain, std::vector<std::string>>& capability_sources);

// --------------------------------------------------------------- persist

void write_idset_jsonl(const std::string& path,
                       const std::vector<std::uint64_t>& ids,
                       const std::string& source_id,
                       const std::string& capability = "");

std::vector<std::uint64_t> read_idset_jsonl(const std::string& path);

}  // namespace forge
