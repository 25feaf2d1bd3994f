#pragma once

// Corpus ingestion, byte-level tokenization, and mixture-weighted stream
// drawing under a fixed token budget.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/common.hpp"

namespace forge {

enum class Domain { Code, Math, Knowledge };

std::string domain_name(Domain d);
std::optional<Domain> domain_from_name(const std::string& s);

struct Document {
  std::uint64_t doc_id = 0;
  std::string source_id;
  std::string text;
  std::set<Domain> domain_tags;
  std::map<std::string, double> quality_scores;  // scorer name -> [0,1] or 0-5 scale
};

struct TokenizedSample {
  std::uint64_t doc_id = 0;
  std::vector<std::uint32_t> tokens;
  std::size_t length() const { return tokens.size(); }
};

struct DatasetStats {
  std::string source_id;
  std::uint64_t total_tokens = 0;  // N_g
  std::uint64_t row_count = 0;
};

struct MixtureSpec {
  std::map<std::string, double> weights;  // source_id -> w_g
  std::uint64_t token_budget = 0;
  std::uint64_t seed = 0;

  // Weights summing to 1 +/- tol are renormalized in place; larger
  // deviation is an error. Negative weights are always an error.
  void validate_and_normalize(double tol = 0.005);

  static MixtureSpec uniform(const std::vector<std::string>& sources,
                             std::uint64_t budget, std::uint64_t seed);
};

// --------------------------------------------------------------- tokenizer

// Byte-level: one token per byte, ids 0..255. Total and lossless.
TokenizedSample tokenize(const Document& doc);
std::vector<std::uint32_t> tokenize_text(const std::string& text);
std::string detokenize(const std::vector<std::uint32_t>& tokens);

constexpr std::uint32_t kByteVocab = 256;

// ----------------------------------------------------------------- corpus

struct Corpus {
  std::string source_id;
  std::vector<Document> docs;
  DatasetStats stats() const;
};

// Reads line-delimited JSON {"id": ..., "text": ..., "tags": [...]}.
// Malformed lines and duplicate ids are errors naming the offender.
Corpus ingest_corpus(const std::string& path, const std::string& source_id);

Corpus ingest_docs(std::vector<Document> docs, const std::string& source_id);

void write_corpus_jsonl(const Corpus& corpus, const std::string& path);

// ----------------------------------------------------------------- stream

struct StreamEntry {
  std::uint64_t position = 0;
  std::uint64_t doc_id = 0;
  std::string source_id;
  std::size_t token_count = 0;
};

struct DrawOptions {
  // When set, a source running out of fresh samples aborts instead of
  // wrapping around with replacement (the LOO fairness rule).
  bool strict_no_repeat = false;
  // Doc ids that must never enter a training stream (probe exclusion).
  std::set<std::uint64_t> excluded_ids;
};

struct TokenStream {
  std::vector<TokenizedSample> samples;
  std::vector<StreamEntry> manifest;
  std::uint64_t total_tokens = 0;
};

// Draws samples source-by-source until every source meets its token share
// w_g * budget. Interleaving is deterministic (largest remaining deficit
// first); within a source the order is a seeded shuffle, re-shuffled per
// epoch when wrapping is allowed.
TokenStream draw_stream(const std::vector<Corpus>& corpora,
                        const MixtureSpec& spec,
                        const DrawOptions& opts = {});

void write_stream_manifest(const TokenStream& stream, const std::string& path);

}  // namespace forge
