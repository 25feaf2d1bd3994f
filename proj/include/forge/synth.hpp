#pragma once

// Seeded generators for the bundled multi-domain benchmark: arithmetic
// equations, bracketed toy programs, and key-value fact sentences, with
// per-source family mixes, optional prose wrapping, and noise injection.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"

namespace forge {

enum class Family { Math, Code, Fact };

std::string family_name(Family f);
Domain family_domain(Family f);

struct SynthSourceSpec {
  std::string source_id;
  std::size_t docs = 2000;
  std::map<Family, double> family_mix;  // relative, normalized internally
  double noise_rate = 0.0;              // fraction of byte-noise documents
  bool prose = false;  // wrap every line in web-style prose
};

struct SynthSpec {
  std::vector<SynthSourceSpec> sources;
  std::uint64_t seed = 0;
  std::size_t lines_per_doc = 3;
};

// Deterministic in the spec: identical spec -> identical corpora bytes.
// Doc ids are globally unique (source index * 1e6 + position).
std::vector<Corpus> generate_synthetic(const SynthSpec& spec);

// Facts are drawn from a global seeded table, so the same subject and
// attribute always carry the same value in every source.
std::string fact_value(std::uint64_t seed, const std::string& entity,
                       const std::string& attribute);

// True iff every "a op b = c" pattern found in the text evaluates
// correctly (op in + - *). Texts without any equation count as valid.
bool math_lines_valid(const std::string& text);
bool has_math_line(const std::string& text);

// Three clean specialists, a prose-wrapped broad-coverage source spanning
// all families, and a noise-heavy source.
SynthSpec default_benchmark(std::uint64_t seed);

}  // namespace forge
