#include "forge/synth.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace forge {

std::string family_name(Family f) {
  switch (f) {
    case Family::Math: return "math";
    case Family::Code: return "code";
    case Family::Fact: return "fact";
  }
  fail("unknown family");
}

Domain family_domain(Family f) {
  switch (f) {
    case Family::Math: return Domain::Math;
    case Family::Code: return Domain::Code;
    case Family::Fact: return Domain::Knowledge;
  }
  fail("unknown family");
}

namespace {

const std::vector<std::string> kEntities = {
    "argon",  "basalt", "cedar",  "dahlia", "ember",  "fjord",
    "garnet", "heron",  "iris",   "jasper", "kelp",   "larch",
    "maple",  "nickel", "onyx",   "pearl",  "quartz", "rowan",
    "sable",  "topaz",  "umber",  "violet", "willow", "zircon"};

const std::vector<std::string> kAttributes = {"color", "origin", "rank",
                                              "shape", "size",   "owner"};

const std::vector<std::string> kValues = {
    "red",    "blue",   "green", "amber", "north", "south",
    "east",   "west",   "round", "flat",  "large", "small",
    "first",  "second", "third", "fourth"};

const std::vector<std::string> kVars = {"x", "y", "z", "n", "k"};
const std::vector<std::string> kFns = {"twist", "fold", "merge", "scan",
                                       "probe"};

std::string math_line(Rng& rng) {
  long a = static_cast<long>(rng.next_below(100));
  long b = static_cast<long>(rng.next_below(100));
  std::uint64_t op = rng.next_below(3);
  long c = op == 0 ? a + b : op == 1 ? a - b : a * b;
  const char* sym = op == 0 ? "+" : op == 1 ? "-" : "*";
  return std::to_string(a) + " " + sym + " " + std::to_string(b) + " = " +
         std::to_string(c);
}

std::string code_line(Rng& rng) {
  const std::string& fn = kFns[rng.next_below(kFns.size())];
  const std::string& v = kVars[rng.next_below(kVars.size())];
  std::uint64_t k = rng.next_below(10);
  const char* op = rng.next_below(2) ? "+" : "*";
  return "fn " + fn + "(" + v + ") { return " + v + " " + op + " " +
         std::to_string(k) + " }";
}

std::string fact_line(std::uint64_t table_seed, Rng& rng) {
  const std::string& e = kEntities[rng.next_below(kEntities.size())];
  const std::string& a = kAttributes[rng.next_below(kAttributes.size())];
  return "the " + a + " of " + e + " is " + fact_value(table_seed, e, a) +
         " .";
}

std::string prose_wrap(const std::string& line, Rng& rng) {
  switch (rng.next_below(3)) {
    case 0: return "it is known that " + line + " as recorded .";
    case 1: return "consider that " + line + " in practice .";
    default: return "the archive notes that " + line + " indeed .";
  }
}

std::string noise_text(Rng& rng) {
  // ASCII-only so the corpus stays valid UTF-8; control characters and
  // symbol soup still land far below the quality threshold
  std::size_t len = 40 + rng.next_below(60);
  std::string out;
  for (std::size_t i = 0; i < len; ++i)
    out.push_back(static_cast<char>(1 + rng.next_below(126)));
  return out;
}

Family pick_family(const std::map<Family, double>& mix, Rng& rng) {
  double total = 0.0;
  for (const auto& [f, w] : mix) {
    if (w < 0.0) fail("synth: negative family weight");
    total += w;
  }
  if (total <= 0.0) fail("synth: family mix is empty");
  double u = rng.next_double() * total;
  for (const auto& [f, w] : mix) {
    if (u < w) return f;
    u -= w;
  }
  return mix.rbegin()->first;
}

}  // namespace

std::string fact_value(std::uint64_t seed, const std::string& entity,
                       const std::string& attribute) {
  std::uint64_t h = mix64(mix64(seed, fnv1a64(entity)), fnv1a64(attribute));
  return kValues[h % kValues.size()];
}

std::vector<Corpus> generate_synthetic(const SynthSpec& spec) {
  if (spec.sources.empty()) fail("synth: no sources");
  if (spec.lines_per_doc == 0) fail("synth: lines_per_doc must be >= 1");
  std::vector<Corpus> out;
  for (std::size_t s = 0; s < spec.sources.size(); ++s) {
    const auto& src = spec.sources[s];
    std::vector<Document> docs;
    for (std::size_t i = 0; i < src.docs; ++i) {
      Rng rng(mix64(mix64(spec.seed, fnv1a64(src.source_id)), i));
      Document d;
      d.doc_id = s * 1000000 + i;
      if (rng.next_double() < src.noise_rate) {
        d.text = noise_text(rng);
      } else {
        Family fam = pick_family(src.family_mix, rng);
        d.domain_tags.insert(family_domain(fam));
        std::vector<std::string> lines;
        for (std::size_t l = 0; l < spec.lines_per_doc; ++l) {
          std::string line = fam == Family::Math ? math_line(rng)
                             : fam == Family::Code
                                 ? code_line(rng)
                                 : fact_line(spec.seed, rng);
          lines.push_back(src.prose ? prose_wrap(line, rng) : line);
        }
        std::string text;
        for (std::size_t l = 0; l < lines.size(); ++l) {
          if (l) text += "\n";
          text += lines[l];
        }
        d.text = std::move(text);
      }
      docs.push_back(std::move(d));
    }
    out.push_back(ingest_docs(std::move(docs), src.source_id));
  }
  return out;
}

namespace {

bool is_number(const std::string& tok) {
  if (tok.empty()) return false;
  std::size_t i = tok[0] == '-' ? 1 : 0;
  if (i == tok.size()) return false;
  for (; i < tok.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(tok[i]))) return false;
  return true;
}

}  // namespace

bool has_math_line(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> toks;
  std::string tok;
  while (in >> tok) toks.push_back(tok);
  for (std::size_t i = 0; i + 4 < toks.size(); ++i) {
    if (is_number(toks[i]) &&
        (toks[i + 1] == "+" || toks[i + 1] == "-" || toks[i + 1] == "*") &&
        is_number(toks[i + 2]) && toks[i + 3] == "=" && is_number(toks[i + 4]))
      return true;
  }
  return false;
}

bool math_lines_valid(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> toks;
  std::string tok;
  while (in >> tok) toks.push_back(tok);
  for (std::size_t i = 0; i + 4 < toks.size(); ++i) {
    if (!(is_number(toks[i]) &&
          (toks[i + 1] == "+" || toks[i + 1] == "-" || toks[i + 1] == "*") &&
          is_number(toks[i + 2]) && toks[i + 3] == "=" &&
          is_number(toks[i + 4])))
      continue;
    long a = std::stol(toks[i]);
    long b = std::stol(toks[i + 2]);
    long c = std::stol(toks[i + 4]);
    long want = toks[i + 1] == "+" ? a + b : toks[i + 1] == "-" ? a - b : a * b;
    if (c != want) return false;
  }
  return true;
}

SynthSpec default_benchmark(std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  spec.lines_per_doc = 3;
  spec.sources = {
      {"math", 400, {{Family::Math, 1.0}}, 0.0, false},
      {"code", 400, {{Family::Code, 1.0}}, 0.0, false},
      {"facts", 400, {{Family::Fact, 1.0}}, 0.0, false},
      {"web",
       600,
       {{Family::Math, 1.0}, {Family::Code, 1.0}, {Family::Fact, 1.0}},
       0.05,
       true},
      {"junk",
       400,
       {{Family::Math, 1.0}, {Family::Code, 1.0}, {Family::Fact, 1.0}},
       0.7,
       false},
  };
  return spec;
}

}  // namespace forge
