#include "forge/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace forge {

using nlohmann::json;

std::string domain_name(Domain d) {
  switch (d) {
    case Domain::Code: return "Code";
    case Domain::Math: return "Math";
    case Domain::Knowledge: return "Knowledge";
  }
  return "?";
}

std::optional<Domain> domain_from_name(const std::string& s) {
  if (s == "Code" || s == "code") return Domain::Code;
  if (s == "Math" || s == "math") return Domain::Math;
  if (s == "Knowledge" || s == "knowledge") return Domain::Knowledge;
  return std::nullopt;
}

void MixtureSpec::validate_and_normalize(double tol) {
  double sum = 0.0;
  for (const auto& [src, w] : weights) {
    if (w < 0.0) fail("mixture weight for '" + src + "' is negative");
    sum += w;
  }
  if (weights.empty()) fail("mixture has no sources");
  if (std::abs(sum - 1.0) > tol)
    fail("mixture weights sum to " + std::to_string(sum) +
         ", outside tolerance " + std::to_string(tol));
  for (auto& [src, w] : weights) w /= sum;
}

MixtureSpec MixtureSpec::uniform(const std::vector<std::string>& sources,
                                 std::uint64_t budget, std::uint64_t seed) {
  MixtureSpec spec;
  for (const auto& s : sources)
    spec.weights[s] = 1.0 / static_cast<double>(sources.size());
  spec.token_budget = budget;
  spec.seed = seed;
  return spec;
}

std::vector<std::uint32_t> tokenize_text(const std::string& text) {
  std::vector<std::uint32_t> t(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    t[i] = static_cast<unsigned char>(text[i]);
  return t;
}

TokenizedSample tokenize(const Document& doc) {
  return TokenizedSample{doc.doc_id, tokenize_text(doc.text)};
}

std::string detokenize(const std::vector<std::uint32_t>& tokens) {
  std::string s(tokens.size(), '\0');
  for (std::size_t i = 0; i < tokens.size(); ++i)
    s[i] = static_cast<char>(static_cast<unsigned char>(tokens[i]));
  return s;
}

DatasetStats Corpus::stats() const {
  DatasetStats st;
  st.source_id = source_id;
  st.row_count = docs.size();
  for (const auto& d : docs) st.total_tokens += d.text.size();
  return st;
}

Corpus ingest_docs(std::vector<Document> docs, const std::string& source_id) {
  std::set<std::uint64_t> seen;
  for (auto& d : docs) {
    d.source_id = source_id;
    if (!seen.insert(d.doc_id).second)
      fail("duplicate doc_id " + std::to_string(d.doc_id) + " in source '" +
           source_id + "'");
  }
  return Corpus{source_id, std::move(docs)};
}

Corpus ingest_corpus(const std::string& path, const std::string& source_id) {
  std::ifstream in(path);
  if (!in) fail("cannot open corpus file: " + path);
  std::vector<Document> docs;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text"))
      fail(path + ": malformed record at line " + std::to_string(line_no));
    Document d;
    d.text = j.at("text").get<std::string>();
    if (j.contains("id")) {
      const auto& id = j.at("id");
      if (id.is_number_unsigned())
        d.doc_id = id.get<std::uint64_t>();
      else
        d.doc_id = fnv1a64(id.get<std::string>());
    } else {
      d.doc_id = fnv1a64(d.text, fnv1a64(source_id));
    }
    if (j.contains("tags")) {
      for (const auto& t : j.at("tags")) {
        auto dom = domain_from_name(t.get<std::string>());
        if (dom) d.domain_tags.insert(*dom);
      }
    }
    if (j.contains("scores")) {
      for (auto it = j.at("scores").begin(); it != j.at("scores").end(); ++it)
        d.quality_scores[it.key()] = it.value().get<double>();
    }
    docs.push_back(std::move(d));
  }
  return ingest_docs(std::move(docs), source_id);
}

void write_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write corpus file: " + path);
  for (const auto& d : corpus.docs) {
    json j;
    j["id"] = d.doc_id;
    j["text"] = d.text;
    json tags = json::array();
    for (auto t : d.domain_tags) tags.push_back(domain_name(t));
    j["tags"] = tags;
    if (!d.quality_scores.empty()) {
      json sc = json::object();
      for (const auto& [k, v] : d.quality_scores) sc[k] = v;
      j["scores"] = sc;
    }
    out << j.dump() << "\n";
  }
}

TokenStream draw_stream(const std::vector<Corpus>& corpora,
                        const MixtureSpec& spec, const DrawOptions& opts) {
  if (spec.token_budget == 0) fail("draw_stream: token_budget must be > 0");

  struct SourceState {
    const Corpus* corpus = nullptr;
    double target = 0.0;  // w_g * budget
    std::uint64_t drawn = 0;
    std::vector<std::size_t> order;  // shuffled doc indices, consumed from back
    Rng rng{0};
    bool exhausted_once = false;
  };

  std::map<std::string, const Corpus*> by_id;
  for (const auto& c : corpora) by_id[c.source_id] = &c;

  std::vector<SourceState> states;
  for (const auto& [src, w] : spec.weights) {
    auto it = by_id.find(src);
    if (it == by_id.end()) fail("mixture names unknown source '" + src + "'");
    if (w <= 0.0) continue;
    SourceState st;
    st.corpus = it->second;
    st.target = w * static_cast<double>(spec.token_budget);
    st.rng = Rng(mix64(spec.seed, fnv1a64(src)));
    states.push_back(std::move(st));
  }
  if (states.empty()) fail("draw_stream: no source has positive weight");

  auto refill = [&](SourceState& st) {
    st.order.clear();
    for (std::size_t i = 0; i < st.corpus->docs.size(); ++i) {
      const auto& d = st.corpus->docs[i];
      if (!d.text.empty() && !opts.excluded_ids.count(d.doc_id))
        st.order.push_back(i);
    }
    st.rng.shuffle(st.order);
  };
  for (auto& st : states) refill(st);

  TokenStream stream;
  while (true) {
    // Largest remaining token deficit goes next; map order breaks ties.
    SourceState* pick = nullptr;
    double best = 0.0;
    for (auto& st : states) {
      double deficit = st.target - static_cast<double>(st.drawn);
      if (deficit > best) {
        best = deficit;
        pick = &st;
      }
    }
    if (!pick) break;
    if (pick->order.empty()) {
      if (pick->exhausted_once && opts.strict_no_repeat)
        fail("source '" + pick->corpus->source_id +
             "' exhausted under strict no-repeat; reduce the token budget");
      pick->exhausted_once = true;
      refill(*pick);
      if (pick->order.empty())
        fail("source '" + pick->corpus->source_id + "' has no drawable docs");
      if (pick->exhausted_once && opts.strict_no_repeat)
        fail("source '" + pick->corpus->source_id +
             "' exhausted under strict no-repeat; reduce the token budget");
    }
    std::size_t idx = pick->order.back();
    pick->order.pop_back();
    const Document& doc = pick->corpus->docs[idx];
    TokenizedSample s = tokenize(doc);
    pick->drawn += s.length();
    stream.manifest.push_back(StreamEntry{stream.samples.size(), doc.doc_id,
                                          pick->corpus->source_id, s.length()});
    stream.total_tokens += s.length();
    stream.samples.push_back(std::move(s));
  }
  return stream;
}

void write_stream_manifest(const TokenStream& stream, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write stream manifest: " + path);
  out << "position,doc_id,source_id,s_i\n";
  for (const auto& e : stream.manifest)
    out << e.position << "," << e.doc_id << "," << e.source_id << ","
        << e.token_count << "\n";
}

}  // namespace forge
