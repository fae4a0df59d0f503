#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsep/embedding.hpp"
#include "qsep/synthdata.hpp"

namespace qsep {

// Textual query language for the command line:
//   spec  := term ('+' term)*
//   term  := modality ':' label ('@' weight)?
// e.g. "text:click_train" or "audio:beat_pair@2+text:beat_pair@1".
// Terms are blended as a weight-normalized sum, which for one term per
// modality is exactly the multi-modal mixing rule.
struct QueryTerm {
  Modality modality = Modality::text;
  std::string label;
  double weight = 1.0;
};

inline std::vector<QueryTerm> parse_query_spec(const std::string& spec) {
  std::vector<QueryTerm> terms;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t plus = spec.find('+', pos);
    if (plus == std::string::npos) plus = spec.size();
    const std::string part = spec.substr(pos, plus - pos);
    if (part.empty())
      throw std::invalid_argument("query: empty term in '" + spec + "'");
    const std::size_t colon = part.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument(
          "query: expected modality:label, got '" + part + "'");
    QueryTerm t;
    t.modality = parse_modality(part.substr(0, colon));
    std::string rest = part.substr(colon + 1);
    const std::size_t at = rest.find('@');
    if (at != std::string::npos) {
      const std::string wtext = rest.substr(at + 1);
      try {
        std::size_t used = 0;
        t.weight = std::stod(wtext, &used);
        if (used != wtext.size()) throw std::invalid_argument("");
      } catch (...) {
        throw std::invalid_argument("query: bad weight '" + wtext + "'");
      }
      if (!(t.weight > 0.0) || !std::isfinite(t.weight))
        throw std::invalid_argument("query: weight must be > 0");
      rest.resize(at);
    }
    if (rest.empty())
      throw std::invalid_argument("query: missing label in '" + part + "'");
    if (t.modality == Modality::mixed)
      throw std::invalid_argument(
          "query: compose mixed queries with '+', not modality 'mixed'");
    t.label = rest;
    terms.push_back(std::move(t));
    if (plus == spec.size()) break;
    pos = plus + 1;
  }
  if (terms.empty()) throw std::invalid_argument("query: empty spec");
  return terms;
}

inline std::uint32_t class_id_for_label(const std::vector<SoundClass>& classes,
                                        const std::string& label) {
  for (const auto& c : classes)
    if (c.label == label) return c.class_id;
  std::string known;
  for (const auto& c : classes) {
    if (!known.empty()) known += ", ";
    known += c.label;
  }
  throw std::invalid_argument("query: unknown class label '" + label +
                              "' (known: " + known + ")");
}

inline QueryEmbedding resolve_query(const std::vector<QueryTerm>& terms,
                                    const SyntheticEmbeddingSpace& space,
                                    const std::vector<SoundClass>& classes) {
  QueryEmbedding out;
  out.vector.assign(space.dim(), 0.0);
  out.modality = terms.size() == 1 ? terms[0].modality : Modality::mixed;
  double wsum = 0.0;
  for (const auto& t : terms) {
    const std::uint32_t id = class_id_for_label(classes, t.label);
    const QueryEmbedding q = space.anchor(id, t.modality);
    for (std::size_t i = 0; i < out.vector.size(); ++i)
      out.vector[i] += t.weight * q.vector[i];
    wsum += t.weight;
  }
  for (double& x : out.vector) x /= wsum;
  return out;
}

}  // namespace qsep
