#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace oracle {

using gecadapt::Edit;
using gecadapt::EditLattice;

Counts exhaustive_max_match(const EditLattice& lattice, const std::vector<Edit>& gold) {
  const std::size_t target = lattice.vertices.size() - 1;
  bool found = false;
  std::size_t best_hit = 0, best_edits = 0;
  std::vector<std::size_t> path;  // edge indices

  std::function<void(std::size_t)> walk = [&](std::size_t v) {
    if (v == target) {
      std::set<std::size_t> hit;
      std::size_t edits = 0;
      for (std::size_t e : path) {
        const auto& le = lattice.edges[e];
        if (le.keep) continue;
        ++edits;
        for (std::size_t g = 0; g < gold.size(); ++g)
          if (gold[g].start == le.edit.start && gold[g].end == le.edit.end &&
              gold[g].replacement == le.edit.replacement)
            hit.insert(g);
      }
      if (!found || hit.size() > best_hit || (hit.size() == best_hit && edits < best_edits)) {
        found = true;
        best_hit = hit.size();
        best_edits = edits;
      }
      return;
    }
    for (std::size_t e = 0; e < lattice.edges.size(); ++e) {
      if (lattice.edges[e].from != v) continue;
      path.push_back(e);
      walk(lattice.edges[e].to);
      path.pop_back();
    }
  };
  walk(0);
  return {best_hit, best_edits - best_hit, gold.size() - best_hit};
}

std::vector<gecadapt::SymbolPair> recount_bpe(const std::vector<gecadapt::Tokens>& sentences,
                                              std::size_t num_merges) {
  std::map<std::string, long long> freq;
  for (const auto& s : sentences)
    for (const auto& t : s)
      if (!t.empty()) ++freq[t];

  const auto segment = [](const std::string& word,
                          const std::vector<gecadapt::SymbolPair>& merges) {
    std::vector<std::string> syms;
    for (char c : word) syms.emplace_back(1, c);
    syms.back() += "</w>";
    for (const auto& [a, b] : merges) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
          next.push_back(a + b);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    return syms;
  };

  std::vector<gecadapt::SymbolPair> merges;
  while (merges.size() < num_merges) {
    std::map<gecadapt::SymbolPair, long long> counts;
    for (const auto& [w, c] : freq) {
      const auto syms = segment(w, merges);
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += c;
    }
    const gecadapt::SymbolPair* best = nullptr;
    long long best_count = 0;
    for (const auto& [p, c] : counts)
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    if (!best || best_count < 2) break;
    merges.push_back(*best);
  }
  return merges;
}

GradCheck finite_difference(gecadapt::ModelParams<double>& params,
                            const gecadapt::ModelParams<double>& analytic,
                            const std::function<double()>& loss, double h, double floor) {
  GradCheck r;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& t = params.tensors[i];
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double orig = t.data()[k];
      t.data()[k] = orig + h;
      ++params.version;
      const double up = loss();
      t.data()[k] = orig - h;
      ++params.version;
      const double down = loss();
      t.data()[k] = orig;
      ++params.version;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.tensors[i].data()[k];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_tensor = params.name(i);
      }
      ++r.checked;
    }
  }
  return r;
}

double hand_error_rate(const std::vector<gecadapt::AnnotatedSentence>& corpus) {
  long long edits = 0, tokens = 0;
  for (const auto& s : corpus) {
    edits += static_cast<long long>(s.edits.size());
    tokens += static_cast<long long>(s.source.size());
  }
  return 100.0 * static_cast<double>(edits) / static_cast<double>(tokens);
}

}  // namespace oracle
