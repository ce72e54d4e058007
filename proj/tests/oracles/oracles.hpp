#pragma once

// Reference implementations used only by tests. Each is written for clarity
// and independence from the library code it checks, not for speed.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gecadapt/bpe.hpp"
#include "gecadapt/corpus.hpp"
#include "gecadapt/eval.hpp"
#include "gecadapt/nn.hpp"

namespace oracle {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
  bool operator==(const Counts&) const = default;
};

// Enumerates every complete path of the lattice and keeps the best by (most
// distinct gold edits hit, fewest edit edges). Only the counts are returned,
// because ties among equally good paths may legitimately differ in the edits.
Counts exhaustive_max_match(const gecadapt::EditLattice& lattice,
                            const std::vector<gecadapt::Edit>& gold);

// Learns merges by recounting every pair from scratch after each merge.
// Replays all merges on each word type from its characters every iteration.
std::vector<gecadapt::SymbolPair> recount_bpe(const std::vector<gecadapt::Tokens>& sentences,
                                              std::size_t num_merges);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

// Central differences of `loss` around `params` with step h, compared with
// `analytic`. Relative error is |a - n| / max(|a| + |n|, floor). With h = 1e-5
// and an O(1) loss, rounding alone perturbs n by about 1e-11, so the default
// floor keeps entries below 1e-6 from reporting that noise as relative error.
GradCheck finite_difference(gecadapt::ModelParams<double>& params,
                            const gecadapt::ModelParams<double>& analytic,
                            const std::function<double()>& loss, double h = 1e-5,
                            double floor = 1e-6);

// Number of gold edits divided by source tokens, times 100, computed by
// summing per-sentence counts.
double hand_error_rate(const std::vector<gecadapt::AnnotatedSentence>& corpus);

}  // namespace oracle
