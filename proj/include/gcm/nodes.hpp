#pragma once

// And / Or node operations of the grammar.
//
// And: concatenate the children along the feature axis and map them through
// a two-layer perceptron, f = g([A, B, ...]).
// Or:  a shared scoring perceptron rates every candidate, a masked softmax
// turns the ratings into selection weights lambda, and the output is the
// lambda-weighted sum of the candidates.

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "gcm/autodiff.hpp"
#include "gcm/errors.hpp"
#include "gcm/nn.hpp"

namespace gcm {

using ad::Value;

/// And node. Every part is 1-D, or every part is (n, d_i) for the same n.
inline Value and_compose(const std::vector<Value>& parts, const nn::Mlp2& mlp) {
  if (parts.empty()) throw ArgumentError("and_compose: needs at least one part");
  Value joined = parts.size() == 1 ? parts.front() : ad::concat(parts);
  return mlp(joined);
}

/// Index of the largest logit among unmasked entries, lowest index on ties;
/// -1 when every entry is masked.
inline int masked_argmax(std::span<const double> logits, std::span<const std::uint8_t> mask) {
  int best = -1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    if (best < 0 || logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

struct OrResult {
  Value output;   // (d)
  Value lambdas;  // (n), simplex over unmasked entries, exact zeros elsewhere
  std::vector<double> logits;
  std::vector<std::uint8_t> mask;
  int argmax = -1;
  bool all_masked = false;
};

/// Or node over `candidates` (n, d). `scorer` maps d -> 1. When every
/// candidate is masked (or n == 0) the output is the zero vector and all
/// weights are zero.
inline OrResult or_select(const Value& candidates, std::span<const std::uint8_t> mask,
                          const nn::Mlp2& scorer) {
  if (candidates.rank() != 2) {
    throw DimensionError("or_select: candidates must be (n,d), got " + ad::shape_string(candidates.shape()));
  }
  const std::size_t n = candidates.dim(0), d = candidates.dim(1);
  if (mask.size() != n) throw DimensionError("or_select: mask length differs from candidate count");
  if (scorer.in_dim() != d || scorer.out_dim() != 1) {
    throw DimensionError("or_select: scorer must map " + std::to_string(d) + " -> 1");
  }
  OrResult r;
  r.mask.assign(mask.begin(), mask.end());
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) {
    r.all_masked = true;
    r.output = Value::zeros({d});
    r.lambdas = Value::zeros({n});
    r.logits.assign(n, -std::numeric_limits<double>::infinity());
    return r;
  }
  Value scores = ad::reshape(scorer(candidates), {n});
  r.logits.assign(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < n; ++i)
    if (!mask[i]) r.logits[i] = -std::numeric_limits<double>::infinity();
  r.lambdas = ad::masked_softmax(scores, mask);
  r.output = ad::reshape(ad::matmul(ad::reshape(r.lambdas, {1, n}), candidates), {d});
  r.argmax = masked_argmax(r.logits, mask);
  return r;
}

}  // namespace gcm
