#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "gcm/errors.hpp"

namespace gcm {

/// Non-interpolated average precision: the mean, over positives, of the
/// precision at each positive's rank in the descending-score order. Equal
/// scores keep their input order. Undefined (nullopt) without positives.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("average_precision: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double total = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!labels[order[rank]]) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) return std::nullopt;
  return total / static_cast<double>(hits);
}

/// Mean of the defined entries; nullopt when none is defined.
inline std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& v : values)
    if (v) {
      total += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

}  // namespace gcm
