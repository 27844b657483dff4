#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <utility>
#include <random>
#include <string>
#include <vector>

#include "gcm/gradcheck.hpp"
#include "gcm/nn.hpp"

namespace gcm::testing {

/// Parameter with entries drawn from N(0, 1).
inline ad::Value normal_param(nn::ParameterStore& store, const std::string& name, ad::Shape shape,
                              std::mt19937_64& rng) {
  ad::Value v = store.create_zeros(name, shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : v.mutable_data()) x = normal(rng);
  return v;
}

inline std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

/// Max relative error of analytic vs central-difference gradients.
inline double fd_error(nn::ParameterStore& store, const std::function<ad::Value()>& loss, double h = 1e-5) {
  return ad::check_gradients(loss, store, h).max_rel_error;
}

/// Average precision by direct counting: a positive's rank is the number of
/// items scored above it, or tied with it and earlier in the input. The
/// precisions are summed in rank order.
inline double brute_force_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::vector<std::pair<int, int>> at;  // (rank, positives at or above)
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    int above = 0, above_pos = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool before = s[j] > s[i] || (s[j] == s[i] && j <= i);
      above += before;
      above_pos += before && y[j];
    }
    at.emplace_back(above, above_pos);
  }
  std::sort(at.begin(), at.end());
  double total = 0.0;
  for (const auto& [rank, hits] : at) total += static_cast<double>(hits) / static_cast<double>(rank);
  return total / static_cast<double>(at.size());
}

}  // namespace gcm::testing
