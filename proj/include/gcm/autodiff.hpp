#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// A Value is a cheap handle to a node in the computation graph. Every op
// records its parents and a closure that pushes the output gradient back
// into them; backward() walks the graph reachable from a scalar loss in
// reverse topological order. Leaves (parameters) accumulate gradients across
// backward calls; interior nodes keep the gradient of the most recent pass.
//
// Graphs are single-owner while being built or differentiated. Distinct
// graphs may be built concurrently from shared parameters as long as no two
// threads call backward() over the same parameters at once.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gcm/errors.hpp"

namespace gcm::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::vector<double> scratch;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Value {
 public:
  Value() = default;

  static Value constant(Shape shape, std::vector<double> data) {
    if (numel(shape) != data.size()) {
      throw DimensionError("Value: shape " + shape_string(shape) + " does not match " +
                           std::to_string(data.size()) + " elements");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return Value(std::move(node));
  }

  static Value zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Value scalar(double v) { return constant({}, {v}); }

  static Value vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return constant({n}, std::move(data));
  }

  /// Trainable leaf. Its gradient buffer starts at zero.
  static Value parameter(Shape shape, std::vector<double> data) {
    Value v = constant(std::move(shape), std::move(data));
    v.node_->requires_grad = true;
    v.node_->grad.assign(v.node_->data.size(), 0.0);
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access for optimizers and finite-difference probes.
  std::span<double> mutable_data() { return node_->data; }
  double at(std::size_t i) const { return node_->data.at(i); }

  double item() const {
    if (size() != 1) throw ArgumentError("item() on non-scalar " + shape_string(shape()));
    return node_->data[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  bool same_node(const Value& other) const { return node_ == other.node_; }

 private:
  explicit Value(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend struct Tape;
  friend void backward(const Value& loss);
};

// Internal construction helpers shared by every op.
struct Tape {
  using BackwardFn = std::function<void(detail::Node&)>;

  static Value make(Shape shape, std::vector<double> data, const char* op,
                    std::vector<Value> inputs, BackwardFn fn) {
    Value out = Value::constant(std::move(shape), std::move(data));
    out.node_->op = op;
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(std::move(in.node_));
    out.node_->backward = std::move(fn);
    return out;
  }

  static detail::Node& node(const Value& v) { return *v.node_; }
};

namespace detail {

// Gradient sink of a parent during a backward pass, or nullptr when the
// parent does not participate.
inline double* sink(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.scratch.data() : nullptr;
}

}  // namespace detail

/// Reverse pass from a scalar loss. Leaves accumulate; call zero_grad() on
/// parameters between independent steps.
inline void backward(const Value& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ArgumentError("backward: loss must be a scalar Value");
  }
  using detail::Node;
  Node* root = loss.node_.get();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->scratch.assign(n->data.size(), 0.0);
  root->scratch[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (Node* n : order) {
    if (n->is_leaf()) {
      if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), 0.0);
      for (std::size_t i = 0; i < n->data.size(); ++i) n->grad[i] += n->scratch[i];
      n->scratch.clear();
      n->scratch.shrink_to_fit();
    } else {
      n->grad = std::move(n->scratch);
      n->scratch = {};
    }
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

inline Value matmul(const Value& a, const Value& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> y(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* yi = &y[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) yi[j] += aip * bp[j];
    }
  }
  return Tape::make({m, n}, std::move(y), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    const double* G = self.scratch.data();
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    if (double* dA = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
    }
    if (double* dB = detail::sink(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

inline Value add(const Value& a, const Value& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return Tape::make(a.shape(), std::move(y), "add", {a, b}, [](detail::Node& self) {
    for (std::size_t s = 0; s < 2; ++s)
      if (double* d = detail::sink(self, s))
        for (std::size_t i = 0; i < self.scratch.size(); ++i) d[i] += self.scratch[i];
  });
}

/// Elementwise product.
inline Value mul(const Value& a, const Value& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return Tape::make(a.shape(), std::move(y), "mul", {a, b}, [](detail::Node& self) {
    const auto& x0 = self.parents[0]->data;
    const auto& x1 = self.parents[1]->data;
    if (double* d = detail::sink(self, 0))
      for (std::size_t i = 0; i < x0.size(); ++i) d[i] += self.scratch[i] * x1[i];
    if (double* d = detail::sink(self, 1))
      for (std::size_t i = 0; i < x0.size(); ++i) d[i] += self.scratch[i] * x0[i];
  });
}

/// x (m,n) + bias (n) added to every row; also accepts x (n).
inline Value add_bias(const Value& x, const Value& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: " + shape_string(x.shape()) + " + " +
                         shape_string(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<double> y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias.data()[i % n];
  return Tape::make(x.shape(), std::move(y), "add_bias", {x, bias}, [n](detail::Node& self) {
    if (double* d = detail::sink(self, 0))
      for (std::size_t i = 0; i < self.scratch.size(); ++i) d[i] += self.scratch[i];
    if (double* d = detail::sink(self, 1))
      for (std::size_t i = 0; i < self.scratch.size(); ++i) d[i % n] += self.scratch[i];
  });
}

inline Value scalar_mul(const Value& x, double c) {
  std::vector<double> y(x.data().begin(), x.data().end());
  for (double& v : y) v *= c;
  return Tape::make(x.shape(), std::move(y), "scalar_mul", {x}, [c](detail::Node& self) {
    if (double* d = detail::sink(self, 0))
      for (std::size_t i = 0; i < self.scratch.size(); ++i) d[i] += c * self.scratch[i];
  });
}

inline Value relu(const Value& x) {
  std::vector<double> y(x.data().begin(), x.data().end());
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return Tape::make(x.shape(), std::move(y), "relu", {x}, [](detail::Node& self) {
    if (double* d = detail::sink(self, 0)) {
      const auto& in = self.parents[0]->data;
      for (std::size_t i = 0; i < in.size(); ++i)
        if (in[i] > 0.0) d[i] += self.scratch[i];
    }
  });
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Value sigmoid(const Value& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(x.data()[i]);
  return Tape::make(x.shape(), std::move(y), "sigmoid", {x}, [](detail::Node& self) {
    if (double* d = detail::sink(self, 0))
      for (std::size_t i = 0; i < self.data.size(); ++i) {
        const double s = self.data[i];
        d[i] += self.scratch[i] * s * (1.0 - s);
      }
  });
}

/// Softmax over a 1-D Value restricted to entries with mask[i] != 0.
/// Masked entries get exactly zero weight; an all-masked (or empty) input
/// yields all zeros.
inline Value masked_softmax(const Value& x, std::span<const std::uint8_t> mask) {
  if (x.rank() != 1) throw DimensionError("softmax: expects a 1-D Value, got " + shape_string(x.shape()));
  if (mask.size() != x.size()) throw DimensionError("softmax: mask length differs from input");
  const std::size_t n = x.size();
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double v = x.data()[i];
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input at index " + std::to_string(i));
    peak = std::max(peak, v);
  }
  std::vector<double> y(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    y[i] = std::exp(x.data()[i] - peak);
    total += y[i];
  }
  if (total > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) y[i] /= total;
  return Tape::make({n}, std::move(y), "softmax", {x}, [](detail::Node& self) {
    if (double* d = detail::sink(self, 0)) {
      double dot = 0.0;
      for (std::size_t i = 0; i < self.data.size(); ++i) dot += self.data[i] * self.scratch[i];
      for (std::size_t i = 0; i < self.data.size(); ++i)
        d[i] += self.data[i] * (self.scratch[i] - dot);
    }
  });
}

inline Value softmax(const Value& x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw ArgumentError("softmax: expects a non-empty 1-D Value, got " + shape_string(x.shape()));
  }
  std::vector<std::uint8_t> all(x.size(), 1);
  return masked_softmax(x, all);
}

inline Value sum(const Value& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tape::make({}, {total}, "sum", {x}, [](detail::Node& self) {
    if (double* d = detail::sink(self, 0)) {
      const double g = self.scratch[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) d[i] += g;
    }
  });
}

/// Mean over the rows of an (n, d) Value, giving (d).
inline Value mean_pool(const Value& x) {
  if (x.rank() != 2) throw DimensionError("mean_pool: expects (n,d), got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n == 0) throw ArgumentError("mean_pool: no rows to pool");
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[j] += x.data()[i * d + j];
  for (double& v : y) v /= static_cast<double>(n);
  return Tape::make({d}, std::move(y), "mean_pool", {x}, [n, d](detail::Node& self) {
    if (double* g = detail::sink(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.scratch[j] / static_cast<double>(n);
  });
}

/// Concatenation along the last axis. All inputs share rank and leading dims.
inline Value concat(const std::vector<Value>& xs) {
  if (xs.empty()) throw ArgumentError("concat: empty input list");
  const Value& first = xs.front();
  if (first.rank() == 0) throw DimensionError("concat: scalar inputs have no last axis");
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != first.rank() || !std::equal(lead.begin(), lead.end(), x.shape().begin())) {
      throw DimensionError("concat: " + shape_string(x.shape()) + " incompatible with " +
                           shape_string(first.shape()));
    }
    widths.push_back(x.shape().back());
    total += widths.back();
  }
  const std::size_t rows = numel(lead);
  std::vector<double> y(rows * total);
  std::size_t offset = 0;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const std::size_t w = widths[s];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(xs[s].data().data() + r * w, w, y.data() + r * total + offset);
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  return Tape::make(std::move(shape), std::move(y), "concat", xs,
                    [widths, rows, total](detail::Node& self) {
                      std::size_t offset = 0;
                      for (std::size_t s = 0; s < widths.size(); ++s) {
                        const std::size_t w = widths[s];
                        if (double* d = detail::sink(self, s))
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < w; ++j)
                              d[r * w + j] += self.scratch[r * total + offset + j];
                        offset += w;
                      }
                    });
}

/// Stacks n Values of shape (d) into (n, d).
inline Value stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw ArgumentError("stack_rows: empty input list");
  const std::size_t d = rows.front().size();
  std::vector<double> y;
  y.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != d) throw DimensionError("stack_rows: ragged rows");
    y.insert(y.end(), r.data().begin(), r.data().end());
  }
  return Tape::make({rows.size(), d}, std::move(y), "stack_rows", rows, [d](detail::Node& self) {
    for (std::size_t s = 0; s < self.parents.size(); ++s)
      if (double* g = detail::sink(self, s))
        for (std::size_t j = 0; j < d; ++j) g[j] += self.scratch[s * d + j];
  });
}

/// Repeats a (d) Value as n rows, giving (n, d).
inline Value tile_rows(const Value& x, std::size_t n) {
  if (x.rank() != 1) throw DimensionError("tile_rows: expects (d), got " + shape_string(x.shape()));
  const std::size_t d = x.size();
  std::vector<double> y(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data().data(), d, y.data() + i * d);
  return Tape::make({n, d}, std::move(y), "tile_rows", {x}, [n, d](detail::Node& self) {
    if (double* g = detail::sink(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.scratch[i * d + j];
  });
}

inline Value reshape(const Value& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  return Tape::make(std::move(shape), std::move(y), "reshape", {x}, [](detail::Node& self) {
    if (double* d = detail::sink(self, 0))
      for (std::size_t i = 0; i < self.scratch.size(); ++i) d[i] += self.scratch[i];
  });
}

/// Copy with no tape linkage.
inline Value detach(const Value& x) {
  return Value::constant(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
}

/// Inverted dropout: in training mode each unit is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity otherwise.
template <class Rng>
Value dropout(const Value& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> scale(x.size());
  for (double& s : scale) s = unit(rng) < rate ? 0.0 : keep_scale;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * scale[i];
  return Tape::make(x.shape(), std::move(y), "dropout", {x},
                    [scale = std::move(scale)](detail::Node& self) {
                      if (double* d = detail::sink(self, 0))
                        for (std::size_t i = 0; i < scale.size(); ++i) d[i] += scale[i] * self.scratch[i];
                    });
}

/// Mean over classes of the per-class sigmoid cross-entropy, in the
/// log-sum form max(z,0) - z*t + log1p(exp(-|z|)).
inline Value bce_multilabel_loss(const Value& logits, std::span<const std::uint8_t> targets) {
  if (logits.size() != targets.size() || logits.size() == 0) {
    throw DimensionError("bce_multilabel_loss: " + std::to_string(logits.size()) + " logits vs " +
                         std::to_string(targets.size()) + " targets");
  }
  for (auto t : targets)
    if (t > 1) throw ArgumentError("bce_multilabel_loss: targets must be 0 or 1");
  const std::size_t c = targets.size();
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double z = logits.data()[i];
    total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<double> t(targets.begin(), targets.end());
  return Tape::make({}, {total / static_cast<double>(c)}, "bce", {logits},
                    [t = std::move(t)](detail::Node& self) {
                      if (double* d = detail::sink(self, 0)) {
                        const double g = self.scratch[0] / static_cast<double>(t.size());
                        const auto& z = self.parents[0]->data;
                        for (std::size_t i = 0; i < t.size(); ++i)
                          d[i] += g * (stable_sigmoid(z[i]) - t[i]);
                      }
                    });
}

}  // namespace gcm::ad
