#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gcm/autodiff.hpp"
#include "gcm/errors.hpp"

namespace gcm::nn {

using ad::Shape;
using ad::Value;

/// Named trainable parameters, ordered by name so iteration and
/// serialization are deterministic.
class ParameterStore {
 public:
  /// Fan-in scaled uniform init in [-sqrt(6/fan_in), +sqrt(6/fan_in)];
  /// fan_in is the leading extent.
  Value create_uniform(const std::string& name, Shape shape, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(shape.at(0)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> data(ad::numel(shape));
    for (double& v : data) v = dist(rng);
    return insert(name, Value::parameter(std::move(shape), std::move(data)));
  }

  Value create_zeros(const std::string& name, Shape shape) {
    const std::size_t n = ad::numel(shape);
    return insert(name, Value::parameter(std::move(shape), std::vector<double>(n, 0.0)));
  }

  const Value& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
  }
  Value& at(const std::string& name) {
    return const_cast<Value&>(std::as_const(*this).at(name));
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Value>& all() const { return params_; }
  std::map<std::string, Value>& all() { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  /// A store sharing the selected parameters (same nodes, not copies).
  template <class Pred>
  ParameterStore subset(Pred keep) const {
    ParameterStore out;
    for (const auto& [name, v] : params_)
      if (keep(name)) out.params_.emplace(name, v);
    return out;
  }

  /// Multiplies every accumulated gradient by `factor`.
  void scale_grad(double factor) {
    for (auto& [_, v] : params_)
      for (double& g : v.mutable_grad()) g *= factor;
  }

  /// Overwrites parameter values in place; shapes must agree.
  void assign(const std::string& name, const Shape& shape, std::span<const double> data) {
    Value& v = at(name);
    if (v.shape() != shape || data.size() != v.size()) {
      throw DimensionError("parameter '" + name + "': stored shape " + ad::shape_string(shape) +
                           " differs from model shape " + ad::shape_string(v.shape()));
    }
    std::copy(data.begin(), data.end(), v.mutable_data().begin());
  }

 private:
  Value insert(const std::string& name, Value v) {
    if (!params_.emplace(name, v).second) throw ArgumentError("duplicate parameter '" + name + "'");
    return v;
  }

  std::map<std::string, Value> params_;
};

/// Affine map x*W + b over the last axis.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
         std::mt19937_64& rng)
      : w_(store.create_uniform(prefix + ".w", {in_dim, out_dim}, rng)),
        b_(store.create_zeros(prefix + ".b", {out_dim})) {}

  std::size_t in_dim() const { return w_.dim(0); }
  std::size_t out_dim() const { return w_.dim(1); }

  Value operator()(const Value& x) const {
    if (x.rank() == 1) {
      check(x.size());
      Value y = ad::matmul(ad::reshape(x, {1, x.size()}), w_);
      return ad::reshape(ad::add_bias(y, b_), {out_dim()});
    }
    if (x.rank() != 2) throw DimensionError("Linear: expects (in) or (batch,in) input");
    check(x.dim(1));
    return ad::add_bias(ad::matmul(x, w_), b_);
  }

 private:
  void check(std::size_t got) const {
    if (got != in_dim()) {
      throw DimensionError("Linear: input width " + std::to_string(got) + ", expected " +
                           std::to_string(in_dim()));
    }
  }

  Value w_, b_;
};

/// Two-layer perceptron with a rectifier between the layers and a linear
/// output. Parameters are named <prefix>.{w1,b1,w2,b2}.
class Mlp2 {
 public:
  Mlp2() = default;
  Mlp2(ParameterStore& store, const std::string& prefix, std::size_t in_dim, std::size_t hidden_dim,
       std::size_t out_dim, std::mt19937_64& rng)
      : w1_(store.create_uniform(prefix + ".w1", {in_dim, hidden_dim}, rng)),
        b1_(store.create_zeros(prefix + ".b1", {hidden_dim})),
        w2_(store.create_uniform(prefix + ".w2", {hidden_dim, out_dim}, rng)),
        b2_(store.create_zeros(prefix + ".b2", {out_dim})) {}

  std::size_t in_dim() const { return w1_.dim(0); }
  std::size_t hidden_dim() const { return w1_.dim(1); }
  std::size_t out_dim() const { return w2_.dim(1); }

  /// (batch,in) -> (batch,out); a 1-D input (in) gives (out).
  Value operator()(const Value& x) const {
    const bool vector_input = x.rank() == 1;
    if (!vector_input && x.rank() != 2) throw DimensionError("Mlp2: expects (in) or (batch,in) input");
    const std::size_t width = vector_input ? x.size() : x.dim(1);
    if (width != in_dim()) {
      throw DimensionError("Mlp2: input width " + std::to_string(width) + ", expected " +
                           std::to_string(in_dim()));
    }
    Value batch = vector_input ? ad::reshape(x, {1, width}) : x;
    Value h = ad::relu(ad::add_bias(ad::matmul(batch, w1_), b1_));
    Value y = ad::add_bias(ad::matmul(h, w2_), b2_);
    return vector_input ? ad::reshape(y, {out_dim()}) : y;
  }

 private:
  Value w1_, b1_, w2_, b2_;
};

}  // namespace gcm::nn
