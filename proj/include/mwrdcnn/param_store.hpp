#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mwrdcnn/tensor.hpp"

namespace mwrdcnn {

template <typename T>
struct ParamEntry {
  Tensor<T> value;  // gradients accumulate in value.grad
  Tensor<T> m, v;   // Adam moment estimates, allocated for trainable entries
  bool trainable = true;
};

// Named parameter collection. Iteration follows registration order, which is
// the graph order of the network that registered them; that order is the
// contract for initialization draws, optimizer traversal and checkpoints.
template <typename T>
class ParamStore {
 public:
  ParamEntry<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (map_.count(name) != 0) throw std::invalid_argument("duplicate parameter: " + name);
    ParamEntry<T>& e = map_[name];
    e.value = std::move(value);
    e.trainable = trainable;
    if (trainable) {
      e.m = Tensor<T>(e.value.shape);
      e.v = Tensor<T>(e.value.shape);
    }
    order_.push_back(name);
    return e;
  }

  bool has(const std::string& name) const { return map_.count(name) != 0; }

  ParamEntry<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const ParamEntry<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  std::size_t scalar_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const std::string& name : order_) {
      const ParamEntry<T>& e = at(name);
      if (!trainable_only || e.trainable) n += e.value.numel();
    }
    return n;
  }

  // Allocates (if needed) and zeroes the gradient buffers of trainable entries.
  void zero_grads() {
    for (const std::string& name : order_) {
      ParamEntry<T>& e = at(name);
      if (e.trainable) e.value.zero_grad();
    }
  }

  struct GradStats {
    double max_abs = 0;
    double l2 = 0;
  };
  GradStats grad_stats() const {
    GradStats s;
    double sq = 0;
    for (const std::string& name : order_) {
      const ParamEntry<T>& e = at(name);
      if (!e.trainable || !e.value.has_grad()) continue;
      for (T g : e.value.grad) {
        const double a = std::abs(static_cast<double>(g));
        if (a > s.max_abs) s.max_abs = a;
        sq += a * a;
      }
    }
    s.l2 = std::sqrt(sq);
    return s;
  }

 private:
  std::unordered_map<std::string, ParamEntry<T>> map_;
  std::vector<std::string> order_;
};

}  // namespace mwrdcnn
