#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fss/core/autodiff.hpp"
#include "fss/core/rng.hpp"

namespace fss {

// Base class for trainable components. Parameters are autodiff leaves;
// buffers (e.g. batch-norm running statistics) are plain tensors that are
// checkpointed but never receive gradients.
class Module {
 public:
  virtual ~Module() = default;

  std::vector<std::pair<std::string, Var>> named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    collect_parameters("", out);
    return out;
  }
  std::vector<std::pair<std::string, TensorD*>> named_buffers() const {
    std::vector<std::pair<std::string, TensorD*>> out;
    collect_buffers("", out);
    return out;
  }

  void set_training(bool training) {
    training_ = training;
    for (auto& [name, child] : children_) child->set_training(training);
  }
  bool training() const { return training_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, p] : named_parameters()) n += p->value.size();
    return n;
  }

 protected:
  void register_parameter(std::string name, Var p) {
    params_.emplace_back(std::move(name), std::move(p));
  }
  void register_buffer(std::string name, TensorD* b) {
    buffers_.emplace_back(std::move(name), b);
  }
  void register_module(std::string name, Module* m) {
    children_.emplace_back(std::move(name), m);
  }

 private:
  void collect_parameters(const std::string& prefix,
                          std::vector<std::pair<std::string, Var>>& out) const {
    for (const auto& [name, p] : params_) out.emplace_back(prefix + name, p);
    for (const auto& [name, child] : children_)
      child->collect_parameters(prefix + name + ".", out);
  }
  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, TensorD*>>& out) const {
    for (const auto& [name, b] : buffers_) out.emplace_back(prefix + name, b);
    for (const auto& [name, child] : children_)
      child->collect_buffers(prefix + name + ".", out);
  }

  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, TensorD*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  bool training_ = true;
};

// He-style fan-in init for conv/linear weights.
inline TensorD he_normal(Shape shape, Index fan_in, Rng& rng) {
  TensorD t{std::move(shape)};
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sd);
  return t;
}

}  // namespace fss
