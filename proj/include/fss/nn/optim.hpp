#pragma once

#include <unordered_map>
#include <vector>

#include "fss/nn/module.hpp"

namespace fss {

// Adam family. `decoupled_weight_decay` selects AdamW (decay applied to the
// weights directly); otherwise decay is folded into the gradient.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, Var>> params, double lr,
                double weight_decay, bool decoupled_weight_decay, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void step();

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  struct State {
    TensorD m;
    TensorD v;
  };
  std::vector<std::pair<std::string, Var>> params_;
  std::unordered_map<NodeT<double>*, State> state_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  bool decoupled_;
  long t_ = 0;
};

// Reduce-on-plateau: multiply the learning rate by `factor` after `patience`
// consecutive epochs without validation improvement.
class PlateauScheduler {
 public:
  PlateauScheduler(AdamOptimizer& opt, double factor, int patience)
      : opt_(opt), factor_(factor), patience_(patience) {}

  // Returns true when the learning rate was reduced at this call.
  bool observe(double val_loss);

  double best() const { return best_; }

 private:
  AdamOptimizer& opt_;
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace fss
