#include "fss/nn/optim.hpp"

#include <cmath>

namespace fss {

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Var>> params, double lr,
                             double weight_decay, bool decoupled_weight_decay, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      decoupled_(decoupled_weight_decay) {
  for (auto& [name, p] : params_) {
    state_[p.get()] = State{TensorD(p->value.shape()), TensorD(p->value.shape())};
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (auto& [name, p] : params_) {
    if (!p->has_grad()) continue;  // parameter unused in this graph
    auto& st = state_[p.get()];
    Eigen::ArrayXd g = p->grad.array();
    auto& w = p->value.array();
    if (!decoupled_ && weight_decay_ != 0.0) g += weight_decay_ * w;
    st.m.array() = beta1_ * st.m.array() + (1.0 - beta1_) * g;
    st.v.array() = beta2_ * st.v.array() + (1.0 - beta2_) * g.square();
    if (decoupled_ && weight_decay_ != 0.0) w -= lr_ * weight_decay_ * w;
    w -= lr_ * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + eps_);
  }
}

bool PlateauScheduler::observe(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ >= patience_) {
    opt_.set_learning_rate(opt_.learning_rate() * factor_);
    bad_epochs_ = 0;
    return true;
  }
  return false;
}

}  // namespace fss
