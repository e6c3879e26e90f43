#pragma once

#include "fss/core/image_ops.hpp"
#include "fss/nn/module.hpp"

namespace fss {

class Conv2d : public Module {
 public:
  Conv2d(Index in_ch, Index out_ch, Index kernel, Index stride, Index pad, Rng& rng,
         bool bias = true);
  Var forward(const Var& x) const;

  Index stride;
  Index pad;
  Var weight;
  Var bias;  // null when disabled
};

class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(Index in_ch, Index out_ch, Index kernel, Index stride, Rng& rng);
  Var forward(const Var& x) const;

  Index stride;
  Var weight;
  Var bias;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(Index channels, double momentum = 0.1, double eps = 1e-5);
  Var forward(const Var& x);

  Var gamma;
  Var beta;
  TensorD running_mean;
  TensorD running_var;
  double momentum;
  double eps;
};

class Linear : public Module {
 public:
  Linear(Index in_features, Index out_features, Rng& rng);
  Var forward(const Var& x) const;

  Var weight;  // [out, in]
  Var bias;    // [out]
};

}  // namespace fss
