#pragma once

#include <Eigen/Dense>

#include "fss/core/tensor.hpp"

namespace fss {

// 2D slice/patch payloads. Images carry byte-range intensities as doubles;
// masks carry class ids in {1..C} (0 is never a valid class).
using ImageArray = Eigen::ArrayXXd;
using MaskArray = Eigen::ArrayXXi;

}  // namespace fss
