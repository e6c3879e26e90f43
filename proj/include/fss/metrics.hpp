#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fss/types.hpp"

namespace fss {

struct ClassMetrics {
  int id = 0;                        // class id in {1..C}
  std::optional<double> accuracy;    // null when the class is absent from truth
  double iou = 0.0;
  double f1 = 0.0;
  int64_t support = 0;               // ground-truth pixel count
};

struct MetricsReport {
  double pixel_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  double fw_iou = 0.0;
  double fw_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  int64_t total_pixels = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Row = ground truth, column = prediction; labels in {1..C}. Accumulation is
// a commutative merge, so per-slice matrices can be folded in any order.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count);

  void accumulate(const MaskArray& truth, const MaskArray& pred);
  void merge(const ConfusionMatrix& other);

  int class_count() const { return class_count_; }
  int64_t count(int truth_class, int pred_class) const;   // 1-based ids
  int64_t total() const;
  bool operator==(const ConfusionMatrix& other) const = default;

  // Builds a matrix directly from counts (row-major, truth-major).
  static ConfusionMatrix from_counts(int class_count, const std::vector<int64_t>& counts);

  MetricsReport compute_report() const;

 private:
  int class_count_;
  std::vector<int64_t> counts_;  // C*C, row-major
};

}  // namespace fss
