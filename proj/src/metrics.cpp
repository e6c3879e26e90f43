#include "fss/metrics.hpp"

#include <nlohmann/json.hpp>

#include "fss/core/errors.hpp"

namespace fss {

ConfusionMatrix::ConfusionMatrix(int class_count) : class_count_(class_count) {
  if (class_count < 1) throw InvalidInputError("confusion matrix: class_count must be >= 1");
  counts_.assign(static_cast<size_t>(class_count) * class_count, 0);
}

ConfusionMatrix ConfusionMatrix::from_counts(int class_count,
                                             const std::vector<int64_t>& counts) {
  ConfusionMatrix cm(class_count);
  if (counts.size() != cm.counts_.size())
    throw InvalidInputError("confusion matrix: counts size mismatch");
  cm.counts_ = counts;
  return cm;
}

void ConfusionMatrix::accumulate(const MaskArray& truth, const MaskArray& pred) {
  if (truth.rows() != pred.rows() || truth.cols() != pred.cols())
    throw InvalidInputError("confusion matrix: truth/pred shape mismatch");
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const int t = truth(i);
    const int p = pred(i);
    if (t < 1 || t > class_count_ || p < 1 || p > class_count_)
      throw InvalidInputError("confusion matrix: label outside {1..C}");
    ++counts_[static_cast<size_t>(t - 1) * class_count_ + (p - 1)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.class_count_ != class_count_)
    throw InvalidInputError("confusion matrix: class_count mismatch on merge");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::count(int truth_class, int pred_class) const {
  return counts_[static_cast<size_t>(truth_class - 1) * class_count_ + (pred_class - 1)];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

MetricsReport ConfusionMatrix::compute_report() const {
  const int64_t n = total();
  if (n == 0) throw InvalidInputError("metrics: empty evaluation (no pixels accumulated)");

  MetricsReport rep;
  rep.total_pixels = n;

  int64_t trace = 0;
  double mca_sum = 0.0;
  int present = 0;
  for (int j = 1; j <= class_count_; ++j) {
    int64_t row = 0, col = 0;
    for (int k = 1; k <= class_count_; ++k) {
      row += count(j, k);
      col += count(k, j);
    }
    const int64_t diag = count(j, j);
    trace += diag;

    ClassMetrics cm;
    cm.id = j;
    cm.support = row;
    if (row > 0) {
      cm.accuracy = static_cast<double>(diag) / static_cast<double>(row);
      mca_sum += *cm.accuracy;
      ++present;
    }
    const int64_t iou_den = row + col - diag;
    cm.iou = iou_den > 0 ? static_cast<double>(diag) / static_cast<double>(iou_den) : 0.0;
    const int64_t f1_den = row + col;
    cm.f1 = f1_den > 0 ? 2.0 * static_cast<double>(diag) / static_cast<double>(f1_den) : 0.0;

    // ground-truth frequency weights; absent classes contribute zero
    const double weight = static_cast<double>(row) / static_cast<double>(n);
    rep.fw_iou += weight * cm.iou;
    rep.fw_f1 += weight * cm.f1;
    rep.per_class.push_back(cm);
  }
  rep.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(n);
  rep.mean_class_accuracy = present > 0 ? mca_sum / present : 0.0;
  return rep;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : per_class) {
    nlohmann::json jc{{"id", c.id}, {"iou", c.iou}, {"f1", c.f1}, {"support", c.support}};
    if (c.accuracy)
      jc["acc"] = *c.accuracy;
    else
      jc["acc"] = nullptr;
    per.push_back(jc);
  }
  return nlohmann::json{{"pa", pixel_accuracy}, {"mca", mean_class_accuracy},
                        {"fwiou", fw_iou},      {"fwf1", fw_f1},
                        {"per_class", per},     {"total_pixels", total_pixels}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport rep;
  rep.pixel_accuracy = j.at("pa").get<double>();
  rep.mean_class_accuracy = j.at("mca").get<double>();
  rep.fw_iou = j.at("fwiou").get<double>();
  rep.fw_f1 = j.at("fwf1").get<double>();
  rep.total_pixels = j.at("total_pixels").get<int64_t>();
  for (const auto& jc : j.at("per_class")) {
    ClassMetrics c;
    c.id = jc.at("id").get<int>();
    c.iou = jc.at("iou").get<double>();
    c.f1 = jc.at("f1").get<double>();
    c.support = jc.at("support").get<int64_t>();
    if (!jc.at("acc").is_null()) c.accuracy = jc.at("acc").get<double>();
    rep.per_class.push_back(c);
  }
  return rep;
}

}  // namespace fss
