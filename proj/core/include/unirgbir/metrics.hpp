#pragma once

#include <cstdint>
#include <vector>

namespace unirgbir {

/// Pixel-count confusion matrix, rows = ground truth, cols = prediction.
struct Confusion {
  int classes = 0;
  std::vector<int64_t> counts;  // classes * classes

  explicit Confusion(int n_classes) : classes(n_classes), counts((size_t)n_classes * n_classes, 0) {}

  int64_t& at(int gt, int pred) { return counts[(size_t)gt * classes + pred]; }
  int64_t at(int gt, int pred) const { return counts[(size_t)gt * classes + pred]; }

  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
  }

  void add(const Confusion& o);
};

Confusion make_confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, int n_classes);

/// Per-class IoU (tp / (tp+fp+fn)) and Acc (tp / (tp+fn)). Classes absent
/// from the ground truth are excluded from the means (no 0/0 terms); the
/// exclusion is stated in report headers.
struct ClassMetrics {
  std::vector<double> iou;
  std::vector<double> acc;
  std::vector<bool> present;  // appears in gt
  double miou = 0.0;
  double macc = 0.0;
};

ClassMetrics miou_macc(const Confusion& conf);

}  // namespace unirgbir
