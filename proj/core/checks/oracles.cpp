#include "unirgbir/checks/oracles.hpp"

namespace unirgbir::checks {

BruteClassStats brute_force_metrics(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                                    int n_classes) {
  BruteClassStats s;
  s.iou.assign((size_t)n_classes, 0.0);
  s.acc.assign((size_t)n_classes, 0.0);
  s.present.assign((size_t)n_classes, false);
  int n_present = 0;
  for (int c = 0; c < n_classes; ++c) {
    int64_t tp = 0, fp = 0, fn = 0, gt_count = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == c, g = gt[i] == c;
      if (g) ++gt_count;
      if (p && g) ++tp;
      if (p && !g) ++fp;
      if (!p && g) ++fn;
    }
    if (gt_count == 0) continue;
    s.present[(size_t)c] = true;
    ++n_present;
    s.iou[(size_t)c] = (double)tp / (double)(tp + fp + fn);
    s.acc[(size_t)c] = (double)tp / (double)(tp + fn);
    s.miou += s.iou[(size_t)c];
    s.macc += s.acc[(size_t)c];
  }
  if (n_present) {
    s.miou /= n_present;
    s.macc /= n_present;
  }
  return s;
}

}  // namespace unirgbir::checks
