#include "unirgbir/metrics.hpp"

#include <stdexcept>

namespace unirgbir {

void Confusion::add(const Confusion& o) {
  if (o.classes != classes) throw std::invalid_argument("confusion: class count mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
}

Confusion make_confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, int n_classes) {
  if (pred.size() != gt.size()) throw std::invalid_argument("confusion: mask size mismatch");
  Confusion c(n_classes);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= n_classes || gt[i] >= n_classes)
      throw std::out_of_range("confusion: class value out of range");
    ++c.at(gt[i], pred[i]);
  }
  return c;
}

ClassMetrics miou_macc(const Confusion& conf) {
  const int K = conf.classes;
  ClassMetrics m;
  m.iou.assign((size_t)K, 0.0);
  m.acc.assign((size_t)K, 0.0);
  m.present.assign((size_t)K, false);
  int present = 0;
  for (int c = 0; c < K; ++c) {
    int64_t tp = conf.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < K; ++o) {
      if (o == c) continue;
      fp += conf.at(o, c);
      fn += conf.at(c, o);
    }
    if (tp + fn == 0) continue;  // absent from gt: excluded from the means
    m.present[(size_t)c] = true;
    ++present;
    m.iou[(size_t)c] = tp + fp + fn == 0 ? 0.0 : (double)tp / (double)(tp + fp + fn);
    m.acc[(size_t)c] = (double)tp / (double)(tp + fn);
    m.miou += m.iou[(size_t)c];
    m.macc += m.acc[(size_t)c];
  }
  if (present > 0) {
    m.miou /= present;
    m.macc /= present;
  }
  return m;
}

}  // namespace unirgbir
