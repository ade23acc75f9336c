#include "unirgbir/param_report.hpp"
#include "unirgbir/rng.hpp"
#include "unirgbir/tuning.hpp"

#include <memory>
#include <sstream>

namespace unirgbir {

namespace {
std::unique_ptr<Rng> g_rng = std::make_unique<Rng>(0);
}

void seed_all(uint64_t seed) { g_rng = std::make_unique<Rng>(seed); }

Rng& global_rng() { return *g_rng; }

std::string metric_record_line(const MetricRecord& r) {
  std::ostringstream os;
  os.precision(9);
  os << "{\"step\": " << r.step << ", \"loss\": " << r.loss << ", \"miou\": " << r.miou
     << ", \"macc\": " << r.macc << ", \"mode\": \"" << r.mode << "\"}";
  return os.str();
}

std::string ParamReport::to_string() const {
  std::ostringstream os;
  os << "module        trainable        frozen\n";
  for (const auto& row : rows) {
    os << row.module;
    for (size_t i = row.module.size(); i < 14; ++i) os << ' ';
    std::string t = std::to_string(row.trainable), f = std::to_string(row.frozen);
    for (size_t i = t.size(); i < 9; ++i) os << ' ';
    os << t << "  ";
    for (size_t i = f.size(); i < 12; ++i) os << ' ';
    os << f << "\n";
  }
  os << "theta_A " << total_trainable << "  theta_V " << total_frozen << "  total " << total() << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "trainable fraction %.4f", trainable_fraction());
  os << buf << "\n";
  return os.str();
}

}  // namespace unirgbir
