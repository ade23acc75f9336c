#pragma once

#include "unirgbir/params.hpp"

#include <map>
#include <set>
#include <string>

namespace unirgbir {

/// Per-module parameter accounting against a partition.
struct ParamReport {
  struct Row {
    std::string module;
    int64_t trainable = 0;
    int64_t frozen = 0;
  };
  std::vector<Row> rows;
  int64_t total_trainable = 0;
  int64_t total_frozen = 0;

  int64_t total() const { return total_trainable + total_frozen; }
  double trainable_fraction() const {
    return total() == 0 ? 0.0 : (double)total_trainable / (double)total();
  }
  std::string to_string() const;
};

template <typename T>
ParamReport param_report(const ParamStore<T>& store, const ParamPartition& part) {
  std::map<std::string, ParamReport::Row> rows;
  auto module_of = [](const std::string& name) { return name.substr(0, name.find('.')); };
  ParamReport rep;
  std::set<std::string> frozen_set(part.theta_v.begin(), part.theta_v.end());
  for (const auto& p : store) {
    auto& row = rows[module_of(p.name)];
    row.module = module_of(p.name);
    if (frozen_set.count(p.name)) {
      row.frozen += p.value.numel();
      rep.total_frozen += p.value.numel();
    } else {
      row.trainable += p.value.numel();
      rep.total_trainable += p.value.numel();
    }
  }
  for (auto& [k, v] : rows) rep.rows.push_back(v);
  return rep;
}

}  // namespace unirgbir
