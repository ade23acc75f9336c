#pragma once

#include "unirgbir/data.hpp"
#include "unirgbir/metrics.hpp"
#include "unirgbir/model.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace unirgbir {

/// Mean per-pixel cross-entropy of logits [B, H, W, K] against integer
/// labels (length B*H*W).
template <typename T>
int segmentation_loss(Graph<T>& g, int logits, const std::vector<int>& labels) {
  const Tensor<T>& L = g.val(logits);
  const int K = L.dim(L.rank() - 1);
  const int64_t N = L.numel() / K;
  return g.softmax_xent_mean(g.reshape(logits, {(int)N, K}), labels);
}

/// Decoupled-weight-decay adaptive-moment optimizer, implemented from the
/// published update rule. Holds first/second moment state only for the
/// parameters it was given.
template <typename T>
class AdamW {
 public:
  struct Hyper {
    T lr = T(2e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.1);
  };

  AdamW() = default;
  AdamW(std::vector<Param<T>*> params, Hyper h) : params_(std::move(params)), h_(h) {
    slots_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m = Tensor<T>::zeros(params_[i]->value.shape);
      slots_[i].v = Tensor<T>::zeros(params_[i]->value.shape);
    }
  }

  /// One update over all managed parameters. lr_scale multiplies the base
  /// learning rate (warmup schedule).
  void step(T lr_scale = T(1)) {
    ++t_;
    const T bc1 = T(1) - std::pow(h_.beta1, T(t_));
    const T bc2 = T(1) - std::pow(h_.beta2, T(t_));
    const T lr = h_.lr * lr_scale;
    for (size_t i = 0; i < params_.size(); ++i) {
      Param<T>* p = params_[i];
      p->ensure_grad();
      Tensor<T>& m = slots_[i].m;
      Tensor<T>& v = slots_[i].v;
      for (int64_t j = 0; j < p->value.numel(); ++j) {
        const T g = p->grad[j];
        m[j] = h_.beta1 * m[j] + (T(1) - h_.beta1) * g;
        v[j] = h_.beta2 * v[j] + (T(1) - h_.beta2) * g * g;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p->value[j] -= lr * (mhat / (std::sqrt(vhat) + h_.eps) + h_.weight_decay * p->value[j]);
      }
    }
  }

  int64_t step_count() const { return t_; }
  size_t managed() const { return params_.size(); }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::vector<Param<T>*> params_;
  std::vector<Slot> slots_;
  Hyper h_;
  int64_t t_ = 0;
};

/// Everything mutable across steps. Optimizer moments exist only for
/// theta_A in adapter mode.
template <typename T>
struct TrainState {
  TuneMode tune_mode = TuneMode::adapter;
  ParamPartition partition;
  std::vector<Param<T>*> trainables;
  AdamW<T> opt;
  int step = 0;
  int total_steps = 0;
  int warmup_steps = 0;
  std::vector<double> loss_history;
  std::string diag_path;  // written on NaN abort
};

template <typename T>
TrainState<T> make_train_state(UniRgbIrModel<T>& model, const TrainConfig& tc, TuneMode mode,
                               int total_steps) {
  TrainState<T> st;
  st.tune_mode = mode;
  st.partition = make_partition(model.params(), mode);
  for (auto& p : model.params()) {
    if (p.stat) continue;
    if (mode == TuneMode::adapter && p.frozen) continue;
    st.trainables.push_back(&p);
  }
  typename AdamW<T>::Hyper h;
  h.lr = (T)tc.lr;
  h.beta1 = (T)tc.beta1;
  h.beta2 = (T)tc.beta2;
  h.eps = (T)tc.adam_eps;
  h.weight_decay = (T)tc.weight_decay;
  st.opt = AdamW<T>(st.trainables, h);
  st.total_steps = total_steps;
  st.warmup_steps = std::max(1, (int)std::ceil(total_steps * tc.warmup_frac));
  return st;
}

template <typename T>
double lr_warmup_scale(const TrainState<T>& st) {
  return std::min(1.0, (double)(st.step + 1) / (double)st.warmup_steps);
}

/// One optimizer step on theta_A (or everything in full mode). theta_V is
/// bitwise untouched in adapter mode. NaN loss aborts with a diagnostic
/// dump.
template <typename T>
double train_step(UniRgbIrModel<T>& model, TrainState<T>& st, const Batch<T>& batch) {
  Graph<T> g;
  Binder<T> bind(g, model.train_all());
  const int rgb = g.leaf(batch.rgb);
  const int ir = g.leaf(batch.ir);
  const int logits = model.forward(bind, rgb, ir, /*training=*/true);
  const int loss = segmentation_loss(g, logits, batch.labels);
  const double lv = (double)g.val(loss)[0];
  if (!std::isfinite(lv)) {
    if (!st.diag_path.empty()) {
      std::ofstream diag(st.diag_path);
      diag << "non-finite loss " << lv << " at step " << st.step << "\n";
      for (auto* p : st.trainables) {
        double nrm = 0;
        for (const auto& v : p->value.data) nrm += (double)v * v;
        diag << p->name << " value_l2 " << std::sqrt(nrm) << "\n";
      }
    }
    throw std::runtime_error("training aborted: non-finite loss at step " + std::to_string(st.step));
  }
  g.backward(loss);
  bind.read_grads();
  st.opt.step((T)lr_warmup_scale(st));
  for (auto* p : st.trainables) p->zero_grad();
  st.loss_history.push_back(lv);
  ++st.step;
  return lv;
}

/// Argmax class per pixel for a logits tensor [B, H, W, K].
template <typename T>
std::vector<std::vector<uint8_t>> argmax_masks(const Tensor<T>& logits) {
  const int B = logits.dim(0), H = logits.dim(1), W = logits.dim(2), K = logits.dim(3);
  std::vector<std::vector<uint8_t>> out((size_t)B);
  for (int b = 0; b < B; ++b) {
    out[(size_t)b].resize((size_t)H * W);
    for (int64_t p = 0; p < (int64_t)H * W; ++p) {
      const T* row = logits.ptr() + ((int64_t)b * H * W + p) * K;
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (row[k] > row[best]) best = k;
      out[(size_t)b][(size_t)p] = (uint8_t)best;
    }
  }
  return out;
}

/// Whole-split evaluation: confusion over every sample, eval-mode forward.
template <typename T>
ClassMetrics evaluate_split(UniRgbIrModel<T>& model, const Dataset& split, int batch_size,
                            Confusion* conf_out = nullptr) {
  Confusion conf(model.config().head_classes);
  const int n = (int)split.size();
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    Batch<T> b = make_batch<T>(split, idx);
    Graph<T> g;
    Binder<T> bind(g, false);
    const int logits = model.forward(bind, g.leaf(b.rgb), g.leaf(b.ir), /*training=*/false);
    auto preds = argmax_masks(g.val(logits));
    for (size_t i = 0; i < preds.size(); ++i) {
      const Confusion c =
          make_confusion(preds[i], split.samples[(size_t)(start + (int)i)].mask, conf.classes);
      conf.add(c);
    }
  }
  if (conf_out) *conf_out = conf;
  return miou_macc(conf);
}

struct MetricRecord {
  int step = 0;
  double loss = 0.0;
  double miou = 0.0;
  double macc = 0.0;
  std::string mode;
};

struct TrainResult {
  std::vector<double> loss_curve;      // one entry per step
  std::vector<MetricRecord> records;   // one entry per eval
};

/// Formats one metric record as a single NDJSON line.
std::string metric_record_line(const MetricRecord& r);

/// Full training run: epoch-shuffled batches, warmup + constant lr,
/// periodic validation, machine-readable metric log (one record per eval,
/// ceil(steps / eval_interval) records total).
template <typename T>
TrainResult run_training(UniRgbIrModel<T>& model, const RunConfig& cfg, const Dataset& train,
                         const Dataset& val, TuneMode mode, const std::string& mode_label, Rng& rng,
                         const std::string& metrics_path = "", std::ostream* progress = nullptr) {
  if (train.size() == 0) throw std::invalid_argument("run_training: empty training split");
  TrainState<T> st = make_train_state(model, cfg.train, mode, cfg.train.steps);
  TrainResult result;
  std::ofstream mlog;
  if (!metrics_path.empty()) {
    mlog.open(metrics_path);
    if (!mlog) throw std::runtime_error("cannot write metric log: " + metrics_path);
  }

  std::vector<int> perm((size_t)train.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = (int)i;
  rng.shuffle(perm);
  size_t cursor = 0;
  const int B = std::min(cfg.train.batch_size, (int)train.size());

  for (int step = 1; step <= cfg.train.steps; ++step) {
    if (cursor + (size_t)B > perm.size()) {
      rng.shuffle(perm);
      cursor = 0;
    }
    std::vector<int> idx(perm.begin() + (long)cursor, perm.begin() + (long)cursor + B);
    cursor += (size_t)B;

    const double lv = train_step(model, st, make_batch<T>(train, idx));
    result.loss_curve.push_back(lv);

    const bool at_interval = step % cfg.train.eval_interval == 0;
    const bool final_partial =
        step == cfg.train.steps && cfg.train.steps % cfg.train.eval_interval != 0;
    if (at_interval || final_partial) {
      ClassMetrics m;
      if (val.size() > 0) m = evaluate_split(model, val, cfg.train.batch_size);
      MetricRecord rec{step, lv, m.miou, m.macc, mode_label};
      result.records.push_back(rec);
      if (mlog) mlog << metric_record_line(rec) << "\n";
      if (progress)
        (*progress) << "step " << step << "  loss " << lv << "  miou " << m.miou << "  macc " << m.macc
                    << "\n";
    }
  }
  return result;
}

}  // namespace unirgbir
