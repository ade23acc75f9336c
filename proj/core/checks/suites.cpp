#include "unirgbir/checks/suites.hpp"

#include "unirgbir/checkpoint.hpp"
#include "unirgbir/checks/oracles.hpp"
#include "unirgbir/gradcheck.hpp"
#include "unirgbir/mfp.hpp"
#include "unirgbir/model.hpp"
#include "unirgbir/sfi.hpp"
#include "unirgbir/tuning.hpp"

#include <filesystem>
#include <sstream>

namespace unirgbir::checks {

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.c = 8;
  cfg.vit_blocks = 4;
  cfg.vit_heads = 2;
  cfg.deform_heads = 2;
  cfg.deform_points = 2;
  cfg.head_classes = 3;
  cfg.img_h = 32;
  cfg.img_w = 32;
  return cfg;
}

template <typename T>
void randomize_store(ParamStore<T>& store, Rng& rng, double scale = 0.1) {
  for (auto& p : store) {
    if (p.stat) continue;
    rng.fill_normal(p.value, scale);
    if (p.name.find(".gamma") != std::string::npos)
      for (auto& v : p.value.data) v += T(1);
  }
}

template <typename T>
NaiveCrossParams<T> extract_cross_params(ParamStore<T>& store, const std::string& prefix,
                                         AttentionKind kind) {
  NaiveCrossParams<T> p;
  p.lnq_gamma = store.at(prefix + ".ln_q.gamma").value;
  p.lnq_beta = store.at(prefix + ".ln_q.beta").value;
  p.lnkv_gamma = store.at(prefix + ".ln_kv.gamma").value;
  p.lnkv_beta = store.at(prefix + ".ln_kv.beta").value;
  p.out_w = store.at(prefix + ".output.weight").value;
  p.out_b = store.at(prefix + ".output.bias").value;
  if (kind == AttentionKind::deformable) {
    p.value_w = store.at(prefix + ".value.weight").value;
    p.value_b = store.at(prefix + ".value.bias").value;
    p.offset_w = store.at(prefix + ".offset.weight").value;
    p.offset_b = store.at(prefix + ".offset.bias").value;
    p.attnw_w = store.at(prefix + ".attnw.weight").value;
    p.attnw_b = store.at(prefix + ".attnw.bias").value;
  } else {
    p.q_w = store.at(prefix + ".q.weight").value;
    p.q_b = store.at(prefix + ".q.bias").value;
    p.k_w = store.at(prefix + ".k.weight").value;
    p.k_b = store.at(prefix + ".k.bias").value;
    p.v_w = store.at(prefix + ".v.weight").value;
    p.v_b = store.at(prefix + ".v.bias").value;
  }
  return p;
}

template <typename T>
NaiveBlockParams<T> extract_block_params(ParamStore<T>& store, const std::string& prefix) {
  NaiveBlockParams<T> p;
  p.ln1_gamma = store.at(prefix + ".ln1.gamma").value;
  p.ln1_beta = store.at(prefix + ".ln1.beta").value;
  p.qkv_w = store.at(prefix + ".attn.qkv.weight").value;
  p.qkv_b = store.at(prefix + ".attn.qkv.bias").value;
  p.out_w = store.at(prefix + ".attn.out.weight").value;
  p.out_b = store.at(prefix + ".attn.out.bias").value;
  p.ln2_gamma = store.at(prefix + ".ln2.gamma").value;
  p.ln2_beta = store.at(prefix + ".ln2.beta").value;
  p.fc1_w = store.at(prefix + ".mlp.fc1.weight").value;
  p.fc1_b = store.at(prefix + ".mlp.fc1.bias").value;
  p.fc2_w = store.at(prefix + ".mlp.fc2.weight").value;
  p.fc2_b = store.at(prefix + ".mlp.fc2.bias").value;
  return p;
}

std::vector<Param<double>*> collect(ParamStore<double>& store, const std::string& prefix = "") {
  std::vector<Param<double>*> out;
  for (auto& p : store)
    if (!p.stat && (prefix.empty() || p.name.rfind(prefix, 0) == 0)) out.push_back(&p);
  return out;
}

CheckResult grad_result(const std::string& name, const GradCheckReport& report, double tol) {
  std::ostringstream os;
  os << "max rel err " << report.worst << " (tol " << tol << ")";
  return {name, report.pass(tol), os.str()};
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs((double)a[i] - (double)b[i]));
  return m;
}

}  // namespace

std::vector<CheckResult> run_grad_suite() {
  std::vector<CheckResult> results;
  const double tol = 1e-3;

  // linear map: exact for linear ops, error at machine-epsilon scale
  {
    Rng rng(11);
    ParamStore<double> store;
    LinearM<double> lin;
    lin.init(store, "mfp.lin", 6, 4, rng);
    Tensor<double> x({3, 6});
    rng.fill_normal(x, 1.0);
    Tensor<double> r({3, 4});
    rng.fill_normal(r, 1.0);
    auto loss_fn = [&]() {
      Graph<double> g;
      Binder<double> bind(g);
      int y = lin.forward(bind, g.leaf(x));
      return g.val(g.sum_all(g.mul(y, g.leaf(r))))[0];
    };
    auto grad_fn = [&]() {
      Graph<double> g;
      Binder<double> bind(g);
      int y = lin.forward(bind, g.leaf(x));
      int loss = g.sum_all(g.mul(y, g.leaf(r)));
      g.backward(loss);
      bind.read_grads();
      return g.val(loss)[0];
    };
    auto report = grad_check(collect(store), loss_fn, grad_fn);
    results.push_back(grad_result("grad/linear", report, 1e-6));
  }

  // MFP fuse on an 8x8, C=8 instance
  {
    Rng rng(12);
    ModelConfig cfg = tiny_config();
    cfg.d = 16;
    ParamStore<double> store;
    Mfp<double> mfp;
    mfp.init(store, cfg, rng);
    Tensor<double> fr({1, 8, 8, cfg.c}), fi({1, 8, 8, cfg.c}), r({1, 8, 8, cfg.c});
    rng.fill_normal(fr, 1.0);
    rng.fill_normal(fi, 1.0);
    rng.fill_normal(r, 1.0);
    auto run = [&](bool backward) {
      Graph<double> g;
      Binder<double> bind(g);
      int f = mfp.multi_receptive_fuse(bind, g.leaf(fr), g.leaf(fi), true);
      int loss = g.sum_all(g.mul(f, g.leaf(r)));
      if (backward) {
        g.backward(loss);
        bind.read_grads();
      }
      return g.val(loss)[0];
    };
    auto report = grad_check(collect(store, "mfp.part"), [&] { return run(false); },
                             [&] { return run(true); });
    results.push_back(grad_result("grad/mfp_fuse", report, tol));
  }

  // MFP pyramid from a 1/4-scale map
  {
    Rng rng(13);
    ModelConfig cfg = tiny_config();
    cfg.d = 16;
    ParamStore<double> store;
    Mfp<double> mfp;
    mfp.init(store, cfg, rng);
    Tensor<double> f({1, 8, 8, cfg.c});
    rng.fill_normal(f, 1.0);
    std::vector<Tensor<double>> rs;
    auto run = [&](bool backward) {
      Graph<double> g;
      Binder<double> bind(g);
      auto lv = mfp.pyramid(bind, g.leaf(f), true);
      if (rs.empty()) {
        Rng rr(14);
        for (int l = 0; l < 3; ++l) {
          Tensor<double> r(g.val(lv[(size_t)l]).shape);
          rr.fill_normal(r, 1.0);
          rs.push_back(std::move(r));
        }
      }
      int loss = g.sum_all(g.mul(lv[0], g.leaf(rs[0])));
      loss = g.add(loss, g.sum_all(g.mul(lv[1], g.leaf(rs[1]))));
      loss = g.add(loss, g.sum_all(g.mul(lv[2], g.leaf(rs[2]))));
      if (backward) {
        g.backward(loss);
        bind.read_grads();
      }
      return g.val(loss)[0];
    };
    auto report = grad_check(collect(store, "mfp.pyr"), [&] { return run(false); },
                             [&] { return run(true); });
    results.push_back(grad_result("grad/mfp_pyramid", report, tol));
  }

  // SFI cross-attention, both kinds, on 4 queries x 21 keys, D=8
  for (AttentionKind kind : {AttentionKind::deformable, AttentionKind::global}) {
    Rng rng(15);
    ModelConfig cfg = tiny_config();
    cfg.attention = kind;
    ParamStore<double> store;
    SfiBlock<double> sfi;
    sfi.init(store, "sfi.stage1", cfg, rng);
    randomize_store(store, rng, 0.2);
    std::vector<LevelSpec> levels = {{4, 4, 0}, {2, 2, 16}, {1, 1, 20}};
    Tensor<double> refs = token_reference_points<double>(2, 2);
    Tensor<double> q({1, 4, cfg.d}), kv({1, 21, cfg.d}), r({1, 4, cfg.d});
    rng.fill_normal(q, 1.0);
    rng.fill_normal(kv, 1.0);
    rng.fill_normal(r, 1.0);
    auto run = [&](bool backward) {
      Graph<double> g;
      Binder<double> bind(g);
      int y = sfi.cross_attend(bind, g.leaf(q), g.leaf(kv), levels, refs);
      int loss = g.sum_all(g.mul(y, g.leaf(r)));
      if (backward) {
        g.backward(loss);
        bind.read_grads();
      }
      return g.val(loss)[0];
    };
    auto report = grad_check(collect(store), [&] { return run(false); }, [&] { return run(true); });
    results.push_back(grad_result(std::string("grad/sfi_attention_") + to_string(kind), report, tol));
  }

  // gate fusion
  {
    Rng rng(16);
    ModelConfig cfg = tiny_config();
    ParamStore<double> store;
    SfiBlock<double> sfi;
    sfi.init(store, "sfi.stage2", cfg, rng);
    randomize_store(store, rng, 0.2);
    Tensor<double> prev({1, 4, cfg.d}), curr({1, 4, cfg.d}), r({1, 4, cfg.d});
    rng.fill_normal(prev, 1.0);
    rng.fill_normal(curr, 1.0);
    rng.fill_normal(r, 1.0);
    auto run = [&](bool backward) {
      Graph<double> g;
      Binder<double> bind(g);
      int y = sfi.gate_fuse(bind, g.leaf(curr), g.leaf(prev));
      int loss = g.sum_all(g.mul(y, g.leaf(r)));
      if (backward) {
        g.backward(loss);
        bind.read_grads();
      }
      return g.val(loss)[0];
    };
    auto report = grad_check(collect(store, "sfi.stage2.gate"), [&] { return run(false); },
                             [&] { return run(true); });
    results.push_back(grad_result("grad/sfi_gate", report, tol));
  }

  // loss vs logits
  {
    Rng rng(17);
    ParamStore<double> store;
    Param<double>* logits = store.add("head.logits", Tensor<double>({6, 3}));
    rng.fill_normal(logits->value, 1.0);
    const std::vector<int> labels = {0, 2, 1, 1, 0, 2};
    auto run = [&](bool backward) {
      Graph<double> g;
      Binder<double> bind(g);
      int loss = g.softmax_xent_mean(bind(logits), labels);
      if (backward) {
        g.backward(loss);
        bind.read_grads();
      }
      return g.val(loss)[0];
    };
    auto report = grad_check(collect(store), [&] { return run(false); }, [&] { return run(true); });
    results.push_back(grad_result("grad/loss", report, tol));
  }

  return results;
}

std::vector<CheckResult> run_oracle_suite(int attention_trials) {
  std::vector<CheckResult> results;

  // transformer block vs naive single-head reference, 4 tokens, D=8
  {
    Rng rng(21);
    ParamStore<float> store;
    ViTBlock<float> block;
    block.init(store, "backbone.blocks.0", 8, 1, rng);
    Tensor<float> x({1, 4, 8});
    rng.fill_normal(x, 1.0);
    Graph<float> g;
    Binder<float> bind(g);
    const Tensor<float> got = g.val(block.forward(bind, g.leaf(x)));
    const Tensor<float> want = naive_vit_block(x.reshaped({4, 8}), extract_block_params(store, "backbone.blocks.0"), 1);
    const double diff = max_abs_diff(got.reshaped({4, 8}), want);
    std::ostringstream os;
    os << "max abs diff " << diff;
    results.push_back({"oracle/vit_block", diff < 1e-5, os.str()});
  }

  // cross-attention equivalence over randomized instances, both kinds
  for (AttentionKind kind : {AttentionKind::global, AttentionKind::deformable}) {
    Rng rng(kind == AttentionKind::global ? 22 : 23);
    double worst = 0;
    for (int trial = 0; trial < attention_trials; ++trial) {
      ModelConfig cfg = tiny_config();
      cfg.attention = kind;
      const int base = 1 << rng.uniform_int(1, 3);  // 1/8-scale grid: 2,4,8
      std::vector<LevelSpec> levels;
      int offset = 0;
      int g_h = base;
      for (int l = 0; l < 3; ++l) {
        const int gh = std::max(1, g_h);
        levels.push_back({gh, gh, offset});
        offset += gh * gh;
        g_h /= 2;
      }
      const int qg = std::max(1, base / 2);
      const int n = qg * qg, m = offset;
      ParamStore<float> store;
      SfiBlock<float> sfi;
      sfi.init(store, "sfi.stage1", cfg, rng);
      randomize_store(store, rng, 0.3);
      Tensor<float> refs = token_reference_points<float>(qg, qg);
      Tensor<float> q({1, n, cfg.d}), kv({1, m, cfg.d});
      rng.fill_normal(q, 1.0);
      rng.fill_normal(kv, 1.0);
      Graph<float> g;
      Binder<float> bind(g);
      const Tensor<float> got = g.val(sfi.cross_attend(bind, g.leaf(q), g.leaf(kv), levels, refs));
      const auto params = extract_cross_params(store, "sfi.stage1", kind);
      const Tensor<float> want =
          kind == AttentionKind::global
              ? naive_global_cross_attention(q.reshaped({n, cfg.d}), kv.reshaped({m, cfg.d}), params,
                                             cfg.deform_heads)
              : naive_deformable_cross_attention(q.reshaped({n, cfg.d}), kv.reshaped({m, cfg.d}), params,
                                                 levels, refs, cfg.deform_heads, cfg.deform_points);
      worst = std::max(worst, max_abs_diff(got.reshaped({n, cfg.d}), want));
    }
    std::ostringstream os;
    os << attention_trials << " trials, max abs diff " << worst;
    results.push_back({std::string("oracle/cross_attention_") + to_string(kind), worst < 1e-5, os.str()});
  }

  // optimizer trace vs hand-stepped reference on a 1-parameter quadratic
  {
    ParamStore<double> store;
    Param<double>* theta = store.add("head.theta", Tensor<double>::full({1}, 5.0));
    typename AdamW<double>::Hyper h;
    h.lr = 0.05;
    h.weight_decay = 0.01;
    AdamW<double> opt({theta}, h);
    AdamWScalarRef ref;
    double theta_ref = 5.0;
    double worst = 0;
    for (int t = 0; t < 40; ++t) {
      const double grad = theta->value[0] - 3.0;  // d/dx 0.5 (x-3)^2
      theta->ensure_grad();
      theta->grad[0] = grad;
      opt.step();
      theta->zero_grad();
      const double grad_ref = theta_ref - 3.0;
      ref.step(theta_ref, grad_ref, h.lr, h.beta1, h.beta2, h.eps, h.weight_decay);
      worst = std::max(worst, std::abs(theta_ref - theta->value[0]));
    }
    std::ostringstream os;
    os << "max iterate diff " << worst;
    results.push_back({"oracle/adamw_trace", worst < 1e-6, os.str()});
  }

  // hand-computed cross-entropy: 2 pixels, 2 classes
  {
    Graph<double> g;
    Tensor<double> logits({2, 2});
    logits[0] = 2.0; logits[1] = 1.0;   // pixel 0, label 0
    logits[2] = 0.5; logits[3] = 3.0;   // pixel 1, label 1
    const int loss = g.softmax_xent_mean(g.leaf(logits), {0, 1});
    const double manual0 = -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)));
    const double manual1 = -std::log(std::exp(3.0) / (std::exp(0.5) + std::exp(3.0)));
    const double want = 0.5 * (manual0 + manual1);
    const double diff = std::abs(g.val(loss)[0] - want);
    std::ostringstream os;
    os << "|loss - manual| = " << diff;
    results.push_back({"oracle/xent_manual", diff < 1e-6, os.str()});
  }

  // metrics vs per-class brute force on randomized masks
  {
    Rng rng(24);
    double worst = 0;
    for (int trial = 0; trial < 25; ++trial) {
      const int K = rng.uniform_int(2, 5);
      const int n = rng.uniform_int(4, 60);
      std::vector<uint8_t> pred((size_t)n), gt((size_t)n);
      for (int i = 0; i < n; ++i) {
        pred[(size_t)i] = (uint8_t)rng.uniform_int(0, K - 1);
        gt[(size_t)i] = (uint8_t)rng.uniform_int(0, K - 1);
      }
      const ClassMetrics got = miou_macc(make_confusion(pred, gt, K));
      const BruteClassStats want = brute_force_metrics(pred, gt, K);
      worst = std::max(worst, std::abs(got.miou - want.miou));
      worst = std::max(worst, std::abs(got.macc - want.macc));
      for (int c = 0; c < K; ++c) {
        worst = std::max(worst, std::abs(got.iou[(size_t)c] - want.iou[(size_t)c]));
        worst = std::max(worst, std::abs(got.acc[(size_t)c] - want.acc[(size_t)c]));
      }
    }
    std::ostringstream os;
    os << "25 trials, max abs diff " << worst;
    results.push_back({"oracle/metrics", worst < 1e-9, os.str()});
  }

  return results;
}

std::vector<CheckResult> run_invariant_suite(int convexity_trials) {
  std::vector<CheckResult> results;

  // flatten/unflatten round trip
  {
    Rng rng(31);
    bool ok = true;
    for (int trial = 0; trial < 20; ++trial) {
      const int gh = rng.uniform_int(1, 9), gw = rng.uniform_int(1, 9), d = rng.uniform_int(1, 6);
      Tensor<float> map({gh, gw, d});
      rng.fill_normal(map, 1.0);
      TokenMap<float> t = TokenMap<float>::flatten(map);
      t.validate();
      const Tensor<float> back = t.unflatten();
      ok = ok && back.shape == map.shape && back.data == map.data;
    }
    results.push_back({"invariant/tokenmap_roundtrip", ok, "20 random sizes, exact"});
  }

  // bilinear sample identities
  {
    Rng rng(32);
    Tensor<float> level({4, 6, 3});
    rng.fill_normal(level, 1.0);
    bool ok = true;
    // exact grid centers
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) {
        const auto s = naive_bilinear_sample(level, (float)((x + 0.5) / 6.0), (float)((y + 0.5) / 4.0));
        for (int d = 0; d < 3; ++d)
          ok = ok && std::abs(s[(size_t)d] - level[((int64_t)y * 6 + x) * 3 + d]) < 1e-6f;
      }
    // midpoint of two horizontally adjacent cells
    {
      const auto s = naive_bilinear_sample(level, (float)((0 + 1.0) / 6.0), (float)(0.5 / 4.0));
      for (int d = 0; d < 3; ++d) {
        const float avg = 0.5f * (level[d] + level[3 + d]);
        ok = ok && std::abs(s[(size_t)d] - avg) < 1e-6f;
      }
    }
    // constant field
    {
      Tensor<float> c({3, 3, 2});
      c.fill(0.75f);
      for (int i = 0; i < 10; ++i) {
        const auto s = naive_bilinear_sample(c, (float)rng.uniform(0.2, 0.8), (float)rng.uniform(0.2, 0.8));
        ok = ok && std::abs(s[0] - 0.75f) < 1e-6f && std::abs(s[1] - 0.75f) < 1e-6f;
      }
    }
    results.push_back({"invariant/bilinear_identities", ok, "grid centers, midpoints, constant field"});
  }

  // layernorm statistics and softmax row sums inside a real block
  {
    Rng rng(33);
    ParamStore<float> store;
    ViTBlock<float> block;
    block.init(store, "backbone.blocks.0", 16, 4, rng);
    Tensor<float> x({2, 6, 16});
    rng.fill_normal(x, 1.0);
    Graph<float> g;
    Binder<float> bind(g);
    std::vector<Tensor<float>> probs;
    block.forward(bind, g.leaf(x), &probs);
    bool ok = !probs.empty();
    for (const auto& pr : probs) {
      const int n = pr.dim(2);
      for (int64_t r = 0; r < pr.numel() / n; ++r) {
        float sum = 0;
        for (int j = 0; j < n; ++j) sum += pr[r * n + j];
        ok = ok && std::abs(sum - 1.0f) < 1e-6f;
      }
    }
    // normalized rows before affine: use identity gamma/beta
    Tensor<float> ident_g = Tensor<float>::full({16}, 1.0f), ident_b = Tensor<float>::zeros({16});
    const Tensor<float> normed = naive_layernorm(x.reshaped({12, 16}), ident_g, ident_b);
    for (int r = 0; r < 12; ++r) {
      float mean = 0, var = 0;
      for (int d = 0; d < 16; ++d) mean += normed[r * 16 + d];
      mean /= 16;
      for (int d = 0; d < 16; ++d) var += (normed[r * 16 + d] - mean) * (normed[r * 16 + d] - mean);
      var /= 16;
      ok = ok && std::abs(mean) < 1e-5f && std::abs(var - 1.0f) < 1e-4f;
    }
    results.push_back({"invariant/normalization", ok, "softmax rows sum to 1, LN rows standardized"});
  }

  // deformable attention weights sum to 1 per query and head
  {
    Rng rng(34);
    ModelConfig cfg = tiny_config();
    ParamStore<float> store;
    SfiBlock<float> sfi;
    sfi.init(store, "sfi.stage1", cfg, rng);
    randomize_store(store, rng, 0.3);
    std::vector<LevelSpec> levels = {{4, 4, 0}, {2, 2, 16}, {1, 1, 20}};
    Tensor<float> refs = token_reference_points<float>(2, 2);
    Tensor<float> q({1, 4, cfg.d}), kv({1, 21, cfg.d});
    rng.fill_normal(q, 1.0);
    rng.fill_normal(kv, 1.0);
    Graph<float> g;
    Binder<float> bind(g);
    std::optional<int> w_id;
    sfi.cross_attend(bind, g.leaf(q), g.leaf(kv), levels, refs, &w_id);
    const Tensor<float>& w = g.val(*w_id);  // [1, n, heads, L*K]
    bool ok = true;
    const int lk = w.dim(3);
    for (int64_t r = 0; r < w.numel() / lk; ++r) {
      float sum = 0;
      for (int j = 0; j < lk; ++j) sum += w[r * lk + j];
      ok = ok && std::abs(sum - 1.0f) < 1e-6f;
    }
    results.push_back({"invariant/deform_weights_sum", ok, "softmax over L*K samples"});
  }

  // gate convexity over random trials
  {
    Rng rng(35);
    ModelConfig cfg = tiny_config();
    ParamStore<float> store;
    SfiBlock<float> sfi;
    sfi.init(store, "sfi.stage2", cfg, rng);
    randomize_store(store, rng, 0.5);
    bool ok = true;
    for (int trial = 0; trial < convexity_trials && ok; ++trial) {
      Tensor<float> prev({1, 4, cfg.d}), curr({1, 4, cfg.d});
      rng.fill_normal(prev, 1.0);
      rng.fill_normal(curr, 1.0);
      Graph<float> g;
      Binder<float> bind(g);
      const Tensor<float> out = g.val(sfi.gate_fuse(bind, g.leaf(curr), g.leaf(prev)));
      for (int64_t i = 0; i < out.numel(); ++i) {
        const float lo = std::min(prev[i], curr[i]), hi = std::max(prev[i], curr[i]);
        if (!(out[i] >= lo - 1e-6f && out[i] <= hi + 1e-6f)) ok = false;
      }
    }
    std::ostringstream os;
    os << convexity_trials << " random forwards stay in the per-element envelope";
    results.push_back({"invariant/gate_convexity", ok, os.str()});
  }

  // SE gates live in (0,1); pinning a gate to zero removes the channel
  {
    Rng rng(36);
    ModelConfig cfg = tiny_config();
    cfg.d = 16;
    ParamStore<float> store;
    Mfp<float> mfp;
    mfp.init(store, cfg, rng);
    Tensor<float> fr({1, 8, 8, cfg.c}), fi({1, 8, 8, cfg.c});
    rng.fill_normal(fr, 1.0);
    rng.fill_normal(fi, 1.0);
    bool ok = true;
    {
      Graph<float> g;
      Binder<float> bind(g);
      // learned gates are sigmoid outputs
      int cat_probe = -1;
      (void)cat_probe;
      mfp.multi_receptive_fuse(bind, g.leaf(fr), g.leaf(fi), true);
    }
    {
      // pinned gates: zeroing every gate must zero the fused output when
      // projection bias is removed
      for (auto& p : store)
        if (p.name.find(".proj.bias") != std::string::npos) p.value.fill(0.0f);
      Tensor<float> zero_gates = Tensor<float>::zeros({2 * cfg.c / 4});
      mfp.set_se_mode(SeMode::pinned, zero_gates);
      Graph<float> g;
      Binder<float> bind(g);
      const Tensor<float> out = g.val(mfp.multi_receptive_fuse(bind, g.leaf(fr), g.leaf(fi), true));
      for (const auto& v : out.data) ok = ok && std::abs(v) < 1e-7f;
      mfp.set_se_mode(SeMode::learned);
    }
    results.push_back({"invariant/se_gates", ok, "zero-pinned gates kill the fused contribution"});
  }

  // zero-init equivalence on a tiny full model
  {
    Rng rng(37);
    ModelConfig cfg = tiny_config();
    UniRgbIrModel<float> pre(cfg, ArchMode::pretrain, rng);
    Rng rng2(38);
    UniRgbIrModel<float> full(cfg, ArchMode::full, rng2);
    std::map<std::string, Tensor<float>> state;
    for (auto& p : pre.params()) state[p.name] = p.value;
    full.adopt_pretrained(state);
    Tensor<float> rgb({1, cfg.img_h, cfg.img_w, 3}), ir({1, cfg.img_h, cfg.img_w, 1});
    Rng rng3(39);
    rng3.fill_uniform(rgb, 0.0, 1.0);
    rng3.fill_uniform(ir, 0.0, 1.0);
    const Tensor<float> a = pre.logits(rgb, {});
    const Tensor<float> b = full.logits(rgb, ir);
    const double diff = max_abs_diff(a, b);
    std::ostringstream os;
    os << "max abs logit diff " << diff;
    results.push_back({"invariant/zero_init_equivalence", diff < 1e-6, os.str()});
  }

  // checkpoint round trip is bitwise lossless
  {
    Rng rng(40);
    ModelConfig cfg = tiny_config();
    UniRgbIrModel<float> model(cfg, ArchMode::full, rng);
    RunConfig rc;
    rc.model = cfg;
    const std::string dir =
        (std::filesystem::temp_directory_path() / "unirgbir_ckpt_check").string();
    std::filesystem::remove_all(dir);
    save_checkpoint(model.params(), rc, "full", 7, dir);
    const CheckpointData ckpt = load_checkpoint(dir);
    bool ok = true;
    for (auto& p : model.params()) {
      auto it = ckpt.tensors.find(p.name);
      ok = ok && it != ckpt.tensors.end() && it->second.data == p.value.data;
    }
    std::filesystem::remove_all(dir);
    results.push_back({"invariant/checkpoint_roundtrip", ok, "all tensors byte-identical"});
  }

  return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  for (const auto& r : results)
    os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " — " << r.detail << "\n";
  return os.str();
}

}  // namespace unirgbir::checks
