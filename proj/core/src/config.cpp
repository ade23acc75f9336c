#include "unirgbir/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace unirgbir {

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "deformable") return AttentionKind::deformable;
  if (s == "global") return AttentionKind::global;
  if (s == "pale") throw std::invalid_argument("attention 'pale' is reserved, unimplemented");
  throw std::invalid_argument("unknown attention kind: " + s);
}

std::string to_string(AttentionKind k) {
  return k == AttentionKind::deformable ? "deformable" : "global";
}

void ModelConfig::validate() const {
  if (d <= 0 || c <= 0 || vit_blocks <= 0 || n_stages <= 0) throw std::invalid_argument("config: sizes must be positive");
  if (c % 4 != 0) throw std::invalid_argument("config: c must be divisible by 4 (four-way channel split)");
  if (vit_blocks % n_stages != 0) throw std::invalid_argument("config: vit_blocks must divide evenly into n_stages");
  if (d % vit_heads != 0) throw std::invalid_argument("config: d must be divisible by vit_heads");
  if (d % deform_heads != 0) throw std::invalid_argument("config: d must be divisible by deform_heads");
  std::set<int> seen;
  for (int s : sfi_stages) {
    if (s < 1 || s > n_stages) throw std::invalid_argument("config: sfi_stages must be a subset of 1..n_stages");
    if (!seen.insert(s).second) throw std::invalid_argument("config: duplicate sfi stage");
  }
  if (img_h % 32 != 0 || img_w % 32 != 0) throw std::invalid_argument("config: img dims must be divisible by 32");
  if (img_h % patch_size != 0 || img_w % patch_size != 0)
    throw std::invalid_argument("config: img dims must be divisible by patch_size");
  if (se_reduction <= 0) throw std::invalid_argument("config: se_reduction must be positive");
  if (deform_points <= 0) throw std::invalid_argument("config: deform_points must be positive");
  if (head_classes <= 0) throw std::invalid_argument("config: head_classes must be positive");
}

ModelConfig ModelConfig::vit_base_dry_run() {
  ModelConfig cfg;
  cfg.d = 768;
  cfg.c = 192;
  cfg.vit_blocks = 12;
  cfg.vit_heads = 12;
  cfg.img_h = 224;
  cfg.img_w = 224;
  return cfg;
}

std::vector<int> parse_stage_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoi(tok));
  }
  return out;
}

std::string stage_list_to_string(const std::vector<int>& stages) {
  std::string s;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(stages[i]);
  }
  return s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "d") cfg.model.d = std::stoi(val);
      else if (key == "c") cfg.model.c = std::stoi(val);
      else if (key == "vit_blocks") cfg.model.vit_blocks = std::stoi(val);
      else if (key == "vit_heads") cfg.model.vit_heads = std::stoi(val);
      else if (key == "n_stages") cfg.model.n_stages = std::stoi(val);
      else if (key == "sfi_stages") cfg.model.sfi_stages = parse_stage_list(val);
      else if (key == "attention") cfg.model.attention = parse_attention_kind(val);
      else if (key == "deform_points") cfg.model.deform_points = std::stoi(val);
      else if (key == "deform_heads") cfg.model.deform_heads = std::stoi(val);
      else if (key == "patch_size") cfg.model.patch_size = std::stoi(val);
      else if (key == "se_reduction") cfg.model.se_reduction = std::stoi(val);
      else if (key == "head_classes") cfg.model.head_classes = std::stoi(val);
      else if (key == "injection_scale_init") cfg.model.injection_scale_init = std::stof(val);
      else if (key == "img_h") cfg.model.img_h = std::stoi(val);
      else if (key == "img_w") cfg.model.img_w = std::stoi(val);
      else if (key == "lr") cfg.train.lr = std::stod(val);
      else if (key == "weight_decay") cfg.train.weight_decay = std::stod(val);
      else if (key == "beta1") cfg.train.beta1 = std::stod(val);
      else if (key == "beta2") cfg.train.beta2 = std::stod(val);
      else if (key == "adam_eps") cfg.train.adam_eps = std::stod(val);
      else if (key == "batch_size") cfg.train.batch_size = std::stoi(val);
      else if (key == "steps") cfg.train.steps = std::stoi(val);
      else if (key == "warmup_frac") cfg.train.warmup_frac = std::stod(val);
      else if (key == "eval_interval") cfg.train.eval_interval = std::stoi(val);
      else if (key == "seed") cfg.train.seed = std::stoull(val);
      else if (key == "pretrain_steps") cfg.train.pretrain_steps = std::stoi(val);
      else if (key == "pretrain_lr") cfg.train.pretrain_lr = std::stod(val);
      else throw std::invalid_argument("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::map<std::string, std::string> to_key_values(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  auto put = [&](const std::string& k, const std::string& v) { kv[k] = v; };
  put("d", std::to_string(cfg.model.d));
  put("c", std::to_string(cfg.model.c));
  put("vit_blocks", std::to_string(cfg.model.vit_blocks));
  put("vit_heads", std::to_string(cfg.model.vit_heads));
  put("n_stages", std::to_string(cfg.model.n_stages));
  put("sfi_stages", stage_list_to_string(cfg.model.sfi_stages));
  put("attention", to_string(cfg.model.attention));
  put("deform_points", std::to_string(cfg.model.deform_points));
  put("deform_heads", std::to_string(cfg.model.deform_heads));
  put("patch_size", std::to_string(cfg.model.patch_size));
  put("se_reduction", std::to_string(cfg.model.se_reduction));
  put("head_classes", std::to_string(cfg.model.head_classes));
  {
    std::ostringstream os;
    os << cfg.model.injection_scale_init;
    put("injection_scale_init", os.str());
  }
  put("img_h", std::to_string(cfg.model.img_h));
  put("img_w", std::to_string(cfg.model.img_w));
  auto putd = [&](const std::string& k, double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    kv[k] = os.str();
  };
  putd("lr", cfg.train.lr);
  putd("weight_decay", cfg.train.weight_decay);
  putd("beta1", cfg.train.beta1);
  putd("beta2", cfg.train.beta2);
  putd("adam_eps", cfg.train.adam_eps);
  put("batch_size", std::to_string(cfg.train.batch_size));
  put("steps", std::to_string(cfg.train.steps));
  putd("warmup_frac", cfg.train.warmup_frac);
  put("eval_interval", std::to_string(cfg.train.eval_interval));
  put("seed", std::to_string(cfg.train.seed));
  put("pretrain_steps", std::to_string(cfg.train.pretrain_steps));
  putd("pretrain_lr", cfg.train.pretrain_lr);
  return kv;
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << serialize_run_config(cfg);
}

}  // namespace unirgbir
