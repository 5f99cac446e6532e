#include "loopformer/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace loopformer {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + value + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  std::map<std::string, Setter> keys;

  auto int_key = [&](const std::string& name, int& field) {
    keys[name] = [&field](const std::string& k, const std::string& v) {
      field = static_cast<int>(parse_int(k, v));
    };
  };
  auto u64_key = [&](const std::string& name, uint64_t& field) {
    keys[name] = [&field](const std::string& k, const std::string& v) {
      field = static_cast<uint64_t>(parse_int(k, v));
    };
  };
  auto double_key = [&](const std::string& name, double& field) {
    keys[name] = [&field](const std::string& k, const std::string& v) { field = parse_double(k, v); };
  };
  auto bool_key = [&](const std::string& name, bool& field) {
    keys[name] = [&field](const std::string& k, const std::string& v) { field = parse_bool(k, v); };
  };
  auto string_key = [&](const std::string& name, std::string& field) {
    keys[name] = [&field](const std::string&, const std::string& v) { field = v; };
  };

  int_key("model.d_model", cfg.model.d_model);
  int_key("model.d_ff", cfg.model.d_ff);
  int_key("model.heads", cfg.model.heads);
  int_key("model.enc_layers", cfg.model.enc_layers);
  int_key("model.dec_layers", cfg.model.dec_layers);
  int_key("model.enc_loops", cfg.model.enc_loops);
  int_key("model.dec_loops", cfg.model.dec_loops);
  keys["model.enc_mode"] = [&cfg](const std::string& k, const std::string& v) {
    try {
      cfg.model.enc_mode = share_mode_from_name(v);
    } catch (const std::exception& e) {
      throw ConfigError("config: " + k + ": " + e.what());
    }
  };
  keys["model.dec_mode"] = [&cfg](const std::string& k, const std::string& v) {
    try {
      cfg.model.dec_mode = share_mode_from_name(v);
    } catch (const std::exception& e) {
      throw ConfigError("config: " + k + ": " + e.what());
    }
  };
  double_key("model.dropout", cfg.model.dropout);
  bool_key("model.reinjection", cfg.model.reinjection);
  keys["model.attn_scale"] = [&cfg](const std::string& k, const std::string& v) {
    if (v == "dk") cfg.model.attn_scale = AttnScale::InvSqrtHeadDim;
    else if (v == "dmodel") cfg.model.attn_scale = AttnScale::InvSqrtModelDim;
    else throw ConfigError("config: " + k + " expects dk or dmodel, got '" + v + "'");
  };
  int_key("model.vocab_size", cfg.model.vocab_size);

  u64_key("train.seed", cfg.train.seed);
  int_key("train.max_steps", cfg.train.max_steps);
  int_key("train.warmup_steps", cfg.train.warmup_steps);
  double_key("train.lr_scale", cfg.train.lr_scale);
  double_key("train.beta1", cfg.train.beta1);
  double_key("train.beta2", cfg.train.beta2);
  double_key("train.eps", cfg.train.eps);
  double_key("train.label_smoothing", cfg.train.label_smoothing);
  double_key("train.clip_norm", cfg.train.clip_norm);
  int_key("train.max_tokens", cfg.train.max_tokens);
  int_key("train.ckpt_interval", cfg.train.ckpt_interval);

  string_key("data.task", cfg.data.task);
  int_key("data.n_samples", cfg.data.n_samples);
  int_key("data.min_len", cfg.data.min_len);
  int_key("data.max_len", cfg.data.max_len);
  int_key("data.vocab_size", cfg.data.vocab_size);
  string_key("data.src", cfg.data.src);
  string_key("data.tgt", cfg.data.tgt);

  int_key("eval.beam", cfg.eval.beam);
  double_key("eval.alpha", cfg.eval.alpha);
  int_key("eval.max_len", cfg.eval.max_len);

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value': '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(key, value);
  }
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  out << "model.d_model = " << model.d_model << "\n";
  out << "model.d_ff = " << model.d_ff << "\n";
  out << "model.heads = " << model.heads << "\n";
  out << "model.enc_layers = " << model.enc_layers << "\n";
  out << "model.dec_layers = " << model.dec_layers << "\n";
  out << "model.enc_mode = " << share_mode_name(model.enc_mode) << "\n";
  out << "model.dec_mode = " << share_mode_name(model.dec_mode) << "\n";
  out << "model.enc_loops = " << model.enc_loops << "\n";
  out << "model.dec_loops = " << model.dec_loops << "\n";
  out << "model.dropout = " << fmt_double(model.dropout) << "\n";
  out << "model.reinjection = " << (model.reinjection ? "true" : "false") << "\n";
  out << "model.attn_scale = " << (model.attn_scale == AttnScale::InvSqrtHeadDim ? "dk" : "dmodel")
      << "\n";
  out << "model.vocab_size = " << model.vocab_size << "\n";
  out << "train.seed = " << train.seed << "\n";
  out << "train.max_steps = " << train.max_steps << "\n";
  out << "train.warmup_steps = " << train.warmup_steps << "\n";
  out << "train.lr_scale = " << fmt_double(train.lr_scale) << "\n";
  out << "train.beta1 = " << fmt_double(train.beta1) << "\n";
  out << "train.beta2 = " << fmt_double(train.beta2) << "\n";
  out << "train.eps = " << fmt_double(train.eps) << "\n";
  out << "train.label_smoothing = " << fmt_double(train.label_smoothing) << "\n";
  out << "train.clip_norm = " << fmt_double(train.clip_norm) << "\n";
  out << "train.max_tokens = " << train.max_tokens << "\n";
  out << "train.ckpt_interval = " << train.ckpt_interval << "\n";
  out << "data.task = " << data.task << "\n";
  out << "data.n_samples = " << data.n_samples << "\n";
  out << "data.min_len = " << data.min_len << "\n";
  out << "data.max_len = " << data.max_len << "\n";
  out << "data.vocab_size = " << data.vocab_size << "\n";
  out << "data.src = " << data.src << "\n";
  out << "data.tgt = " << data.tgt << "\n";
  out << "eval.beam = " << eval.beam << "\n";
  out << "eval.alpha = " << eval.alpha << "\n";
  out << "eval.max_len = " << eval.max_len << "\n";
  return out.str();
}

void RunConfig::validate() const {
  try {
    validate_model_config(model);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (train.max_steps < 1) throw ConfigError("config: train.max_steps must be positive");
  if (train.warmup_steps < 1) throw ConfigError("config: train.warmup_steps must be positive");
  if (train.lr_scale <= 0) throw ConfigError("config: train.lr_scale must be positive");
  if (train.beta1 < 0 || train.beta1 >= 1) throw ConfigError("config: train.beta1 must be in [0,1)");
  if (train.beta2 < 0 || train.beta2 >= 1) throw ConfigError("config: train.beta2 must be in [0,1)");
  if (train.eps <= 0) throw ConfigError("config: train.eps must be positive");
  if (train.label_smoothing < 0 || train.label_smoothing >= 1) {
    throw ConfigError("config: train.label_smoothing must be in [0,1)");
  }
  if (train.clip_norm < 0) throw ConfigError("config: train.clip_norm must be non-negative");
  if (train.max_tokens < 3) throw ConfigError("config: train.max_tokens must be at least 3");
  if (train.ckpt_interval < 0) throw ConfigError("config: train.ckpt_interval must be non-negative");
  if (data.src.empty() != data.tgt.empty()) {
    throw ConfigError("config: data.src and data.tgt must be set together");
  }
  if (data.src.empty()) {
    try {
      synthetic_task_from_name(data.task);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: data.task: ") + e.what());
    }
    if (data.n_samples < 1) throw ConfigError("config: data.n_samples must be positive");
    if (data.min_len < 1 || data.max_len < data.min_len) {
      throw ConfigError("config: data.min_len/data.max_len form an invalid range");
    }
    if (data.vocab_size <= Vocab::reserved) {
      throw ConfigError("config: data.vocab_size must exceed " + std::to_string(Vocab::reserved));
    }
  }
  if (eval.beam < 1) throw ConfigError("config: eval.beam must be at least 1");
  if (eval.max_len < 1) throw ConfigError("config: eval.max_len must be positive");
}

}  // namespace loopformer
