#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "loopformer/model.hpp"

namespace loopformer {

// Bad or missing configuration; the CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  uint64_t seed = 1;
  int max_steps = 1000;
  int warmup_steps = 400;
  double lr_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double label_smoothing = 0.1;
  double clip_norm = 0.0;  // 0 disables clipping
  int max_tokens = 1024;
  int ckpt_interval = 0;  // 0 saves only the final checkpoint
};

struct DataConfig {
  std::string task = "copy";
  int n_samples = 2000;
  int min_len = 3;
  int max_len = 8;
  int vocab_size = 16;
  std::string src;  // when set (with tgt), files are loaded instead of generated
  std::string tgt;
};

struct EvalConfig {
  int beam = 4;
  double alpha = 0.6;
  int max_len = 32;
};

// Flat "key = value" config with '#' comments and dotted section prefixes
// (model.d_model, train.seed, ...). Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::string& path);

  // Every key with its effective value, in a fixed order; parses back to an
  // identical config.
  std::string resolved_text() const;

  // Validates every field against the preconditions of the module it feeds.
  void validate() const;
};

}  // namespace loopformer
