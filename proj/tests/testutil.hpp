#pragma once

#include <cmath>
#include <vector>

#include "loopformer/model.hpp"
#include "loopformer/tensor.hpp"

namespace testutil {

using loopformer::Tensor;

inline bool all_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::fabs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.data() == b.data();
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Small model config for gradient work: dropout off so the forward pass is a
// deterministic function of the parameters.
inline loopformer::ModelConfig tiny_config(loopformer::ShareMode enc_mode, int enc_n, int enc_t,
                                           loopformer::ShareMode dec_mode, int dec_n, int dec_t,
                                           int vocab) {
  loopformer::ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.heads = 2;
  cfg.enc_mode = enc_mode;
  cfg.enc_layers = enc_n;
  cfg.enc_loops = enc_t;
  cfg.dec_mode = dec_mode;
  cfg.dec_layers = dec_n;
  cfg.dec_loops = dec_t;
  cfg.dropout = 0.0;
  cfg.vocab_size = vocab;
  return cfg;
}

}  // namespace testutil
