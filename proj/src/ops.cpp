#include "loopformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace loopformer {

namespace {

// Maps a flat index over `out_dims` to an element offset into an input whose
// shape right-aligns against out_dims (size-1 or missing dims broadcast).
// `tail_elems` is the element count of any trailing block the dims index into
// (1 for plain elementwise, m*k for matmul batch dims).
struct BcastIndex {
  std::vector<int> dims;
  std::vector<int64_t> strides;

  BcastIndex() = default;
  BcastIndex(const Shape& in, const Shape& out, int64_t tail_elems) {
    dims.assign(out.begin(), out.end());
    strides.assign(out.size(), 0);
    int64_t running = tail_elems;
    int ii = static_cast<int>(in.size()) - 1;
    for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d, --ii) {
      int in_dim = ii >= 0 ? in[static_cast<size_t>(ii)] : 1;
      strides[static_cast<size_t>(d)] = (in_dim == 1) ? 0 : running;
      if (ii >= 0) running *= in_dim;
    }
  }

  int64_t operator()(int64_t flat) const {
    int64_t off = 0;
    for (int d = static_cast<int>(dims.size()) - 1; d >= 0; --d) {
      int64_t dim = dims[static_cast<size_t>(d)];
      off += (flat % dim) * strides[static_cast<size_t>(d)];
      flat /= dim;
    }
    return off;
  }
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " are not broadcastable");
    }
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

bool want_grad(const Tensor& t) { return active_tape() != nullptr && t.requires_grad(); }

Tensor make_output(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data.assign(static_cast<size_t>(shape_numel(node->shape)), 0.0);
  node->requires_grad = requires_grad;
  return Tensor::wrap(std::move(node));
}

using NodePtr = std::shared_ptr<TensorNode>;

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, int kind) {
  // kind: 0 add, 1 sub, 2 mul
  const bool same_shape = a.shape() == b.shape();
  Shape out_shape = same_shape ? a.shape() : broadcast_shape(a.shape(), b.shape(), name);
  bool rg = want_grad(a) || want_grad(b);
  Tensor out = make_output(out_shape, rg);
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  const int64_t n = out.numel();
  BcastIndex ma, mb;
  if (same_shape) {
    switch (kind) {
      case 0: for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i]; break;
      case 1: for (int64_t i = 0; i < n; ++i) od[i] = ad[i] - bd[i]; break;
      default: for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i]; break;
    }
  } else {
    ma = BcastIndex(a.shape(), out_shape, 1);
    mb = BcastIndex(b.shape(), out_shape, 1);
    for (int64_t i = 0; i < n; ++i) {
      double x = ad[static_cast<size_t>(ma(i))];
      double y = bd[static_cast<size_t>(mb(i))];
      od[static_cast<size_t>(i)] = kind == 0 ? x + y : (kind == 1 ? x - y : x * y);
    }
  }
  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on, ma, mb, n, kind, same_shape]() {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = ensure_grad(*an);
        if (same_shape) {
          if (kind == 2) {
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[static_cast<size_t>(i)];
          } else {
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        } else {
          for (int64_t i = 0; i < n; ++i) {
            double gi = g[static_cast<size_t>(i)];
            if (kind == 2) gi *= bn->data[static_cast<size_t>(mb(i))];
            ga[static_cast<size_t>(ma(i))] += gi;
          }
        }
      }
      if (bn->requires_grad) {
        auto& gb = ensure_grad(*bn);
        if (same_shape) {
          if (kind == 2) {
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * an->data[static_cast<size_t>(i)];
          } else if (kind == 1) {
            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
          } else {
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
          }
        } else {
          for (int64_t i = 0; i < n; ++i) {
            double gi = g[static_cast<size_t>(i)];
            if (kind == 1) gi = -gi;
            if (kind == 2) gi *= an->data[static_cast<size_t>(ma(i))];
            gb[static_cast<size_t>(mb(i))] += gi;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "add", 0); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "sub", 1); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "mul", 2); }

Tensor scale(const Tensor& a, double s) {
  bool rg = want_grad(a);
  Tensor out = make_output(a.shape(), rg);
  const auto& ad = a.data();
  auto& od = out.data();
  for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * s;
  if (rg) {
    NodePtr an = a.node(), on = out.node();
    active_tape()->record([an, on, s]() {
      if (on->grad.empty() || !an->requires_grad) return;
      auto& ga = ensure_grad(*an);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * s;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int m = a.dim(a.rank() - 2);
  const int k = a.dim(a.rank() - 1);
  const int k2 = b.dim(b.rank() - 2);
  const int n = b.dim(b.rank() - 1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  }
  Shape abat(a.shape().begin(), a.shape().end() - 2);
  Shape bbat(b.shape().begin(), b.shape().end() - 2);
  Shape obat = broadcast_shape(abat, bbat, "matmul");
  Shape out_shape = obat;
  out_shape.push_back(m);
  out_shape.push_back(n);

  bool rg = want_grad(a) || want_grad(b);
  Tensor out = make_output(out_shape, rg);

  BcastIndex ma(abat, obat, static_cast<int64_t>(m) * k);
  BcastIndex mb(bbat, obat, static_cast<int64_t>(k) * n);
  const int64_t batches = shape_numel(obat);

  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (int64_t bi = 0; bi < batches; ++bi) {
    const double* Ab = A + ma(bi);
    const double* Bb = B + mb(bi);
    double* Cb = C + bi * m * n;
    for (int i = 0; i < m; ++i) {
      const double* Arow = Ab + static_cast<int64_t>(i) * k;
      double* Crow = Cb + static_cast<int64_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double aik = Arow[kk];
        const double* Brow = Bb + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }

  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on, ma, mb, batches, m, k, n]() {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      if (an->requires_grad) {
        double* dA = ensure_grad(*an).data();
        const double* B = bn->data.data();
        for (int64_t bi = 0; bi < batches; ++bi) {
          double* dAb = dA + ma(bi);
          const double* Bb = B + mb(bi);
          const double* Gb = G + bi * m * n;
          for (int i = 0; i < m; ++i) {
            for (int kk = 0; kk < k; ++kk) {
              const double* Grow = Gb + static_cast<int64_t>(i) * n;
              const double* Brow = Bb + static_cast<int64_t>(kk) * n;
              double s = 0.0;
              for (int j = 0; j < n; ++j) s += Grow[j] * Brow[j];
              dAb[static_cast<int64_t>(i) * k + kk] += s;
            }
          }
        }
      }
      if (bn->requires_grad) {
        double* dB = ensure_grad(*bn).data();
        const double* A = an->data.data();
        for (int64_t bi = 0; bi < batches; ++bi) {
          const double* Ab = A + ma(bi);
          double* dBb = dB + mb(bi);
          const double* Gb = G + bi * m * n;
          for (int i = 0; i < m; ++i) {
            const double* Arow = Ab + static_cast<int64_t>(i) * k;
            const double* Grow = Gb + static_cast<int64_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
              const double aik = Arow[kk];
              double* dBrow = dBb + static_cast<int64_t>(kk) * n;
              for (int j = 0; j < n; ++j) dBrow[j] += aik * Grow[j];
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int d = static_cast<int>(s.size()) - 2; d >= 0; --d) {
    st[static_cast<size_t>(d)] = st[static_cast<size_t>(d) + 1] * s[static_cast<size_t>(d) + 1];
  }
  return st;
}

}  // namespace

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw std::invalid_argument("transpose: permutation rank mismatch for " + shape_str(x.shape()));
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) {
      throw std::invalid_argument("transpose: invalid permutation");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) out_shape[static_cast<size_t>(d)] = x.dim(perm[static_cast<size_t>(d)]);

  bool rg = want_grad(x);
  Tensor out = make_output(out_shape, rg);
  auto in_strides = row_major_strides(x.shape());
  // stride of output dim d walks the input at stride of dim perm[d]
  std::vector<int64_t> walk(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) walk[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];

  const int64_t n = out.numel();
  // odometer walk over output coordinates, keeping the strided input offset
  // in step so there is no per-element div/mod
  auto for_each_pair = [out_shape, walk, r, n](auto&& fn) {
    std::vector<int64_t> coord(static_cast<size_t>(r), 0);
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
      fn(static_cast<size_t>(i), static_cast<size_t>(off));
      for (int d = r - 1; d >= 0; --d) {
        off += walk[static_cast<size_t>(d)];
        if (++coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
        off -= walk[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
        coord[static_cast<size_t>(d)] = 0;
      }
    }
  };
  {
    const double* xd = x.data().data();
    double* od = out.data().data();
    for_each_pair([&](size_t i, size_t off) { od[i] = xd[off]; });
  }

  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    active_tape()->record([xn, on, for_each_pair]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      double* gx = ensure_grad(*xn).data();
      const double* g = on->grad.data();
      for_each_pair([&](size_t i, size_t off) { gx[off] += g[i]; });
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  std::vector<int> perm(static_cast<size_t>(x.rank()));
  for (int d = 0; d < x.rank(); ++d) perm[static_cast<size_t>(d)] = d;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return transpose(x, perm);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                                " changes element count");
  }
  bool rg = want_grad(x);
  Tensor out = make_output(new_shape, rg);
  out.data() = x.data();
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    active_tape()->record([xn, on]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = ensure_grad(*xn);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("softmax: axis out of range for " + shape_str(x.shape()));
  }
  int64_t outer = 1, inner = 1;
  const int n = x.dim(axis);
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= x.dim(d);

  bool rg = want_grad(x);
  Tensor out = make_output(x.shape(), rg);
  const auto& xd = x.data();
  auto& od = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = xd[static_cast<size_t>(base)];
      for (int i = 1; i < n; ++i) mx = std::max(mx, xd[static_cast<size_t>(base + i * inner)]);
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        double e = std::exp(xd[static_cast<size_t>(base + i * inner)] - mx);
        od[static_cast<size_t>(base + i * inner)] = e;
        s += e;
      }
      const double invs = 1.0 / s;
      for (int i = 0; i < n; ++i) od[static_cast<size_t>(base + i * inner)] *= invs;
    }
  }

  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    active_tape()->record([xn, on, outer, inner, n]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = ensure_grad(*xn);
      const auto& y = on->data;
      const auto& gy = on->grad;
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (int i = 0; i < n; ++i) {
            size_t idx = static_cast<size_t>(base + i * inner);
            dot += gy[idx] * y[idx];
          }
          for (int i = 0; i < n; ++i) {
            size_t idx = static_cast<size_t>(base + i * inner);
            gx[idx] += y[idx] * (gy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0) throw std::invalid_argument("layer_norm: eps must be positive");
  const int r = x.rank();
  if (r < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const int d = x.dim(r - 1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                                shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const int64_t lanes = x.numel() / d;
  bool rg = want_grad(x) || want_grad(gain) || want_grad(bias);
  Tensor out = make_output(x.shape(), rg);

  auto mean_v = std::make_shared<std::vector<double>>(static_cast<size_t>(lanes));
  auto invstd_v = std::make_shared<std::vector<double>>(static_cast<size_t>(lanes));

  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  auto& od = out.data();
  for (int64_t l = 0; l < lanes; ++l) {
    const int64_t base = l * d;
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += xd[static_cast<size_t>(base + i)];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      double c = xd[static_cast<size_t>(base + i)] - mu;
      var += c * c;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    (*mean_v)[static_cast<size_t>(l)] = mu;
    (*invstd_v)[static_cast<size_t>(l)] = inv;
    for (int i = 0; i < d; ++i) {
      double xhat = (xd[static_cast<size_t>(base + i)] - mu) * inv;
      od[static_cast<size_t>(base + i)] = xhat * gd[static_cast<size_t>(i)] + bd[static_cast<size_t>(i)];
    }
  }

  if (rg) {
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    active_tape()->record([xn, gn, bn, on, mean_v, invstd_v, lanes, d]() {
      if (on->grad.empty()) return;
      const auto& gy = on->grad;
      const auto& xd2 = xn->data;
      const auto& gd2 = gn->data;
      std::vector<double>* ggain = gn->requires_grad ? &ensure_grad(*gn) : nullptr;
      std::vector<double>* gbias = bn->requires_grad ? &ensure_grad(*bn) : nullptr;
      std::vector<double>* gx = xn->requires_grad ? &ensure_grad(*xn) : nullptr;
      for (int64_t l = 0; l < lanes; ++l) {
        const int64_t base = l * d;
        const double mu = (*mean_v)[static_cast<size_t>(l)];
        const double inv = (*invstd_v)[static_cast<size_t>(l)];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
          size_t idx = static_cast<size_t>(base + i);
          double xhat = (xd2[idx] - mu) * inv;
          double dy = gy[idx];
          if (ggain) (*ggain)[static_cast<size_t>(i)] += dy * xhat;
          if (gbias) (*gbias)[static_cast<size_t>(i)] += dy;
          double dxhat = dy * gd2[static_cast<size_t>(i)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        if (gx) {
          const double m1 = sum_dxhat / d;
          const double m2 = sum_dxhat_xhat / d;
          for (int i = 0; i < d; ++i) {
            size_t idx = static_cast<size_t>(base + i);
            double xhat = (xd2[idx] - mu) * inv;
            double dxhat = gy[idx] * gd2[static_cast<size_t>(i)];
            (*gx)[idx] += inv * (dxhat - m1 - xhat * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  bool rg = want_grad(x);
  Tensor out = make_output(x.shape(), rg);
  const auto& xd = x.data();
  auto& od = out.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    active_tape()->record([xn, on]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = ensure_grad(*xn);
      for (size_t i = 0; i < gx.size(); ++i) {
        if (xn->data[i] > 0.0) gx[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng* rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw std::invalid_argument("dropout: rng required in training mode");

  const double keep = 1.0 - p;
  const double inv_keep = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(x.data().size());
  for (double& m : *mask) m = (rng->u01() < keep) ? inv_keep : 0.0;

  bool rg = want_grad(x);
  Tensor out = make_output(x.shape(), rg);
  const auto& xd = x.data();
  auto& od = out.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] * (*mask)[i];
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    active_tape()->record([xn, on, mask]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = ensure_grad(*xn);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, const Shape& id_shape) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be [V,D], got " + shape_str(table.shape()));
  }
  if (shape_numel(id_shape) != static_cast<int64_t>(ids.size())) {
    throw std::invalid_argument("embedding_lookup: id count does not match shape " + shape_str(id_shape));
  }
  const int v = table.dim(0);
  const int d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding_lookup: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(v));
    }
  }
  Shape out_shape = id_shape;
  out_shape.push_back(d);
  bool rg = want_grad(table);
  Tensor out = make_output(out_shape, rg);
  const auto& td = table.data();
  auto& od = out.data();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(od.data() + i * static_cast<size_t>(d),
                td.data() + static_cast<size_t>(ids[i]) * static_cast<size_t>(d),
                sizeof(double) * static_cast<size_t>(d));
  }
  if (rg) {
    NodePtr tn = table.node(), on = out.node();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    active_tape()->record([tn, on, ids_copy, d]() {
      if (on->grad.empty() || !tn->requires_grad) return;
      auto& gt = ensure_grad(*tn);
      for (size_t i = 0; i < ids_copy->size(); ++i) {
        const size_t row = static_cast<size_t>((*ids_copy)[i]) * static_cast<size_t>(d);
        const size_t src = i * static_cast<size_t>(d);
        for (int j = 0; j < d; ++j) gt[row + static_cast<size_t>(j)] += on->grad[src + static_cast<size_t>(j)];
      }
    });
  }
  return out;
}

Tensor label_smoothed_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                                    double eps_ls, int pad_id) {
  if (logits.rank() < 2) {
    throw std::invalid_argument("label_smoothed_cross_entropy: logits must be [...,V], got " +
                                shape_str(logits.shape()));
  }
  const int v = logits.dim(logits.rank() - 1);
  const int64_t positions = logits.numel() / v;
  if (static_cast<int64_t>(targets.size()) != positions) {
    throw std::invalid_argument("label_smoothed_cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(positions) + " positions");
  }
  int64_t live = 0;
  for (int t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || t >= v) {
      throw std::out_of_range("label_smoothed_cross_entropy: target id " + std::to_string(t) +
                              " outside vocabulary of size " + std::to_string(v));
    }
    ++live;
  }
  if (live == 0) throw std::runtime_error("label_smoothed_cross_entropy: all targets are padding");

  const auto& xd = logits.data();
  double total = 0.0;
  for (int64_t p = 0; p < positions; ++p) {
    if (targets[static_cast<size_t>(p)] == pad_id) continue;
    const int64_t base = p * v;
    double mx = xd[static_cast<size_t>(base)];
    for (int i = 1; i < v; ++i) mx = std::max(mx, xd[static_cast<size_t>(base + i)]);
    double lse = 0.0;
    for (int i = 0; i < v; ++i) lse += std::exp(xd[static_cast<size_t>(base + i)] - mx);
    lse = mx + std::log(lse);
    // -sum_v q_v log p_v with q = eps/V + (1-eps) on the true class
    double sum_logp = 0.0;
    for (int i = 0; i < v; ++i) sum_logp += xd[static_cast<size_t>(base + i)] - lse;
    const double logp_true = xd[static_cast<size_t>(base + targets[static_cast<size_t>(p)])] - lse;
    total += -((1.0 - eps_ls) * logp_true + (eps_ls / v) * sum_logp);
  }
  const double loss_value = total / static_cast<double>(live);

  bool rg = want_grad(logits);
  Tensor out = make_output({1}, rg);
  out.data()[0] = loss_value;
  if (rg) {
    NodePtr xn = logits.node(), on = out.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    active_tape()->record([xn, on, tgt, v, positions, live, eps_ls, pad_id]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      const double gout = on->grad[0] / static_cast<double>(live);
      auto& gx = ensure_grad(*xn);
      const auto& xd2 = xn->data;
      std::vector<double> prob(static_cast<size_t>(v));
      for (int64_t p = 0; p < positions; ++p) {
        const int t = (*tgt)[static_cast<size_t>(p)];
        if (t == pad_id) continue;
        const int64_t base = p * v;
        double mx = xd2[static_cast<size_t>(base)];
        for (int i = 1; i < v; ++i) mx = std::max(mx, xd2[static_cast<size_t>(base + i)]);
        double s = 0.0;
        for (int i = 0; i < v; ++i) {
          prob[static_cast<size_t>(i)] = std::exp(xd2[static_cast<size_t>(base + i)] - mx);
          s += prob[static_cast<size_t>(i)];
        }
        const double invs = 1.0 / s;
        for (int i = 0; i < v; ++i) {
          double q = eps_ls / v + (i == t ? 1.0 - eps_ls : 0.0);
          gx[static_cast<size_t>(base + i)] += gout * (prob[static_cast<size_t>(i)] * invs - q);
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  bool rg = want_grad(x);
  Tensor out = make_output({1}, rg);
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.data()[0] = s;
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    active_tape()->record([xn, on]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      auto& gx = ensure_grad(*xn);
      const double g = on->grad[0];
      for (double& gi : gx) gi += g;
    });
  }
  return out;
}

}  // namespace loopformer
