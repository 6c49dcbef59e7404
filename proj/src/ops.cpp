#include "devlbert/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace devlbert {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

void require_2d(const Tensor& x, const char* op) {
  require(x.dim() == 2, std::string(op) + ": expected 2-d tensor, got " + shape_to_string(x.shape()));
}

// Decomposes a shape around `axis` into (outer, n, inner) so that the element
// (o, k, i) of a line sits at flat offset (o * n + k) * inner + i.
struct AxisSplit {
  int outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_to_string(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.size(0), k = a.size(1), k2 = b.size(0), n = b.size(1);
  require(k == k2, "matmul: inner dimensions disagree: " + shape_to_string(a.shape()) + " x " +
                       shape_to_string(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    ConstMap A(a.data(), m, k), B(b.data(), k, n);
    MutMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto pa = a.node(), pb = b.node();
  return make_op_result({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](TensorNode& o) {
    ConstMap G(o.grad.data(), m, n);
    if (pa->requires_grad) {
      pa->ensure_grad();
      ConstMap B(pb->data.data(), k, n);
      MutMap GA(pa->grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      ConstMap A(pa->data.data(), m, k);
      MutMap GB(pb->grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const int m = x.size(0), n = x.size(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = x.data()[i * n + j];
  auto px = x.node();
  return make_op_result({n, m}, std::move(out), {x}, [px, m, n](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) px->grad[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j) * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  std::vector<double> out(a.buffer());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& o) {
    for (const auto& p : {pa, pb}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
    }
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_rowwise");
  require(bias.dim() == 1 && bias.size(0) == x.size(1),
          "add_rowwise: bias " + shape_to_string(bias.shape()) + " does not match columns of " +
              shape_to_string(x.shape()));
  const int n = x.size(0), d = x.size(1);
  std::vector<double> out(x.buffer());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] += bias.data()[j];
  auto px = x.node(), pb = bias.node();
  return make_op_result(x.shape(), std::move(out), {x, bias}, [px, pb, n, d](TensorNode& o) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pb->grad[static_cast<std::size_t>(j)] += o.grad[static_cast<std::size_t>(i) * d + j];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  std::vector<double> out(a.buffer());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.buffer());
  for (double& v : out) v *= c;
  auto px = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, [px, c](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += c * o.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.buffer());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto px = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, [px](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (px->data[i] > 0.0) px->grad[i] += o.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<double> out(x.buffer());
  for (double& v : out) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  auto px = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, [px](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = px->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      px->grad[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.buffer());
  for (int o = 0; o < s.outer; ++o) {
    for (int i = 0; i < s.inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o) * s.n * s.inner + i;
      double mx = -HUGE_VAL;
      for (int k = 0; k < s.n; ++k) mx = std::max(mx, out[base + static_cast<std::size_t>(k) * s.inner]);
      if (!std::isfinite(mx)) throw NumericError("softmax: non-finite input");
      double z = 0.0;
      for (int k = 0; k < s.n; ++k) {
        double& v = out[base + static_cast<std::size_t>(k) * s.inner];
        v = std::exp(v - mx);
        z += v;
      }
      for (int k = 0; k < s.n; ++k) out[base + static_cast<std::size_t>(k) * s.inner] /= z;
    }
  }
  auto px = x.node();
  return make_op_result(x.shape(), std::move(out), {x}, [px, s](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int ou = 0; ou < s.outer; ++ou) {
      for (int i = 0; i < s.inner; ++i) {
        const std::size_t base = static_cast<std::size_t>(ou) * s.n * s.inner + i;
        double dot = 0.0;
        for (int k = 0; k < s.n; ++k) {
          const std::size_t idx = base + static_cast<std::size_t>(k) * s.inner;
          dot += o.grad[idx] * o.data[idx];
        }
        for (int k = 0; k < s.n; ++k) {
          const std::size_t idx = base + static_cast<std::size_t>(k) * s.inner;
          px->grad[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(x.dim() >= 1, "layer_norm: scalar input");
  const int d = x.shape().back();
  require(gain.dim() == 1 && gain.size(0) == d && bias.dim() == 1 && bias.size(0) == d,
          "layer_norm: gain/bias " + shape_to_string(gain.shape()) + "/" + shape_to_string(bias.shape()) +
              " do not match last dimension of " + shape_to_string(x.shape()));
  const int rows = x.numel() / d;
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  std::vector<double> xhat(out.size());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* row = x.data() + static_cast<std::size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = inv;
    for (int j = 0; j < d; ++j) {
      const std::size_t idx = static_cast<std::size_t>(r) * d + j;
      xhat[idx] = (row[j] - mean) * inv;
      out[idx] = gain.data()[j] * xhat[idx] + bias.data()[j];
    }
  }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return make_op_result(x.shape(), std::move(out), {x, gain, bias},
                        [px, pg, pb, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& o) {
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * d;
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (int j = 0; j < d; ++j) pg->grad[static_cast<std::size_t>(j)] += o.grad[base + j] * xhat[base + j];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int j = 0; j < d; ++j) pb->grad[static_cast<std::size_t>(j)] += o.grad[base + j];
      }
      if (px->requires_grad) {
        px->ensure_grad();
        double mean_gh = 0.0, mean_ghx = 0.0;
        for (int j = 0; j < d; ++j) {
          const double gh = o.grad[base + j] * pg->data[static_cast<std::size_t>(j)];
          mean_gh += gh;
          mean_ghx += gh * xhat[base + j];
        }
        mean_gh /= d;
        mean_ghx /= d;
        for (int j = 0; j < d; ++j) {
          const double gh = o.grad[base + j] * pg->data[static_cast<std::size_t>(j)];
          px->grad[base + j] += inv_std[static_cast<std::size_t>(r)] * (gh - mean_gh - xhat[base + j] * mean_ghx);
        }
      }
    }
  });
}

Tensor cross_entropy_soft(const Tensor& logits, const Tensor& targets) {
  require_2d(logits, "cross_entropy_soft");
  require(logits.shape() == targets.shape(), "cross_entropy_soft: logits " + shape_to_string(logits.shape()) +
                                                 " vs targets " + shape_to_string(targets.shape()));
  const int n = logits.size(0), c = logits.size(1);
  for (int r = 0; r < n; ++r) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      const double t = targets.data()[static_cast<std::size_t>(r) * c + j];
      if (t < -1e-12) throw ValidationError("cross_entropy_soft: negative target entry in row " + std::to_string(r));
      s += t;
    }
    if (std::fabs(s - 1.0) > 1e-6) {
      throw ValidationError("cross_entropy_soft: target row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
  // log-softmax in place; never evaluates log(0)
  std::vector<double> logp(logits.buffer());
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * c;
    double mx = -HUGE_VAL;
    for (int j = 0; j < c; ++j) mx = std::max(mx, logp[base + j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logp[base + j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) {
      logp[base + j] -= lse;
      loss -= targets.data()[base + j] * logp[base + j];
    }
  }
  loss /= n;
  auto pl = logits.node(), pt = targets.node();
  return make_op_result({1}, {loss}, {logits, targets}, [pl, pt, n, c, logp = std::move(logp)](TensorNode& o) {
    const double g = o.grad[0] / n;
    if (pl->requires_grad) {
      pl->ensure_grad();
      for (int r = 0; r < n; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * c;
        for (int j = 0; j < c; ++j) pl->grad[base + j] += g * (std::exp(logp[base + j]) - pt->data[base + j]);
      }
    }
    if (pt->requires_grad) {
      pt->ensure_grad();
      for (std::size_t i = 0; i < pt->grad.size(); ++i) pt->grad[i] -= g * logp[i];
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& labels) {
  require(logits.shape() == labels.shape(), "bce_with_logits: logits " + shape_to_string(logits.shape()) +
                                                " vs labels " + shape_to_string(labels.shape()));
  const int n = logits.numel();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double l = logits.data()[i], y = labels.data()[i];
    loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::fabs(l)));
  }
  loss /= n;
  auto pl = logits.node(), py = labels.node();
  return make_op_result({1}, {loss}, {logits, labels}, [pl, py, n](TensorNode& o) {
    const double g = o.grad[0] / n;
    if (pl->requires_grad) {
      pl->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-pl->data[static_cast<std::size_t>(i)]));
        pl->grad[static_cast<std::size_t>(i)] += g * (sig - py->data[static_cast<std::size_t>(i)]);
      }
    }
    if (py->requires_grad) {
      py->ensure_grad();
      for (int i = 0; i < n; ++i) py->grad[static_cast<std::size_t>(i)] -= g * pl->data[static_cast<std::size_t>(i)];
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& ids) {
  require_2d(x, "gather_rows");
  const int n = x.size(0), d = x.size(1);
  for (int id : ids) {
    if (id < 0 || id >= n) {
      throw ValidationError("gather_rows: row id " + std::to_string(id) + " out of range [0," + std::to_string(n) + ")");
    }
  }
  const int m = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(m) * d);
  for (int i = 0; i < m; ++i) {
    std::copy_n(x.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d, d,
                out.begin() + static_cast<std::size_t>(i) * d);
  }
  auto px = x.node();
  return make_op_result({m, d}, std::move(out), {x}, [px, ids, d](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t src = i * d, dst = static_cast<std::size_t>(ids[i]) * d;
      for (int j = 0; j < d; ++j) px->grad[dst + j] += o.grad[src + j];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) { return gather_rows(table, ids); }

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.dim() == 1 && b.dim() == 1 && axis == 0) {
    std::vector<double> out(a.buffer());
    out.insert(out.end(), b.buffer().begin(), b.buffer().end());
    const int na = a.size(0);
    auto pa = a.node(), pb = b.node();
    return make_op_result({a.size(0) + b.size(0)}, std::move(out), {a, b}, [pa, pb, na](TensorNode& o) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int i = 0; i < na; ++i) pa->grad[static_cast<std::size_t>(i)] += o.grad[static_cast<std::size_t>(i)];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < pb->grad.size(); ++i) pb->grad[i] += o.grad[static_cast<std::size_t>(na) + i];
      }
    });
  }
  require_2d(a, "concat");
  require_2d(b, "concat");
  if (axis == 0) {
    require(a.size(1) == b.size(1), "concat axis 0: column mismatch " + shape_to_string(a.shape()) + " vs " +
                                        shape_to_string(b.shape()));
    std::vector<double> out(a.buffer());
    out.insert(out.end(), b.buffer().begin(), b.buffer().end());
    const std::size_t na = a.buffer().size();
    auto pa = a.node(), pb = b.node();
    return make_op_result({a.size(0) + b.size(0), a.size(1)}, std::move(out), {a, b}, [pa, pb, na](TensorNode& o) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < na; ++i) pa->grad[i] += o.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < pb->grad.size(); ++i) pb->grad[i] += o.grad[na + i];
      }
    });
  }
  require(axis == 1, "concat: axis must be 0 or 1");
  require(a.size(0) == b.size(0),
          "concat axis 1: row mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  const int n = a.size(0), da = a.size(1), db = b.size(1);
  std::vector<double> out(static_cast<std::size_t>(n) * (da + db));
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data() + static_cast<std::size_t>(i) * da, da, out.begin() + static_cast<std::size_t>(i) * (da + db));
    std::copy_n(b.data() + static_cast<std::size_t>(i) * db, db,
                out.begin() + static_cast<std::size_t>(i) * (da + db) + da);
  }
  auto pa = a.node(), pb = b.node();
  return make_op_result({n, da + db}, std::move(out), {a, b}, [pa, pb, n, da, db](TensorNode& o) {
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * (da + db);
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int j = 0; j < da; ++j) pa->grad[static_cast<std::size_t>(i) * da + j] += o.grad[base + j];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int j = 0; j < db; ++j) pb->grad[static_cast<std::size_t>(i) * db + j] += o.grad[base + da + j];
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  require_2d(x, "slice_rows");
  require(0 <= begin && begin <= end && end <= x.size(0),
          "slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
              shape_to_string(x.shape()));
  const int d = x.size(1), m = end - begin;
  std::vector<double> out(x.data() + static_cast<std::size_t>(begin) * d, x.data() + static_cast<std::size_t>(end) * d);
  auto px = x.node();
  return make_op_result({m, d}, std::move(out), {x}, [px, begin, m, d](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < static_cast<std::size_t>(m) * d; ++i)
      px->grad[static_cast<std::size_t>(begin) * d + i] += o.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
  require_2d(x, "slice_cols");
  require(0 <= begin && begin <= end && end <= x.size(1),
          "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
              shape_to_string(x.shape()));
  const int n = x.size(0), d = x.size(1), w = end - begin;
  std::vector<double> out(static_cast<std::size_t>(n) * w);
  for (int i = 0; i < n; ++i)
    std::copy_n(x.data() + static_cast<std::size_t>(i) * d + begin, w, out.begin() + static_cast<std::size_t>(i) * w);
  auto px = x.node();
  return make_op_result({n, w}, std::move(out), {x}, [px, begin, n, d, w](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        px->grad[static_cast<std::size_t>(i) * d + begin + j] += o.grad[static_cast<std::size_t>(i) * w + j];
  });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  require(numel(new_shape) == x.numel(),
          "reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(new_shape) + " changes element count");
  auto px = x.node();
  return make_op_result(std::move(new_shape), std::vector<double>(x.buffer()), {x}, [px](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += o.grad[i];
  });
}

Tensor mean_pool(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(x.shape().size()); ++i)
    if (i != axis) out_shape.push_back(x.shape()[static_cast<std::size_t>(i)]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(static_cast<std::size_t>(s.outer) * s.inner, 0.0);
  for (int o = 0; o < s.outer; ++o)
    for (int k = 0; k < s.n; ++k)
      for (int i = 0; i < s.inner; ++i)
        out[static_cast<std::size_t>(o) * s.inner + i] +=
            x.data()[(static_cast<std::size_t>(o) * s.n + k) * s.inner + i] / s.n;
  auto px = x.node();
  return make_op_result(std::move(out_shape), std::move(out), {x}, [px, s](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int ou = 0; ou < s.outer; ++ou)
      for (int k = 0; k < s.n; ++k)
        for (int i = 0; i < s.inner; ++i)
          px->grad[(static_cast<std::size_t>(ou) * s.n + k) * s.inner + i] +=
              o.grad[static_cast<std::size_t>(ou) * s.inner + i] / s.n;
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (int i = 0; i < x.numel(); ++i) s += x.data()[i];
  auto px = x.node();
  return make_op_result({1}, {s}, {x}, [px](TensorNode& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (double& g : px->grad) g += o.grad[0];
  });
}

Tensor div_scalar(const Tensor& x, const Tensor& denom) {
  require(denom.numel() == 1, "div_scalar: denominator must be scalar, got " + shape_to_string(denom.shape()));
  const double s = denom.data()[0];
  std::vector<double> out(x.buffer());
  for (double& v : out) v /= s;
  auto px = x.node(), ps = denom.node();
  return make_op_result(x.shape(), std::move(out), {x, denom}, [px, ps, s](TensorNode& o) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += o.grad[i] / s;
    }
    if (ps->requires_grad) {
      ps->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * px->data[i];
      ps->grad[0] -= acc / (s * s);
    }
  });
}

Tensor stop_gradient(const Tensor& x) { return x.detach(); }

Tensor one_hot(const std::vector<int>& ids, int classes) {
  const int n = static_cast<int>(ids.size());
  Tensor out({n, classes}, 0.0);
  for (int i = 0; i < n; ++i) {
    if (ids[static_cast<std::size_t>(i)] < 0 || ids[static_cast<std::size_t>(i)] >= classes) {
      throw ValidationError("one_hot: id " + std::to_string(ids[static_cast<std::size_t>(i)]) + " out of range [0," +
                            std::to_string(classes) + ")");
    }
    out.at(i, ids[static_cast<std::size_t>(i)]) = 1.0;
  }
  return out;
}

}  // namespace devlbert
