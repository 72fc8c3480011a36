#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "repolab/diff/graph.hpp"
#include "repolab/util/error.hpp"

namespace repolab::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

Graph& graph_of(Var v) {
  if (v.graph == nullptr) throw Error(ErrorKind::ShapeMismatch, "operation on an unbound Var");
  return *v.graph;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

// Elementwise unary op. `deriv(x, y)` returns dy/dx from input and output.
template <typename Fwd, typename Deriv>
Var unary(Var a, OpKind kind, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
  return g.emit(kind, std::move(y), {a}, [a, deriv](Graph& gr, const Tensor& go) {
    if (!gr.needs_grad(a.id)) return;
    const Tensor& xv = gr.value(a);
    Tensor& ga = gr.grad_acc(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * deriv(xv[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// Same as `unary`, but the derivative is expressed through the output.
template <typename Fwd, typename DerivFromOut>
Var unary_out(Var a, OpKind kind, Fwd fwd, DerivFromOut deriv) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
  const std::uint32_t self = static_cast<std::uint32_t>(g.size());
  return g.emit(kind, std::move(y), {a}, [a, self, deriv](Graph& gr, const Tensor& go) {
    if (!gr.needs_grad(a.id)) return;
    const Tensor& yv = gr.value(Var{&gr, self});
    Tensor& ga = gr.grad_acc(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * deriv(yv[i]);
  });
}
}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  y.add_inplace(b.value());
  return graph_of(a).emit(OpKind::Add, std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) g.grad_acc(a.id).add_inplace(go);
    if (g.needs_grad(b.id)) g.grad_acc(b.id).add_inplace(go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  y.add_inplace(b.value(), -1.0);
  return graph_of(a).emit(OpKind::Sub, std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) g.grad_acc(a.id).add_inplace(go);
    if (g.needs_grad(b.id)) g.grad_acc(b.id).add_inplace(go, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return graph_of(a).emit(OpKind::Mul, std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& av2 = g.value(a);
    const Tensor& bv2 = g.value(b);
    if (g.needs_grad(a.id)) {
      Tensor& ga = g.grad_acc(a.id);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (g.needs_grad(b.id)) {
      Tensor& gb = g.grad_acc(b.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * av2[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "div");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] / bv[i];
  return graph_of(a).emit(OpKind::Div, std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& av2 = g.value(a);
    const Tensor& bv2 = g.value(b);
    if (g.needs_grad(a.id)) {
      Tensor& ga = g.grad_acc(a.id);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / bv2[i];
    }
    if (g.needs_grad(b.id)) {
      Tensor& gb = g.grad_acc(b.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] -= go[i] * av2[i] / (bv2[i] * bv2[i]);
    }
  });
}

Var add_row(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.numel() != av.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "add_row: " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor y = av;
  const std::size_t n = av.rows();
  const std::size_t m = av.cols();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) y[r * m + c] += bv[c];
  }
  return graph_of(a).emit(OpKind::AddRow, std::move(y), {a, b}, [a, b, n, m](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) g.grad_acc(a.id).add_inplace(go);
    if (g.needs_grad(b.id)) {
      Tensor& gb = g.grad_acc(b.id);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) gb[c] += go[r * m + c];
      }
    }
  });
}

Var scale(Var a, double factor) {
  Tensor y = a.value();
  for (double& v : y.data()) v *= factor;
  return graph_of(a).emit(OpKind::Scale, std::move(y), {a}, [a, factor](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) g.grad_acc(a.id).add_inplace(go, factor);
  });
}

Var add_scalar(Var a, double constant) {
  Tensor y = a.value();
  for (double& v : y.data()) v += constant;
  return graph_of(a).emit(OpKind::AddScalar, std::move(y), {a}, [a](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) g.grad_acc(a.id).add_inplace(go);
  });
}

Var exp(Var a) {
  return unary_out(a, OpKind::Exp, [](double x) { return std::exp(x); }, [](double y) { return y; });
}

Var log(Var a) {
  return unary(a, OpKind::Log, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary_out(a, OpKind::Sqrt, [](double x) { return std::sqrt(x); }, [](double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(a, OpKind::Square, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var tanh(Var a) {
  return unary_out(a, OpKind::Tanh, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary_out(
      a, OpKind::Sigmoid,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, OpKind::Relu, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  return unary(
      a, OpKind::Gelu,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); },
      [](double x) {
        const double inner = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(inner);
        const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
      });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, OpKind::Clamp, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor y({av.rows(), bv.cols()});
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv);
  return graph_of(a).emit(OpKind::MatMul, std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) as_matrix(g.grad_acc(a.id)).noalias() += as_matrix(go) * as_matrix(g.value(b)).transpose();
    if (g.needs_grad(b.id)) as_matrix(g.grad_acc(b.id)).noalias() += as_matrix(g.value(a)).transpose() * as_matrix(go);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw Error(ErrorKind::ShapeMismatch,
                "matmul_nt: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()) + "^T");
  }
  Tensor y({av.rows(), bv.rows()});
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  return graph_of(a).emit(OpKind::MatMulNT, std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) as_matrix(g.grad_acc(a.id)).noalias() += as_matrix(go) * as_matrix(g.value(b));
    if (g.needs_grad(b.id)) as_matrix(g.grad_acc(b.id)).noalias() += as_matrix(go).transpose() * as_matrix(g.value(a));
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor y({av.cols(), av.rows()});
  as_matrix(y) = as_matrix(av).transpose();
  return graph_of(a).emit(OpKind::Transpose, std::move(y), {a}, [a](Graph& g, const Tensor& go) {
    if (g.needs_grad(a.id)) as_matrix(g.grad_acc(a.id)) += as_matrix(go).transpose();
  });
}

Var reshape(Var a, Shape shape) {
  if (numel_of(shape) != a.value().numel()) {
    throw Error(ErrorKind::ShapeMismatch, "reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  Tensor y(std::move(shape), a.value().values());
  return graph_of(a).emit(OpKind::Reshape, std::move(y), {a}, [a](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return graph_of(a).emit(OpKind::Sum, Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (double& v : ga.data()) v += go[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return graph_of(a).emit(OpKind::Mean, Tensor::scalar(s / n), {a}, [a, n](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (double& v : ga.data()) v += go[0] / n;
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows();
  const std::size_t m = av.cols();
  Tensor y({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += av[r * m + c];
    y[r] = s;
  }
  return graph_of(a).emit(OpKind::RowSum, std::move(y), {a}, [a, n, m](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < m; ++c) ga[r * m + c] += go[r];
    }
  });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t m = xv.cols();
  if (gain.value().numel() != m || bias.value().numel() != m) {
    throw Error(ErrorKind::ShapeMismatch, "layernorm: parameter width does not match " + shape_string(xv.shape()));
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  std::vector<double> xhat(n * m);
  std::vector<double> rstd(n);
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += xv[r * m + c];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double d = xv[r * m + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) {
      const double h = (xv[r * m + c] - mu) * rstd[r];
      xhat[r * m + c] = h;
      y[r * m + c] = h * gv[c] + bv[c];
    }
  }
  return graph_of(x).emit(
      OpKind::LayerNorm, std::move(y), {x, gain, bias},
      [x, gain, bias, n, m, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, const Tensor& go) {
        const Tensor& gv2 = g.value(gain);
        if (g.needs_grad(gain.id)) {
          Tensor& gg = g.grad_acc(gain.id);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < m; ++c) gg[c] += go[r * m + c] * xhat[r * m + c];
          }
        }
        if (g.needs_grad(bias.id)) {
          Tensor& gb = g.grad_acc(bias.id);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < m; ++c) gb[c] += go[r * m + c];
          }
        }
        if (g.needs_grad(x.id)) {
          Tensor& gx = g.grad_acc(x.id);
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t r = 0; r < n; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
              const double d = go[r * m + c] * gv2[c];
              mean_d += d;
              mean_dx += d * xhat[r * m + c];
            }
            mean_d *= inv_m;
            mean_dx *= inv_m;
            for (std::size_t c = 0; c < m; ++c) {
              const double d = go[r * m + c] * gv2[c];
              gx[r * m + c] += rstd[r] * (d - mean_d - xhat[r * m + c] * mean_dx);
            }
          }
        }
      });
}

Var softmax(Var z) {
  const Tensor& zv = z.value();
  const std::size_t n = zv.rows();
  const std::size_t m = zv.cols();
  Tensor y(zv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) mx = std::max(mx, zv[r * m + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double e = std::exp(zv[r * m + c] - mx);
      y[r * m + c] = e;
      s += e;
    }
    for (std::size_t c = 0; c < m; ++c) y[r * m + c] /= s;
  }
  Graph& g = graph_of(z);
  const std::uint32_t self = static_cast<std::uint32_t>(g.size());
  return g.emit(OpKind::Softmax, std::move(y), {z}, [z, self, n, m](Graph& gr, const Tensor& go) {
    if (!gr.needs_grad(z.id)) return;
    const Tensor& yv = gr.value(Var{&gr, self});
    Tensor& gz = gr.grad_acc(z.id);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < m; ++c) s += yv[r * m + c] * go[r * m + c];
      for (std::size_t c = 0; c < m; ++c) gz[r * m + c] += yv[r * m + c] * (go[r * m + c] - s);
    }
  });
}

Var log_softmax(Var z) {
  const Tensor& zv = z.value();
  const std::size_t n = zv.rows();
  const std::size_t m = zv.cols();
  Tensor y(zv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) mx = std::max(mx, zv[r * m + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += std::exp(zv[r * m + c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < m; ++c) y[r * m + c] = zv[r * m + c] - lse;
  }
  Graph& g = graph_of(z);
  const std::uint32_t self = static_cast<std::uint32_t>(g.size());
  return g.emit(OpKind::LogSoftmax, std::move(y), {z}, [z, self, n, m](Graph& gr, const Tensor& go) {
    if (!gr.needs_grad(z.id)) return;
    const Tensor& yv = gr.value(Var{&gr, self});
    Tensor& gz = gr.grad_acc(z.id);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < m; ++c) s += go[r * m + c];
      for (std::size_t c = 0; c < m; ++c) gz[r * m + c] += go[r * m + c] - std::exp(yv[r * m + c]) * s;
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  const std::size_t m = tv.cols();
  const std::size_t vocab = tv.rows();
  Tensor y({ids.size(), m});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw Error(ErrorKind::TokenOutOfRange, "gather_rows: id " + std::to_string(ids[i]));
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * m), m, y.data().begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return graph_of(table).emit(OpKind::GatherRows, std::move(y), {table},
                              [table, m, idx = std::move(idx)](Graph& g, const Tensor& go) {
                                if (!g.needs_grad(table.id)) return;
                                Tensor& gt = g.grad_acc(table.id);
                                for (std::size_t i = 0; i < idx.size(); ++i) {
                                  const std::size_t base = static_cast<std::size_t>(idx[i]) * m;
                                  for (std::size_t c = 0; c < m; ++c) gt[base + c] += go[i * m + c];
                                }
                              });
}

Var pick(Var a, std::span<const int> index) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows();
  const std::size_t m = av.cols();
  if (index.size() != n) throw Error(ErrorKind::ShapeMismatch, "pick: index count differs from row count");
  Tensor y({n});
  for (std::size_t r = 0; r < n; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= m) {
      throw Error(ErrorKind::TokenOutOfRange, "pick: column " + std::to_string(index[r]));
    }
    y[r] = av[r * m + static_cast<std::size_t>(index[r])];
  }
  std::vector<int> idx(index.begin(), index.end());
  return graph_of(a).emit(OpKind::Pick, std::move(y), {a}, [a, m, idx = std::move(idx)](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * m + static_cast<std::size_t>(idx[r])] += go[r];
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t m = av.cols();
  if (start + count > av.rows() || count == 0) {
    throw Error(ErrorKind::ShapeMismatch, "slice_rows out of range on " + shape_string(av.shape()));
  }
  Tensor y({count, m});
  std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(start * m), count * m, y.data().begin());
  return graph_of(a).emit(OpKind::SliceRows, std::move(y), {a}, [a, start, m](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[start * m + i] += go[i];
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows();
  const std::size_t m = av.cols();
  if (start + count > m || count == 0) {
    throw Error(ErrorKind::ShapeMismatch, "slice_cols out of range on " + shape_string(av.shape()));
  }
  Tensor y({n, count});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < count; ++c) y[r * count + c] = av[r * m + start + c];
  }
  return graph_of(a).emit(OpKind::SliceCols, std::move(y), {a}, [a, start, count, n, m](Graph& g, const Tensor& go) {
    if (!g.needs_grad(a.id)) return;
    Tensor& ga = g.grad_acc(a.id);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < count; ++c) ga[r * m + start + c] += go[r * count + c];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat_rows of nothing");
  const std::size_t m = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != m) throw Error(ErrorKind::ShapeMismatch, "concat_rows: column counts differ");
    total += p.value().rows();
  }
  Tensor y({total, m});
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  std::size_t at = 0;
  for (const Var& p : parts) {
    offsets.push_back(at);
    std::copy(p.value().data().begin(), p.value().data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(at * m));
    at += p.value().rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return graph_of(parts[0]).emit(OpKind::ConcatRows, std::move(y), parts,
                                 [inputs, offsets, m](Graph& g, const Tensor& go) {
                                   for (std::size_t k = 0; k < inputs.size(); ++k) {
                                     if (!g.needs_grad(inputs[k].id)) continue;
                                     Tensor& gi = g.grad_acc(inputs[k].id);
                                     const std::size_t base = offsets[k] * m;
                                     for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[base + i];
                                   }
                                 });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat_cols of nothing");
  const std::size_t n = parts[0].value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != n) throw Error(ErrorKind::ShapeMismatch, "concat_cols: row counts differ");
    total += p.value().cols();
  }
  Tensor y({n, total});
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Var& p : parts) {
    offsets.push_back(at);
    const std::size_t w = p.value().cols();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < w; ++c) y[r * total + at + c] = p.value()[r * w + c];
    }
    at += w;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return graph_of(parts[0]).emit(OpKind::ConcatCols, std::move(y), parts,
                                 [inputs, offsets, n, total](Graph& g, const Tensor& go) {
                                   for (std::size_t k = 0; k < inputs.size(); ++k) {
                                     if (!g.needs_grad(inputs[k].id)) continue;
                                     Tensor& gi = g.grad_acc(inputs[k].id);
                                     const std::size_t w = gi.cols();
                                     for (std::size_t r = 0; r < n; ++r) {
                                       for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += go[r * total + offsets[k] + c];
                                     }
                                   }
                                 });
}

Var grl(Var x, double lambda) {
  Tensor y = x.value();
  return graph_of(x).emit(OpKind::Grl, std::move(y), {x}, [x, lambda](Graph& g, const Tensor& go) {
    if (g.needs_grad(x.id)) g.grad_acc(x.id).add_inplace(go, -lambda);
  });
}

Var kl_from_logits(Var p_logits, Var q_logits) {
  require_same_shape(p_logits.value(), q_logits.value(), "kl_from_logits");
  Var lp = log_softmax(p_logits);
  Var lq = log_softmax(q_logits);
  Var p = softmax(p_logits);
  return row_sum(mul(p, sub(lp, lq)));
}

Var bce(Var q, std::span<const double> labels, double eps) {
  const Tensor& qv = q.value();
  if (labels.size() != qv.numel()) throw Error(ErrorKind::ShapeMismatch, "bce: label count differs from q");
  Graph& g = graph_of(q);
  Tensor pos(qv.shape());
  Tensor neg(qv.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pos[i] = -labels[i];
    neg[i] = -(1.0 - labels[i]);
  }
  Var qc = clamp(q, eps, 1.0 - eps);
  Var log_q = log(qc);
  Var log_not_q = log(add_scalar(scale(qc, -1.0), 1.0));
  return add(mul(g.constant(std::move(pos)), log_q), mul(g.constant(std::move(neg)), log_not_q));
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  return scale(pick(log_softmax(logits), targets), -1.0);
}

Var row_cosine(Var a, Var b, double eps) {
  require_same_shape(a.value(), b.value(), "row_cosine");
  Var dots = row_sum(mul(a, b));
  Var na = row_sum(square(a));
  Var nb = row_sum(square(b));
  return div(dots, sqrt(add_scalar(mul(na, nb), eps)));
}

}  // namespace repolab::diff
