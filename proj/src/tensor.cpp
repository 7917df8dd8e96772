#include "dualplan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dualplan {

namespace {

constexpr const char* kModule = "tensor_autograd";

std::string shape_str(const TensorNode& n) {
  return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
}

NodePtr make_node(int rows, int cols) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  return n;
}

void check_no_nan(const TensorNode& n, const char* op) {
  for (double v : n.value)
    if (std::isnan(v)) throw NumericsError(kModule, std::string(op) + " produced NaN");
}

void check_finite(const TensorNode& n, const char* op) {
  for (double v : n.value)
    if (!std::isfinite(v)) throw NumericsError(kModule, std::string(op) + " produced non-finite value");
}

thread_local bool g_autograd_enabled = true;

// Wires the result node into the graph when gradients are needed.
Tensor finish(NodePtr out, std::initializer_list<NodePtr> parents,
              std::function<void(TensorNode&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  rg = rg && g_autograd_enabled;
  if (rg) {
    out->requires_grad = true;
    out->parents.assign(parents.begin(), parents.end());
    out->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(out));
}

}  // namespace

void TensorNode::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

void TensorNode::accumulate(const std::vector<double>& g) {
  if (frozen)
    throw FrozenParameterError(kModule, "gradient write to frozen parameter '" + name + "'");
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(int rows, int cols, double v) {
  auto n = make_node(rows, cols);
  std::fill(n->value.begin(), n->value.end(), v);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(int rows, int cols, std::vector<double> data, bool requires_grad) {
  if (data.size() != static_cast<std::size_t>(rows) * cols)
    throw ShapeError(kModule, "from_data: size mismatch");
  auto n = make_node(rows, cols);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros(n, n);
  for (int i = 0; i < n; ++i) t.mut(i, i) = 1.0;
  return t;
}

double Tensor::scalar() const {
  if (numel() != 1) throw ShapeError(kModule, "scalar() on non-scalar tensor");
  return node_->value[0];
}

Tensor Tensor::detach() const {
  auto n = make_node(node_->rows, node_->cols);
  n->value = node_->value;
  return Tensor(std::move(n));
}

void mm_nn(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
           int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = &c[static_cast<std::size_t>(i) * n];
    const double* ai = &a[static_cast<std::size_t>(i) * k];
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = &b[static_cast<std::size_t>(p) * n];
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void mm_nt(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
           int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = &a[static_cast<std::size_t>(i) * k];
    double* ci = &c[static_cast<std::size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      const double* bj = &b[static_cast<std::size_t>(j) * k];
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void mm_tn(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
           int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = &a[static_cast<std::size_t>(p) * m];
    const double* bp = &b[static_cast<std::size_t>(p) * n];
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = &c[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError(kModule, "matmul shape mismatch " + shape_str(*a.node()) + " * " + shape_str(*b.node()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node(m, n);
  mm_nn(out->value, a.data(), b.data(), m, k, n);
  check_no_nan(*out, "matmul");
  NodePtr an = a.node(), bn = b.node();
  return finish(out, {an, bn}, [an, bn, m, k, n](TensorNode& o) {
    if (an->requires_grad) {
      std::vector<double> ga(an->numel(), 0.0);
      mm_nt(ga, o.grad, bn->value, m, n, k);
      an->accumulate(ga);
    }
    if (bn->requires_grad) {
      std::vector<double> gb(bn->numel(), 0.0);
      mm_tn(gb, an->value, o.grad, k, m, n);
      bn->accumulate(gb);
    }
  });
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  auto out = make_node(n, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
  NodePtr an = a.node();
  return finish(out, {an}, [an, m, n](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel(), 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] = o.grad[static_cast<std::size_t>(j) * m + i];
    an->accumulate(ga);
  });
}

namespace {

Tensor ewise(const Tensor& a, const Tensor& b, const char* op,
             double (*fwd)(double, double), void (*bwd)(double, double, double, double&, double&)) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(kModule, std::string(op) + " shape mismatch " + shape_str(*a.node()) + " vs " + shape_str(*b.node()));
  auto out = make_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = fwd(a.data()[i], b.data()[i]);
  check_finite(*out, op);
  NodePtr an = a.node(), bn = b.node();
  return finish(out, {an, bn}, [an, bn, bwd](TensorNode& o) {
    std::vector<double> ga(an->numel(), 0.0), gb(bn->numel(), 0.0);
    for (std::size_t i = 0; i < o.numel(); ++i) {
      double da = 0.0, db = 0.0;
      bwd(an->value[i], bn->value[i], o.grad[i], da, db);
      ga[i] = da;
      gb[i] = db;
    }
    if (an->requires_grad) an->accumulate(ga);
    if (bn->requires_grad) bn->accumulate(gb);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ewise(a, b, "add", [](double x, double y) { return x + y; },
               [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ewise(a, b, "sub", [](double x, double y) { return x - y; },
               [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ewise(a, b, "mul", [](double x, double y) { return x * y; },
               [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a.data()[i] * s;
  check_finite(*out, "scale");
  NodePtr an = a.node();
  return finish(out, {an}, [an, s](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = o.grad[i] * s;
    an->accumulate(ga);
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError(kModule, "add_rowvec needs [1 x cols] bias, got " + shape_str(*row.node()));
  auto out = make_node(a.rows(), a.cols());
  const int n = a.cols();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<std::size_t>(i) * n + j] = a.at(i, j) + row.at(0, j);
  check_finite(*out, "add_rowvec");
  NodePtr an = a.node(), rn = row.node();
  return finish(out, {an, rn}, [an, rn, n](TensorNode& o) {
    if (an->requires_grad) an->accumulate(o.grad);
    if (rn->requires_grad) {
      std::vector<double> gr(static_cast<std::size_t>(n), 0.0);
      const int m = an->rows;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gr[j] += o.grad[static_cast<std::size_t>(i) * n + j];
      rn->accumulate(gr);
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  const int n = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    double mx = -INFINITY;
    for (int j = 0; j < n; ++j) mx = std::max(mx, a.at(i, j));
    if (!std::isfinite(mx))
      throw NumericsError(kModule, "softmax row has no finite entry");
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(a.at(i, j) - mx);
      out->value[static_cast<std::size_t>(i) * n + j] = e;
      sum += e;
    }
    for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(i) * n + j] /= sum;
  }
  check_finite(*out, "softmax");
  NodePtr an = a.node();
  std::vector<double> y = out->value;
  return finish(out, {an}, [an, y, n](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel(), 0.0);
    const int m = an->rows;
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += o.grad[off + j] * y[off + j];
      for (int j = 0; j < n; ++j) ga[off + j] = y[off + j] * (o.grad[off + j] - dot);
    }
    an->accumulate(ga);
  });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  const int n = a.cols();
  if (n < 2) throw ShapeError(kModule, "layer_norm needs >= 2 columns");
  auto out = make_node(a.rows(), a.cols());
  std::vector<double> inv_sigma(a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += a.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = a.at(i, j) - mean;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < n; ++j)
      out->value[static_cast<std::size_t>(i) * n + j] = (a.at(i, j) - mean) * is;
  }
  check_finite(*out, "layer_norm");
  NodePtr an = a.node();
  std::vector<double> y = out->value;
  return finish(out, {an}, [an, y, inv_sigma, n](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel(), 0.0);
    for (int i = 0; i < an->rows; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      double gmean = 0.0, gydot = 0.0;
      for (int j = 0; j < n; ++j) {
        gmean += o.grad[off + j];
        gydot += o.grad[off + j] * y[off + j];
      }
      gmean /= n;
      gydot /= n;
      for (int j = 0; j < n; ++j)
        ga[off + j] = inv_sigma[i] * (o.grad[off + j] - gmean - y[off + j] * gydot);
    }
    an->accumulate(ga);
  });
}

Tensor gelu(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->numel(); ++i) {
    const double x = a.data()[i];
    out->value[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  check_finite(*out, "gelu");
  NodePtr an = a.node();
  return finish(out, {an}, [an](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double x = an->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      ga[i] = o.grad[i] * (cdf + x * pdf);
    }
    an->accumulate(ga);
  });
}

Tensor add_mask(const Tensor& scores, const Tensor& mask) {
  if (scores.rows() != mask.rows() || scores.cols() != mask.cols())
    throw ShapeError(kModule, "mask shape mismatch");
  auto out = make_node(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = scores.data()[i] + mask.data()[i];
  check_no_nan(*out, "add_mask");  // -inf is legitimate here
  NodePtr sn = scores.node();
  return finish(out, {sn}, [sn](TensorNode& o) {
    if (sn->requires_grad) sn->accumulate(o.grad);
  });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw ShapeError(kModule, "slice_rows out of range");
  const int n = a.cols();
  auto out = make_node(r1 - r0, n);
  std::copy(a.data().begin() + static_cast<std::size_t>(r0) * n,
            a.data().begin() + static_cast<std::size_t>(r1) * n, out->value.begin());
  NodePtr an = a.node();
  return finish(out, {an}, [an, r0, n](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel(), 0.0);
    std::copy(o.grad.begin(), o.grad.end(), ga.begin() + static_cast<std::size_t>(r0) * n);
    an->accumulate(ga);
  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw ShapeError(kModule, "slice_cols out of range");
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  auto out = make_node(m, w);
  for (int i = 0; i < m; ++i)
    std::copy(a.data().begin() + static_cast<std::size_t>(i) * n + c0,
              a.data().begin() + static_cast<std::size_t>(i) * n + c1,
              out->value.begin() + static_cast<std::size_t>(i) * w);
  NodePtr an = a.node();
  return finish(out, {an}, [an, c0, w, n, m](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel(), 0.0);
    for (int i = 0; i < m; ++i)
      std::copy(o.grad.begin() + static_cast<std::size_t>(i) * w,
                o.grad.begin() + static_cast<std::size_t>(i + 1) * w,
                ga.begin() + static_cast<std::size_t>(i) * n + c0);
    an->accumulate(ga);
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError(kModule, "concat_rows of nothing");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError(kModule, "concat_rows column mismatch");
    m += p.rows();
  }
  auto out = make_node(m, n);
  std::size_t off = 0;
  bool rg = false;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->value.begin() + off);
    off += p.numel();
    rg = rg || p.requires_grad();
  }
  if (!rg || !g_autograd_enabled) return Tensor(std::move(out));
  out->requires_grad = true;
  std::vector<NodePtr> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  out->parents = ps;
  out->backward_fn = [ps](TensorNode& o) {
    std::size_t off = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        std::vector<double> g(o.grad.begin() + off, o.grad.begin() + off + p->numel());
        p->accumulate(g);
      }
      off += p->numel();
    }
  };
  return Tensor(std::move(out));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError(kModule, "concat_cols of nothing");
  const int m = parts[0].rows();
  int n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError(kModule, "concat_cols row mismatch");
    n += p.cols();
  }
  auto out = make_node(m, n);
  bool rg = false;
  int c0 = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < m; ++i)
      std::copy(p.data().begin() + static_cast<std::size_t>(i) * p.cols(),
                p.data().begin() + static_cast<std::size_t>(i + 1) * p.cols(),
                out->value.begin() + static_cast<std::size_t>(i) * n + c0);
    c0 += p.cols();
    rg = rg || p.requires_grad();
  }
  if (!rg || !g_autograd_enabled) return Tensor(std::move(out));
  out->requires_grad = true;
  std::vector<NodePtr> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  out->parents = ps;
  out->backward_fn = [ps, m, n](TensorNode& o) {
    int c0 = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        std::vector<double> g(p->numel());
        for (int i = 0; i < m; ++i)
          std::copy(o.grad.begin() + static_cast<std::size_t>(i) * n + c0,
                    o.grad.begin() + static_cast<std::size_t>(i) * n + c0 + p->cols,
                    g.begin() + static_cast<std::size_t>(i) * p->cols);
        p->accumulate(g);
      }
      c0 += p->cols;
    }
  };
  return Tensor(std::move(out));
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node(1, 1);
  double s = 0.0;
  for (double v : a.data()) s += v;
  out->value[0] = s;
  check_finite(*out, "sum_all");
  NodePtr an = a.node();
  return finish(out, {an}, [an](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel(), o.grad[0]);
    an->accumulate(ga);
  });
}

Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum_all(a), inv);
}

Tensor mean_rows(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  auto out = make_node(1, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->value[j] += a.at(i, j);
  for (int j = 0; j < n; ++j) out->value[j] /= m;
  check_finite(*out, "mean_rows");
  NodePtr an = a.node();
  return finish(out, {an}, [an, m, n](TensorNode& o) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->numel());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] = o.grad[j] / m;
    an->accumulate(ga);
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError(kModule, "l1_loss shape mismatch");
  auto out = make_node(1, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += std::abs(pred.data()[i] - target.data()[i]);
  const double inv = 1.0 / static_cast<double>(pred.numel());
  out->value[0] = s * inv;
  check_finite(*out, "l1_loss");
  NodePtr pn = pred.node(), tn = target.node();
  return finish(out, {pn}, [pn, tn, inv](TensorNode& o) {
    if (!pn->requires_grad) return;
    std::vector<double> ga(pn->numel());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double d = pn->value[i] - tn->value[i];
      ga[i] = o.grad[0] * inv * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    pn->accumulate(ga);
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError(kModule, "mse_loss shape mismatch");
  auto out = make_node(1, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(pred.numel());
  out->value[0] = s * inv;
  check_finite(*out, "mse_loss");
  NodePtr pn = pred.node(), tn = target.node();
  return finish(out, {pn}, [pn, tn, inv](TensorNode& o) {
    if (!pn->requires_grad) return;
    std::vector<double> ga(pn->numel());
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] = o.grad[0] * inv * 2.0 * (pn->value[i] - tn->value[i]);
    pn->accumulate(ga);
  });
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
  const int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(labels.size()) != m)
    throw ShapeError(kModule, "cross_entropy label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= n) throw ShapeError(kModule, "cross_entropy label out of range");
  auto out = make_node(1, 1);
  std::vector<double> probs(static_cast<std::size_t>(m) * n);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (int j = 0; j < n; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(logits.at(i, j) - mx);
      probs[static_cast<std::size_t>(i) * n + j] = e;
      sum += e;
    }
    for (int j = 0; j < n; ++j) probs[static_cast<std::size_t>(i) * n + j] /= sum;
    loss -= std::log(std::max(probs[static_cast<std::size_t>(i) * n + labels[i]], 1e-300));
  }
  out->value[0] = loss / m;
  check_finite(*out, "cross_entropy");
  NodePtr ln = logits.node();
  return finish(out, {ln}, [ln, probs, labels, m, n](TensorNode& o) {
    if (!ln->requires_grad) return;
    std::vector<double> ga(probs.size());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * n + j;
        ga[idx] = o.grad[0] * (probs[idx] - (labels[i] == j ? 1.0 : 0.0)) / m;
      }
    ln->accumulate(ga);
  });
}

void backward(const Tensor& root) {
  if (root.numel() != 1) throw ShapeError(kModule, "backward root must be scalar");
  if (!root.requires_grad()) return;
  // Topological order via iterative post-order DFS.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

NoGradGuard::NoGradGuard() : prev_(g_autograd_enabled) { g_autograd_enabled = false; }
NoGradGuard::~NoGradGuard() { g_autograd_enabled = prev_; }

bool autograd_enabled() { return g_autograd_enabled; }

Tensor xavier_uniform(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

Tensor randn(int rows, int cols, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

}  // namespace dualplan
