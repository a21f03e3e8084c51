#include "abmt/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "abmt/kernels.hpp"

namespace abmt {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

thread_local SmoothnessProbe* g_probe = nullptr;

}  // namespace

SmoothnessProbe* set_smoothness_probe(SmoothnessProbe* probe) {
  SmoothnessProbe* old = g_probe;
  g_probe = probe;
  return old;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->data.assign(shape_numel(shape), 0.0);
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("from_data: shape does not match data length");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
std::size_t Tensor::numel() const { return impl_->data.size(); }

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::data_mut() { return impl_->data; }

bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("grad accessed but absent");
  return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
  ensure_grad();
  return impl_->grad;
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != impl_->data.size()) throw DimensionError("accumulate_grad: length mismatch");
  ensure_grad();
  double* dst = impl_->grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

double Tensor::value() const {
  if (numel() != 1) throw ContractError("value() requires a scalar tensor");
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

void Graph::backward(const Tensor& loss) {
  if (ran_backward_) throw StateError("backward already ran on this graph");
  if (!loss.defined() || loss.numel() != 1) throw ContractError("backward requires a scalar loss");
  ran_backward_ = true;
  Tensor seed = loss;
  seed.ensure_grad();
  seed.grad_mut()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
}

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

// ---------------------------------------------------------------------------
// ops

Tensor linear(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (!x.defined() || !w.defined()) throw ContractError("linear: undefined input");
  if (x.ndim() < 1 || w.ndim() != 2) throw DimensionError("linear: x must be >=1-d, w must be 2-d");
  const int d_in = x.dim(x.ndim() - 1);
  const int d_out = w.dim(0);
  if (w.dim(1) != d_in) throw DimensionError("linear: inner dimensions do not match");
  const bool has_bias = b.defined();
  if (has_bias && (b.ndim() != 1 || b.dim(0) != d_out))
    throw DimensionError("linear: bias shape mismatch");

  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(d_in == 0 ? 1 : d_in));
  std::vector<int> out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor out = Tensor::zeros(out_shape);
  kernels::matmul_nt(x.data().data(), w.data().data(), out.data_mut().data(), rows, d_in, d_out);
  if (has_bias) {
    double* o = out.data_mut().data();
    const double* bv = b.data().data();
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < d_out; ++j) o[static_cast<std::size_t>(r) * d_out + j] += bv[j];
  }
  check_finite(out, "linear");

  if (g) {
    const bool gx = g->tracks(x);
    const bool gw = g->tracks(w);
    const bool gb = has_bias && g->tracks(b);
    if (gx || gw || gb) {
      g->track(out);
      Tensor xc = x, wc = w, bc = b, oc = out;
      g->record("linear", [xc, wc, bc, oc, gx, gw, gb, rows, d_in, d_out]() mutable {
        if (!oc.has_grad()) return;
        const double* go = oc.grad().data();
        if (gx) {
          std::vector<double> dx(static_cast<std::size_t>(rows) * d_in);
          kernels::matmul_nn(go, wc.data().data(), dx.data(), rows, d_out, d_in);
          xc.accumulate_grad(dx);
        }
        if (gw) {
          std::vector<double> dw(static_cast<std::size_t>(d_out) * d_in);
          kernels::matmul_tn(go, xc.data().data(), dw.data(), rows, d_out, d_in);
          wc.accumulate_grad(dw);
        }
        if (gb) {
          std::vector<double> db(static_cast<std::size_t>(d_out), 0.0);
          for (int r = 0; r < rows; ++r)
            for (int j = 0; j < d_out; ++j) db[j] += go[static_cast<std::size_t>(r) * d_out + j];
          bc.accumulate_grad(db);
        }
      });
    }
  }
  return out;
}

Tensor relu(Graph* g, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data().data();
  double* ov = out.data_mut().data();
  const std::size_t n = x.numel();
  double min_margin = g_probe ? g_probe->min_relu_margin : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (g_probe) min_margin = std::min(min_margin, std::abs(xv[i]));
  }
  if (g_probe) g_probe->min_relu_margin = min_margin;
  check_finite(out, "relu");
  if (g && g->tracks(x)) {
    g->track(out);
    Tensor xc = x, oc = out;
    g->record("relu", [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      const double* xv2 = xc.data().data();
      std::vector<double> dx(xc.numel());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv2[i] > 0.0 ? go[i] : 0.0;
      xc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor log_softmax(Graph* g, const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("log_softmax: expected a 2-d tensor");
  const int n = x.dim(0), c = x.dim(1);
  if (c < 1) throw DimensionError("log_softmax: needs at least one class");
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data().data();
  double* ov = out.data_mut().data();
  for (int i = 0; i < n; ++i) {
    const double* row = xv + static_cast<std::size_t>(i) * c;
    double* orow = ov + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lz = std::log(z);
    for (int j = 0; j < c; ++j) orow[j] = row[j] - mx - lz;
  }
  check_finite(out, "log_softmax");
  if (g && g->tracks(x)) {
    g->track(out);
    Tensor xc = x, oc = out;
    g->record("log_softmax", [xc, oc, n, c]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      const double* ov2 = oc.data().data();
      std::vector<double> dx(xc.numel());
      for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        double gsum = 0.0;
        for (int j = 0; j < c; ++j) gsum += go[off + j];
        for (int j = 0; j < c; ++j) dx[off + j] = go[off + j] - std::exp(ov2[off + j]) * gsum;
      }
      xc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor pool(Graph* g, const Tensor& x, PoolMode mode) {
  if (x.ndim() != 3) throw DimensionError("pool: expected an N x P x D tensor");
  const int n = x.dim(0), p = x.dim(1), d = x.dim(2);
  if (p < 1) throw DimensionError("pool: empty part axis");
  Tensor out = Tensor::zeros({n, d});
  const double* xv = x.data().data();
  double* ov = out.data_mut().data();
  std::vector<int> argmax;
  if (mode == PoolMode::max) argmax.assign(static_cast<std::size_t>(n) * d, 0);

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::size_t base = (static_cast<std::size_t>(i) * p) * d + j;
      if (mode == PoolMode::mean) {
        double acc = 0.0;
        for (int q = 0; q < p; ++q) acc += xv[base + static_cast<std::size_t>(q) * d];
        ov[static_cast<std::size_t>(i) * d + j] = acc / p;
      } else {
        double best = xv[base];
        double second = -1e300;
        int bi = 0;
        for (int q = 1; q < p; ++q) {
          const double v = xv[base + static_cast<std::size_t>(q) * d];
          if (v > best) {
            second = best;
            best = v;
            bi = q;
          } else {
            second = std::max(second, v);
          }
        }
        ov[static_cast<std::size_t>(i) * d + j] = best;
        argmax[static_cast<std::size_t>(i) * d + j] = bi;
        if (g_probe && p > 1) g_probe->min_pool_gap = std::min(g_probe->min_pool_gap, best - second);
      }
    }
  }
  check_finite(out, "pool");
  if (g && g->tracks(x)) {
    g->track(out);
    Tensor xc = x, oc = out;
    g->record("pool", [xc, oc, mode, n, p, d, argmax = std::move(argmax)]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      std::vector<double> dx(xc.numel(), 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          const double gv = go[static_cast<std::size_t>(i) * d + j];
          if (mode == PoolMode::mean) {
            const double share = gv / p;
            for (int q = 0; q < p; ++q)
              dx[(static_cast<std::size_t>(i) * p + q) * d + j] += share;
          } else {
            const int q = argmax[static_cast<std::size_t>(i) * d + j];
            dx[(static_cast<std::size_t>(i) * p + q) * d + j] += gv;
          }
        }
      }
      xc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor concat(Graph* g, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("concat: expected 2-d tensors");
  if (a.dim(0) != b.dim(0)) throw DimensionError("concat: row counts differ");
  const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out = Tensor::zeros({n, da + db});
  const double* av = a.data().data();
  const double* bv = b.data().data();
  double* ov = out.data_mut().data();
  for (int i = 0; i < n; ++i) {
    double* orow = ov + static_cast<std::size_t>(i) * (da + db);
    std::copy_n(av + static_cast<std::size_t>(i) * da, da, orow);
    std::copy_n(bv + static_cast<std::size_t>(i) * db, db, orow + da);
  }
  if (g && (g->tracks(a) || g->tracks(b))) {
    const bool ga = g->tracks(a), gb = g->tracks(b);
    g->track(out);
    Tensor ac = a, bc = b, oc = out;
    g->record("concat", [ac, bc, oc, ga, gb, n, da, db]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      if (ga) {
        std::vector<double> dxa(static_cast<std::size_t>(n) * da);
        for (int i = 0; i < n; ++i)
          std::copy_n(go + static_cast<std::size_t>(i) * (da + db), da,
                      dxa.data() + static_cast<std::size_t>(i) * da);
        ac.accumulate_grad(dxa);
      }
      if (gb) {
        std::vector<double> dxb(static_cast<std::size_t>(n) * db);
        for (int i = 0; i < n; ++i)
          std::copy_n(go + static_cast<std::size_t>(i) * (da + db) + da, db,
                      dxb.data() + static_cast<std::size_t>(i) * db);
        bc.accumulate_grad(dxb);
      }
    });
  }
  return out;
}

Tensor l2_normalize(Graph* g, const Tensor& x, double eps_norm) {
  if (eps_norm <= 0.0) throw ParameterError("l2_normalize: eps_norm must be positive");
  if (x.ndim() != 2) throw DimensionError("l2_normalize: expected a 2-d tensor");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data().data();
  double* ov = out.data_mut().data();
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = xv + static_cast<std::size_t>(i) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += row[j] * row[j];
    const double nrm = std::sqrt(acc);
    norms[static_cast<std::size_t>(i)] = nrm;
    const double den = std::max(nrm, eps_norm);
    for (int j = 0; j < d; ++j) ov[static_cast<std::size_t>(i) * d + j] = row[j] / den;
  }
  check_finite(out, "l2_normalize");
  if (g && g->tracks(x)) {
    g->track(out);
    Tensor xc = x, oc = out;
    g->record("l2_normalize", [xc, oc, eps_norm, n, d, norms = std::move(norms)]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      const double* yv = oc.data().data();
      std::vector<double> dx(xc.numel());
      for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * d;
        const double nrm = norms[static_cast<std::size_t>(i)];
        if (nrm >= eps_norm) {
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += yv[off + j] * go[off + j];
          for (int j = 0; j < d; ++j) dx[off + j] = (go[off + j] - yv[off + j] * dot) / nrm;
        } else {
          for (int j = 0; j < d; ++j) dx[off + j] = go[off + j] / eps_norm;
        }
      }
      xc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor add(Graph* g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data().data();
  const double* bv = b.data().data();
  double* ov = out.data_mut().data();
  for (std::size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] + bv[i];
  check_finite(out, "add");
  if (g && (g->tracks(a) || g->tracks(b))) {
    const bool ga = g->tracks(a), gb = g->tracks(b);
    g->track(out);
    Tensor ac = a, bc = b, oc = out;
    g->record("add", [ac, bc, oc, ga, gb]() mutable {
      if (!oc.has_grad()) return;
      if (ga) ac.accumulate_grad(oc.grad());
      if (gb) bc.accumulate_grad(oc.grad());
    });
  }
  return out;
}

Tensor mul(Graph* g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data().data();
  const double* bv = b.data().data();
  double* ov = out.data_mut().data();
  for (std::size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] * bv[i];
  check_finite(out, "mul");
  if (g && (g->tracks(a) || g->tracks(b))) {
    const bool ga = g->tracks(a), gb = g->tracks(b);
    g->track(out);
    Tensor ac = a, bc = b, oc = out;
    g->record("mul", [ac, bc, oc, ga, gb]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      if (ga) {
        std::vector<double> dx(ac.numel());
        const double* bv2 = bc.data().data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = go[i] * bv2[i];
        ac.accumulate_grad(dx);
      }
      if (gb) {
        std::vector<double> dx(bc.numel());
        const double* av2 = ac.data().data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = go[i] * av2[i];
        bc.accumulate_grad(dx);
      }
    });
  }
  return out;
}

Tensor scale(Graph* g, const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data().data();
  double* ov = out.data_mut().data();
  for (std::size_t i = 0; i < out.numel(); ++i) ov[i] = c * xv[i];
  check_finite(out, "scale");
  if (g && g->tracks(x)) {
    g->track(out);
    Tensor xc = x, oc = out;
    g->record("scale", [xc, oc, c]() mutable {
      if (!oc.has_grad()) return;
      const double* go = oc.grad().data();
      std::vector<double> dx(xc.numel());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = c * go[i];
      xc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor sum(Graph* g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  check_finite(out, "sum");
  if (g && g->tracks(x)) {
    g->track(out);
    Tensor xc = x, oc = out;
    g->record("sum", [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double gv = oc.grad()[0];
      std::vector<double> dx(xc.numel(), gv);
      xc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor mean_all(Graph* g, const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean_all: empty tensor");
  const double inv = 1.0 / static_cast<double>(x.numel());
  return scale(g, sum(g, x), inv);
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam_state(const Tensor& param, double lr, double weight_decay) {
  AdamState s;
  s.m.assign(param.numel(), 0.0);
  s.v.assign(param.numel(), 0.0);
  s.lr = lr;
  s.weight_decay = weight_decay;
  return s;
}

void adam_step(std::span<Tensor> params, std::span<AdamState> states) {
  if (params.size() != states.size()) throw ContractError("adam_step: params/states misaligned");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    AdamState& s = states[k];
    if (!p.has_grad()) throw ContractError("adam_step: parameter has no gradient");
    if (s.m.size() != p.numel() || s.v.size() != p.numel())
      throw ContractError("adam_step: state size mismatch");
    check_finite(p.grad(), "adam_step(grad)");
    s.t += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    double* pv = p.data_mut().data();
    const double* gv = p.grad().data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double grad = gv[i] + s.weight_decay * pv[i];
      s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad;
      s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad * grad;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      pv[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
    p.clear_grad();
  }
}

// ---------------------------------------------------------------------------
// gradient checking

double finite_diff_check(const std::function<Tensor(Graph&)>& f, std::span<Tensor> params, double h) {
  if (h <= 0.0) throw ParameterError("finite_diff_check: h must be positive");
  for (Tensor& p : params) p.clear_grad();

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor loss = f(g);
    g.backward(loss);
    for (Tensor& p : params) {
      if (p.has_grad())
        analytic.emplace_back(p.grad().begin(), p.grad().end());
      else
        analytic.emplace_back(p.numel(), 0.0);
      p.clear_grad();
    }
  }

  const auto eval = [&]() {
    Graph g;
    return f(g).value();
  };

  double max_err = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    double* pv = p.data_mut().data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = pv[i];
      pv[i] = saved + h;
      const double fp = eval();
      pv[i] = saved - h;
      const double fm = eval();
      pv[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double den = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_err = std::max(max_err, std::abs(a - numeric) / den);
    }
  }
  return max_err;
}

}  // namespace abmt
