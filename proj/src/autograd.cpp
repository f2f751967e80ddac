#include "misleader/autograd.hpp"

#include <cmath>

namespace misleader::ag {

namespace {

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape) +
                        " vs " + shape_str(b.shape));
}

}  // namespace

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

namespace kern {

void matmul_xwT(const Tensor& x, const Tensor& w, Tensor& y) {
  const std::size_t b = x.shape[0], in = x.shape[1];
  const std::size_t out = w.shape[0];
  if (w.shape[1] != in)
    throw ShapeMismatch("matmul: input dim " + std::to_string(in) + " vs weight " +
                        std::to_string(w.shape[1]));
  for (std::size_t r = 0; r < b; ++r) {
    const double* xr = x.row(r);
    double* yr = y.row(r);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data.data() + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
}

void add_row_inplace(Tensor& y, const Tensor& bias) {
  const std::size_t b = y.shape[0], k = y.shape[1];
  for (std::size_t r = 0; r < b; ++r) {
    double* yr = y.row(r);
    for (std::size_t j = 0; j < k; ++j) yr[j] += bias.data[j];
  }
}

std::vector<std::size_t> conv2d_out_shape(const std::vector<std::size_t>& xs,
                                          const std::vector<std::size_t>& ks, int pad) {
  const std::size_t oh = xs[2] + 2 * pad - ks[2] + 1;
  const std::size_t ow = xs[3] + 2 * pad - ks[3] + 1;
  return {xs[0], ks[0], oh, ow};
}

void conv2d_fwd(const Tensor& x, const Tensor& k, int pad, Tensor& y) {
  const std::size_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t oc = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const std::size_t oh = y.shape[2], ow = y.shape[3];
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t u = 0; u < kh; ++u) {
              const long xi = long(i) + long(u) - pad;
              if (xi < 0 || xi >= long(h)) continue;
              const double* xrow = &x.data[((n * c + ci) * h + xi) * w];
              const double* krow = &k.data[((o * c + ci) * kh + u) * kw];
              for (std::size_t v = 0; v < kw; ++v) {
                const long xj = long(j) + long(v) - pad;
                if (xj < 0 || xj >= long(w)) continue;
                acc += xrow[xj] * krow[v];
              }
            }
          y.data[((n * oc + o) * oh + i) * ow + j] = acc;
        }
}

void conv2d_input_grad(const Tensor& gy, const Tensor& k, int pad, Tensor& gx) {
  const std::size_t b = gx.shape[0], c = gx.shape[1], h = gx.shape[2], w = gx.shape[3];
  const std::size_t oc = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const std::size_t oh = gy.shape[2], ow = gy.shape[3];
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double g = gy.data[((n * oc + o) * oh + i) * ow + j];
          if (g == 0.0) continue;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t u = 0; u < kh; ++u) {
              const long xi = long(i) + long(u) - pad;
              if (xi < 0 || xi >= long(h)) continue;
              double* gxrow = &gx.data[((n * c + ci) * h + xi) * w];
              const double* krow = &k.data[((o * c + ci) * kh + u) * kw];
              for (std::size_t v = 0; v < kw; ++v) {
                const long xj = long(j) + long(v) - pad;
                if (xj < 0 || xj >= long(w)) continue;
                gxrow[xj] += g * krow[v];
              }
            }
        }
}

void add_channel_bias_inplace(Tensor& y, const Tensor& bias) {
  const std::size_t b = y.shape[0], c = y.shape[1], hw = y.shape[2] * y.shape[3];
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double* p = &y.data[(n * c + ci) * hw];
      for (std::size_t s = 0; s < hw; ++s) p[s] += bias.data[ci];
    }
}

void maxpool2_fwd(const Tensor& x, Tensor& y, std::vector<std::size_t>& argmax) {
  const std::size_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t oh = h / 2, ow = w / 2;
  argmax.resize(b * c * oh * ow);
  std::size_t out = 0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j, ++out) {
          double best = -1e300;
          std::size_t best_idx = 0;
          for (std::size_t u = 0; u < 2; ++u)
            for (std::size_t v = 0; v < 2; ++v) {
              const std::size_t idx = ((n * c + ci) * h + 2 * i + u) * w + 2 * j + v;
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          y.data[out] = best;
          argmax[out] = best_idx;
        }
}

void relu_inplace(Tensor& x) {
  for (double& v : x.data)
    if (v < 0.0) v = 0.0;
}

void tanh_inplace(Tensor& x) {
  for (double& v : x.data) v = std::tanh(v);
}

void softmax_rows_inplace(Tensor& x, double temp) {
  const std::size_t b = x.rows(), k = x.row_size();
  for (std::size_t r = 0; r < b; ++r) {
    double* p = x.row(r);
    double mx = p[0] / temp;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, p[j] / temp);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(p[j] / temp - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= z;
  }
}

}  // namespace kern

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Var matmul(const Var& x, const Var& w) {
  if (x.value().shape.size() != 2 || w.value().shape.size() != 2)
    throw ShapeMismatch("matmul: expects rank-2 operands");
  Tensor y({x.value().shape[0], w.value().shape[0]});
  kern::matmul_xwT(x.value(), w.value(), y);
  auto xp = x.node(), wp = w.node();
  return Var(make_node(std::move(y), {xp, wp}, [xp, wp](Node& n) {
    const Tensor& g = n.grad;
    const std::size_t b = g.shape[0], out = g.shape[1];
    const std::size_t in = wp->value.shape[1];
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (std::size_t r = 0; r < b; ++r) {
        const double* gr = g.row(r);
        double* gx = xp->grad.row(r);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = gr[o];
          if (go == 0.0) continue;
          const double* wr = wp->value.data.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gx[i] += go * wr[i];
        }
      }
    }
    if (wp->requires_grad) {
      wp->ensure_grad();
      for (std::size_t r = 0; r < b; ++r) {
        const double* gr = g.row(r);
        const double* xr = xp->value.row(r);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = gr[o];
          if (go == 0.0) continue;
          double* gw = wp->grad.data.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gw[i] += go * xr[i];
        }
      }
    }
  }));
}

Var add_row(const Var& x, const Var& bias) {
  if (x.value().shape.size() != 2 || bias.value().shape.size() != 1 ||
      x.value().shape[1] != bias.value().shape[0])
    throw ShapeMismatch("add_row: incompatible shapes");
  Tensor y = x.value();
  kern::add_row_inplace(y, bias.value());
  auto xp = x.node(), bp = bias.node();
  return Var(make_node(std::move(y), {xp, bp}, [xp, bp](Node& n) {
    const std::size_t b = n.grad.shape[0], k = n.grad.shape[1];
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) xp->grad.data[i] += n.grad.data[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < k; ++j) bp->grad.data[j] += n.grad.row(r)[j];
    }
  }));
}

Var relu(const Var& x) {
  Tensor y = x.value();
  kern::relu_inplace(y);
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (xp->value.data[i] > 0.0) xp->grad.data[i] += n.grad.data[i];
  }));
}

Var tanh_op(const Var& x) {
  Tensor y = x.value();
  kern::tanh_inplace(y);
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double t = n.value.data[i];
      xp->grad.data[i] += n.grad.data[i] * (1.0 - t * t);
    }
  }));
}

Var conv2d(const Var& x, const Var& k, int pad) {
  if (x.value().shape.size() != 4 || k.value().shape.size() != 4 ||
      x.value().shape[1] != k.value().shape[1])
    throw ShapeMismatch("conv2d: incompatible shapes");
  Tensor y(kern::conv2d_out_shape(x.value().shape, k.value().shape, pad));
  kern::conv2d_fwd(x.value(), k.value(), pad, y);
  auto xp = x.node(), kp = k.node();
  return Var(make_node(std::move(y), {xp, kp}, [xp, kp, pad](Node& n) {
    const Tensor& gy = n.grad;
    if (xp->requires_grad) {
      xp->ensure_grad();
      kern::conv2d_input_grad(gy, kp->value, pad, xp->grad);
    }
    if (kp->requires_grad) {
      kp->ensure_grad();
      const Tensor& x = xp->value;
      const Tensor& k = kp->value;
      const std::size_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
      const std::size_t oc = k.shape[0], kh = k.shape[2], kw = k.shape[3];
      const std::size_t oh = gy.shape[2], ow = gy.shape[3];
      for (std::size_t nn = 0; nn < b; ++nn)
        for (std::size_t o = 0; o < oc; ++o)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              const double g = gy.data[((nn * oc + o) * oh + i) * ow + j];
              if (g == 0.0) continue;
              for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t u = 0; u < kh; ++u) {
                  const long xi = long(i) + long(u) - pad;
                  if (xi < 0 || xi >= long(h)) continue;
                  const double* xrow = &x.data[((nn * c + ci) * h + xi) * w];
                  double* gkrow = &kp->grad.data[((o * c + ci) * kh + u) * kw];
                  for (std::size_t v = 0; v < kw; ++v) {
                    const long xj = long(j) + long(v) - pad;
                    if (xj < 0 || xj >= long(w)) continue;
                    gkrow[v] += g * xrow[xj];
                  }
                }
            }
    }
  }));
}

Var add_channel_bias(const Var& x, const Var& bias) {
  Tensor y = x.value();
  kern::add_channel_bias_inplace(y, bias.value());
  auto xp = x.node(), bp = bias.node();
  return Var(make_node(std::move(y), {xp, bp}, [xp, bp](Node& n) {
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) xp->grad.data[i] += n.grad.data[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      const std::size_t b = n.grad.shape[0], c = n.grad.shape[1];
      const std::size_t hw = n.grad.shape[2] * n.grad.shape[3];
      for (std::size_t nn = 0; nn < b; ++nn)
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double* g = &n.grad.data[(nn * c + ci) * hw];
          double acc = 0.0;
          for (std::size_t s = 0; s < hw; ++s) acc += g[s];
          bp->grad.data[ci] += acc;
        }
    }
  }));
}

Var maxpool2(const Var& x) {
  const auto& xs = x.value().shape;
  Tensor y({xs[0], xs[1], xs[2] / 2, xs[3] / 2});
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  kern::maxpool2_fwd(x.value(), y, *argmax);
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp, argmax](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      xp->grad.data[(*argmax)[i]] += n.grad.data[i];
  }));
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  if (Tensor::numel(shape) != x.value().size())
    throw ShapeMismatch("reshape: element count mismatch");
  Tensor y(std::move(shape), x.value().data);
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) xp->grad.data[i] += n.grad.data[i];
  }));
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b.value().data[i];
  auto ap = a.node(), bp = b.node();
  return Var(make_node(std::move(y), {ap, bp}, [ap, bp](Node& n) {
    for (auto* p : {ap.get(), bp.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad.data[i] += n.grad.data[i];
    }
  }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= b.value().data[i];
  auto ap = a.node(), bp = b.node();
  return Var(make_node(std::move(y), {ap, bp}, [ap, bp](Node& n) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad.data[i] += n.grad.data[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bp->grad.data[i] -= n.grad.data[i];
    }
  }));
}

Var scale(const Var& x, double c) {
  Tensor y = x.value();
  for (double& v : y.data) v *= c;
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp, c](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) xp->grad.data[i] += c * n.grad.data[i];
  }));
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  Tensor y({1});
  y.data[0] = acc;
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    const double g = n.grad.data[0];
    for (double& v : xp->grad.data) v += g;
  }));
}

Var softmax_rows(const Var& x, double temp) {
  if (temp <= 0.0) throw InvalidArgument("softmax: temperature must be > 0");
  Tensor y = x.value();
  kern::softmax_rows_inplace(y, temp);
  auto xp = x.node();
  return Var(make_node(std::move(y), {xp}, [xp, temp](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    const std::size_t b = n.value.rows(), k = n.value.row_size();
    for (std::size_t r = 0; r < b; ++r) {
      const double* s = n.value.row(r);
      const double* g = n.grad.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * s[j];
      double* gx = xp->grad.row(r);
      for (std::size_t j = 0; j < k; ++j) gx[j] += s[j] * (g[j] - dot) / temp;
    }
  }));
}

Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.value().rows(), k = logits.value().row_size();
  if (labels.size() != b) throw ShapeMismatch("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= k)
      throw InvalidArgument("cross_entropy: label out of range");

  Tensor probs = logits.value();
  kern::softmax_rows_inplace(probs, 1.0);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    // recompute log softmax stably instead of log(probs) to avoid log(0)
    const double* l = logits.value().row(r);
    double mx = l[0];
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, l[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - mx);
    total += std::log(z) + mx - l[labels[r]];
  }
  Tensor y({1});
  y.data[0] = total / double(b);

  auto lp = logits.node();
  auto probs_keep = std::make_shared<Tensor>(std::move(probs));
  auto labels_keep = std::make_shared<std::vector<int>>(labels);
  return Var(make_node(std::move(y), {lp}, [lp, probs_keep, labels_keep](Node& n) {
    if (!lp->requires_grad) return;
    lp->ensure_grad();
    const double g = n.grad.data[0];
    const std::size_t b = probs_keep->rows(), k = probs_keep->row_size();
    for (std::size_t r = 0; r < b; ++r) {
      const double* s = probs_keep->row(r);
      double* gx = lp->grad.row(r);
      for (std::size_t j = 0; j < k; ++j) gx[j] += g * s[j] / double(b);
      gx[(*labels_keep)[r]] -= g / double(b);
    }
  }));
}

Var kl_rows_mean(const Var& p_rows, const Var& q_rows) {
  check_same_shape(p_rows.value(), q_rows.value(), "kl_rows_mean");
  const std::size_t b = p_rows.value().rows(), k = p_rows.value().row_size();
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* p = p_rows.value().row(r);
    const double* q = q_rows.value().row(r);
    for (std::size_t j = 0; j < k; ++j) {
      if (p[j] <= 0.0) continue;
      total += p[j] * std::log(p[j] / std::max(q[j], kKlClamp));
    }
  }
  Tensor y({1});
  y.data[0] = total / double(b);

  auto pp = p_rows.node(), qp = q_rows.node();
  return Var(make_node(std::move(y), {pp, qp}, [pp, qp, b, k](Node& n) {
    const double g = n.grad.data[0] / double(b);
    if (pp->requires_grad) {
      pp->ensure_grad();
      for (std::size_t r = 0; r < b; ++r) {
        const double* p = pp->value.row(r);
        const double* q = qp->value.row(r);
        double* gp = pp->grad.row(r);
        for (std::size_t j = 0; j < k; ++j) {
          if (p[j] <= 0.0) continue;  // one-sided at the boundary
          gp[j] += g * (std::log(p[j] / std::max(q[j], kKlClamp)) + 1.0);
        }
      }
    }
    if (qp->requires_grad) {
      qp->ensure_grad();
      for (std::size_t r = 0; r < b; ++r) {
        const double* p = pp->value.row(r);
        const double* q = qp->value.row(r);
        double* gq = qp->grad.row(r);
        for (std::size_t j = 0; j < k; ++j) {
          if (p[j] <= 0.0 || q[j] < kKlClamp) continue;  // clamp region has zero slope
          gq[j] -= g * p[j] / q[j];
        }
      }
    }
  }));
}

Var inner_const(const Var& x, Tensor w) {
  check_same_shape(x.value(), w, "inner_const");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w.data[i] * x.value().data[i];
  Tensor y({1});
  y.data[0] = acc;
  auto xp = x.node();
  auto wp = std::make_shared<Tensor>(std::move(w));
  return Var(make_node(std::move(y), {xp}, [xp, wp](Node& n) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    const double g = n.grad.data[0];
    for (std::size_t i = 0; i < wp->size(); ++i) xp->grad.data[i] += g * wp->data[i];
  }));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

std::unordered_set<const Node*> backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1)
    throw GraphError("backward: root must be a defined scalar");

  // iterative post-order DFS; order is a function of graph structure only
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* next = node->parents[child].get();
      ++child;
      if (visited.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    n->grad_ready = false;
    n->grad = Tensor();
  }
  Node* r = root.node().get();
  r->ensure_grad();
  r->grad.data[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
  return visited;
}

}  // namespace misleader::ag
