#include "wsda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace wsda::ad {

namespace {

double sigmoid_stable(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var Graph::make(Tensor v, bool wants_grad) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.own = std::move(v);
  n.value = &n.own;
  n.wants_grad = wants_grad;
  return &n;
}

Var Graph::leaf(Tensor v, bool wants_grad) { return make(std::move(v), wants_grad); }

Var Graph::param(const Tensor& external) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = &external;
  n.wants_grad = true;
  return &n;
}

void Graph::backward(Var root) {
  if (root->val().size() != 1) throw std::invalid_argument("backward: root must be scalar");
  root->grad_buf()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backprop && it->wants_grad && !it->grad.empty()) it->backprop();
  }
}

Var Graph::add(Var a, Var b) {
  check_same_shape(a->val(), b->val(), "add");
  Tensor out(a->val().dims());
  const int n = out.size();
  for (int i = 0; i < n; ++i) out[i] = a->val()[i] + b->val()[i];
  Var r = make(std::move(out), a->wants_grad || b->wants_grad);
  r->backprop = [r, a, b]() {
    const int m = r->grad.size();
    if (a->wants_grad) {
      Tensor& ga = a->grad_buf();
      for (int i = 0; i < m; ++i) ga[i] += r->grad[i];
    }
    if (b->wants_grad) {
      Tensor& gb = b->grad_buf();
      for (int i = 0; i < m; ++i) gb[i] += r->grad[i];
    }
  };
  return r;
}

Var Graph::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) return constant_scalar(0.0);
  Tensor out(xs[0]->val().dims());
  bool wg = false;
  for (Var x : xs) {
    check_same_shape(out, x->val(), "add_n");
    for (int i = 0; i < out.size(); ++i) out[i] += x->val()[i];
    wg = wg || x->wants_grad;
  }
  Var r = make(std::move(out), wg);
  std::vector<Var> parents = xs;
  r->backprop = [r, parents]() {
    const int m = r->grad.size();
    for (Var p : parents) {
      if (!p->wants_grad) continue;
      Tensor& g = p->grad_buf();
      for (int i = 0; i < m; ++i) g[i] += r->grad[i];
    }
  };
  return r;
}

Var Graph::sub(Var a, Var b) {
  check_same_shape(a->val(), b->val(), "sub");
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = a->val()[i] - b->val()[i];
  Var r = make(std::move(out), a->wants_grad || b->wants_grad);
  r->backprop = [r, a, b]() {
    const int m = r->grad.size();
    if (a->wants_grad) {
      Tensor& ga = a->grad_buf();
      for (int i = 0; i < m; ++i) ga[i] += r->grad[i];
    }
    if (b->wants_grad) {
      Tensor& gb = b->grad_buf();
      for (int i = 0; i < m; ++i) gb[i] -= r->grad[i];
    }
  };
  return r;
}

Var Graph::mul(Var a, Var b) {
  check_same_shape(a->val(), b->val(), "mul");
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = a->val()[i] * b->val()[i];
  Var r = make(std::move(out), a->wants_grad || b->wants_grad);
  r->backprop = [r, a, b]() {
    const int m = r->grad.size();
    if (a->wants_grad) {
      Tensor& ga = a->grad_buf();
      for (int i = 0; i < m; ++i) ga[i] += r->grad[i] * b->val()[i];
    }
    if (b->wants_grad) {
      Tensor& gb = b->grad_buf();
      for (int i = 0; i < m; ++i) gb[i] += r->grad[i] * a->val()[i];
    }
  };
  return r;
}

Var Graph::div(Var a, Var b) {
  check_same_shape(a->val(), b->val(), "div");
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = a->val()[i] / b->val()[i];
  Var r = make(std::move(out), a->wants_grad || b->wants_grad);
  r->backprop = [r, a, b]() {
    const int m = r->grad.size();
    if (a->wants_grad) {
      Tensor& ga = a->grad_buf();
      for (int i = 0; i < m; ++i) ga[i] += r->grad[i] / b->val()[i];
    }
    if (b->wants_grad) {
      Tensor& gb = b->grad_buf();
      for (int i = 0; i < m; ++i) gb[i] -= r->grad[i] * a->val()[i] / (b->val()[i] * b->val()[i]);
    }
  };
  return r;
}

Var Graph::scale(Var a, double k) { return affine(a, k, 0.0); }

Var Graph::affine(Var a, double k, double c) {
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = k * a->val()[i] + c;
  Var r = make(std::move(out), a->wants_grad);
  r->backprop = [r, a, k]() {
    if (!a->wants_grad) return;
    Tensor& ga = a->grad_buf();
    for (int i = 0; i < r->grad.size(); ++i) ga[i] += k * r->grad[i];
  };
  return r;
}

Var Graph::sqrt(Var a) {
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = std::sqrt(a->val()[i]);
  Var r = make(std::move(out), a->wants_grad);
  r->backprop = [r, a]() {
    if (!a->wants_grad) return;
    Tensor& ga = a->grad_buf();
    for (int i = 0; i < r->grad.size(); ++i) ga[i] += r->grad[i] * 0.5 / r->val()[i];
  };
  return r;
}

Var Graph::abs_sub_const(Var a, double k) {
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = std::abs(a->val()[i] - k);
  Var r = make(std::move(out), a->wants_grad);
  r->backprop = [r, a, k]() {
    if (!a->wants_grad) return;
    Tensor& ga = a->grad_buf();
    for (int i = 0; i < r->grad.size(); ++i) {
      double d = a->val()[i] - k;
      ga[i] += r->grad[i] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
  };
  return r;
}

Var Graph::relu(Var a) {
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = a->val()[i] > 0.0 ? a->val()[i] : 0.0;
  Var r = make(std::move(out), a->wants_grad);
  r->backprop = [r, a]() {
    if (!a->wants_grad) return;
    Tensor& ga = a->grad_buf();
    for (int i = 0; i < r->grad.size(); ++i)
      if (a->val()[i] > 0.0) ga[i] += r->grad[i];
  };
  return r;
}

Var Graph::sigmoid(Var a) {
  Tensor out(a->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = sigmoid_stable(a->val()[i]);
  Var r = make(std::move(out), a->wants_grad);
  r->backprop = [r, a]() {
    if (!a->wants_grad) return;
    Tensor& ga = a->grad_buf();
    for (int i = 0; i < r->grad.size(); ++i) {
      double s = r->val()[i];
      ga[i] += r->grad[i] * s * (1.0 - s);
    }
  };
  return r;
}

Var Graph::index(Var a, int i) {
  if (i < 0 || i >= a->val().size()) throw std::out_of_range("index: out of range");
  Tensor out = Tensor::scalar(a->val()[i]);
  Var r = make(std::move(out), a->wants_grad);
  r->backprop = [r, a, i]() {
    if (!a->wants_grad) return;
    a->grad_buf()[i] += r->grad[0];
  };
  return r;
}

Var Graph::concat(Var a, Var b) {
  const int na = a->val().size(), nb = b->val().size();
  Tensor out(std::vector<int>{na + nb});
  for (int i = 0; i < na; ++i) out[i] = a->val()[i];
  for (int i = 0; i < nb; ++i) out[na + i] = b->val()[i];
  Var r = make(std::move(out), a->wants_grad || b->wants_grad);
  r->backprop = [r, a, b, na, nb]() {
    if (a->wants_grad) {
      Tensor& ga = a->grad_buf();
      for (int i = 0; i < na; ++i) ga[i] += r->grad[i];
    }
    if (b->wants_grad) {
      Tensor& gb = b->grad_buf();
      for (int i = 0; i < nb; ++i) gb[i] += r->grad[na + i];
    }
  };
  return r;
}

Var Graph::dot_const(Var a, std::vector<double> w) {
  if (static_cast<int>(w.size()) != a->val().size())
    throw std::invalid_argument("dot_const: size mismatch");
  double s = 0.0;
  for (int i = 0; i < a->val().size(); ++i) s += a->val()[i] * w[i];
  Var r = make(Tensor::scalar(s), a->wants_grad);
  r->backprop = [r, a, w = std::move(w)]() {
    if (!a->wants_grad) return;
    Tensor& ga = a->grad_buf();
    for (size_t i = 0; i < w.size(); ++i) ga[static_cast<int>(i)] += r->grad[0] * w[i];
  };
  return r;
}

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xin = x->val();
  const Tensor& wt = w->val();
  if (xin.ndim() != 3 || wt.ndim() != 4) throw std::invalid_argument("conv2d: bad ranks");
  const int h = xin.dim(0), wd = xin.dim(1), ci = xin.dim(2);
  const int kh = wt.dim(0), kw = wt.dim(1), wci = wt.dim(2), co = wt.dim(3);
  if (wci != ci) throw std::invalid_argument("conv2d: channel mismatch");
  if (b->val().size() != co) throw std::invalid_argument("conv2d: bias size mismatch");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;

  Tensor out(std::vector<int>{ho, wo, co});
  const double* xp = xin.data();
  const double* wp = wt.data();
  const double* bp = b->val().data();
  double* op = out.data();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* acc = op + (oy * wo + ox) * co;
      for (int c = 0; c < co; ++c) acc[c] = bp[c];
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= wd) continue;
          const double* xrow = xp + (iy * wd + ix) * ci;
          const double* wrow = wp + ((ky * kw + kx) * ci) * co;
          for (int c = 0; c < ci; ++c) {
            const double xv = xrow[c];
            const double* wr = wrow + c * co;
            for (int o = 0; o < co; ++o) acc[o] += xv * wr[o];
          }
        }
      }
    }
  }

  Var r = make(std::move(out), x->wants_grad || w->wants_grad || b->wants_grad);
  r->backprop = [r, x, w, b, stride, pad, h, wd, ci, kh, kw, co, ho, wo]() {
    const double* g = r->grad.data();
    const double* xp = x->val().data();
    const double* wp = w->val().data();
    double* gx = x->wants_grad ? x->grad_buf().data() : nullptr;
    double* gw = w->wants_grad ? w->grad_buf().data() : nullptr;
    double* gb = b->wants_grad ? b->grad_buf().data() : nullptr;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const double* gout = g + (oy * wo + ox) * co;
        if (gb)
          for (int o = 0; o < co; ++o) gb[o] += gout[o];
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            const double* xrow = xp + (iy * wd + ix) * ci;
            const size_t woff = static_cast<size_t>((ky * kw + kx) * ci) * co;
            if (gw) {
              double* gwrow = gw + woff;
              for (int c = 0; c < ci; ++c) {
                const double xv = xrow[c];
                double* gwr = gwrow + c * co;
                for (int o = 0; o < co; ++o) gwr[o] += xv * gout[o];
              }
            }
            if (gx) {
              const double* wrow = wp + woff;
              double* gxrow = gx + (iy * wd + ix) * ci;
              for (int c = 0; c < ci; ++c) {
                const double* wr = wrow + c * co;
                double s = 0.0;
                for (int o = 0; o < co; ++o) s += wr[o] * gout[o];
                gxrow[c] += s;
              }
            }
          }
        }
      }
    }
  };
  return r;
}

Var Graph::fc(Var x, Var w, Var b) {
  const Tensor& wt = w->val();
  if (wt.ndim() != 2) throw std::invalid_argument("fc: weight must be 2-d");
  const int nout = wt.dim(0), nin = wt.dim(1);
  if (x->val().size() != nin) throw std::invalid_argument("fc: input size mismatch");
  if (b->val().size() != nout) throw std::invalid_argument("fc: bias size mismatch");

  Tensor out(std::vector<int>{nout});
  const double* xp = x->val().data();
  const double* wp = wt.data();
  for (int o = 0; o < nout; ++o) {
    const double* wrow = wp + static_cast<size_t>(o) * nin;
    double s = b->val()[o];
    for (int i = 0; i < nin; ++i) s += wrow[i] * xp[i];
    out[o] = s;
  }
  Var r = make(std::move(out), x->wants_grad || w->wants_grad || b->wants_grad);
  r->backprop = [r, x, w, b, nout, nin]() {
    const double* g = r->grad.data();
    const double* xp = x->val().data();
    const double* wp = w->val().data();
    if (b->wants_grad) {
      Tensor& gb = b->grad_buf();
      for (int o = 0; o < nout; ++o) gb[o] += g[o];
    }
    if (w->wants_grad) {
      double* gw = w->grad_buf().data();
      for (int o = 0; o < nout; ++o) {
        const double go = g[o];
        double* gwrow = gw + static_cast<size_t>(o) * nin;
        for (int i = 0; i < nin; ++i) gwrow[i] += go * xp[i];
      }
    }
    if (x->wants_grad) {
      double* gx = x->grad_buf().data();
      for (int o = 0; o < nout; ++o) {
        const double go = g[o];
        const double* wrow = wp + static_cast<size_t>(o) * nin;
        for (int i = 0; i < nin; ++i) gx[i] += go * wrow[i];
      }
    }
  };
  return r;
}

Var Graph::upsample2x(Var x) {
  const Tensor& xin = x->val();
  if (xin.ndim() != 3) throw std::invalid_argument("upsample2x: rank");
  const int h = xin.dim(0), w = xin.dim(1), c = xin.dim(2);
  Tensor out(std::vector<int>{2 * h, 2 * w, c});
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx)
      for (int ch = 0; ch < c; ++ch) out.at(y, xx, ch) = xin.at(y / 2, xx / 2, ch);
  Var r = make(std::move(out), x->wants_grad);
  r->backprop = [r, x, h, w, c]() {
    if (!x->wants_grad) return;
    Tensor& gx = x->grad_buf();
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        for (int ch = 0; ch < c; ++ch) gx.at(y / 2, xx / 2, ch) += r->grad.at(y, xx, ch);
  };
  return r;
}

Var Graph::global_avg_pool(Var x) {
  const Tensor& xin = x->val();
  if (xin.ndim() != 3) throw std::invalid_argument("global_avg_pool: rank");
  const int h = xin.dim(0), w = xin.dim(1), c = xin.dim(2);
  Tensor out(std::vector<int>{c});
  const double inv = 1.0 / (h * w);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch) out[ch] += xin.at(y, xx, ch) * inv;
  Var r = make(std::move(out), x->wants_grad);
  r->backprop = [r, x, h, w, c, inv]() {
    if (!x->wants_grad) return;
    Tensor& gx = x->grad_buf();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch) gx.at(y, xx, ch) += r->grad[ch] * inv;
  };
  return r;
}

Var Graph::channel_slice(Var x, int c0, int c1) {
  const Tensor& xin = x->val();
  if (xin.ndim() != 3) throw std::invalid_argument("channel_slice: rank");
  const int h = xin.dim(0), w = xin.dim(1), c = xin.dim(2);
  if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("channel_slice: range");
  Tensor out(std::vector<int>{h, w, c1 - c0});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = c0; ch < c1; ++ch) out.at(y, xx, ch - c0) = xin.at(y, xx, ch);
  Var r = make(std::move(out), x->wants_grad);
  r->backprop = [r, x, h, w, c0, c1]() {
    if (!x->wants_grad) return;
    Tensor& gx = x->grad_buf();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = c0; ch < c1; ++ch) gx.at(y, xx, ch) += r->grad.at(y, xx, ch - c0);
  };
  return r;
}

Var Graph::roi_bilinear(Var feat, const std::array<double, 4>& box_px, int out_size, double stride_px) {
  const Tensor& f = feat->val();
  if (f.ndim() != 3) throw std::invalid_argument("roi_bilinear: rank");
  const double x0 = box_px[0], y0 = box_px[1], x1 = box_px[2], y1 = box_px[3];
  if (!(x0 < x1) || !(y0 < y1)) throw std::invalid_argument("roi_bilinear: degenerate box");
  const int fh = f.dim(0), fw = f.dim(1), c = f.dim(2);

  struct Sample {
    int i00, i01, i10, i11;  // flat cell offsets (pre-channel)
    double w00, w01, w10, w11;
  };
  auto samples = std::make_shared<std::vector<Sample>>();
  samples->reserve(static_cast<size_t>(out_size) * out_size);
  Tensor out(std::vector<int>{out_size, out_size, c});
  for (int a = 0; a < out_size; ++a) {
    const double py = y0 + (a + 0.5) * (y1 - y0) / out_size;
    double fy = py / stride_px - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(fh - 1));
    const int yl = std::min(static_cast<int>(fy), fh - 1);
    const int yh = std::min(yl + 1, fh - 1);
    const double ty = fy - yl;
    for (int bcol = 0; bcol < out_size; ++bcol) {
      const double px = x0 + (bcol + 0.5) * (x1 - x0) / out_size;
      double fx = px / stride_px - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(fw - 1));
      const int xl = std::min(static_cast<int>(fx), fw - 1);
      const int xh = std::min(xl + 1, fw - 1);
      const double tx = fx - xl;
      Sample s;
      s.i00 = (yl * fw + xl) * c;
      s.i01 = (yl * fw + xh) * c;
      s.i10 = (yh * fw + xl) * c;
      s.i11 = (yh * fw + xh) * c;
      s.w00 = (1.0 - ty) * (1.0 - tx);
      s.w01 = (1.0 - ty) * tx;
      s.w10 = ty * (1.0 - tx);
      s.w11 = ty * tx;
      double* o = out.data() + (static_cast<size_t>(a) * out_size + bcol) * c;
      const double* fp = f.data();
      for (int ch = 0; ch < c; ++ch)
        o[ch] = s.w00 * fp[s.i00 + ch] + s.w01 * fp[s.i01 + ch] + s.w10 * fp[s.i10 + ch] +
                s.w11 * fp[s.i11 + ch];
      samples->push_back(s);
    }
  }
  Var r = make(std::move(out), feat->wants_grad);
  r->backprop = [r, feat, samples, out_size, c]() {
    if (!feat->wants_grad) return;
    double* gf = feat->grad_buf().data();
    const double* g = r->grad.data();
    for (int k = 0; k < out_size * out_size; ++k) {
      const Sample& s = (*samples)[static_cast<size_t>(k)];
      const double* go = g + static_cast<size_t>(k) * c;
      for (int ch = 0; ch < c; ++ch) {
        const double gv = go[ch];
        gf[s.i00 + ch] += s.w00 * gv;
        gf[s.i01 + ch] += s.w01 * gv;
        gf[s.i10 + ch] += s.w10 * gv;
        gf[s.i11 + ch] += s.w11 * gv;
      }
    }
  };
  return r;
}

Var Graph::gradient_reversal(Var x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("gradient_reversal: lambda must be >= 0");
  Tensor out(x->val().dims());
  for (int i = 0; i < out.size(); ++i) out[i] = x->val()[i];
  Var r = make(std::move(out), x->wants_grad);
  r->backprop = [r, x, lambda]() {
    if (!x->wants_grad) return;
    Tensor& gx = x->grad_buf();
    for (int i = 0; i < r->grad.size(); ++i) gx[i] += -lambda * r->grad[i];
  };
  return r;
}

Var Graph::bce_logits_mean(Var logits, Tensor targets) {
  check_same_shape(logits->val(), targets, "bce_logits_mean");
  const int n = targets.size();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = logits->val()[i];
    const double t = targets[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= n;
  Var r = make(Tensor::scalar(loss), logits->wants_grad);
  auto tg = std::make_shared<Tensor>(std::move(targets));
  r->backprop = [r, logits, tg, n]() {
    if (!logits->wants_grad) return;
    Tensor& g = logits->grad_buf();
    const double up = r->grad[0] / n;
    for (int i = 0; i < n; ++i) g[i] += up * (sigmoid_stable(logits->val()[i]) - (*tg)[i]);
  };
  return r;
}

Var Graph::cells_softmax_ce_mean(Var cls_slice, const std::vector<CellTarget>& pos) {
  if (pos.empty()) return constant_scalar(0.0);
  const Tensor& x = cls_slice->val();
  if (x.ndim() != 3) throw std::invalid_argument("cells_softmax_ce_mean: rank");
  const int nc = x.dim(2);
  const int k = static_cast<int>(pos.size());
  double loss = 0.0;
  for (const CellTarget& t : pos) {
    const double* z = x.data() + static_cast<size_t>(t.cell) * nc;
    double zmax = z[0];
    for (int c = 1; c < nc; ++c) zmax = std::max(zmax, z[c]);
    double lse = 0.0;
    for (int c = 0; c < nc; ++c) lse += std::exp(z[c] - zmax);
    loss += zmax + std::log(lse) - z[t.cls];
  }
  loss /= k;
  Var r = make(Tensor::scalar(loss), cls_slice->wants_grad);
  auto items = std::make_shared<std::vector<CellTarget>>(pos);
  r->backprop = [r, cls_slice, items, nc, k]() {
    if (!cls_slice->wants_grad) return;
    Tensor& g = cls_slice->grad_buf();
    const double up = r->grad[0] / k;
    for (const CellTarget& t : *items) {
      const double* z = cls_slice->val().data() + static_cast<size_t>(t.cell) * nc;
      double zmax = z[0];
      for (int c = 1; c < nc; ++c) zmax = std::max(zmax, z[c]);
      double lse = 0.0;
      for (int c = 0; c < nc; ++c) lse += std::exp(z[c] - zmax);
      double* gp = g.data() + static_cast<size_t>(t.cell) * nc;
      for (int c = 0; c < nc; ++c) {
        const double p = std::exp(z[c] - zmax) / lse;
        gp[c] += up * (p - (c == t.cls ? 1.0 : 0.0));
      }
    }
  };
  return r;
}

Var Graph::cells_smooth_l1_mean(Var box_slice, const std::vector<CellTarget>& pos) {
  if (pos.empty()) return constant_scalar(0.0);
  const Tensor& x = box_slice->val();
  if (x.ndim() != 3 || x.dim(2) != 4) throw std::invalid_argument("cells_smooth_l1_mean: shape");
  const int k = static_cast<int>(pos.size());
  double loss = 0.0;
  for (const CellTarget& t : pos) {
    const double* z = x.data() + static_cast<size_t>(t.cell) * 4;
    for (int c = 0; c < 4; ++c) {
      const double d = z[c] - t.delta[static_cast<size_t>(c)];
      const double a = std::abs(d);
      loss += a < 1.0 ? 0.5 * d * d : a - 0.5;
    }
  }
  loss /= k;
  Var r = make(Tensor::scalar(loss), box_slice->wants_grad);
  auto items = std::make_shared<std::vector<CellTarget>>(pos);
  r->backprop = [r, box_slice, items, k]() {
    if (!box_slice->wants_grad) return;
    Tensor& g = box_slice->grad_buf();
    const double up = r->grad[0] / k;
    for (const CellTarget& t : *items) {
      const double* z = box_slice->val().data() + static_cast<size_t>(t.cell) * 4;
      double* gp = g.data() + static_cast<size_t>(t.cell) * 4;
      for (int c = 0; c < 4; ++c) {
        const double d = z[c] - t.delta[static_cast<size_t>(c)];
        gp[c] += up * std::clamp(d, -1.0, 1.0);
      }
    }
  };
  return r;
}

Var Graph::focal_from_prob(Var p, double gamma, bool is_target) {
  if (p->val().size() != 1) throw std::invalid_argument("focal_from_prob: scalar expected");
  constexpr double kEps = 1e-7;
  const double pc = std::clamp(p->val()[0], kEps, 1.0 - kEps);
  double loss;
  if (is_target) {
    loss = -std::pow(1.0 - pc, gamma) * std::log(pc);
  } else {
    loss = -std::pow(pc, gamma) * std::log(1.0 - pc);
  }
  Var r = make(Tensor::scalar(loss), p->wants_grad);
  r->backprop = [r, p, gamma, is_target, pc]() {
    if (!p->wants_grad) return;
    const double raw = p->val()[0];
    double d = 0.0;
    if (raw > kEps && raw < 1.0 - kEps) {
      if (is_target) {
        d = (gamma > 0.0 ? gamma * std::pow(1.0 - pc, gamma - 1.0) * std::log(pc) : 0.0) -
            std::pow(1.0 - pc, gamma) / pc;
      } else {
        d = -(gamma > 0.0 ? gamma * std::pow(pc, gamma - 1.0) * std::log(1.0 - pc) : 0.0) +
            std::pow(pc, gamma) / (1.0 - pc);
      }
    }
    p->grad_buf()[0] += r->grad[0] * d;
  };
  return r;
}

double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace wsda::ad
