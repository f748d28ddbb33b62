#include "mesorch/nn.hpp"

#include <algorithm>
#include <cmath>

namespace mesorch {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Parameter* ParamStore::create(const std::string& name, std::vector<int> shape,
                              Init init, bool decay) {
  check_config(find(name) == nullptr, "duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  p->value.assign(static_cast<size_t>(p->numel()), 0.0);
  p->init = init;
  p->decay = decay;
  params_.push_back(std::move(p));
  return params_.back().get();
}

Parameter* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->numel();
  return n;
}

void ParamStore::init_all(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "param-init"));
  for (const auto& p : params_) {
    switch (p->init) {
      case Init::kTruncNormal:
        for (auto& v : p->value) v = snap_f32(rng.truncated_normal(0.02));
        break;
      case Init::kZero:
        std::fill(p->value.begin(), p->value.end(), 0.0);
        break;
      case Init::kOne:
        std::fill(p->value.begin(), p->value.end(), 1.0);
        break;
    }
  }
}

void ParamStore::zero_grads() {
  for (const auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

static const double kInvSqrt2 = 0.7071067811865475244;
static const double kInvSqrt2Pi = 0.3989422804014326779;

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return y;
}

Tensor gelu_backward(const Tensor& dy, const Tensor& x) {
  Tensor dx = dy;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

void softmax_lastdim(Tensor& x) {
  const int c = x.shape.back();
  const std::int64_t rows = x.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r) {
    double* p = x.data.data() + r * c;
    double mx = p[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, p[i]);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
      p[i] = std::exp(p[i] - mx);
      sum += p[i];
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < c; ++i) p[i] *= inv;
  }
}

Tensor softmax_backward_lastdim(const Tensor& dy, const Tensor& y) {
  Tensor dx = dy;
  const int c = y.shape.back();
  const std::int64_t rows = y.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* yp = y.data.data() + r * c;
    const double* dp = dy.data.data() + r * c;
    double dot = 0.0;
    for (int i = 0; i < c; ++i) dot += dp[i] * yp[i];
    double* xp = dx.data.data() + r * c;
    for (int i = 0; i < c; ++i) xp[i] = yp[i] * (dp[i] - dot);
  }
  return dx;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
  if (h == out_h && w == out_w) return x;
  Tensor y({out_h, out_w, c});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    fy -= y0;
    const int y0c = std::clamp(y0, 0, h - 1);
    const int y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      fx -= x0;
      const int x0c = std::clamp(x0, 0, w - 1);
      const int x1c = std::clamp(x0 + 1, 0, w - 1);
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
      const double w10 = fy * (1 - fx), w11 = fy * fx;
      for (int ch = 0; ch < c; ++ch) {
        y.at(oy, ox, ch) = w00 * x.at(y0c, x0c, ch) + w01 * x.at(y0c, x1c, ch) +
                           w10 * x.at(y1c, x0c, ch) + w11 * x.at(y1c, x1c, ch);
      }
    }
  }
  return y;
}

Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w) {
  const int oh = dy.shape[0], ow = dy.shape[1], c = dy.shape[2];
  if (oh == in_h && ow == in_w) return dy;
  Tensor dx({in_h, in_w, c});
  const double sy = static_cast<double>(in_h) / oh;
  const double sx = static_cast<double>(in_w) / ow;
  for (int oy = 0; oy < oh; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    fy -= y0;
    const int y0c = std::clamp(y0, 0, in_h - 1);
    const int y1c = std::clamp(y0 + 1, 0, in_h - 1);
    for (int ox = 0; ox < ow; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      fx -= x0;
      const int x0c = std::clamp(x0, 0, in_w - 1);
      const int x1c = std::clamp(x0 + 1, 0, in_w - 1);
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
      const double w10 = fy * (1 - fx), w11 = fy * fx;
      for (int ch = 0; ch < c; ++ch) {
        const double g = dy.at(oy, ox, ch);
        dx.at(y0c, x0c, ch) += w00 * g;
        dx.at(y0c, x1c, ch) += w01 * g;
        dx.at(y1c, x0c, ch) += w10 * g;
        dx.at(y1c, x1c, ch) += w11 * g;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, int cin_, int cout_,
               int k_, int stride_, int pad_, Init w_init)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
  w = ps.create(prefix + ".w", {k, k, cin, cout}, w_init, true);
  b = ps.create(prefix + ".b", {cout}, Init::kZero, false);
}

void Conv2d::out_size(int h, int w, int k, int s, int p, int* ho, int* wo) {
  *ho = (h + 2 * p - k) / s + 1;
  *wo = (w + 2 * p - k) / s + 1;
}

static void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo,
                   Tensor* cols) {
  const int h = x.shape[0], w = x.shape[1], cin = x.shape[2];
  *cols = Tensor({ho * wo, k * k * cin});
  double* out = cols->data.data();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = out + (static_cast<std::int64_t>(oy) * wo + ox) * k * k * cin;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pad;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pad;
          double* dst = row + (ky * k + kx) * cin;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
            const double* src = x.data.data() + (static_cast<std::int64_t>(iy) * w + ix) * cin;
            std::copy(src, src + cin, dst);
          }
          // zero padding already in place (cols starts zeroed)
        }
      }
    }
  }
}

static void col2im(const Tensor& dcols, int k, int stride, int pad, int h, int w,
                   int cin, int ho, int wo, Tensor* dx) {
  *dx = Tensor({h, w, cin});
  const double* src = dcols.data.data();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* row = src + (static_cast<std::int64_t>(oy) * wo + ox) * k * k * cin;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= w) continue;
          const double* s = row + (ky * k + kx) * cin;
          double* d = dx->data.data() + (static_cast<std::int64_t>(iy) * w + ix) * cin;
          for (int c = 0; c < cin; ++c) d[c] += s[c];
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
  check_input(x.shape.size() == 3 && x.shape[2] == cin,
              "conv input shape " + x.shape_str() + " does not match cin=" +
                  std::to_string(cin));
  int ho, wo;
  out_size(x.shape[0], x.shape[1], k, stride, pad, &ho, &wo);
  check_input(ho >= 1 && wo >= 1, "conv output would be empty for input " + x.shape_str());

  Tensor local_cols;
  Tensor* cols = cache ? &cache->cols : &local_cols;
  im2col(x, k, stride, pad, ho, wo, cols);
  if (cache) {
    cache->in_h = x.shape[0];
    cache->in_w = x.shape[1];
  }

  Tensor y({ho, wo, cout});
  const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
  ConstMapRM wm(w->value.data(), static_cast<std::int64_t>(k) * k * cin, cout);
  y.mat(p, cout).noalias() = cols->mat(p, k * k * cin) * wm;
  auto ym = y.mat(p, cout);
  Eigen::Map<const Eigen::VectorXd> bv(b->value.data(), cout);
  ym.rowwise() += bv.transpose();
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, const Cache& cache) const {
  const int ho = dy.shape[0], wo = dy.shape[1];
  const std::int64_t p = static_cast<std::int64_t>(ho) * wo;
  const int kk = k * k * cin;

  w->ensure_grad();
  b->ensure_grad();
  MapRM dwm(w->grad.data(), kk, cout);
  dwm.noalias() += cache.cols.mat(p, kk).transpose() * dy.mat(p, cout);
  // scalar loop: Eigen map reductions vectorize by allocation alignment and
  // would break bit-level run-to-run determinism
  for (std::int64_t r = 0; r < p; ++r)
    for (int c = 0; c < cout; ++c) b->grad[static_cast<size_t>(c)] += dy[r * cout + c];

  Tensor dcols({static_cast<int>(p), kk});
  ConstMapRM wm(w->value.data(), kk, cout);
  dcols.mat(p, kk).noalias() = dy.mat(p, cout) * wm.transpose();

  Tensor dx;
  col2im(dcols, k, stride, pad, cache.in_h, cache.in_w, cin, ho, wo, &dx);
  return dx;
}

std::int64_t Conv2d::param_count() const {
  return static_cast<std::int64_t>(k) * k * cin * cout + cout;
}

std::int64_t Conv2d::macs(int out_h, int out_w) const {
  return static_cast<std::int64_t>(k) * k * cin * cout * out_h * out_w;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(ParamStore& ps, const std::string& prefix, int cin_, int cout_,
               Init w_init)
    : cin(cin_), cout(cout_) {
  w = ps.create(prefix + ".w", {cin, cout}, w_init, true);
  b = ps.create(prefix + ".b", {cout}, Init::kZero, false);
}

Tensor Linear::forward(const Tensor& x, Cache* cache) const {
  check_input(x.shape.back() == cin, "linear input " + x.shape_str() +
                                         " does not match cin=" + std::to_string(cin));
  const std::int64_t p = x.numel() / cin;
  std::vector<int> out_shape = x.shape;
  out_shape.back() = cout;
  Tensor y(out_shape);
  ConstMapRM wm(w->value.data(), cin, cout);
  y.mat(p, cout).noalias() = x.mat(p, cin) * wm;
  Eigen::Map<const Eigen::VectorXd> bv(b->value.data(), cout);
  y.mat(p, cout).rowwise() += bv.transpose();
  if (cache) cache->x = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy, const Cache& cache) const {
  const std::int64_t p = dy.numel() / cout;
  w->ensure_grad();
  b->ensure_grad();
  MapRM dwm(w->grad.data(), cin, cout);
  dwm.noalias() += cache.x.mat(p, cin).transpose() * dy.mat(p, cout);
  for (std::int64_t r = 0; r < p; ++r)
    for (int c = 0; c < cout; ++c) b->grad[static_cast<size_t>(c)] += dy[r * cout + c];

  Tensor dx(cache.x.shape);
  ConstMapRM wm(w->value.data(), cin, cout);
  dx.mat(p, cin).noalias() = dy.mat(p, cout) * wm.transpose();
  return dx;
}

std::int64_t Linear::param_count() const {
  return static_cast<std::int64_t>(cin) * cout + cout;
}

std::int64_t Linear::macs(std::int64_t positions) const {
  return static_cast<std::int64_t>(cin) * cout * positions;
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim_) : dim(dim_) {
  g = ps.create(prefix + ".g", {dim}, Init::kOne, false);
  b = ps.create(prefix + ".b", {dim}, Init::kZero, false);
}

Tensor LayerNorm::forward(const Tensor& x, Cache* cache) const {
  check_input(x.shape.back() == dim, "layernorm input " + x.shape_str() +
                                         " does not match dim=" + std::to_string(dim));
  const std::int64_t rows = x.numel() / dim;
  Tensor y(x.shape);
  if (cache) {
    cache->xhat = Tensor(x.shape);
    cache->inv_std.resize(static_cast<size_t>(rows));
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xp = x.data.data() + r * dim;
    double mean = 0.0;
    for (int i = 0; i < dim; ++i) mean += xp[i];
    mean /= dim;
    double var = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= dim;
    const double inv = 1.0 / std::sqrt(var + eps);
    double* yp = y.data.data() + r * dim;
    double* hp = cache ? cache->xhat.data.data() + r * dim : nullptr;
    for (int i = 0; i < dim; ++i) {
      const double xh = (xp[i] - mean) * inv;
      if (hp) hp[i] = xh;
      yp[i] = g->value[static_cast<size_t>(i)] * xh + b->value[static_cast<size_t>(i)];
    }
    if (cache) cache->inv_std[static_cast<size_t>(r)] = inv;
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& dy, const Cache& cache) const {
  const std::int64_t rows = dy.numel() / dim;
  g->ensure_grad();
  b->ensure_grad();
  Tensor dx(dy.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* dp = dy.data.data() + r * dim;
    const double* hp = cache.xhat.data.data() + r * dim;
    const double inv = cache.inv_std[static_cast<size_t>(r)];
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double dxh = dp[i] * g->value[static_cast<size_t>(i)];
      mean_dxh += dxh;
      mean_dxh_xh += dxh * hp[i];
      g->grad[static_cast<size_t>(i)] += dp[i] * hp[i];
      b->grad[static_cast<size_t>(i)] += dp[i];
    }
    mean_dxh /= dim;
    mean_dxh_xh /= dim;
    double* xp = dx.data.data() + r * dim;
    for (int i = 0; i < dim; ++i) {
      const double dxh = dp[i] * g->value[static_cast<size_t>(i)];
      xp[i] = inv * (dxh - mean_dxh - hp[i] * mean_dxh_xh);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ConvBlock
// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(ParamStore& ps, const std::string& prefix, int dim)
    : norm(ps, prefix + ".norm", dim), conv(ps, prefix + ".conv", dim, dim, 3, 1, 1) {}

Tensor ConvBlock::forward(const Tensor& x, Cache* cache) const {
  Tensor n = norm.forward(x, cache ? &cache->norm_c : nullptr);
  if (cache) cache->gelu_in = n;
  Tensor a = gelu(n);
  Tensor y = conv.forward(a, cache ? &cache->conv_c : nullptr);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
  return y;
}

Tensor ConvBlock::backward(const Tensor& dy, const Cache& cache) const {
  Tensor da = conv.backward(dy, cache.conv_c);
  Tensor dn = gelu_backward(da, cache.gelu_in);
  Tensor dx = norm.backward(dn, cache.norm_c);
  for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
  return dx;
}

std::int64_t ConvBlock::param_count() const {
  return norm.param_count() + conv.param_count();
}

std::int64_t ConvBlock::macs(int h, int w) const { return conv.macs(h, w); }

// ---------------------------------------------------------------------------
// AttnBlock
// ---------------------------------------------------------------------------

AttnBlock::AttnBlock(ParamStore& ps, const std::string& prefix, int dim_, int heads_,
                     int sr_, int mlp_ratio)
    : dim(dim_),
      heads(heads_),
      sr(sr_),
      mlp_hidden(dim_ * mlp_ratio),
      ln1(ps, prefix + ".ln1", dim_),
      q(ps, prefix + ".q", dim_, dim_),
      kv(ps, prefix + ".kv", dim_, 2 * dim_),
      proj(ps, prefix + ".proj", dim_, dim_),
      ln2(ps, prefix + ".ln2", dim_),
      fc1(ps, prefix + ".fc1", dim_, dim_ * mlp_ratio),
      fc2(ps, prefix + ".fc2", dim_ * mlp_ratio, dim_) {
  check_config(dim % heads == 0, "attention dim must divide heads");
  if (sr > 1) {
    sr_conv.emplace(ps, prefix + ".sr", dim, dim, sr, sr, 0);
    sr_norm.emplace(ps, prefix + ".srn", dim);
  }
}

Tensor AttnBlock::forward(const Tensor& x, Cache* cache) const {
  const int h = x.shape[0], w = x.shape[1];
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor xn = ln1.forward(x, cache ? &cache->ln1_c : nullptr);
  if (cache) cache->xn = xn;

  Tensor qm = q.forward(xn, cache ? &cache->q_c : nullptr);

  Tensor xr;
  int rh = h, rw = w;
  if (sr > 1) {
    Tensor red = sr_conv->forward(xn, cache ? &cache->sr_c : nullptr);
    rh = red.shape[0];
    rw = red.shape[1];
    xr = sr_norm->forward(red, cache ? &cache->srn_c : nullptr);
  } else {
    xr = xn;
  }
  if (cache) {
    cache->red_h = rh;
    cache->red_w = rw;
  }
  const std::int64_t m = static_cast<std::int64_t>(rh) * rw;

  Tensor kvm = kv.forward(xr, cache ? &cache->kv_c : nullptr);
  Tensor kmat({static_cast<int>(m), dim});
  Tensor vmat({static_cast<int>(m), dim});
  for (std::int64_t r = 0; r < m; ++r) {
    const double* src = kvm.data.data() + r * 2 * dim;
    std::copy(src, src + dim, kmat.data.data() + r * dim);
    std::copy(src + dim, src + 2 * dim, vmat.data.data() + r * dim);
  }

  Tensor attn({heads, static_cast<int>(n), static_cast<int>(m)});
  Tensor out({static_cast<int>(n), dim});
  for (int hd = 0; hd < heads; ++hd) {
    // strided head views copied into contiguous buffers for the GEMMs
    MatrixRM qh(n, dh), kh(m, dh), vh(m, dh);
    for (std::int64_t r = 0; r < n; ++r)
      for (int c = 0; c < dh; ++c) qh(r, c) = qm[r * dim + hd * dh + c];
    for (std::int64_t r = 0; r < m; ++r)
      for (int c = 0; c < dh; ++c) {
        kh(r, c) = kmat[r * dim + hd * dh + c];
        vh(r, c) = vmat[r * dim + hd * dh + c];
      }
    MapRM am(attn.data.data() + static_cast<std::int64_t>(hd) * n * m, n, m);
    am.noalias() = qh * kh.transpose() * scale;
    // row softmax
    for (std::int64_t r = 0; r < n; ++r) {
      double mx = am(r, 0);
      for (std::int64_t c2 = 1; c2 < m; ++c2) mx = std::max(mx, am(r, c2));
      double sum = 0.0;
      for (std::int64_t c2 = 0; c2 < m; ++c2) {
        am(r, c2) = std::exp(am(r, c2) - mx);
        sum += am(r, c2);
      }
      am.row(r) /= sum;
    }
    MatrixRM oh = am * vh;
    for (std::int64_t r = 0; r < n; ++r)
      for (int c = 0; c < dh; ++c) out[r * dim + hd * dh + c] = oh(r, c);
  }
  if (cache) {
    cache->attn = attn;
    cache->qmat = qm;
    cache->kmat = kmat;
    cache->vmat = vmat;
  }

  out.shape = {h, w, dim};
  Tensor y = proj.forward(out, cache ? &cache->proj_c : nullptr);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
  if (cache) cache->res1 = y;

  Tensor n2 = ln2.forward(y, cache ? &cache->ln2_c : nullptr);
  Tensor h1 = fc1.forward(n2, cache ? &cache->fc1_c : nullptr);
  if (cache) cache->fc1_out = h1;
  Tensor hg = gelu(h1);
  Tensor y2 = fc2.forward(hg, cache ? &cache->fc2_c : nullptr);
  for (std::int64_t i = 0; i < y2.numel(); ++i) y2[i] += y[i];
  return y2;
}

Tensor AttnBlock::backward(const Tensor& dy, const Cache& cache) const {
  const int h = dy.shape[0], w = dy.shape[1];
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  const std::int64_t m = static_cast<std::int64_t>(cache.red_h) * cache.red_w;
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP half
  Tensor dhg = fc2.backward(dy, cache.fc2_c);
  Tensor dh1 = gelu_backward(dhg, cache.fc1_out);
  Tensor dn2 = fc1.backward(dh1, cache.fc1_c);
  Tensor dres1 = ln2.backward(dn2, cache.ln2_c);
  for (std::int64_t i = 0; i < dres1.numel(); ++i) dres1[i] += dy[i];

  // Attention half
  Tensor dout = proj.backward(dres1, cache.proj_c);
  dout.shape = {static_cast<int>(n), dim};

  Tensor dqm({static_cast<int>(n), dim});
  Tensor dkmat({static_cast<int>(m), dim});
  Tensor dvmat({static_cast<int>(m), dim});
  for (int hd = 0; hd < heads; ++hd) {
    MatrixRM qh(n, dh), kh(m, dh), vh(m, dh), doh(n, dh);
    for (std::int64_t r = 0; r < n; ++r)
      for (int c = 0; c < dh; ++c) {
        qh(r, c) = cache.qmat[r * dim + hd * dh + c];
        doh(r, c) = dout[r * dim + hd * dh + c];
      }
    for (std::int64_t r = 0; r < m; ++r)
      for (int c = 0; c < dh; ++c) {
        kh(r, c) = cache.kmat[r * dim + hd * dh + c];
        vh(r, c) = cache.vmat[r * dim + hd * dh + c];
      }
    ConstMapRM am(cache.attn.data.data() + static_cast<std::int64_t>(hd) * n * m, n, m);
    MatrixRM dvh = am.transpose() * doh;
    MatrixRM da = doh * vh.transpose();
    // softmax backward, row-wise with scalar accumulation
    MatrixRM ds(n, m);
    for (std::int64_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::int64_t c2 = 0; c2 < m; ++c2) dot += da(r, c2) * am(r, c2);
      for (std::int64_t c2 = 0; c2 < m; ++c2)
        ds(r, c2) = am(r, c2) * (da(r, c2) - dot) * scale;
    }
    MatrixRM dqh = ds * kh;
    MatrixRM dkh = ds.transpose() * qh;
    for (std::int64_t r = 0; r < n; ++r)
      for (int c = 0; c < dh; ++c) dqm[r * dim + hd * dh + c] = dqh(r, c);
    for (std::int64_t r = 0; r < m; ++r)
      for (int c = 0; c < dh; ++c) {
        dkmat[r * dim + hd * dh + c] = dkh(r, c);
        dvmat[r * dim + hd * dh + c] = dvh(r, c);
      }
  }

  Tensor dkv({static_cast<int>(m), 2 * dim});
  for (std::int64_t r = 0; r < m; ++r) {
    std::copy(dkmat.data.data() + r * dim, dkmat.data.data() + (r + 1) * dim,
              dkv.data.data() + r * 2 * dim);
    std::copy(dvmat.data.data() + r * dim, dvmat.data.data() + (r + 1) * dim,
              dkv.data.data() + r * 2 * dim + dim);
  }
  dkv.shape = {cache.red_h, cache.red_w, 2 * dim};
  Tensor dxr = kv.backward(dkv, cache.kv_c);

  dqm.shape = {h, w, dim};
  Tensor dxn = q.backward(dqm, cache.q_c);

  if (sr > 1) {
    Tensor dred = sr_norm->backward(dxr, cache.srn_c);
    Tensor dxn_sr = sr_conv->backward(dred, cache.sr_c);
    for (std::int64_t i = 0; i < dxn.numel(); ++i) dxn[i] += dxn_sr[i];
  } else {
    for (std::int64_t i = 0; i < dxn.numel(); ++i) dxn[i] += dxr[i];
  }

  Tensor dx = ln1.backward(dxn, cache.ln1_c);
  for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dres1[i];
  return dx;
}

std::int64_t AttnBlock::param_count() const {
  std::int64_t p = ln1.param_count() + q.param_count() + kv.param_count() +
                   proj.param_count() + ln2.param_count() + fc1.param_count() +
                   fc2.param_count();
  if (sr_conv) p += sr_conv->param_count() + sr_norm->param_count();
  return p;
}

std::int64_t AttnBlock::macs(int h, int w) const {
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  std::int64_t m = n;
  std::int64_t sr_macs = 0;
  if (sr > 1) {
    const std::int64_t rh = h / sr, rw = w / sr;
    m = rh * rw;
    sr_macs = sr_conv->macs(static_cast<int>(rh), static_cast<int>(rw));
  }
  const std::int64_t core = 2 * n * m * dim;  // scores + weighted sum
  return q.macs(n) + kv.macs(m) + proj.macs(n) + sr_macs + core + fc1.macs(n) +
         fc2.macs(n);
}

// ---------------------------------------------------------------------------
// PatchEmbed
// ---------------------------------------------------------------------------

PatchEmbed::PatchEmbed(ParamStore& ps, const std::string& prefix, int cin, int cout,
                       int k, int stride, int pad)
    : conv(ps, prefix + ".conv", cin, cout, k, stride, pad),
      norm(ps, prefix + ".norm", cout) {}

Tensor PatchEmbed::forward(const Tensor& x, Cache* cache) const {
  Tensor y = conv.forward(x, cache ? &cache->conv_c : nullptr);
  return norm.forward(y, cache ? &cache->norm_c : nullptr);
}

Tensor PatchEmbed::backward(const Tensor& dy, const Cache& cache) const {
  Tensor d = norm.backward(dy, cache.norm_c);
  return conv.backward(d, cache.conv_c);
}

std::int64_t PatchEmbed::param_count() const {
  return conv.param_count() + norm.param_count();
}

std::int64_t PatchEmbed::macs(int out_h, int out_w) const {
  return conv.macs(out_h, out_w);
}

}  // namespace mesorch
