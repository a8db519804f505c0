#include "nn.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace lfd {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, Tensor<T>& cols, int hout, int wout) {
  const int c_in = x.dim(0), hin = x.dim(1), win = x.dim(2);
  const std::int64_t span = static_cast<std::int64_t>(hout) * wout;
  if (k == 1 && stride == 1 && pad == 0) {
    std::copy(x.v.begin(), x.v.end(), cols.v.begin());
    return;
  }
  T* out = cols.data();
  for (int c = 0; c < c_in; ++c) {
    const T* plane = x.data() + static_cast<std::int64_t>(c) * hin * win;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* row = out + static_cast<std::int64_t>(oy) * wout;
          if (iy < 0 || iy >= hin) {
            std::fill(row, row + wout, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::int64_t>(iy) * win;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[ox] = (ix >= 0 && ix < win) ? src[ix] : T(0);
          }
        }
        out += span;
      }
    }
  }
}

template <typename T>
void col2im(const Tensor<T>& cols, int c_in, int hin, int win, int k, int stride, int pad,
            int hout, int wout, Tensor<T>& dx) {
  if (k == 1 && stride == 1 && pad == 0) {
    std::copy(cols.v.begin(), cols.v.end(), dx.v.begin());
    return;
  }
  std::fill(dx.v.begin(), dx.v.end(), T(0));
  const std::int64_t span = static_cast<std::int64_t>(hout) * wout;
  const T* in = cols.data();
  for (int c = 0; c < c_in; ++c) {
    T* plane = dx.data() + static_cast<std::int64_t>(c) * hin * win;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= hin) continue;
          const T* row = in + static_cast<std::int64_t>(oy) * wout;
          T* dst = plane + static_cast<std::int64_t>(iy) * win;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < win) dst[ix] += row[ox];
          }
        }
        in += span;
      }
    }
  }
}

int pick_groups(int channels) {
  int g = std::min(32, channels);
  while (channels % g != 0) --g;
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

template <typename T>
ParamSlice ParamStore<T>::add(const std::string& name, std::vector<int> shape, InitKind init) {
  LFD_CHECK(!finalized_, "param store: cannot add after finalize");
  LFD_CHECK(by_name_.find(name) == by_name_.end(), "param store: duplicate name " + name);
  ParamInfo info;
  info.name = name;
  info.shape = std::move(shape);
  info.offset = total_;
  info.size = Tensor<T>::numel_of(info.shape);
  info.init = init;
  by_name_[name] = static_cast<int>(infos_.size());
  infos_.push_back(info);
  total_ += info.size;
  return {info.offset, info.size};
}

template <typename T>
void ParamStore<T>::finalize() {
  LFD_CHECK(!finalized_, "param store: already finalized");
  values_.assign(static_cast<size_t>(total_), T(0));
  finalized_ = true;
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

template <typename T>
void ParamStore<T>::init_params(std::uint64_t seed) {
  LFD_CHECK(finalized_, "param store: finalize before init");
  for (const ParamInfo& info : infos_) {
    T* dst = values_.data() + info.offset;
    Rng rng(seed, "init/" + info.name, 0);
    switch (info.init) {
      case InitKind::zeros:
        std::fill(dst, dst + info.size, T(0));
        break;
      case InitKind::ones:
        std::fill(dst, dst + info.size, T(1));
        break;
      case InitKind::normal_002:
        for (std::int64_t i = 0; i < info.size; ++i)
          dst[i] = static_cast<T>(0.02 * rng.normal());
        break;
      case InitKind::fan_in: {
        std::int64_t fan = 1;
        for (size_t d = 1; d < info.shape.size(); ++d) fan *= info.shape[d];
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan, 1)));
        for (std::int64_t i = 0; i < info.size; ++i)
          dst[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
        break;
      }
    }
  }
}

template <typename T>
void ParamStore<T>::copy_matching(const std::string& dst_prefix, const std::string& src_prefix) {
  for (const ParamInfo& info : infos_) {
    if (info.name.rfind(dst_prefix, 0) != 0) continue;
    const std::string suffix = info.name.substr(dst_prefix.size());
    const int src_idx = find(src_prefix + suffix);
    if (src_idx < 0) continue;
    const ParamInfo& src = infos_[static_cast<size_t>(src_idx)];
    if (src.shape != info.shape) continue;
    std::copy(values_.begin() + src.offset, values_.begin() + src.offset + src.size,
              values_.begin() + info.offset);
  }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, int cin_, int cout_, int k_,
                  int stride_, int pad_, InitKind init)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
  w = store.add(name + ".w", {cout, cin, k, k}, init);
  b = store.add(name + ".b", {cout}, InitKind::zeros);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const {
  LFD_CHECK(x.rank() == 3 && x.dim(0) == cin, "conv: channel mismatch");
  const int hin = x.dim(1), win = x.dim(2);
  const int hout = (hin + 2 * pad - k) / stride + 1;
  const int wout = (win + 2 * pad - k) / stride + 1;
  const std::int64_t span = static_cast<std::int64_t>(hout) * wout;
  Tensor<T> cols({cin * k * k, static_cast<int>(span)});
  im2col(x, k, stride, pad, cols, hout, wout);

  Tensor<T> y({cout, hout, wout});
  Map<T> ym(y.data(), cout, span);
  CMap<T> wm(store.w(w), cout, static_cast<std::int64_t>(cin) * k * k);
  CMap<T> cm(cols.data(), static_cast<std::int64_t>(cin) * k * k, span);
  ym.noalias() = wm * cm;
  const T* bias = store.w(b);
  for (int c = 0; c < cout; ++c) ym.row(c).array() += bias[c];

  if (cache) {
    cache->cols = std::move(cols);
    cache->hout = hout;
    cache->wout = wout;
    cache->hin = hin;
    cache->win = win;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                              T* grads) const {
  const std::int64_t span = static_cast<std::int64_t>(cache.hout) * cache.wout;
  const std::int64_t kk = static_cast<std::int64_t>(cin) * k * k;
  CMap<T> dym(dy.data(), cout, span);
  CMap<T> cm(cache.cols.data(), kk, span);
  Map<T> dwm(grads + w.offset, cout, kk);
  dwm.noalias() += dym * cm.transpose();
  T* db = grads + b.offset;
  // Fixed-order reduction; Eigen's redux is alignment-dependent.
  for (int c = 0; c < cout; ++c) {
    const T* row = dy.data() + static_cast<std::int64_t>(c) * span;
    T s = 0;
    for (std::int64_t i = 0; i < span; ++i) s += row[i];
    db[c] += s;
  }

  Tensor<T> dcols({static_cast<int>(kk), static_cast<int>(span)});
  Map<T> dcm(dcols.data(), kk, span);
  CMap<T> wm(store.w(w), cout, kk);
  dcm.noalias() = wm.transpose() * dym;

  Tensor<T> dx({cin, cache.hin, cache.win});
  col2im(dcols, cin, cache.hin, cache.win, k, stride, pad, cache.hout, cache.wout, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, int in_, int out_, InitKind init)
    : in(in_), out(out_) {
  w = store.add(name + ".w", {out, in}, init);
  b = store.add(name + ".b", {out}, InitKind::zeros);
}

template <typename T>
Tensor<T> Linear<T>::forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const {
  const std::int64_t n = x.numel() / in;
  LFD_CHECK(x.numel() == static_cast<std::int64_t>(in) * n, "linear: input size mismatch");
  Tensor<T> y({out, static_cast<int>(n)});
  const T* bias = store.w(b);
  if (n == 1) {
    // Hand-rolled matvec; Eigen's gemv reduction order varies with alignment.
    const T* wp = store.w(w);
    for (int r = 0; r < out; ++r) {
      T s = bias[r];
      const T* row = wp + static_cast<std::int64_t>(r) * in;
      for (int c = 0; c < in; ++c) s += row[c] * x.v[static_cast<size_t>(c)];
      y.v[static_cast<size_t>(r)] = s;
    }
  } else {
    CMap<T> xm(x.data(), in, n);
    CMap<T> wm(store.w(w), out, in);
    Map<T> ym(y.data(), out, n);
    ym.noalias() = wm * xm;
    for (int r = 0; r < out; ++r) ym.row(r).array() += bias[r];
  }
  if (cache) {
    cache->x = x;
    cache->x.shape = {in, static_cast<int>(n)};
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                              T* grads) const {
  const std::int64_t n = cache.x.dim(1);
  T* db = grads + b.offset;
  Tensor<T> dx({in, static_cast<int>(n)});
  if (n == 1) {
    T* dwp = grads + w.offset;
    const T* wp = store.w(w);
    for (int c = 0; c < in; ++c) dx.v[static_cast<size_t>(c)] = 0;
    for (int r = 0; r < out; ++r) {
      const T d = dy.v[static_cast<size_t>(r)];
      db[r] += d;
      T* dw_row = dwp + static_cast<std::int64_t>(r) * in;
      const T* w_row = wp + static_cast<std::int64_t>(r) * in;
      for (int c = 0; c < in; ++c) {
        dw_row[c] += d * cache.x.v[static_cast<size_t>(c)];
        dx.v[static_cast<size_t>(c)] += w_row[c] * d;
      }
    }
    return dx;
  }
  CMap<T> dym(dy.data(), out, n);
  CMap<T> xm(cache.x.data(), in, n);
  Map<T> dwm(grads + w.offset, out, in);
  dwm.noalias() += dym * xm.transpose();
  for (int r = 0; r < out; ++r) {
    const T* row = dy.data() + static_cast<std::int64_t>(r) * n;
    T s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += row[i];
    db[r] += s;
  }

  CMap<T> wm(store.w(w), out, in);
  Map<T> dxm(dx.data(), in, n);
  dxm.noalias() = wm.transpose() * dym;
  return dx;
}

// ---------------------------------------------------------------------------
// GroupNorm
// ---------------------------------------------------------------------------

template <typename T>
GroupNorm<T>::GroupNorm(ParamStore<T>& store, const std::string& name, int channels_)
    : channels(channels_), groups(pick_groups(channels_)) {
  gamma = store.add(name + ".gamma", {channels}, InitKind::ones);
  beta = store.add(name + ".beta", {channels}, InitKind::zeros);
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                                Cache* cache) const {
  LFD_CHECK(x.dim(0) == channels, "groupnorm: channel mismatch");
  const std::int64_t hw = x.numel() / channels;
  const int cpg = channels / groups;
  const std::int64_t m = cpg * hw;

  Tensor<T> xhat;
  xhat.shape = x.shape;
  xhat.v.resize(x.v.size());
  std::vector<T> inv_std(static_cast<size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const T* src = x.data() + static_cast<std::int64_t>(g) * m;
    double mean = 0;
    for (std::int64_t i = 0; i < m; ++i) mean += src[i];
    mean /= static_cast<double>(m);
    double var = 0;
    for (std::int64_t i = 0; i < m; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_std[static_cast<size_t>(g)] = is;
    T* dst = xhat.data() + static_cast<std::int64_t>(g) * m;
    const T mu = static_cast<T>(mean);
    for (std::int64_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * is;
  }

  Tensor<T> y;
  y.shape = x.shape;
  y.v.resize(x.v.size());
  const T* ga = store.w(gamma);
  const T* be = store.w(beta);
  for (int c = 0; c < channels; ++c) {
    const T* xh = xhat.data() + c * hw;
    T* dst = y.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) dst[i] = ga[c] * xh[i] + be[c];
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Tensor<T> GroupNorm<T>::backward(const ParamStore<T>& store, const Cache& cache,
                                 const Tensor<T>& dy, T* grads) const {
  const std::int64_t hw = dy.numel() / channels;
  const int cpg = channels / groups;
  const std::int64_t m = cpg * hw;
  const T* ga = store.w(gamma);
  T* dgamma = grads + gamma.offset;
  T* dbeta = grads + beta.offset;

  for (int c = 0; c < channels; ++c) {
    const T* d = dy.data() + c * hw;
    const T* xh = cache.xhat.data() + c * hw;
    double sg = 0, sb = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      sg += static_cast<double>(d[i]) * xh[i];
      sb += d[i];
    }
    dgamma[c] += static_cast<T>(sg);
    dbeta[c] += static_cast<T>(sb);
  }

  Tensor<T> dx;
  dx.shape = dy.shape;
  dx.v.resize(dy.v.size());
  for (int g = 0; g < groups; ++g) {
    const std::int64_t base = static_cast<std::int64_t>(g) * m;
    double s1 = 0, s2 = 0;
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const T* d = dy.data() + c * hw;
      const T* xh = cache.xhat.data() + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double dxh = static_cast<double>(d[i]) * ga[c];
        s1 += dxh;
        s2 += dxh * xh[i];
      }
    }
    const double is = cache.inv_std[static_cast<size_t>(g)];
    const double inv_m = 1.0 / static_cast<double>(m);
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const T* d = dy.data() + c * hw;
      const T* xh = cache.xhat.data() + c * hw;
      T* out = dx.data() + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double dxh = static_cast<double>(d[i]) * ga[c];
        out[i] = static_cast<T>(is * (dxh - inv_m * (s1 + static_cast<double>(xh[i]) * s2)));
      }
    }
    (void)base;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// SiLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y;
  y.shape = x.shape;
  y.v.resize(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i) {
    const T s = static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x.v[i]));
    y.v[i] = x.v[i] * s;
  }
  return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx;
  dx.shape = x.shape;
  dx.v.resize(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i) {
    const T s = static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x.v[i]));
    dx.v[i] = dy.v[i] * (s + x.v[i] * s * (static_cast<T>(1) - s));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mha_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                      MhaCache<T>* cache) {
  const int c = q.dim(0);
  LFD_CHECK(k.dim(0) == c && v.dim(0) == c, "attention: channel mismatch");
  LFD_CHECK(c % heads == 0, "attention: heads must divide channels");
  const int dh = c / heads;
  const std::int64_t nq = q.dim(1), nk = k.dim(1);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<T> out({c, static_cast<int>(nq)});
  std::vector<Tensor<T>> attn(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    CMap<T> qh(q.data() + static_cast<std::int64_t>(h) * dh * nq, dh, nq);
    CMap<T> kh(k.data() + static_cast<std::int64_t>(h) * dh * nk, dh, nk);
    CMap<T> vh(v.data() + static_cast<std::int64_t>(h) * dh * nk, dh, nk);
    Tensor<T> logits({static_cast<int>(nq), static_cast<int>(nk)});
    Map<T> lm(logits.data(), nq, nk);
    lm.noalias() = qh.transpose() * kh;
    lm *= scale;
    // Row softmax with max subtraction.
    for (std::int64_t i = 0; i < nq; ++i) {
      T* row = logits.data() + i * nk;
      T mx = row[0];
      for (std::int64_t j = 1; j < nk; ++j) mx = std::max(mx, row[j]);
      T sum = 0;
      for (std::int64_t j = 0; j < nk; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = static_cast<T>(1) / sum;
      for (std::int64_t j = 0; j < nk; ++j) row[j] *= inv;
    }
    Map<T> oh(out.data() + static_cast<std::int64_t>(h) * dh * nq, dh, nq);
    CMap<T> am(logits.data(), nq, nk);
    oh.noalias() = vh * am.transpose();
    attn[static_cast<size_t>(h)] = std::move(logits);
  }
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->attn = std::move(attn);
    cache->heads = heads;
  }
  return out;
}

template <typename T>
void mha_backward(const MhaCache<T>& cache, const Tensor<T>& dout, Tensor<T>* dq, Tensor<T>* dk,
                  Tensor<T>* dv) {
  const int c = cache.q.dim(0);
  const int heads = cache.heads;
  const int dh = c / heads;
  const std::int64_t nq = cache.q.dim(1), nk = cache.k.dim(1);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  *dq = Tensor<T>({c, static_cast<int>(nq)});
  *dk = Tensor<T>({c, static_cast<int>(nk)});
  *dv = Tensor<T>({c, static_cast<int>(nk)});
  for (int h = 0; h < heads; ++h) {
    const std::int64_t off_q = static_cast<std::int64_t>(h) * dh * nq;
    const std::int64_t off_k = static_cast<std::int64_t>(h) * dh * nk;
    CMap<T> doh(dout.data() + off_q, dh, nq);
    CMap<T> qh(cache.q.data() + off_q, dh, nq);
    CMap<T> kh(cache.k.data() + off_k, dh, nk);
    CMap<T> vh(cache.v.data() + off_k, dh, nk);
    CMap<T> am(cache.attn[static_cast<size_t>(h)].data(), nq, nk);

    Map<T> dvh(dv->data() + off_k, dh, nk);
    dvh.noalias() = doh * am;

    RowMat<T> da(nq, nk);
    da.noalias() = doh.transpose() * vh;
    // softmax backward per row: a * (da - (da . a)), fixed-order dot
    RowMat<T> dlogits(nq, nk);
    for (std::int64_t i = 0; i < nq; ++i) {
      T dot = 0;
      for (std::int64_t j = 0; j < nk; ++j) dot += da(i, j) * am(i, j);
      for (std::int64_t j = 0; j < nk; ++j) dlogits(i, j) = am(i, j) * (da(i, j) - dot);
    }
    dlogits *= scale;

    Map<T> dqh(dq->data() + off_q, dh, nq);
    dqh.noalias() = kh * dlogits.transpose();
    Map<T> dkh(dk->data() + off_k, dh, nk);
    dkh.noalias() = qh * dlogits;
  }
}

// ---------------------------------------------------------------------------
// SelfAttnBlock
// ---------------------------------------------------------------------------

template <typename T>
SelfAttnBlock<T>::SelfAttnBlock(ParamStore<T>& store, const std::string& name, int channels_,
                                int heads_)
    : channels(channels_),
      heads(heads_),
      norm(store, name + ".norm", channels_),
      wq(store, name + ".q", channels_, channels_),
      wk(store, name + ".k", channels_, channels_),
      wv(store, name + ".v", channels_, channels_),
      wo(store, name + ".out", channels_, channels_) {}

template <typename T>
Tensor<T> SelfAttnBlock<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                                    Cache* cache) const {
  const int h = x.dim(1), w_ = x.dim(2);
  Tensor<T> xn = norm.forward(store, x, cache ? &cache->norm : nullptr);
  xn.shape = {channels, h * w_};
  const Tensor<T> q = wq.forward(store, xn, cache ? &cache->q : nullptr);
  const Tensor<T> k = wk.forward(store, xn, cache ? &cache->k : nullptr);
  const Tensor<T> v = wv.forward(store, xn, cache ? &cache->v : nullptr);
  const Tensor<T> a = mha_forward(q, k, v, heads, cache ? &cache->mha : nullptr);
  Tensor<T> o = wo.forward(store, a, cache ? &cache->o : nullptr);
  Tensor<T> y;
  y.shape = x.shape;
  y.v.resize(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] + o.v[i];
  if (cache) {
    cache->h = h;
    cache->w = w_;
  }
  return y;
}

template <typename T>
Tensor<T> SelfAttnBlock<T>::backward(const ParamStore<T>& store, const Cache& cache,
                                     const Tensor<T>& dy, T* grads) const {
  Tensor<T> dflat = dy;
  dflat.shape = {channels, cache.h * cache.w};
  const Tensor<T> da = wo.backward(store, cache.o, dflat, grads);
  Tensor<T> dq, dk, dv;
  mha_backward(cache.mha, da, &dq, &dk, &dv);
  Tensor<T> dxn = wq.backward(store, cache.q, dq, grads);
  const Tensor<T> dxn_k = wk.backward(store, cache.k, dk, grads);
  const Tensor<T> dxn_v = wv.backward(store, cache.v, dv, grads);
  for (size_t i = 0; i < dxn.v.size(); ++i) dxn.v[i] += dxn_k.v[i] + dxn_v.v[i];
  dxn.shape = {channels, cache.h, cache.w};
  Tensor<T> dx = norm.backward(store, cache.norm, dxn, grads);
  for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
  return dx;
}

// ---------------------------------------------------------------------------
// CrossAttnBlock
// ---------------------------------------------------------------------------

template <typename T>
CrossAttnBlock<T>::CrossAttnBlock(ParamStore<T>& store, const std::string& name, int channels_,
                                  int heads_)
    : channels(channels_),
      heads(heads_),
      norm_q(store, name + ".norm_q", channels_),
      norm_kv(store, name + ".norm_kv", channels_),
      wq(store, name + ".q", channels_, channels_),
      wk(store, name + ".k", channels_, channels_),
      wv(store, name + ".v", channels_, channels_),
      wo(store, name + ".out", channels_, channels_) {}

template <typename T>
Tensor<T> CrossAttnBlock<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                                     const Tensor<T>& src, Cache* cache) const {
  LFD_CHECK(src.dim(0) == channels, "cross-attention: source channel mismatch");
  const int h = x.dim(1), w_ = x.dim(2);
  const int sh = src.dim(1), sw = src.dim(2);
  Tensor<T> xn = norm_q.forward(store, x, cache ? &cache->norm_q : nullptr);
  xn.shape = {channels, h * w_};
  Tensor<T> sn = norm_kv.forward(store, src, cache ? &cache->norm_kv : nullptr);
  sn.shape = {channels, sh * sw};
  const Tensor<T> q = wq.forward(store, xn, cache ? &cache->q : nullptr);
  const Tensor<T> k = wk.forward(store, sn, cache ? &cache->k : nullptr);
  const Tensor<T> v = wv.forward(store, sn, cache ? &cache->v : nullptr);
  const Tensor<T> a = mha_forward(q, k, v, heads, cache ? &cache->mha : nullptr);
  Tensor<T> o = wo.forward(store, a, cache ? &cache->o : nullptr);
  Tensor<T> y;
  y.shape = x.shape;
  y.v.resize(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] + o.v[i];
  if (cache) {
    cache->h = h;
    cache->w = w_;
    cache->src_h = sh;
    cache->src_w = sw;
  }
  return y;
}

template <typename T>
Tensor<T> CrossAttnBlock<T>::backward(const ParamStore<T>& store, const Cache& cache,
                                      const Tensor<T>& dy, Tensor<T>& dsrc, T* grads) const {
  Tensor<T> dflat = dy;
  dflat.shape = {channels, cache.h * cache.w};
  const Tensor<T> da = wo.backward(store, cache.o, dflat, grads);
  Tensor<T> dq, dk, dv;
  mha_backward(cache.mha, da, &dq, &dk, &dv);

  Tensor<T> dxn = wq.backward(store, cache.q, dq, grads);
  dxn.shape = {channels, cache.h, cache.w};
  Tensor<T> dx = norm_q.backward(store, cache.norm_q, dxn, grads);
  for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];

  Tensor<T> dsn = wk.backward(store, cache.k, dk, grads);
  const Tensor<T> dsn_v = wv.backward(store, cache.v, dv, grads);
  for (size_t i = 0; i < dsn.v.size(); ++i) dsn.v[i] += dsn_v.v[i];
  dsn.shape = {channels, cache.src_h, cache.src_w};
  const Tensor<T> ds = norm_kv.backward(store, cache.norm_kv, dsn, grads);
  LFD_CHECK(dsrc.v.size() == ds.v.size(), "cross-attention: dsrc shape mismatch");
  for (size_t i = 0; i < ds.v.size(); ++i) dsrc.v[i] += ds.v[i];
  return dx;
}

// ---------------------------------------------------------------------------
// ResBlock
// ---------------------------------------------------------------------------

template <typename T>
ResBlock<T>::ResBlock(ParamStore<T>& store, const std::string& name, int cin_, int cout_,
                      int temb_dim_)
    : cin(cin_), cout(cout_), temb_dim(temb_dim_) {
  norm1 = GroupNorm<T>(store, name + ".norm1", cin);
  conv1 = Conv2d<T>(store, name + ".conv1", cin, cout, 3, 1, 1);
  if (temb_dim > 0) temb_proj = Linear<T>(store, name + ".temb", temb_dim, cout);
  norm2 = GroupNorm<T>(store, name + ".norm2", cout);
  conv2 = Conv2d<T>(store, name + ".conv2", cout, cout, 3, 1, 1);
  if (cin != cout) skip = Conv2d<T>(store, name + ".skip", cin, cout, 1, 1, 0);
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                               const Tensor<T>* temb, Cache* cache) const {
  const Tensor<T> a1 = norm1.forward(store, x, cache ? &cache->norm1 : nullptr);
  const Tensor<T> s1 = silu(a1);
  Tensor<T> h = conv1.forward(store, s1, cache ? &cache->conv1 : nullptr);
  if (temb_dim > 0) {
    LFD_CHECK(temb && temb->numel() == temb_dim, "resblock: bad time embedding");
    const Tensor<T> st = silu(*temb);
    const Tensor<T> e = temb_proj.forward(store, st, cache ? &cache->temb_proj : nullptr);
    const std::int64_t hw = h.numel() / cout;
    for (int c = 0; c < cout; ++c) {
      T* plane = h.data() + c * hw;
      const T ec = e.v[static_cast<size_t>(c)];
      for (std::int64_t i = 0; i < hw; ++i) plane[i] += ec;
    }
    if (cache) cache->temb = *temb;
  }
  const Tensor<T> a2 = norm2.forward(store, h, cache ? &cache->norm2 : nullptr);
  const Tensor<T> s2 = silu(a2);
  Tensor<T> y = conv2.forward(store, s2, cache ? &cache->conv2 : nullptr);
  if (cin != cout) {
    const Tensor<T> sk = skip.forward(store, x, cache ? &cache->skip : nullptr);
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += sk.v[i];
  } else {
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
  }
  if (cache) {
    cache->x = x;
    cache->act1_in = a1;
    cache->act2_in = a2;
  }
  return y;
}

template <typename T>
Tensor<T> ResBlock<T>::backward(const ParamStore<T>& store, const Cache& cache,
                                const Tensor<T>& dy, Tensor<T>* dtemb, T* grads) const {
  // conv2 <- silu <- norm2
  const Tensor<T> ds2 = conv2.backward(store, cache.conv2, dy, grads);
  const Tensor<T> da2 = silu_backward(cache.act2_in, ds2);
  Tensor<T> dh = norm2.backward(store, cache.norm2, da2, grads);

  if (temb_dim > 0) {
    Tensor<T> de({cout, 1});
    const std::int64_t hw = dh.numel() / cout;
    for (int c = 0; c < cout; ++c) {
      const T* plane = dh.data() + c * hw;
      double s = 0;
      for (std::int64_t i = 0; i < hw; ++i) s += plane[i];
      de.v[static_cast<size_t>(c)] = static_cast<T>(s);
    }
    const Tensor<T> dst = temb_proj.backward(store, cache.temb_proj, de, grads);
    const Tensor<T> dt = silu_backward(cache.temb, dst);
    LFD_CHECK(dtemb && dtemb->v.size() == dt.v.size(), "resblock: dtemb missing");
    for (size_t i = 0; i < dt.v.size(); ++i) dtemb->v[i] += dt.v[i];
  }

  // conv1 <- silu <- norm1
  const Tensor<T> ds1 = conv1.backward(store, cache.conv1, dh, grads);
  const Tensor<T> da1 = silu_backward(cache.act1_in, ds1);
  Tensor<T> dx = norm1.backward(store, cache.norm1, da1, grads);

  if (cin != cout) {
    const Tensor<T> dsk = skip.backward(store, cache.skip, dy, grads);
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dsk.v[i];
  } else {
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Upsample
// ---------------------------------------------------------------------------

template <typename T>
Upsample<T>::Upsample(ParamStore<T>& store, const std::string& name, int channels)
    : conv(store, name + ".conv", channels, channels, 3, 1, 1) {}

template <typename T>
Tensor<T> Upsample<T>::forward(const ParamStore<T>& store, const Tensor<T>& x,
                               Cache* cache) const {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> up({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x.data() + static_cast<std::int64_t>(ch) * h * w;
    T* dst = up.data() + static_cast<std::int64_t>(ch) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const T v = src[y * w + xx];
        dst[(2 * y) * 2 * w + 2 * xx] = v;
        dst[(2 * y) * 2 * w + 2 * xx + 1] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xx] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
      }
    }
  }
  if (cache) {
    cache->hin = h;
    cache->win = w;
  }
  return conv.forward(store, up, cache ? &cache->conv : nullptr);
}

template <typename T>
Tensor<T> Upsample<T>::backward(const ParamStore<T>& store, const Cache& cache,
                                const Tensor<T>& dy, T* grads) const {
  const Tensor<T> dup = conv.backward(store, cache.conv, dy, grads);
  const int c = dup.dim(0), h = cache.hin, w = cache.win;
  Tensor<T> dx({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = dup.data() + static_cast<std::int64_t>(ch) * 4 * h * w;
    T* dst = dx.data() + static_cast<std::int64_t>(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        dst[y * w + xx] = src[(2 * y) * 2 * w + 2 * xx] + src[(2 * y) * 2 * w + 2 * xx + 1] +
                          src[(2 * y + 1) * 2 * w + 2 * xx] +
                          src[(2 * y + 1) * 2 * w + 2 * xx + 1];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sinusoidal_embedding(int t, int dim) {
  LFD_CHECK(dim >= 2 && dim % 2 == 0, "time embedding: dim must be even and >= 2");
  const int half = dim / 2;
  Tensor<T> e({dim});
  for (int k = 0; k < half; ++k) {
    const double f =
        half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(k) / (half - 1)) : 1.0;
    e.v[static_cast<size_t>(k)] = static_cast<T>(std::sin(t * f));
    e.v[static_cast<size_t>(half + k)] = static_cast<T>(std::cos(t * f));
  }
  return e;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  LFD_CHECK(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2), "concat: spatial mismatch");
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.numel());
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& d, int ca, Tensor<T>* da, Tensor<T>* db) {
  const int h = d.dim(1), w = d.dim(2);
  const int cb = d.dim(0) - ca;
  *da = Tensor<T>({ca, h, w});
  *db = Tensor<T>({cb, h, w});
  std::copy(d.v.begin(), d.v.begin() + da->numel(), da->v.begin());
  std::copy(d.v.begin() + da->numel(), d.v.end(), db->v.begin());
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define LFD_INSTANTIATE(T)                                                                       \
  template class ParamStore<T>;                                                                  \
  template struct Conv2d<T>;                                                                     \
  template struct Linear<T>;                                                                     \
  template struct GroupNorm<T>;                                                                  \
  template struct SelfAttnBlock<T>;                                                              \
  template struct CrossAttnBlock<T>;                                                             \
  template struct ResBlock<T>;                                                                   \
  template struct Upsample<T>;                                                                   \
  template Tensor<T> silu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> silu_backward<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mha_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                                    MhaCache<T>*);                                               \
  template void mha_backward<T>(const MhaCache<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,    \
                                Tensor<T>*);                                                     \
  template Tensor<T> sinusoidal_embedding<T>(int, int);                                          \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>*, Tensor<T>*);

LFD_INSTANTIATE(float)
LFD_INSTANTIATE(double)

#undef LFD_INSTANTIATE

}  // namespace lfd
