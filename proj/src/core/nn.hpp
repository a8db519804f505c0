#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace lfd {

enum class InitKind { fan_in, zeros, ones, normal_002 };

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::int64_t offset = 0;
  std::int64_t size = 0;
  InitKind init = InitKind::fan_in;
};

struct ParamSlice {
  std::int64_t offset = -1;
  std::int64_t size = 0;
};

// Flat named parameter storage. Registration order defines the checkpoint
// manifest order; gradients go to caller-supplied buffers so concurrent
// backward passes can accumulate privately.
template <typename T>
class ParamStore {
 public:
  ParamSlice add(const std::string& name, std::vector<int> shape, InitKind init = InitKind::fan_in);
  void finalize();
  bool finalized() const { return finalized_; }

  std::int64_t total() const { return total_; }
  const std::vector<ParamInfo>& manifest() const { return infos_; }
  int find(const std::string& name) const;

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  const T* w(const ParamSlice& s) const { return values_.data() + s.offset; }
  T* w(const ParamSlice& s) { return values_.data() + s.offset; }

  // Deterministic per-tensor init: stream (seed, "init/<name>", 0).
  void init_params(std::uint64_t seed);
  // Copies src-prefixed tensors onto dst-prefixed tensors of equal shape.
  void copy_matching(const std::string& dst_prefix, const std::string& src_prefix);

 private:
  std::vector<ParamInfo> infos_;
  std::unordered_map<std::string, int> by_name_;
  std::vector<T> values_;
  std::int64_t total_ = 0;
  bool finalized_ = false;
};

// ---------------------------------------------------------------------------
// Layers. forward() reads parameters from the store; backward() consumes the
// forward cache, accumulates parameter gradients into `grads` (a buffer of
// store.total() elements) and returns the input gradient.
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  ParamSlice w, b;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride,
         int pad, InitKind init = InitKind::fan_in);

  struct Cache {
    Tensor<T> cols;  // (cin*k*k) x (hout*wout)
    int hout = 0, wout = 0, hin = 0, win = 0;
  };

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     T* grads) const;
};

template <typename T>
struct Linear {
  int in = 0, out = 0;
  ParamSlice w, b;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out,
         InitKind init = InitKind::fan_in);

  struct Cache {
    Tensor<T> x;  // (in, n)
  };

  // x has shape (in, n): n token columns.
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     T* grads) const;
};

template <typename T>
struct GroupNorm {
  int channels = 0, groups = 0;
  double eps = 1e-6;
  ParamSlice gamma, beta;

  GroupNorm() = default;
  GroupNorm(ParamStore<T>& store, const std::string& name, int channels);

  struct Cache {
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per group
  };

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     T* grads) const;
};

template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy);

// Multi-head scaled dot-product attention over token matrices (C, N).
// Queries attend to keys/values; logits are q.k / sqrt(head_dim).
template <typename T>
struct MhaCache {
  Tensor<T> q, k, v;
  std::vector<Tensor<T>> attn;  // per head, (Nq, Nk)
  int heads = 0;
};

template <typename T>
Tensor<T> mha_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                      MhaCache<T>* cache);
template <typename T>
void mha_backward(const MhaCache<T>& cache, const Tensor<T>& dout, Tensor<T>* dq, Tensor<T>* dk,
                  Tensor<T>* dv);

// Pre-normed residual self-attention on a (C, H, W) feature map.
template <typename T>
struct SelfAttnBlock {
  int channels = 0, heads = 1;
  GroupNorm<T> norm;
  Linear<T> wq, wk, wv, wo;

  SelfAttnBlock() = default;
  SelfAttnBlock(ParamStore<T>& store, const std::string& name, int channels, int heads);

  struct Cache {
    typename GroupNorm<T>::Cache norm;
    typename Linear<T>::Cache q, k, v, o;
    MhaCache<T> mha;
    int h = 0, w = 0;
  };

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     T* grads) const;
};

// Pre-normed residual cross-attention: queries from the target feature map,
// keys/values from a same-scale source feature map.
template <typename T>
struct CrossAttnBlock {
  int channels = 0, heads = 1;
  GroupNorm<T> norm_q, norm_kv;
  Linear<T> wq, wk, wv, wo;

  CrossAttnBlock() = default;
  CrossAttnBlock(ParamStore<T>& store, const std::string& name, int channels, int heads);

  struct Cache {
    typename GroupNorm<T>::Cache norm_q, norm_kv;
    typename Linear<T>::Cache q, k, v, o;
    MhaCache<T> mha;
    int h = 0, w = 0, src_h = 0, src_w = 0;
  };

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& src,
                    Cache* cache) const;
  // Returns dx; adds the source-feature gradient into dsrc.
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     Tensor<T>& dsrc, T* grads) const;
};

// DDPM-style residual block; time embedding is added per channel after the
// first convolution. temb_dim == 0 builds the block without the projection.
template <typename T>
struct ResBlock {
  int cin = 0, cout = 0, temb_dim = 0;
  GroupNorm<T> norm1, norm2;
  Conv2d<T> conv1, conv2;
  Linear<T> temb_proj;
  Conv2d<T> skip;  // 1x1, only when cin != cout

  ResBlock() = default;
  ResBlock(ParamStore<T>& store, const std::string& name, int cin, int cout, int temb_dim);

  struct Cache {
    typename GroupNorm<T>::Cache norm1, norm2;
    typename Conv2d<T>::Cache conv1, conv2, skip;
    typename Linear<T>::Cache temb_proj;
    Tensor<T> x, act1_in, act2_in, temb;
  };

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>* temb,
                    Cache* cache) const;
  // Returns dx; accumulates d(temb) into dtemb when the block uses it.
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     Tensor<T>* dtemb, T* grads) const;
};

// Nearest-neighbor 2x upsample followed by a 3x3 convolution.
template <typename T>
struct Upsample {
  Conv2d<T> conv;

  Upsample() = default;
  Upsample(ParamStore<T>& store, const std::string& name, int channels);

  struct Cache {
    typename Conv2d<T>::Cache conv;
    int hin = 0, win = 0;
  };

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy,
                     T* grads) const;
};

// Sinusoidal embedding of an integer step: [sin(t f_0).., cos(t f_0)..] with
// dim/2 geometrically spaced frequencies from 1 down to 1/10000.
template <typename T>
Tensor<T> sinusoidal_embedding(int t, int dim);

// Channel concat/split for skip connections; token-major (C, H, W).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& d, int ca, Tensor<T>* da, Tensor<T>* db);

}  // namespace lfd
