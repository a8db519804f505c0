#pragma once

#include <map>
#include <string>
#include <vector>

#include "nn.hpp"

namespace lfd {

// Conditioning families sharing one U-Net topology:
//   lightfield  - per-pixel light-field encoding channels + source cross-attention
//   rt_baseline - the 12 numbers of (R_rel, t_rel) tiled per pixel + source cross-attention
//   refiner     - bilinearly upsampled low-res image channels, no source branch
struct DenoiserConfig {
  enum class Conditioning { lightfield, rt_baseline, refiner };

  int image_size = 32;
  int encoding_channels = 180;
  int base_channels = 64;
  std::vector<int> channel_multipliers = {1, 2, 4};
  int num_res_blocks = 2;
  std::vector<int> self_attention_at = {4};
  std::vector<int> cross_attention_at = {4, 8};
  int heads = 4;
  int time_embed_dim = 256;
  double p_uncond = 0.1;
  Conditioning conditioning = Conditioning::lightfield;

  int in_channels() const { return 3 + encoding_channels; }
  bool has_source_branch() const { return conditioning != Conditioning::refiner; }
  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  std::vector<int> available_factors() const;
  // Requested sites clipped to the factors this topology provides.
  std::vector<int> active_self_attention() const;
  std::vector<int> active_cross_attention() const;
  void validate() const;
};

DenoiserConfig make_rt_baseline(DenoiserConfig config);

// Feature pyramid keyed by downsample factor.
template <typename T>
using SourceFeatures = std::map<int, Tensor<T>>;

enum class StepKind { push_skip, pop_concat, res, self_attn, cross_attn, down, up, emit };

struct Step {
  StepKind kind;
  int index = -1;
  int ds = 1;
};

template <typename T>
struct UnetTrace {
  typename Conv2d<T>::Cache stem;
  Tensor<T> temb_raw, temb_mid, temb;
  typename Linear<T>::Cache temb_l1, temb_l2;
  std::vector<typename ResBlock<T>::Cache> res;
  std::vector<typename SelfAttnBlock<T>::Cache> attn;
  std::vector<typename CrossAttnBlock<T>::Cache> cross;
  std::vector<typename Conv2d<T>::Cache> down;
  std::vector<typename Upsample<T>::Cache> up;
  std::vector<int> concat_split;
  typename GroupNorm<T>::Cache final_norm;
  Tensor<T> final_act_in;
  typename Conv2d<T>::Cache final_conv;
};

template <typename T>
struct SourceTrace {
  typename Conv2d<T>::Cache stem;
  std::vector<typename ResBlock<T>::Cache> res;
  std::vector<typename SelfAttnBlock<T>::Cache> attn;
  std::vector<typename Conv2d<T>::Cache> down;
};

// The conditional eps-predictor plus its source-feature encoder twin.
template <typename T>
class NvsModel {
 public:
  explicit NvsModel(const DenoiserConfig& cfg);

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // Fan-in init everywhere, zero final conv, then the source encoder starts
  // from the denoiser encoder's values.
  void init_params(std::uint64_t seed);

  // Source image (+ conditioning channels) -> per-scale features for
  // cross-attention. Trace optional (inference passes nullptr).
  SourceFeatures<T> encode_source(const Tensor<T>& src_with_cond, SourceTrace<T>* trace) const;

  // Learned null features standing in for a dropped source condition.
  SourceFeatures<T> null_features() const;

  // x_t (3,H,W) concatenated internally with cond (encoding_channels,H,W).
  Tensor<T> predict_eps(const Tensor<T>& x_t, int t, const Tensor<T>& cond,
                        const SourceFeatures<T>& src, UnetTrace<T>* trace) const;

  // d(eps) -> parameter grads; returns the source-feature gradients so the
  // caller can chain into backward_source or backward_null.
  SourceFeatures<T> backward(const Tensor<T>& d_eps, const UnetTrace<T>& trace, T* grads) const;
  void backward_source(const SourceFeatures<T>& d_feats, const SourceTrace<T>& trace,
                       T* grads) const;
  void backward_null(const SourceFeatures<T>& d_feats, T* grads) const;

  struct AttentionSite {
    std::string where;  // "encoder<i>", "middle", "decoder<i>", "source<i>"
    std::string kind;   // "self" | "cross"
    int ds = 1;
  };
  std::vector<AttentionSite> attention_sites() const { return sites_; }

 private:
  Tensor<T> run_temb(int t, UnetTrace<T>* trace) const;

  DenoiserConfig cfg_;
  ParamStore<T> store_;

  Conv2d<T> stem_;
  Linear<T> temb_l1_, temb_l2_;
  std::vector<ResBlock<T>> res_;
  std::vector<SelfAttnBlock<T>> attn_;
  std::vector<CrossAttnBlock<T>> cross_;
  std::vector<Conv2d<T>> down_;
  std::vector<Upsample<T>> up_;
  std::vector<Step> program_;
  GroupNorm<T> final_norm_;
  Conv2d<T> final_conv_;

  Conv2d<T> src_stem_;
  std::vector<ResBlock<T>> src_res_;
  std::vector<SelfAttnBlock<T>> src_attn_;
  std::vector<Conv2d<T>> src_down_;
  std::vector<Step> src_program_;

  std::map<int, ParamSlice> null_tokens_;  // ds -> (C, H, W) learned tensor
  std::map<int, std::vector<int>> null_shapes_;
  std::vector<AttentionSite> sites_;
};

using NvsModelF = NvsModel<float>;
using NvsModelD = NvsModel<double>;

}  // namespace lfd
