#include "denoiser.hpp"

#include <algorithm>

namespace lfd {

std::vector<int> DenoiserConfig::available_factors() const {
  std::vector<int> f;
  int ds = 1;
  for (size_t i = 0; i < channel_multipliers.size(); ++i) {
    f.push_back(ds);
    ds *= 2;
  }
  return f;
}

namespace {
std::vector<int> clip_to_available(const std::vector<int>& wanted, const std::vector<int>& avail) {
  std::vector<int> out;
  for (int d : wanted)
    if (std::find(avail.begin(), avail.end(), d) != avail.end()) out.push_back(d);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}
}  // namespace

std::vector<int> DenoiserConfig::active_self_attention() const {
  return clip_to_available(self_attention_at, available_factors());
}

std::vector<int> DenoiserConfig::active_cross_attention() const {
  if (!has_source_branch()) return {};
  return clip_to_available(cross_attention_at, available_factors());
}

void DenoiserConfig::validate() const {
  LFD_CHECK(image_size >= 4, "denoiser: image size too small");
  LFD_CHECK(base_channels >= 4, "denoiser: base channels too small");
  LFD_CHECK(!channel_multipliers.empty(), "denoiser: need at least one level");
  LFD_CHECK(num_res_blocks >= 1, "denoiser: need at least one res block per level");
  LFD_CHECK(encoding_channels >= 1, "denoiser: conditioning channels must be positive");
  LFD_CHECK(heads >= 1, "denoiser: heads must be positive");
  LFD_CHECK(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "denoiser: bad time embed dim");
  LFD_CHECK(p_uncond >= 0 && p_uncond < 1, "denoiser: p_uncond must be in [0,1)");
  const int last_ds = 1 << (levels() - 1);
  LFD_CHECK(image_size % last_ds == 0, "denoiser: image size must be divisible by 2^(levels-1)");
  for (int m : channel_multipliers) {
    LFD_CHECK(m >= 1, "denoiser: bad channel multiplier");
    LFD_CHECK((base_channels * m) % heads == 0, "denoiser: heads must divide level channels");
  }
  LFD_CHECK(base_channels % 2 == 0, "denoiser: base channels must be even");
}

DenoiserConfig make_rt_baseline(DenoiserConfig config) {
  config.conditioning = DenoiserConfig::Conditioning::rt_baseline;
  config.encoding_channels = 12;
  return config;
}

template <typename T>
NvsModel<T>::NvsModel(const DenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int base = cfg_.base_channels;
  const int levels = cfg_.levels();
  const std::vector<int> self_at = cfg_.active_self_attention();
  const std::vector<int> cross_at = cfg_.active_cross_attention();
  const auto has = [](const std::vector<int>& v, int d) {
    return std::find(v.begin(), v.end(), d) != v.end();
  };

  stem_ = Conv2d<T>(store_, "denoiser.stem", cfg_.in_channels(), base, 3, 1, 1);
  temb_l1_ = Linear<T>(store_, "denoiser.temb.l1", base, cfg_.time_embed_dim);
  temb_l2_ = Linear<T>(store_, "denoiser.temb.l2", cfg_.time_embed_dim, cfg_.time_embed_dim);

  std::vector<int> skip_channels;
  int cur = base;
  program_.push_back({StepKind::push_skip, -1, 1});
  skip_channels.push_back(cur);

  const auto add_res = [&](const std::string& name, int cin, int cout) {
    res_.emplace_back(store_, name, cin, cout, cfg_.time_embed_dim);
    program_.push_back({StepKind::res, static_cast<int>(res_.size()) - 1, 0});
  };
  const auto add_self = [&](const std::string& name, const std::string& where, int ch, int ds) {
    attn_.emplace_back(store_, name, ch, cfg_.heads);
    program_.push_back({StepKind::self_attn, static_cast<int>(attn_.size()) - 1, ds});
    sites_.push_back({where, "self", ds});
  };
  const auto add_cross = [&](const std::string& name, const std::string& where, int ch, int ds) {
    cross_.emplace_back(store_, name, ch, cfg_.heads);
    program_.push_back({StepKind::cross_attn, static_cast<int>(cross_.size()) - 1, ds});
    sites_.push_back({where, "cross", ds});
  };

  // Encoder.
  for (int i = 0; i < levels; ++i) {
    const int ds = 1 << i;
    const int ch = base * cfg_.channel_multipliers[static_cast<size_t>(i)];
    const std::string lv = "denoiser.enc" + std::to_string(i);
    const std::string where = "encoder" + std::to_string(i);
    for (int b = 0; b < cfg_.num_res_blocks; ++b) {
      add_res(lv + ".res" + std::to_string(b), cur, ch);
      cur = ch;
      if (has(self_at, ds)) add_self(lv + ".attn" + std::to_string(b), where, ch, ds);
      if (has(cross_at, ds)) add_cross(lv + ".cross" + std::to_string(b), where, ch, ds);
      program_.push_back({StepKind::push_skip, -1, ds});
      skip_channels.push_back(cur);
    }
    if (i + 1 < levels) {
      down_.emplace_back(store_, "denoiser.down" + std::to_string(i), cur, cur, 3, 2, 1);
      program_.push_back({StepKind::down, static_cast<int>(down_.size()) - 1, ds});
      program_.push_back({StepKind::push_skip, -1, ds * 2});
      skip_channels.push_back(cur);
    }
  }

  // Middle, at the deepest factor.
  const int mid_ds = 1 << (levels - 1);
  add_res("denoiser.mid.res1", cur, cur);
  add_self("denoiser.mid.attn", "middle", cur, mid_ds);
  if (has(cross_at, mid_ds)) add_cross("denoiser.mid.cross", "middle", cur, mid_ds);
  add_res("denoiser.mid.res2", cur, cur);

  // Decoder.
  for (int i = levels - 1; i >= 0; --i) {
    const int ds = 1 << i;
    const int ch = base * cfg_.channel_multipliers[static_cast<size_t>(i)];
    const std::string lv = "denoiser.dec" + std::to_string(i);
    const std::string where = "decoder" + std::to_string(i);
    for (int b = 0; b <= cfg_.num_res_blocks; ++b) {
      program_.push_back({StepKind::pop_concat, -1, ds});
      const int skip_ch = skip_channels.back();
      skip_channels.pop_back();
      add_res(lv + ".res" + std::to_string(b), cur + skip_ch, ch);
      cur = ch;
      if (has(self_at, ds)) add_self(lv + ".attn" + std::to_string(b), where, ch, ds);
      if (has(cross_at, ds)) add_cross(lv + ".cross" + std::to_string(b), where, ch, ds);
    }
    if (i > 0) {
      up_.emplace_back(store_, "denoiser.up" + std::to_string(i), cur);
      program_.push_back({StepKind::up, static_cast<int>(up_.size()) - 1, ds});
    }
  }
  LFD_CHECK(skip_channels.empty(), "denoiser: unbalanced skip connections");

  final_norm_ = GroupNorm<T>(store_, "denoiser.final.norm", cur);
  final_conv_ = Conv2d<T>(store_, "denoiser.final.conv", cur, 3, 3, 1, 1, InitKind::zeros);

  // Source branch: encoder twin without time embedding or cross-attention,
  // emitting a feature per scale, plus learned null features.
  if (cfg_.has_source_branch()) {
    src_stem_ = Conv2d<T>(store_, "source.stem", cfg_.in_channels(), base, 3, 1, 1);
    int scur = base;
    for (int i = 0; i < levels; ++i) {
      const int ds = 1 << i;
      const int ch = base * cfg_.channel_multipliers[static_cast<size_t>(i)];
      const std::string lv = "source.enc" + std::to_string(i);
      for (int b = 0; b < cfg_.num_res_blocks; ++b) {
        src_res_.emplace_back(store_, lv + ".res" + std::to_string(b), scur, ch, 0);
        src_program_.push_back({StepKind::res, static_cast<int>(src_res_.size()) - 1, ds});
        scur = ch;
        if (has(self_at, ds)) {
          src_attn_.emplace_back(store_, lv + ".attn" + std::to_string(b), ch, cfg_.heads);
          src_program_.push_back({StepKind::self_attn, static_cast<int>(src_attn_.size()) - 1, ds});
          sites_.push_back({"source" + std::to_string(i), "self", ds});
        }
      }
      src_program_.push_back({StepKind::emit, -1, ds});
      if (i + 1 < levels) {
        src_down_.emplace_back(store_, "source.down" + std::to_string(i), scur, scur, 3, 2, 1);
        src_program_.push_back({StepKind::down, static_cast<int>(src_down_.size()) - 1, ds});
      }
    }
    for (int ds : cross_at) {
      int level = 0;
      while ((1 << level) != ds) ++level;
      const int ch = base * cfg_.channel_multipliers[static_cast<size_t>(level)];
      const std::vector<int> shape = {ch, cfg_.image_size / ds, cfg_.image_size / ds};
      null_tokens_[ds] = store_.add("null.ds" + std::to_string(ds), shape, InitKind::normal_002);
      null_shapes_[ds] = shape;
    }
  }

  store_.finalize();
}

template <typename T>
void NvsModel<T>::init_params(std::uint64_t seed) {
  store_.init_params(seed);
  if (cfg_.has_source_branch()) store_.copy_matching("source.", "denoiser.");
}

template <typename T>
Tensor<T> NvsModel<T>::run_temb(int t, UnetTrace<T>* trace) const {
  Tensor<T> raw = sinusoidal_embedding<T>(t, cfg_.base_channels);
  raw.shape = {cfg_.base_channels, 1};
  Tensor<T> mid = temb_l1_.forward(store_, raw, trace ? &trace->temb_l1 : nullptr);
  Tensor<T> act = silu(mid);
  Tensor<T> out = temb_l2_.forward(store_, act, trace ? &trace->temb_l2 : nullptr);
  out.shape = {cfg_.time_embed_dim};
  if (trace) {
    trace->temb_raw = std::move(raw);
    trace->temb_mid = std::move(mid);
    trace->temb = out;
  }
  return out;
}

template <typename T>
SourceFeatures<T> NvsModel<T>::encode_source(const Tensor<T>& src_with_cond,
                                             SourceTrace<T>* trace) const {
  LFD_CHECK(cfg_.has_source_branch(), "encode_source: model has no source branch");
  LFD_CHECK(src_with_cond.rank() == 3 && src_with_cond.dim(0) == cfg_.in_channels(),
            "encode_source: channel mismatch");
  if (trace) {
    trace->res.resize(src_res_.size());
    trace->attn.resize(src_attn_.size());
    trace->down.resize(src_down_.size());
  }
  Tensor<T> h = src_stem_.forward(store_, src_with_cond, trace ? &trace->stem : nullptr);
  SourceFeatures<T> feats;
  for (const Step& st : src_program_) {
    switch (st.kind) {
      case StepKind::res:
        h = src_res_[static_cast<size_t>(st.index)].forward(
            store_, h, nullptr, trace ? &trace->res[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::self_attn:
        h = src_attn_[static_cast<size_t>(st.index)].forward(
            store_, h, trace ? &trace->attn[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::down:
        h = src_down_[static_cast<size_t>(st.index)].forward(
            store_, h, trace ? &trace->down[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::emit:
        feats[st.ds] = h;
        break;
      default:
        fail(ErrorCode::internal, "encode_source: unexpected step");
    }
  }
  return feats;
}

template <typename T>
SourceFeatures<T> NvsModel<T>::null_features() const {
  SourceFeatures<T> feats;
  for (const auto& [ds, slice] : null_tokens_) {
    Tensor<T> t(null_shapes_.at(ds));
    std::copy(store_.w(slice), store_.w(slice) + slice.size, t.v.begin());
    feats[ds] = std::move(t);
  }
  return feats;
}

template <typename T>
Tensor<T> NvsModel<T>::predict_eps(const Tensor<T>& x_t, int t, const Tensor<T>& cond,
                                   const SourceFeatures<T>& src, UnetTrace<T>* trace) const {
  LFD_CHECK(x_t.rank() == 3 && x_t.dim(0) == 3, "predict_eps: x_t must be (3,H,W)");
  LFD_CHECK(x_t.dim(1) == cfg_.image_size && x_t.dim(2) == cfg_.image_size,
            "predict_eps: image size mismatch");
  LFD_CHECK(cond.rank() == 3 && cond.dim(0) == cfg_.encoding_channels &&
                cond.dim(1) == x_t.dim(1) && cond.dim(2) == x_t.dim(2),
            "predict_eps: conditioning shape mismatch");
  for (int ds : cfg_.active_cross_attention())
    LFD_CHECK(src.count(ds) == 1, "predict_eps: missing source features at ds " +
                                      std::to_string(ds));

  if (trace) {
    trace->res.resize(res_.size());
    trace->attn.resize(attn_.size());
    trace->cross.resize(cross_.size());
    trace->down.resize(down_.size());
    trace->up.resize(up_.size());
    trace->concat_split.clear();
  }

  const Tensor<T> x = concat_channels(x_t, cond);
  Tensor<T> h = stem_.forward(store_, x, trace ? &trace->stem : nullptr);
  const Tensor<T> temb = run_temb(t, trace);

  std::vector<Tensor<T>> skips;
  for (const Step& st : program_) {
    switch (st.kind) {
      case StepKind::push_skip:
        skips.push_back(h);
        break;
      case StepKind::pop_concat: {
        Tensor<T> s = std::move(skips.back());
        skips.pop_back();
        if (trace) trace->concat_split.push_back(h.dim(0));
        h = concat_channels(h, s);
        break;
      }
      case StepKind::res:
        h = res_[static_cast<size_t>(st.index)].forward(
            store_, h, &temb, trace ? &trace->res[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::self_attn:
        h = attn_[static_cast<size_t>(st.index)].forward(
            store_, h, trace ? &trace->attn[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::cross_attn:
        h = cross_[static_cast<size_t>(st.index)].forward(
            store_, h, src.at(st.ds),
            trace ? &trace->cross[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::down:
        h = down_[static_cast<size_t>(st.index)].forward(
            store_, h, trace ? &trace->down[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::up:
        h = up_[static_cast<size_t>(st.index)].forward(
            store_, h, trace ? &trace->up[static_cast<size_t>(st.index)] : nullptr);
        break;
      case StepKind::emit:
        fail(ErrorCode::internal, "predict_eps: unexpected emit step");
    }
  }
  LFD_CHECK(skips.empty(), "predict_eps: unbalanced skips");

  const Tensor<T> fn = final_norm_.forward(store_, h, trace ? &trace->final_norm : nullptr);
  const Tensor<T> fa = silu(fn);
  Tensor<T> out = final_conv_.forward(store_, fa, trace ? &trace->final_conv : nullptr);
  if (trace) trace->final_act_in = fn;
  return out;
}

template <typename T>
SourceFeatures<T> NvsModel<T>::backward(const Tensor<T>& d_eps, const UnetTrace<T>& trace,
                                        T* grads) const {
  // final conv <- silu <- norm
  const Tensor<T> dfa = final_conv_.backward(store_, trace.final_conv, d_eps, grads);
  const Tensor<T> dfn = silu_backward(trace.final_act_in, dfa);
  Tensor<T> dh = final_norm_.backward(store_, trace.final_norm, dfn, grads);

  Tensor<T> dtemb;
  dtemb.shape = {cfg_.time_embed_dim};
  dtemb.v.assign(static_cast<size_t>(cfg_.time_embed_dim), T(0));

  SourceFeatures<T> dsrc;
  std::vector<Tensor<T>> dskips;
  size_t concat_i = trace.concat_split.size();

  for (auto it = program_.rbegin(); it != program_.rend(); ++it) {
    const Step& st = *it;
    switch (st.kind) {
      case StepKind::push_skip: {
        LFD_CHECK(!dskips.empty(), "backward: skip gradient stack underflow");
        const Tensor<T>& ds = dskips.back();
        for (size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += ds.v[i];
        dskips.pop_back();
        break;
      }
      case StepKind::pop_concat: {
        --concat_i;
        const int ca = trace.concat_split[concat_i];
        Tensor<T> da, db;
        split_channels(dh, ca, &da, &db);
        dh = std::move(da);
        dskips.push_back(std::move(db));
        break;
      }
      case StepKind::res:
        dh = res_[static_cast<size_t>(st.index)].backward(
            store_, trace.res[static_cast<size_t>(st.index)], dh, &dtemb, grads);
        break;
      case StepKind::self_attn:
        dh = attn_[static_cast<size_t>(st.index)].backward(
            store_, trace.attn[static_cast<size_t>(st.index)], dh, grads);
        break;
      case StepKind::cross_attn: {
        const auto& cache = trace.cross[static_cast<size_t>(st.index)];
        auto found = dsrc.find(st.ds);
        if (found == dsrc.end())
          found = dsrc.emplace(st.ds, Tensor<T>({cross_[static_cast<size_t>(st.index)].channels,
                                                 cache.src_h, cache.src_w}))
                      .first;
        dh = cross_[static_cast<size_t>(st.index)].backward(store_, cache, dh, found->second,
                                                            grads);
        break;
      }
      case StepKind::down:
        dh = down_[static_cast<size_t>(st.index)].backward(
            store_, trace.down[static_cast<size_t>(st.index)], dh, grads);
        break;
      case StepKind::up:
        dh = up_[static_cast<size_t>(st.index)].backward(
            store_, trace.up[static_cast<size_t>(st.index)], dh, grads);
        break;
      case StepKind::emit:
        fail(ErrorCode::internal, "backward: unexpected emit step");
    }
  }
  LFD_CHECK(dskips.empty(), "backward: unbalanced skip gradients");

  stem_.backward(store_, trace.stem, dh, grads);

  // Time-embedding MLP.
  Tensor<T> dt2 = dtemb;
  dt2.shape = {cfg_.time_embed_dim, 1};
  const Tensor<T> dact = temb_l2_.backward(store_, trace.temb_l2, dt2, grads);
  const Tensor<T> dmid = silu_backward(trace.temb_mid, dact);
  temb_l1_.backward(store_, trace.temb_l1, dmid, grads);
  return dsrc;
}

template <typename T>
void NvsModel<T>::backward_source(const SourceFeatures<T>& d_feats, const SourceTrace<T>& trace,
                                  T* grads) const {
  LFD_CHECK(cfg_.has_source_branch(), "backward_source: no source branch");
  Tensor<T> dh;
  bool live = false;
  for (auto it = src_program_.rbegin(); it != src_program_.rend(); ++it) {
    const Step& st = *it;
    switch (st.kind) {
      case StepKind::emit: {
        auto found = d_feats.find(st.ds);
        if (found == d_feats.end()) break;
        if (!live) {
          dh = found->second;
          live = true;
        } else {
          for (size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += found->second.v[i];
        }
        break;
      }
      case StepKind::res:
        if (live)
          dh = src_res_[static_cast<size_t>(st.index)].backward(
              store_, trace.res[static_cast<size_t>(st.index)], dh, nullptr, grads);
        break;
      case StepKind::self_attn:
        if (live)
          dh = src_attn_[static_cast<size_t>(st.index)].backward(
              store_, trace.attn[static_cast<size_t>(st.index)], dh, grads);
        break;
      case StepKind::down:
        if (live)
          dh = src_down_[static_cast<size_t>(st.index)].backward(
              store_, trace.down[static_cast<size_t>(st.index)], dh, grads);
        break;
      default:
        fail(ErrorCode::internal, "backward_source: unexpected step");
    }
  }
  if (live) src_stem_.backward(store_, trace.stem, dh, grads);
}

template <typename T>
void NvsModel<T>::backward_null(const SourceFeatures<T>& d_feats, T* grads) const {
  for (const auto& [ds, d] : d_feats) {
    const auto slice = null_tokens_.find(ds);
    LFD_CHECK(slice != null_tokens_.end(), "backward_null: no null token at this scale");
    T* g = grads + slice->second.offset;
    for (std::int64_t i = 0; i < slice->second.size; ++i) g[i] += d.v[static_cast<size_t>(i)];
  }
}

template class NvsModel<float>;
template class NvsModel<double>;

}  // namespace lfd
