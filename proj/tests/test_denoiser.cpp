#include <doctest.h>

#include <set>

#include "grad_check.hpp"
#include "denoiser.hpp"

using namespace lfd;
using namespace lfd::testing;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.encoding_channels = 12;  // one octave
  cfg.base_channels = 8;
  cfg.channel_multipliers = {1, 2};
  cfg.num_res_blocks = 1;
  cfg.self_attention_at = {2};
  cfg.cross_attention_at = {2};
  cfg.heads = 2;
  cfg.time_embed_dim = 16;
  return cfg;
}

}  // namespace

TEST_CASE("predict_eps shape contract and determinism") {
  const DenoiserConfig cfg = tiny_config();
  NvsModel<float> model(cfg);
  model.init_params(5);
  Rng rng(5, "inputs", 0);
  Tensor<float> x({3, 8, 8}), cond({12, 8, 8}), src({15, 8, 8});
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  for (auto& v : cond.v) v = static_cast<float>(rng.uniform() * 2 - 1);
  for (auto& v : src.v) v = static_cast<float>(rng.normal());

  const auto feats = model.encode_source(src, nullptr);
  const Tensor<float> e1 = model.predict_eps(x, 3, cond, feats, nullptr);
  CHECK(e1.shape == std::vector<int>{3, 8, 8});
  const Tensor<float> e2 = model.predict_eps(x, 3, cond, feats, nullptr);
  CHECK(e1.v == e2.v);

  Tensor<float> bad_cond({11, 8, 8});
  CHECK_THROWS_AS(model.predict_eps(x, 3, bad_cond, feats, nullptr), Error);
  Tensor<float> bad_src({14, 8, 8});
  CHECK_THROWS_AS(model.encode_source(bad_src, nullptr), Error);
}

TEST_CASE("zero-initialized output head predicts zero at init") {
  const DenoiserConfig cfg = tiny_config();
  NvsModel<float> model(cfg);
  model.init_params(7);
  Rng rng(7, "zero", 0);
  Tensor<float> x({3, 8, 8}), cond({12, 8, 8});
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  for (auto& v : cond.v) v = static_cast<float>(rng.normal());
  const Tensor<float> eps = model.predict_eps(x, 1, cond, model.null_features(), nullptr);
  for (float v : eps.v) CHECK(v == 0.0f);
}

TEST_CASE("cross-attention sits exactly at the requested factors") {
  // Default-style topology with four levels makes both 4 and 8 available.
  DenoiserConfig cfg = tiny_config();
  cfg.image_size = 32;
  cfg.channel_multipliers = {1, 2, 4, 8};
  cfg.cross_attention_at = {4, 8};
  cfg.self_attention_at = {4};
  NvsModel<float> model(cfg);
  std::set<int> cross_ds;
  for (const auto& site : model.attention_sites())
    if (site.kind == "cross") cross_ds.insert(site.ds);
  CHECK(cross_ds == std::set<int>{4, 8});

  // Three levels: {4,8} clips to {4}.
  DenoiserConfig cfg3 = cfg;
  cfg3.channel_multipliers = {1, 2, 4};
  CHECK(cfg3.active_cross_attention() == std::vector<int>{4});
  NvsModel<float> model3(cfg3);
  std::set<int> cross3;
  for (const auto& site : model3.attention_sites())
    if (site.kind == "cross") cross3.insert(site.ds);
  CHECK(cross3 == std::set<int>{4});
}

TEST_CASE("rt baseline differs from the light-field model only in the stems") {
  DenoiserConfig lfd_cfg = tiny_config();
  lfd_cfg.encoding_channels = 180;
  const DenoiserConfig rt_cfg = make_rt_baseline(lfd_cfg);
  CHECK(rt_cfg.encoding_channels == 12);
  CHECK(rt_cfg.in_channels() == 15);

  NvsModel<float> a(lfd_cfg);
  NvsModel<float> b(rt_cfg);
  const auto& ma = a.params().manifest();
  const auto& mb = b.params().manifest();
  REQUIRE(ma.size() == mb.size());
  int diff_count = 0;
  for (size_t i = 0; i < ma.size(); ++i) {
    CHECK(ma[i].name == mb[i].name);
    if (ma[i].shape != mb[i].shape) {
      ++diff_count;
      CHECK((ma[i].name == "denoiser.stem.w" || ma[i].name == "source.stem.w"));
    }
  }
  CHECK(diff_count == 2);
}

TEST_CASE("init is reproducible and the source encoder starts from the denoiser encoder") {
  const DenoiserConfig cfg = tiny_config();
  NvsModel<float> m1(cfg), m2(cfg);
  m1.init_params(11);
  m2.init_params(11);
  CHECK(m1.params().values() == m2.params().values());
  NvsModel<float> m3(cfg);
  m3.init_params(12);
  CHECK(m1.params().values() != m3.params().values());

  const auto& manifest = m1.params().manifest();
  const auto slice_of = [&](const std::string& name) {
    const int idx = m1.params().find(name);
    REQUIRE(idx >= 0);
    return manifest[static_cast<size_t>(idx)];
  };
  for (const char* suffix : {"stem.w", "stem.b", "enc0.res0.conv1.w", "enc1.attn0.q.w"}) {
    const ParamInfo src = slice_of(std::string("source.") + suffix);
    const ParamInfo den = slice_of(std::string("denoiser.") + suffix);
    REQUIRE(src.shape == den.shape);
    for (std::int64_t i = 0; i < src.size; ++i)
      CHECK(m1.params().values()[static_cast<size_t>(src.offset + i)] ==
            m1.params().values()[static_cast<size_t>(den.offset + i)]);
  }
}

TEST_CASE("null features match the source feature shapes") {
  const DenoiserConfig cfg = tiny_config();
  NvsModel<float> model(cfg);
  model.init_params(3);
  Rng rng(3, "null", 0);
  Tensor<float> src({15, 8, 8});
  for (auto& v : src.v) v = static_cast<float>(rng.normal());
  const auto feats = model.encode_source(src, nullptr);
  const auto nulls = model.null_features();
  CHECK(nulls.size() == 1);  // cross at ds=2 only
  for (const auto& [ds, t] : nulls) {
    REQUIRE(feats.count(ds) == 1);
    CHECK(t.shape == feats.at(ds).shape);
  }
}

TEST_CASE("full-model gradients match finite differences") {
  const DenoiserConfig cfg = tiny_config();
  NvsModel<double> model(cfg);
  model.init_params(21);
  ParamStore<double>& store = model.params();

  Rng rng(21, "fullfd", 0);
  Tensor<double> x({3, 8, 8}), cond({12, 8, 8}), src({15, 8, 8});
  fill_normal(x, rng, 0.5);
  fill_normal(cond, rng, 0.5);
  fill_normal(src, rng, 0.5);
  const int t = 4;

  Tensor<double> w({3, 8, 8});
  fill_normal(w, rng);

  SUBCASE("conditioned path, including the source encoder") {
    const auto loss = [&] {
      const auto feats = model.encode_source(src, nullptr);
      return weighted_sum(model.predict_eps(x, t, cond, feats, nullptr), w);
    };
    std::vector<double> grads(static_cast<size_t>(store.total()), 0.0);
    {
      SourceTrace<double> strace;
      const auto feats = model.encode_source(src, &strace);
      UnetTrace<double> trace;
      model.predict_eps(x, t, cond, feats, &trace);
      const auto dsrc = model.backward(w, trace, grads.data());
      model.backward_source(dsrc, strace, grads.data());
    }

    FdCheck fd;
    fd.samples = 8;
    // Random coordinates across the whole parameter vector.
    CHECK(0 == fd.run(
        rng, store.total(),
        [&](std::int64_t i) -> double& { return store.values()[static_cast<size_t>(i)]; }, loss,
        [&](std::int64_t i) { return grads[static_cast<size_t>(i)]; }));
    // Plus pinned coordinates inside specific modules.
    for (const char* name :
         {"denoiser.temb.l1.w", "denoiser.mid.cross.k.w", "source.stem.w",
          "denoiser.dec1.res1.conv2.w", "denoiser.final.norm.gamma", "source.enc1.attn0.out.w"}) {
      const int idx = store.find(name);
      REQUIRE(idx >= 0);
      const ParamInfo& info = store.manifest()[static_cast<size_t>(idx)];
      fd.samples = 3;
      CHECK(0 == fd.run(
          rng, info.size,
          [&](std::int64_t i) -> double& {
            return store.values()[static_cast<size_t>(info.offset + i)];
          },
          loss, [&](std::int64_t i) { return grads[static_cast<size_t>(info.offset + i)]; }));
    }
  }

  SUBCASE("dropped conditioning trains the null tokens") {
    const auto loss = [&] {
      return weighted_sum(model.predict_eps(x, t, cond, model.null_features(), nullptr), w);
    };
    std::vector<double> grads(static_cast<size_t>(store.total()), 0.0);
    {
      UnetTrace<double> trace;
      model.predict_eps(x, t, cond, model.null_features(), &trace);
      const auto dsrc = model.backward(w, trace, grads.data());
      model.backward_null(dsrc, grads.data());
    }
    const int idx = store.find("null.ds2");
    REQUIRE(idx >= 0);
    const ParamInfo& info = store.manifest()[static_cast<size_t>(idx)];
    FdCheck fd;
    fd.samples = 6;
    CHECK(0 == fd.run(
        rng, info.size,
        [&](std::int64_t i) -> double& {
          return store.values()[static_cast<size_t>(info.offset + i)];
        },
        loss, [&](std::int64_t i) { return grads[static_cast<size_t>(info.offset + i)]; }));
  }
}

TEST_CASE("refiner topology has no source branch") {
  DenoiserConfig cfg = tiny_config();
  cfg.conditioning = DenoiserConfig::Conditioning::refiner;
  cfg.encoding_channels = 3;
  NvsModel<float> model(cfg);
  model.init_params(2);
  CHECK(model.null_features().empty());
  CHECK(model.config().active_cross_attention().empty());
  for (const auto& info : model.params().manifest()) {
    CHECK(info.name.rfind("source.", 0) != 0);
    CHECK(info.name.rfind("null.", 0) != 0);
  }
  Rng rng(2, "refiner", 0);
  Tensor<float> x({3, 8, 8}), cond({3, 8, 8});
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  for (auto& v : cond.v) v = static_cast<float>(rng.normal());
  const Tensor<float> eps = model.predict_eps(x, 2, cond, {}, nullptr);
  CHECK(eps.shape == std::vector<int>{3, 8, 8});
}
