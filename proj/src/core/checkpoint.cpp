#include "checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

namespace lfd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kFormat = "lfd-checkpoint-v1";

std::string conditioning_name(DenoiserConfig::Conditioning c) {
  switch (c) {
    case DenoiserConfig::Conditioning::lightfield: return "lightfield";
    case DenoiserConfig::Conditioning::rt_baseline: return "rt";
    case DenoiserConfig::Conditioning::refiner: return "refiner";
  }
  return "lightfield";
}

DenoiserConfig::Conditioning conditioning_from_name(const std::string& s) {
  if (s == "lightfield") return DenoiserConfig::Conditioning::lightfield;
  if (s == "rt") return DenoiserConfig::Conditioning::rt_baseline;
  if (s == "refiner") return DenoiserConfig::Conditioning::refiner;
  fail(ErrorCode::parse, "unknown conditioning mode: " + s);
}

json denoiser_to_json(const DenoiserConfig& d) {
  json j;
  j["image_size"] = d.image_size;
  j["encoding_channels"] = d.encoding_channels;
  j["base_channels"] = d.base_channels;
  j["channel_multipliers"] = d.channel_multipliers;
  j["num_res_blocks"] = d.num_res_blocks;
  j["self_attention_at"] = d.self_attention_at;
  j["cross_attention_at"] = d.cross_attention_at;
  j["heads"] = d.heads;
  j["time_embed_dim"] = d.time_embed_dim;
  j["p_uncond"] = d.p_uncond;
  j["conditioning"] = conditioning_name(d.conditioning);
  return j;
}

DenoiserConfig denoiser_from_json(const json& j) {
  DenoiserConfig d;
  d.image_size = j.at("image_size").get<int>();
  d.encoding_channels = j.at("encoding_channels").get<int>();
  d.base_channels = j.at("base_channels").get<int>();
  d.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  d.num_res_blocks = j.at("num_res_blocks").get<int>();
  d.self_attention_at = j.at("self_attention_at").get<std::vector<int>>();
  d.cross_attention_at = j.at("cross_attention_at").get<std::vector<int>>();
  d.heads = j.at("heads").get<int>();
  d.time_embed_dim = j.at("time_embed_dim").get<int>();
  d.p_uncond = j.at("p_uncond").get<double>();
  d.conditioning = conditioning_from_name(j.at("conditioning").get<std::string>());
  return d;
}

json run_to_json_obj(const RunConfig& r) {
  json j;
  j["denoiser"] = denoiser_to_json(r.denoiser);
  j["encoding"] = {{"octaves", r.encoding.octaves},
                   {"normalize_dirs", r.encoding.normalize_dirs},
                   {"downsample", r.encoding.downsample}};
  j["schedule"] = {{"T", r.schedule.T},
                   {"beta_start", r.schedule.beta_start},
                   {"beta_end", r.schedule.beta_end}};
  j["optimizer"] = {{"lr", r.optimizer.lr},
                    {"beta1", r.optimizer.beta1},
                    {"beta2", r.optimizer.beta2},
                    {"weight_decay", r.optimizer.weight_decay},
                    {"eps", r.optimizer.eps}};
  j["batch_size"] = r.batch_size;
  j["iterations"] = r.iterations;
  j["ema_decay"] = r.ema_decay;
  j["seed"] = r.seed;
  j["threads"] = r.threads;
  j["checkpoint_every"] = r.checkpoint_every;
  j["log_every"] = r.log_every;
  j["holdout_views"] = r.holdout_views;
  return j;
}

RunConfig run_from_json_obj(const json& j) {
  RunConfig r;
  r.denoiser = denoiser_from_json(j.at("denoiser"));
  const auto& e = j.at("encoding");
  r.encoding.octaves = e.at("octaves").get<int>();
  r.encoding.normalize_dirs = e.at("normalize_dirs").get<bool>();
  r.encoding.downsample = e.at("downsample").get<int>();
  const auto& s = j.at("schedule");
  r.schedule.T = s.at("T").get<int>();
  r.schedule.beta_start = s.at("beta_start").get<double>();
  r.schedule.beta_end = s.at("beta_end").get<double>();
  const auto& o = j.at("optimizer");
  r.optimizer.lr = o.at("lr").get<double>();
  r.optimizer.beta1 = o.at("beta1").get<double>();
  r.optimizer.beta2 = o.at("beta2").get<double>();
  r.optimizer.weight_decay = o.at("weight_decay").get<double>();
  r.optimizer.eps = o.at("eps").get<double>();
  r.batch_size = j.at("batch_size").get<int>();
  r.iterations = j.at("iterations").get<std::int64_t>();
  r.ema_decay = j.at("ema_decay").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.threads = j.at("threads").get<int>();
  r.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
  r.log_every = j.at("log_every").get<std::int64_t>();
  r.holdout_views = j.at("holdout_views").get<std::vector<int>>();
  return r;
}

void write_floats(const std::string& path, const std::vector<float>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!out) fail(ErrorCode::io, "failed writing " + path);
}

std::vector<float> read_floats(const std::string& path, size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::vector<float> v(expected);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(expected * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != expected * sizeof(float))
    fail(ErrorCode::parse, path + ": unexpected size");
  return v;
}

}  // namespace

void RunConfig::validate() const {
  denoiser.validate();
  encoding.validate();
  LFD_CHECK(schedule.T >= 2, "run: schedule T must be >= 2");
  LFD_CHECK(batch_size >= 1, "run: batch size must be >= 1");
  LFD_CHECK(iterations >= 0, "run: iterations must be >= 0");
  LFD_CHECK(ema_decay >= 0 && ema_decay <= 1, "run: ema decay must be in [0,1]");
  LFD_CHECK(threads >= 1, "run: threads must be >= 1");
  LFD_CHECK(optimizer.lr > 0, "run: learning rate must be positive");
  if (denoiser.conditioning == DenoiserConfig::Conditioning::lightfield)
    LFD_CHECK(denoiser.encoding_channels == 12 * encoding.octaves,
              "run: denoiser encoding channels must equal 12*octaves");
}

std::string run_config_to_json(const RunConfig& run) { return run_to_json_obj(run).dump(2); }

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, std::string("run config: ") + e.what());
  }
  try {
    return run_from_json_obj(j);
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("run config: ") + e.what());
  }
}

std::string run_config_diff(const RunConfig& a, const RunConfig& b) {
  const json fa = run_to_json_obj(a).flatten();
  const json fb = run_to_json_obj(b).flatten();
  static const char* kRuntimeKnobs[] = {"/iterations", "/threads", "/checkpoint_every",
                                        "/log_every"};
  const auto is_runtime = [](const std::string& key) {
    for (const char* k : kRuntimeKnobs)
      if (key == k) return true;
    return false;
  };
  std::string diff;
  for (auto it = fa.begin(); it != fa.end(); ++it) {
    if (is_runtime(it.key())) continue;
    if (!fb.contains(it.key()) || fb.at(it.key()) != it.value())
      diff += it.key() + ": " + it.value().dump() + " vs " +
              (fb.contains(it.key()) ? fb.at(it.key()).dump() : "<missing>") + "\n";
  }
  for (auto it = fb.begin(); it != fb.end(); ++it)
    if (!is_runtime(it.key()) && !fa.contains(it.key()))
      diff += it.key() + ": <missing> vs " + it.value().dump() + "\n";
  return diff;
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir + ": " + ec.message());

  json cfg;
  cfg["format"] = kFormat;
  cfg["run"] = run_to_json_obj(ckpt.run);
  cfg["iteration"] = ckpt.iteration;
  cfg["adam_step"] = ckpt.adam_step;
  {
    std::ofstream out(dir + "/config.json");
    if (!out) fail(ErrorCode::io, "cannot write config.json in " + dir);
    out << cfg.dump(2) << "\n";
  }

  json manifest = json::array();
  for (const ParamInfo& p : ckpt.manifest) {
    json e;
    e["name"] = p.name;
    e["shape"] = p.shape;
    e["dtype"] = "f32";
    e["offset"] = p.offset * static_cast<std::int64_t>(sizeof(float));
    manifest.push_back(e);
  }
  {
    std::ofstream out(dir + "/manifest.json");
    if (!out) fail(ErrorCode::io, "cannot write manifest.json in " + dir);
    out << manifest.dump(2) << "\n";
  }

  write_floats(dir + "/params.bin", ckpt.params);
  write_floats(dir + "/ema.bin", ckpt.ema);
  std::vector<float> optim;
  optim.reserve(ckpt.adam_m.size() + ckpt.adam_v.size());
  optim.insert(optim.end(), ckpt.adam_m.begin(), ckpt.adam_m.end());
  optim.insert(optim.end(), ckpt.adam_v.begin(), ckpt.adam_v.end());
  write_floats(dir + "/optim.bin", optim);
}

Checkpoint load_checkpoint(const std::string& dir) {
  Checkpoint ckpt;
  std::ifstream cfg_in(dir + "/config.json");
  if (!cfg_in) fail(ErrorCode::io, "cannot open " + dir + "/config.json");
  json cfg;
  try {
    cfg = json::parse(cfg_in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, dir + "/config.json: " + e.what());
  }
  LFD_CHECK(cfg.at("format").get<std::string>() == kFormat, dir + ": unknown checkpoint format");
  ckpt.run = run_from_json_obj(cfg.at("run"));
  ckpt.iteration = cfg.at("iteration").get<std::int64_t>();
  ckpt.adam_step = cfg.at("adam_step").get<std::int64_t>();

  std::ifstream man_in(dir + "/manifest.json");
  if (!man_in) fail(ErrorCode::io, "cannot open " + dir + "/manifest.json");
  json manifest;
  try {
    manifest = json::parse(man_in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, dir + "/manifest.json: " + e.what());
  }
  std::int64_t total = 0;
  for (const auto& e : manifest) {
    ParamInfo p;
    p.name = e.at("name").get<std::string>();
    p.shape = e.at("shape").get<std::vector<int>>();
    LFD_CHECK(e.at("dtype").get<std::string>() == "f32", dir + ": unsupported dtype");
    p.offset = e.at("offset").get<std::int64_t>() / static_cast<std::int64_t>(sizeof(float));
    p.size = Tensor<float>::numel_of(p.shape);
    LFD_CHECK(p.offset == total, dir + ": non-contiguous manifest");
    total += p.size;
    ckpt.manifest.push_back(std::move(p));
  }

  ckpt.params = read_floats(dir + "/params.bin", static_cast<size_t>(total));
  ckpt.ema = read_floats(dir + "/ema.bin", static_cast<size_t>(total));
  const std::vector<float> optim = read_floats(dir + "/optim.bin", static_cast<size_t>(2 * total));
  ckpt.adam_m.assign(optim.begin(), optim.begin() + total);
  ckpt.adam_v.assign(optim.begin() + total, optim.end());
  return ckpt;
}

void check_manifest(const std::vector<ParamInfo>& expected, const std::vector<ParamInfo>& actual) {
  LFD_CHECK(expected.size() == actual.size(), "checkpoint manifest: tensor count mismatch");
  for (size_t i = 0; i < expected.size(); ++i) {
    const ParamInfo& e = expected[i];
    const ParamInfo& a = actual[i];
    if (e.name != a.name || e.shape != a.shape || e.offset != a.offset)
      fail(ErrorCode::config_mismatch,
           "checkpoint manifest mismatch at " + e.name + " vs " + a.name);
  }
}

}  // namespace lfd
