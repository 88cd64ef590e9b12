#include "usev/model.hpp"

#include <charconv>
#include <cmath>
#include <random>

#include "usev/error.hpp"

namespace usev {

using ad::Tensor;

UsevConfig UsevConfig::full() {
  UsevConfig c;
  c.sample_rate = 16000;
  c.N = 256;
  c.L = 40;
  c.B = 64;
  c.R = 6;
  c.K = 100;
  c.visual_dim = 512;
  return c;
}

UsevConfig UsevConfig::desk() { return UsevConfig{}; }

UsevConfig UsevConfig::micro() {
  UsevConfig c;
  c.sample_rate = 100;
  c.N = 4;
  c.L = 4;
  c.B = 2;
  c.R = 1;
  c.K = 4;
  c.visual_dim = 3;
  c.vtcn_blocks = 1;
  return c;
}

void UsevConfig::validate() const {
  require(sample_rate > 0, ErrorKind::Parameter, "model sample_rate must be positive");
  require(N > 0 && B > 0 && R > 0 && visual_dim > 0, ErrorKind::Parameter,
          "model sizes N, B, R, visual_dim must be positive");
  require(L >= 2 && L % 2 == 0, ErrorKind::Parameter,
          "encoder kernel L must be even, got " + std::to_string(L));
  require(K >= 2 && K % 2 == 0, ErrorKind::Parameter,
          "chunk size K must be even, got " + std::to_string(K));
  require(video_fps > 0.0, ErrorKind::Parameter, "video fps must be positive");
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string UsevConfig::to_text() const {
  std::string s;
  s += "model.sample_rate = " + std::to_string(sample_rate) + "\n";
  s += "model.N = " + std::to_string(N) + "\n";
  s += "model.L = " + std::to_string(L) + "\n";
  s += "model.B = " + std::to_string(B) + "\n";
  s += "model.R = " + std::to_string(R) + "\n";
  s += "model.K = " + std::to_string(K) + "\n";
  s += "model.visual_dim = " + std::to_string(visual_dim) + "\n";
  s += "model.vtcn_blocks = " + std::to_string(vtcn_blocks) + "\n";
  s += "model.video_fps = " + num(video_fps) + "\n";
  return s;
}

UsevConfig UsevConfig::from_config(const KeyValueConfig& kv) {
  UsevConfig base;
  const auto preset = kv.get_string("model.preset", "desk");
  if (preset == "full") base = full();
  else if (preset == "micro") base = micro();
  else if (preset != "desk") fail(ErrorKind::Format, "unknown model.preset '" + preset + "'");
  UsevConfig c = base;
  c.sample_rate = static_cast<int>(kv.get_int("model.sample_rate", base.sample_rate));
  c.N = kv.get_uint("model.N", base.N);
  c.L = kv.get_uint("model.L", base.L);
  c.B = kv.get_uint("model.B", base.B);
  c.R = kv.get_uint("model.R", base.R);
  c.K = kv.get_uint("model.K", base.K);
  c.visual_dim = kv.get_uint("model.visual_dim", base.visual_dim);
  c.vtcn_blocks = kv.get_uint("model.vtcn_blocks", base.vtcn_blocks);
  c.video_fps = kv.get_double("model.video_fps", base.video_fps);
  c.validate();
  return c;
}

UsevConfig UsevConfig::from_text(const std::string& text) {
  return from_config(KeyValueConfig::parse(text, "<model config>"));
}

std::size_t encoder_frames(std::size_t len, const UsevConfig& cfg) {
  if (len < cfg.L)
    fail(ErrorKind::Length, "clip of " + std::to_string(len) +
                                " samples is shorter than the encoder kernel " +
                                std::to_string(cfg.L));
  return (len - cfg.L) / cfg.hop() + 1;
}

std::vector<std::size_t> upsample_index(std::size_t visual_frames, std::size_t frames,
                                        const UsevConfig& cfg) {
  require(visual_frames > 0, ErrorKind::Shape, "empty viseme stream");
  std::vector<std::size_t> idx(frames);
  const double ratio = static_cast<double>(cfg.hop()) * cfg.video_fps / cfg.sample_rate;
  for (std::size_t t = 0; t < frames; ++t) {
    const auto f = static_cast<std::size_t>(std::floor(static_cast<double>(t) * ratio + 1e-9));
    idx[t] = std::min(f, visual_frames - 1);
  }
  return idx;
}

UsevModel::UsevModel(UsevConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t N = cfg_.N, B = cfg_.B, H = cfg_.hidden();

  add_param("encoder.weight", {N, 1, cfg_.L});
  add_param("encoder.bias", {N});
  add_param("visual.frontend.weight", {N, cfg_.visual_dim});
  add_param("visual.frontend.bias", {N});
  for (std::size_t i = 0; i < cfg_.vtcn_blocks; ++i) {
    const std::string p = "visual.vtcn" + std::to_string(i) + ".";
    add_param(p + "ln1.gain", {N});
    add_param(p + "ln1.bias", {N});
    add_param(p + "linear1.weight", {2 * N, N});
    add_param(p + "linear1.bias", {2 * N});
    add_param(p + "ln2.gain", {2 * N});
    add_param(p + "ln2.bias", {2 * N});
    add_param(p + "dconv.weight", {2 * N, 1, 3});
    add_param(p + "dconv.bias", {2 * N});
    add_param(p + "ln3.gain", {2 * N});
    add_param(p + "ln3.bias", {2 * N});
    add_param(p + "linear2.weight", {N, 2 * N});
    add_param(p + "linear2.bias", {N});
  }
  add_param("extractor.ln.gain", {N});
  add_param("extractor.ln.bias", {N});
  add_param("extractor.bottleneck.weight", {B, N});
  add_param("extractor.bottleneck.bias", {B});
  add_param("extractor.fuse.weight", {B, B + N});
  add_param("extractor.fuse.bias", {B});
  for (std::size_t r = 0; r < cfg_.R; ++r) {
    for (const char* path : {"intra", "inter"}) {
      const std::string p = "extractor.block" + std::to_string(r) + "." + path + ".";
      for (const char* dir : {"fwd", "bwd"}) {
        add_param(p + "lstm." + dir + ".w_ih", {4 * H, B});
        add_param(p + "lstm." + dir + ".w_hh", {4 * H, H});
        add_param(p + "lstm." + dir + ".bias", {4 * H});
      }
      add_param(p + "linear.weight", {B, 2 * H});
      add_param(p + "linear.bias", {B});
      add_param(p + "ln.gain", {B});
      add_param(p + "ln.bias", {B});
    }
  }
  add_param("extractor.prelu", {1});
  add_param("extractor.mask.weight", {N, B});
  add_param("extractor.mask.bias", {N});
  add_param("decoder.weight", {cfg_.L, N});
  add_param("decoder.bias", {cfg_.L});

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x75736576u};
  std::mt19937_64 rng(seq);
  for (auto& [name, t] : params_) {
    auto d = t.data();
    const auto ends_with = [&](std::string_view suf) {
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".gain")) {
      std::fill(d.begin(), d.end(), 1.0);
    } else if (name == "extractor.prelu") {
      d[0] = 0.25;
    } else if (ends_with("lstm.fwd.bias") || ends_with("lstm.bwd.bias")) {
      std::fill(d.begin(), d.end(), 0.0);
      for (std::size_t j = H; j < 2 * H; ++j) d[j] = 1.0;  // forget gate
    } else if (ends_with(".bias")) {
      std::fill(d.begin(), d.end(), 0.0);
    } else {
      // Fan-in is the product of all but the leading extent.
      const std::size_t fan_in = t.numel() / t.dim(0);
      const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-a, a);
      for (auto& v : d) v = u(rng);
    }
  }
  Tensor(param("visual.frontend.weight")).set_requires_grad(false);
  Tensor(param("visual.frontend.bias")).set_requires_grad(false);

  for (std::size_t r = 0; r < cfg_.R; ++r)
    for (const char* path : {"intra", "inter"}) {
      const std::string p = "extractor.block" + std::to_string(r) + "." + path + ".lstm.";
      lstms_.push_back({{param(p + "fwd.w_ih"), param(p + "fwd.w_hh"), param(p + "fwd.bias")},
                        {param(p + "bwd.w_ih"), param(p + "bwd.w_hh"), param(p + "bwd.bias")}});
    }
}

Tensor& UsevModel::add_param(const std::string& name, ad::Shape shape) {
  params_.emplace_back(name, Tensor::zeros(std::move(shape), true));
  return params_.back().second;
}

const Tensor& UsevModel::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  fail(ErrorKind::Parameter, "model has no parameter '" + name + "'");
}

std::vector<Tensor> UsevModel::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : params_)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::size_t UsevModel::parameter_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_)
    if (!trainable_only || t.requires_grad()) n += t.numel();
  return n;
}

Tensor UsevModel::speech_encode(const Tensor& x) const {
  require(x.rank() == 1, ErrorKind::Shape, "speech_encode expects a rank-1 waveform");
  encoder_frames(x.numel(), cfg_);
  const Tensor x2 = ad::reshape(x, {1, x.numel()});
  return ad::relu(ad::conv1d(x2, param("encoder.weight"), param("encoder.bias"), cfg_.hop()));
}

Tensor UsevModel::visual_encode(const Tensor& v, std::size_t frames) const {
  require(v.rank() == 2 && v.dim(1) == cfg_.visual_dim, ErrorKind::Shape,
          "visual_encode expects v[frames, " + std::to_string(cfg_.visual_dim) + "], got " +
              ad::shape_str(v.shape()));
  require(v.dim(0) > 0, ErrorKind::Shape, "empty viseme stream");
  Tensor h = ad::linear(v, param("visual.frontend.weight"), param("visual.frontend.bias"));
  for (std::size_t i = 0; i < cfg_.vtcn_blocks; ++i) {
    const std::string p = "visual.vtcn" + std::to_string(i) + ".";
    Tensor a = ad::layer_norm(ad::relu(h), param(p + "ln1.gain"), param(p + "ln1.bias"));
    a = ad::linear(a, param(p + "linear1.weight"), param(p + "linear1.bias"));
    Tensor b = ad::layer_norm(ad::relu(a), param(p + "ln2.gain"), param(p + "ln2.bias"));
    b = ad::transpose(ad::conv1d(ad::transpose(b), param(p + "dconv.weight"),
                                 param(p + "dconv.bias"), 1, 2 * cfg_.N, 1));
    Tensor c = ad::layer_norm(ad::relu(b), param(p + "ln3.gain"), param(p + "ln3.bias"));
    c = ad::linear(c, param(p + "linear2.weight"), param(p + "linear2.bias"));
    h = ad::add(h, c);
  }
  const auto idx = upsample_index(v.dim(0), frames, cfg_);
  return ad::transpose(ad::gather_rows(h, idx));
}

Tensor UsevModel::dual_path_step(const Tensor& h, std::size_t block, bool inter) const {
  const std::string p =
      "extractor.block" + std::to_string(block) + (inter ? ".inter." : ".intra.");
  const auto& lstm = lstms_[2 * block + (inter ? 1 : 0)];
  // Intra runs along K with h[P, K, B]; inter runs along P with [K, P, B].
  const Tensor in = inter ? ad::permute3(h, {1, 0, 2}) : h;
  Tensor y = ad::bilstm(in, lstm.fwd, lstm.bwd);
  y = ad::linear(y, param(p + "linear.weight"), param(p + "linear.bias"));
  y = ad::layer_norm(y, param(p + "ln.gain"), param(p + "ln.bias"));
  if (inter) y = ad::permute3(y, {1, 0, 2});
  return ad::add(h, y);
}

Tensor UsevModel::extract_mask(const Tensor& X, const Tensor& V) const {
  require(X.rank() == 2 && X.dim(0) == cfg_.N, ErrorKind::Shape,
          "extract_mask expects X[" + std::to_string(cfg_.N) + ", T], got " +
              ad::shape_str(X.shape()));
  require(V.shape() == X.shape(), ErrorKind::Shape,
          "visual embeddings " + ad::shape_str(V.shape()) + " do not match speech embeddings " +
              ad::shape_str(X.shape()));
  const std::size_t T = X.dim(1);
  Tensor y = ad::layer_norm(ad::transpose(X), param("extractor.ln.gain"),
                            param("extractor.ln.bias"));
  y = ad::linear(y, param("extractor.bottleneck.weight"), param("extractor.bottleneck.bias"));
  y = ad::concat({y, ad::transpose(V)}, 1);
  y = ad::linear(y, param("extractor.fuse.weight"), param("extractor.fuse.bias"));
  Tensor h = ad::permute3(ad::segment_chunks(ad::transpose(y), cfg_.K), {2, 1, 0});
  for (std::size_t r = 0; r < cfg_.R; ++r) {
    h = dual_path_step(h, r, false);
    h = dual_path_step(h, r, true);
  }
  Tensor z = ad::transpose(ad::aggregate_chunks(ad::permute3(h, {2, 1, 0}), T));
  z = ad::prelu(z, param("extractor.prelu"));
  z = ad::relu(ad::linear(z, param("extractor.mask.weight"), param("extractor.mask.bias")));
  return ad::transpose(z);
}

Tensor UsevModel::decode(const Tensor& S, std::size_t out_len) const {
  require(S.rank() == 2 && S.dim(0) == cfg_.N, ErrorKind::Shape,
          "decode expects S[" + std::to_string(cfg_.N) + ", T], got " + ad::shape_str(S.shape()));
  const Tensor frames =
      ad::linear(ad::transpose(S), param("decoder.weight"), param("decoder.bias"));
  return ad::fit_length(ad::overlap_add(frames, cfg_.hop()), out_len);
}

Tensor UsevModel::forward(const Tensor& x, const Tensor& v) const {
  const Tensor X = speech_encode(x);
  const Tensor V = visual_encode(v, X.dim(1));
  const Tensor M = extract_mask(X, V);
  return decode(ad::mul(X, M), x.numel());
}

ad::Tensor visemes_tensor(const VisemeMatrix& v) {
  return Tensor::from({v.frames, v.dim}, v.data);
}

std::vector<double> UsevModel::infer(std::span<const double> audio,
                                     const VisemeMatrix& visemes) const {
  ad::NoGradGuard guard;
  const Tensor x = Tensor::from({audio.size()}, std::vector<double>(audio.begin(), audio.end()));
  const Tensor y = forward(x, visemes_tensor(visemes));
  return {y.data().begin(), y.data().end()};
}

}  // namespace usev
