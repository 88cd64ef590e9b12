#pragma once

// The extraction network: speech encoder, visual adaptor, dual-path
// recurrent mask estimator and overlap-add decoder, built on usev::ad.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usev/autodiff.hpp"
#include "usev/config.hpp"
#include "usev/mixsim.hpp"

namespace usev {

struct UsevConfig {
  int sample_rate = 8000;
  std::size_t N = 64;   // encoder channels
  std::size_t L = 40;   // encoder kernel, samples
  std::size_t B = 16;   // bottleneck channels
  std::size_t R = 2;    // dual-path blocks
  std::size_t K = 16;   // chunk size
  std::size_t visual_dim = 8;
  std::size_t vtcn_blocks = 5;
  double video_fps = 25.0;

  std::size_t hop() const { return L / 2; }
  std::size_t hidden() const { return 2 * B; }  // per direction

  static UsevConfig full();
  static UsevConfig desk();
  /// Smallest config used for finite-difference checks.
  static UsevConfig micro();

  void validate() const;
  std::string to_text() const;
  /// Reads the `model.*` keys, defaulting to desk().
  static UsevConfig from_config(const KeyValueConfig& kv);
  static UsevConfig from_text(const std::string& text);
  bool operator==(const UsevConfig&) const = default;
};

/// Encoder frames for a clip of `len` samples.
std::size_t encoder_frames(std::size_t len, const UsevConfig& cfg);
/// Nearest viseme frame for each encoder frame, clamped to the stream.
std::vector<std::size_t> upsample_index(std::size_t visual_frames, std::size_t frames,
                                        const UsevConfig& cfg);

class UsevModel {
 public:
  using NamedTensor = std::pair<std::string, ad::Tensor>;

  explicit UsevModel(UsevConfig cfg, std::uint64_t seed = 0);

  const UsevConfig& config() const { return cfg_; }
  const std::vector<NamedTensor>& named_parameters() const { return params_; }
  /// Parameters updated by training (excludes the frozen visual front-end).
  std::vector<ad::Tensor> trainable() const;
  const ad::Tensor& param(const std::string& name) const;
  std::size_t parameter_count(bool trainable_only = false) const;

  /// x[len] -> X[N, T].
  ad::Tensor speech_encode(const ad::Tensor& x) const;
  /// v[Tv, visual_dim] -> V[N, frames].
  ad::Tensor visual_encode(const ad::Tensor& v, std::size_t frames) const;
  /// X[N, T], V[N, T] -> M[N, T] >= 0.
  ad::Tensor extract_mask(const ad::Tensor& X, const ad::Tensor& V) const;
  /// S[N, T] -> waveform of out_len samples.
  ad::Tensor decode(const ad::Tensor& S, std::size_t out_len) const;
  /// x[len], v[Tv, visual_dim] -> estimate[len].
  ad::Tensor forward(const ad::Tensor& x, const ad::Tensor& v) const;

  /// Graph-free forward pass on plain buffers.
  std::vector<double> infer(std::span<const double> audio, const VisemeMatrix& visemes) const;

 private:
  struct LstmPair {
    ad::LstmWeights fwd, bwd;
  };
  ad::Tensor& add_param(const std::string& name, ad::Shape shape);
  ad::Tensor dual_path_step(const ad::Tensor& h, std::size_t block, bool inter) const;

  UsevConfig cfg_;
  std::vector<NamedTensor> params_;
  std::vector<LstmPair> lstms_;  // 2 per block: intra, inter
};

ad::Tensor visemes_tensor(const VisemeMatrix& v);

}  // namespace usev
