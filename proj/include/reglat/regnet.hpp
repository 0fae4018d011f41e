// Copyright 2026 The reglat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Late-fusion registration network: a shared encoder maps each volume to a
// latent code, the decoder turns a latent difference into per-axis grid
// increments.
//
// Encoder, per level l = 0..L (C_l = base_channels * 2^l):
//   l > 0: down conv (k2, s2) -> instance norm -> leaky ReLU
//   block: [conv (k3, p1) -> instance norm -> leaky ReLU] x 2
// The last block output is the latent code (C_L, D/2^L, H/2^L, W/2^L).
//
// Decoder, from level L down to 0:
//   l < L: transposed conv (k2, s2) -> leaky ReLU, optionally concatenated
//          with the encoder difference at level l (skip connections)
//   block: [conv (k3, p1) -> leaky ReLU] x 2
// followed by a zero-initialized conv head producing 3 raw channels, mapped
// to increments max(0, 1 + r).

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "reglat/autodiff.hpp"
#include "reglat/core/tensor.hpp"
#include "reglat/losses.hpp"
#include "reglat/volgrid.hpp"
#include "reglat/warp.hpp"

namespace reglat {

struct ArchConfig {
  Dims in_shape{32, 32, 32};
  int base_channels = 8;
  int n_downsamplings = 3;
  int kernel_size = 3;
  double negative_slope = 0.01;
  bool skip_connections = false;
  std::string norm = "instance";

  void validate() const;
  int channels_at(int level) const { return base_channels << level; }
  int latent_channels() const { return channels_at(n_downsamplings); }
  Dims latent_dims() const;
  std::size_t latent_size() const {
    return static_cast<std::size_t>(latent_channels()) * latent_dims().count();
  }

  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Encoder bottleneck activation (C, d, h, w). The flat view is the
/// channel-major C-order storage (channel, z, y, x).
template <class T>
struct LatentCode {
  Tensor<T> act;

  std::span<const T> flat() const { return act.values(); }
  static LatentCode unflatten(std::span<const T> flat, const ArchConfig& arch);
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <class T>
struct RegistrationOutput {
  GradientField<T> fwd_grad, bwd_grad;
  DeformationGrid<T> fwd_grid, bwd_grid;
  Volume warped_moving;
  Tensor<T> warped_moving_seg;  // soft labels (L+1, D, H, W)
  Tensor<T> latent_diff;        // E(M) - E(F)
  LossTerms loss_terms;
};

template <class T>
class RegNet {
 public:
  /// He-uniform weights, zero biases; the head starts at zero.
  RegNet(ArchConfig arch, std::uint64_t seed);
  /// Wraps existing parameters; names and shapes are checked.
  RegNet(ArchConfig arch, std::vector<NamedTensor<T>> params);

  const ArchConfig& arch() const { return arch_; }
  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  const Tensor<T>& parameter(const std::string& name) const;

  template <class U>
  RegNet<U> cast() const;

  // --- graph construction --------------------------------------------------

  /// Parameter leaves of one tape, in `parameters()` order.
  std::vector<ad::Var> bind(ad::Tape<T>& tape, bool trainable) const;

  struct Encoded {
    ad::Var latent;
    std::vector<ad::Var> skips;  // block outputs of levels 0..L-1
  };
  /// x is (1, D, H, W).
  Encoded encode(ad::Tape<T>& tape, const std::vector<ad::Var>& params, ad::Var x) const;
  /// Returns the raw head output (3, D, H, W). `skip_diffs` may be empty when
  /// skip connections are enabled, in which case zero differences are used.
  ad::Var decode_raw(ad::Tape<T>& tape, const std::vector<ad::Var>& params, ad::Var diff,
                     const std::vector<ad::Var>& skip_diffs) const;

  // --- inference -------------------------------------------------------------

  LatentCode<T> encode(const Volume& v) const;
  /// Increments for a latent difference (or any latent-space vector).
  GradientField<T> decode(const LatentCode<T>& z) const;

  std::string fingerprint() const;

 private:
  ArchConfig arch_;
  std::vector<NamedTensor<T>> params_;
};

/// Symmetric registration: fwd = D(E(M) - E(F)), bwd = D(E(F) - E(M)),
/// warped with their integrated grids and scored by the weighted losses.
template <class T>
struct PairGraph {
  ad::Var total;
  ad::Var latent_diff;
  ad::Var fwd_inc, bwd_inc, fwd_grid, bwd_grid;
  ad::Var warped_moving, warped_moving_seg, warped_fixed, warped_fixed_seg;
  ad::Var sim_f, seg_f, smooth_f, jac_f, sim_b, seg_b, smooth_b, jac_b;
  LossTerms terms;
};

/// Builds the full symmetric loss graph for one pair. Volumes must already
/// be normalized; jac terms are omitted from the graph when beta == 0.
template <class T>
PairGraph<T> build_pair_graph(ad::Tape<T>& tape, const RegNet<T>& net,
                              const std::vector<ad::Var>& params, const Volume& moving,
                              const Volume& fixed, const SegMap& moving_seg,
                              const SegMap& fixed_seg, const LossWeights& weights);

template <class T>
RegistrationOutput<T> register_pair(const RegNet<T>& net, const Volume& moving,
                                    const Volume& fixed, const SegMap& moving_seg,
                                    const SegMap& fixed_seg, const LossWeights& weights = {});

/// Recomputes every loss term directly from a registration output, without
/// the tape.
template <class T>
LossTerms total_loss(const RegistrationOutput<T>& out, const Volume& moving, const Volume& fixed,
                     const SegMap& moving_seg, const SegMap& fixed_seg,
                     const LossWeights& weights);

// --- checkpoints ---------------------------------------------------------------

struct Checkpoint {
  ArchConfig arch;
  std::vector<NamedTensor<float>> parameters;
  int epoch = 0;
  std::string rng_state;

  RegNet<float> network() const { return RegNet<float>(arch, parameters); }
  std::string fingerprint() const { return network().fingerprint(); }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
/// `expected` (when given) must equal the stored architecture.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ArchConfig* expected = nullptr);

/// Fingerprint over architecture and parameter bytes (16 hex digits).
std::string model_fingerprint(const ArchConfig& arch,
                              const std::vector<NamedTensor<float>>& params);

}  // namespace reglat
