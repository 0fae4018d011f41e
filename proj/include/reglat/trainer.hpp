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

// Training loop: pair sampling, augmentation, Adam, evaluation and the run
// directory (config.json, loss.csv, eval.json, checkpoint_NNNN.bin).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reglat/core/rng.hpp"
#include "reglat/losses.hpp"
#include "reglat/regnet.hpp"
#include "reglat/volgrid.hpp"

namespace reglat {

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;  // per axis
  double rot_deg = 10.0;   // per axis, uniform in [-rot_deg, rot_deg]
  double trans_vox = 5.0;  // per axis
  std::array<double, 2> zoom_range{0.9, 1.1};

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 4;
  int epochs = 100;
  LossWeights weights;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  int eval_every = 0;  // epochs between checkpoints/evaluations; 0 = end only
  int threads = 1;     // pairs of a batch processed concurrently
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct Subject {
  std::string id;
  Volume volume;  // normalized
  SegMap seg;
};

/// Loads and normalizes every subject of a split, in manifest order.
std::vector<Subject> load_subjects(const DatasetManifest& m, Split split);

/// Uniform over ordered pairs of distinct subjects.
class PairSampler {
 public:
  explicit PairSampler(std::size_t n);
  std::pair<std::size_t, std::size_t> next(Rng& rng) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
};

/// Draws one random transform and applies it to the volume (linear) and the
/// segmentation (nearest). Always consumes the same number of draws.
std::pair<Volume, SegMap> augment(const Volume& v, const SegMap& seg, const AugmentConfig& cfg,
                                  Rng& rng);
/// The transform `augment` would apply for the same rng state.
Affine draw_augmentation(Dims dims, const AugmentConfig& cfg, Rng& rng);

class Adam {
 public:
  Adam(const std::vector<NamedTensor<float>>& params, double lr, double beta1, double beta2,
       double eps);
  void step(std::vector<NamedTensor<float>>& params, const std::vector<Tensor<float>>& grads);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<double>> m_, v_;
};

struct PairEval {
  std::string moving, fixed;
  double dice_before = 0, dice_after = 0;
  std::vector<double> labels_before, labels_after;  // per foreground label
  double folding = 0;                               // share of interior det <= 0
};

struct EvalReport {
  std::vector<PairEval> pairs;
  double dice_before_mean = 0, dice_before_std = 0;
  double dice_after_mean = 0, dice_after_std = 0;
  double folding_mean = 0, folding_max = 0;

  nlohmann::json to_json() const;
  static EvalReport from_pairs(std::vector<PairEval> pairs);
};

/// Every ordered pair of distinct subjects of the split, forward direction.
EvalReport evaluate(const RegNet<float>& net, const std::vector<Subject>& subjects);
EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& m, Split split = Split::kVal);

struct StepRecord {
  int epoch = 0;
  long step = 0;
  LossTerms terms;  // batch means
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> history;
  EvalReport eval;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int epoch, const EvalReport&)> on_eval;
};

/// Runs training into `out_dir`. Epoch = n_train ordered pairs, i.e.
/// ceil(n_train / batch_size) steps.
TrainResult train(const DatasetManifest& m, const TrainConfig& cfg, const ArchConfig& arch,
                  const std::filesystem::path& out_dir, bool force = false,
                  const TrainHooks& hooks = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch);
/// Highest-epoch checkpoint in a run directory.
std::filesystem::path latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace reglat
