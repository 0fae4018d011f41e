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

#include "reglat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "reglat/core/io.hpp"
#include "reglat/core/log.hpp"
#include "reglat/warp.hpp"

namespace reglat {

namespace fs = std::filesystem;
using io::Json;

// --- configuration -------------------------------------------------------------

void AugmentConfig::validate() const {
  require(flip_prob >= 0 && flip_prob <= 1, "flip_prob must be in [0, 1]");
  require(rot_deg >= 0 && rot_deg < 90, "rot_deg must be in [0, 90)");
  require(trans_vox >= 0, "trans_vox must be non-negative");
  require(zoom_range[0] > 0 && zoom_range[0] <= zoom_range[1], "zoom_range must satisfy 0 < lo <= hi");
}

Json AugmentConfig::to_json() const {
  return Json{{"enabled", enabled},
              {"flip_prob", flip_prob},
              {"rot_deg", rot_deg},
              {"trans_vox", trans_vox},
              {"zoom_range", {zoom_range[0], zoom_range[1]}}};
}

AugmentConfig AugmentConfig::from_json(const Json& j) {
  AugmentConfig a;
  try {
    a.enabled = j.value("enabled", a.enabled);
    a.flip_prob = j.value("flip_prob", a.flip_prob);
    a.rot_deg = j.value("rot_deg", a.rot_deg);
    a.trans_vox = j.value("trans_vox", a.trans_vox);
    if (j.contains("zoom_range")) {
      const auto z = j.at("zoom_range").get<std::vector<double>>();
      require(z.size() == 2, "zoom_range needs two values");
      a.zoom_range = {z[0], z[1]};
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad augment config: ") + e.what());
  }
  return a;
}

void TrainConfig::validate() const {
  require(lr > 0 && std::isfinite(lr), "lr must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(epochs >= 0, "epochs must be non-negative");
  require(eval_every >= 0, "eval_every must be non-negative");
  require(threads >= 1, "threads must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
          "Adam betas must be in [0, 1) and eps positive");
  weights.validate();
  augment.validate();
}

Json TrainConfig::to_json() const {
  return Json{{"lr", lr},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"weights", {{"alpha", weights.alpha}, {"beta", weights.beta}, {"ncc_window", weights.ncc_window}}},
              {"augment", augment.to_json()},
              {"seed", seed},
              {"eval_every", eval_every},
              {"threads", threads},
              {"adam", {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"eps", adam_eps}}}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      c.weights.alpha = w.value("alpha", c.weights.alpha);
      c.weights.beta = w.value("beta", c.weights.beta);
      c.weights.ncc_window = w.value("ncc_window", c.weights.ncc_window);
    }
    if (j.contains("augment")) c.augment = AugmentConfig::from_json(j.at("augment"));
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.threads = j.value("threads", c.threads);
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      c.adam_beta1 = a.value("beta1", c.adam_beta1);
      c.adam_beta2 = a.value("beta2", c.adam_beta2);
      c.adam_eps = a.value("eps", c.adam_eps);
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad train config: ") + e.what());
  }
  return c;
}

std::vector<Subject> load_subjects(const DatasetManifest& m, Split split) {
  std::vector<Subject> out;
  for (const auto& e : m.in_split(split))
    out.push_back({e.id, normalize_volume(m.load_subject_volume(e)), m.load_subject_seg(e)});
  return out;
}

// --- sampling and augmentation -------------------------------------------------------

PairSampler::PairSampler(std::size_t n) : n_(n) {
  require(n >= 2, "pair sampling needs at least 2 training subjects");
}

std::pair<std::size_t, std::size_t> PairSampler::next(Rng& rng) const {
  const std::size_t i = rng.below(n_);
  std::size_t j = rng.below(n_ - 1);
  if (j >= i) ++j;
  return {i, j};
}

Affine draw_augmentation(Dims dims, const AugmentConfig& cfg, Rng& rng) {
  bool flip[3];
  double rot[3], shift[3];
  for (auto& f : flip) f = rng.bernoulli(cfg.flip_prob);
  for (auto& r : rot) r = rng.uniform(-cfg.rot_deg, cfg.rot_deg);
  for (auto& t : shift) t = rng.uniform(-cfg.trans_vox, cfg.trans_vox);
  const double zoom = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1]);

  Affine a = Affine::Identity();
  for (int ax = 0; ax < 3; ++ax)
    if (flip[ax]) a = affine::flip(ax, dims) * a;
  if (zoom != 1.0) a = affine::scaling(zoom, dims) * a;
  for (int ax = 0; ax < 3; ++ax)
    if (rot[ax] != 0.0) a = affine::rotation(ax, rot[ax], dims) * a;
  for (int ax = 0; ax < 3; ++ax)
    if (shift[ax] != 0.0) a = affine::translation(ax, shift[ax]) * a;
  return a;
}

std::pair<Volume, SegMap> augment(const Volume& v, const SegMap& seg, const AugmentConfig& cfg, Rng& rng) {
  require(v.dims() == seg.dims(), "augment: volume and segmentation shapes differ");
  const Affine a = draw_augmentation(v.dims(), cfg, rng);
  if (a == Affine::Identity()) return {v, seg};
  return {apply_affine(v, a, Interp::kLinear), apply_affine(seg, a)};
}

// --- optimizer -------------------------------------------------------------------------

Adam::Adam(const std::vector<NamedTensor<float>>& params, double lr, double beta1, double beta2,
           double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(std::vector<NamedTensor<float>>& params, const std::vector<Tensor<float>>& grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "Adam: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value;
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[k][i] = b1_ * m_[k][i] + (1 - b1_) * g[i];
      v_[k][i] = b2_ * v_[k][i] + (1 - b2_) * double(g[i]) * g[i];
      const double mh = m_[k][i] / c1, vh = v_[k][i] / c2;
      p[i] = static_cast<float>(p[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

// --- evaluation --------------------------------------------------------------------------

namespace {

std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  double m = 0;
  for (double v : x) m += v;
  m /= double(x.size());
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return {m, std::sqrt(s / double(x.size()))};
}

Json pair_json(const PairEval& p) {
  return Json{{"moving", p.moving},
              {"fixed", p.fixed},
              {"dice_before", p.dice_before},
              {"dice_after", p.dice_after},
              {"labels_before", p.labels_before},
              {"labels_after", p.labels_after},
              {"folding", p.folding}};
}

}  // namespace

EvalReport EvalReport::from_pairs(std::vector<PairEval> pairs) {
  EvalReport r;
  std::vector<double> before, after;
  for (const auto& p : pairs) {
    before.push_back(p.dice_before);
    after.push_back(p.dice_after);
    r.folding_mean += p.folding;
    r.folding_max = std::max(r.folding_max, p.folding);
  }
  if (!pairs.empty()) r.folding_mean /= double(pairs.size());
  std::tie(r.dice_before_mean, r.dice_before_std) = mean_std(before);
  std::tie(r.dice_after_mean, r.dice_after_std) = mean_std(after);
  r.pairs = std::move(pairs);
  return r;
}

Json EvalReport::to_json() const {
  Json pj = Json::array();
  for (const auto& p : pairs) pj.push_back(pair_json(p));
  return Json{{"n_pairs", pairs.size()},
              {"dice_before", {{"mean", dice_before_mean}, {"std", dice_before_std}}},
              {"dice_after", {{"mean", dice_after_mean}, {"std", dice_after_std}}},
              {"folding_fraction", {{"mean", folding_mean}, {"max", folding_max}}},
              {"pairs", pj}};
}

EvalReport evaluate(const RegNet<float>& net, const std::vector<Subject>& subjects) {
  std::vector<PairEval> pairs;
  for (const auto& m : subjects)
    for (const auto& f : subjects) {
      if (&m == &f) continue;
      const auto out = register_pair(net, m.volume, f.volume, m.seg, f.seg);
      const SegMap warped = argmax_labels(warp_segmentation(m.seg, out.fwd_grid));
      PairEval p;
      p.moving = m.id;
      p.fixed = f.id;
      p.labels_before = dice_per_label(m.seg, f.seg);
      p.labels_after = dice_per_label(warped, f.seg);
      p.dice_before = mean_dice(m.seg, f.seg);
      p.dice_after = mean_dice(warped, f.seg);
      p.folding = folding_fraction(jacobian_determinant_map(out.fwd_grid));
      pairs.push_back(std::move(p));
    }
  return EvalReport::from_pairs(std::move(pairs));
}

EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& m, Split split) {
  const auto subjects = load_subjects(m, split);
  require(subjects.size() >= 2, "evaluation needs at least 2 subjects in the split");
  const RegNet<float> net = ckpt.network();
  require(subjects.front().volume.dims() == ckpt.arch.in_shape,
          "dataset shape does not match the checkpoint input shape");
  return evaluate(net, subjects);
}

// --- training ------------------------------------------------------------------------------

fs::path checkpoint_path(const fs::path& run_dir, int epoch) {
  char name[40];
  std::snprintf(name, sizeof name, "checkpoint_%04d.bin", epoch);
  return run_dir / name;
}

fs::path latest_checkpoint(const fs::path& run_dir) {
  fs::path best;
  int best_epoch = -1;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(run_dir, ec)) {
    const std::string n = e.path().filename().string();
    int epoch = 0;
    char tail = 0;
    if (std::sscanf(n.c_str(), "checkpoint_%d.bi%c", &epoch, &tail) == 2 && tail == 'n' && epoch > best_epoch) {
      best_epoch = epoch;
      best = e.path();
    }
  }
  if (ec) fail(ErrorCode::kIo, "cannot list " + run_dir.string() + ": " + ec.message());
  if (best_epoch < 0) fail(ErrorCode::kIo, "no checkpoint in " + run_dir.string());
  return best;
}

namespace {

struct PairWork {
  Volume mv, fv;
  SegMap ms, fs;
};

struct PairResult {
  LossTerms terms;
  std::vector<Tensor<float>> grads;
};

PairResult run_pair(const RegNet<float>& net, const PairWork& w, const LossWeights& weights) {
  ad::Tape<float> tape;
  const auto params = net.bind(tape, true);
  const auto g = build_pair_graph(tape, net, params, w.mv, w.fv, w.ms, w.fs, weights);
  tape.backward(g.total);
  PairResult r{g.terms, {}};
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& grad = tape.grad(params[k]);
    r.grads.push_back(grad.empty() ? Tensor<float>(net.parameters()[k].value.shape()) : grad);
  }
  return r;
}

void add_terms(LossTerms& acc, const LossTerms& t, double s) {
  acc.total += s * t.total;
  acc.fwd.sim += s * t.fwd.sim, acc.fwd.seg += s * t.fwd.seg;
  acc.fwd.smooth += s * t.fwd.smooth, acc.fwd.jac += s * t.fwd.jac;
  acc.bwd.sim += s * t.bwd.sim, acc.bwd.seg += s * t.bwd.seg;
  acc.bwd.smooth += s * t.bwd.smooth, acc.bwd.jac += s * t.bwd.jac;
}

std::string csv_row(const StepRecord& r) {
  const LossTerms& t = r.terms;
  std::string s = std::to_string(r.epoch) + "," + std::to_string(r.step);
  for (double v : {t.total, t.fwd.sim, t.fwd.seg, t.fwd.smooth, t.fwd.jac, t.bwd.sim, t.bwd.seg,
                   t.bwd.smooth, t.bwd.jac})
    s += "," + io::format_double(v);
  return s + "\n";
}

}  // namespace

TrainResult train(const DatasetManifest& m, const TrainConfig& cfg, const ArchConfig& arch,
                  const fs::path& out_dir, bool force, const TrainHooks& hooks) {
  cfg.validate();
  arch.validate();
  const auto train_set = load_subjects(m, Split::kTrain);
  const auto val_set = load_subjects(m, Split::kVal);
  const PairSampler sampler(train_set.size());
  for (const auto& s : train_set) {
    require(s.volume.dims() == arch.in_shape,
            "subject " + s.id + " does not match the network input shape");
  }

  io::prepare_output_dir(out_dir, force);
  io::write_json(out_dir / "config.json",
                 Json{{"train", cfg.to_json()}, {"arch", arch.to_json()}, {"dataset", fs::absolute(m.root).string()}});
  std::ofstream csv(out_dir / "loss.csv", std::ios::trunc);
  if (!csv) fail(ErrorCode::kIo, "cannot write " + (out_dir / "loss.csv").string());
  csv << "epoch,step";
  for (const auto& c : LossTerms::csv_columns()) csv << "," << c;
  csv << "\n";

  RegNet<float> net(arch, mix_seed(cfg.seed, 0));
  Adam adam(net.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng pair_rng(mix_seed(cfg.seed, 1)), aug_rng(mix_seed(cfg.seed, 2));

  TrainResult result;
  Json eval_history = Json::array();
  auto snapshot = [&](int epoch) {
    Checkpoint c{arch, net.parameters(), epoch,
                 Json{{"pairs", pair_rng.state()}, {"augment", aug_rng.state()}}.dump()};
    save_checkpoint(c, checkpoint_path(out_dir, epoch));
    if (val_set.size() >= 2) {
      result.eval = evaluate(net, val_set);
      eval_history.push_back({{"epoch", epoch},
                              {"dice_before", result.eval.dice_before_mean},
                              {"dice_after", result.eval.dice_after_mean},
                              {"folding_mean", result.eval.folding_mean}});
      log::info("epoch " + std::to_string(epoch) + ": val Dice " + io::format_double(result.eval.dice_before_mean) +
                " -> " + io::format_double(result.eval.dice_after_mean) +
                ", folding " + io::format_double(result.eval.folding_mean));
      if (hooks.on_eval) hooks.on_eval(epoch, result.eval);
    }
    result.checkpoint = std::move(c);
  };

  const long steps_per_epoch = (static_cast<long>(train_set.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      // Batch composition and augmentation are drawn serially, so the run
      // does not depend on the thread count.
      std::vector<PairWork> work;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto [i, j] = sampler.next(pair_rng);
        PairWork w;
        if (cfg.augment.enabled) {
          std::tie(w.mv, w.ms) = augment(train_set[i].volume, train_set[i].seg, cfg.augment, aug_rng);
          std::tie(w.fv, w.fs) = augment(train_set[j].volume, train_set[j].seg, cfg.augment, aug_rng);
        } else {
          w.mv = train_set[i].volume, w.ms = train_set[i].seg;
          w.fv = train_set[j].volume, w.fs = train_set[j].seg;
        }
        work.push_back(std::move(w));
      }
      std::vector<PairResult> results(work.size());
      for (std::size_t b0 = 0; b0 < work.size(); b0 += cfg.threads) {
        const std::size_t b1 = std::min(work.size(), b0 + static_cast<std::size_t>(cfg.threads));
        if (b1 - b0 == 1) {
          results[b0] = run_pair(net, work[b0], cfg.weights);
          continue;
        }
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(b1 - b0);
        for (std::size_t b = b0; b < b1; ++b)
          pool.emplace_back([&, b] {
            try {
              results[b] = run_pair(net, work[b], cfg.weights);
            } catch (...) {
              errors[b - b0] = std::current_exception();
            }
          });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }

      StepRecord rec{epoch, step, {}};
      const double inv = 1.0 / double(results.size());
      std::vector<Tensor<float>> grads = std::move(results[0].grads);
      add_terms(rec.terms, results[0].terms, inv);
      for (std::size_t b = 1; b < results.size(); ++b) {
        add_terms(rec.terms, results[b].terms, inv);
        for (std::size_t k = 0; k < grads.size(); ++k)
          for (std::size_t i = 0; i < grads[k].size(); ++i) grads[k][i] += results[b].grads[k][i];
      }
      for (auto& g : grads)
        for (auto& v : g.values()) v = static_cast<float>(v * inv);

      csv << csv_row(rec) << std::flush;
      if (!std::isfinite(rec.terms.total)) {
        log::error("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
        fail(ErrorCode::kNumeric, "training diverged: non-finite loss at step " + std::to_string(step));
      }
      adam.step(net.parameters(), grads);
      if (hooks.on_step) hooks.on_step(rec);
      result.history.push_back(rec);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) + " loss " +
              io::format_double(result.history.back().terms.total) + " (" + std::to_string(int(secs)) + " s)");
    if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && epoch != cfg.epochs) snapshot(epoch);
  }
  snapshot(cfg.epochs);

  Json ej = result.eval.to_json();
  ej["split"] = "val";
  ej["epoch"] = cfg.epochs;
  ej["history"] = eval_history;
  io::write_json(out_dir / "eval.json", ej);
  return result;
}

}  // namespace reglat
