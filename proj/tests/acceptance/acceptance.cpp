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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
//
//   reglat_acceptance [criterion ...] [--keep DIR]
//
// Criteria 5, 6 and 8 share the phantom dataset and trained model; with
// --keep the work directory survives and reruns reuse finished steps.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/check.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "../support/pca_oracle.hpp"
#include "reglat/core/io.hpp"
#include "reglat/core/log.hpp"
#include "reglat/latent.hpp"
#include "reglat/ops.hpp"
#include "reglat/phantom.hpp"
#include "reglat/probes.hpp"
#include "reglat/regnet.hpp"
#include "reglat/trainer.hpp"
#include "reglat/warp.hpp"

using namespace reglat;
using testing::gradcheck;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// Collects named sub-checks of one criterion.
class Report {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
    ++total_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_.empty(); }
  int total() const { return total_; }
  const std::vector<std::string>& failed() const { return failed_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  int total_ = 0;
  std::vector<std::string> failed_;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

// --- 1: gradients ---------------------------------------------------------------------------------

Tensor<double> random_grid(Dims d, Rng& rng) {
  Tensor<double> phi({3, d.d, d.h, d.w});
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < d.count(); ++i) {
      const double base = std::floor(rng.uniform(0.0, double(d[c] - 1) - 1e-9));
      phi[c * d.count() + i] = base + rng.uniform(0.05, 0.95);
    }
  return phi;
}

void gradients(Report& r) {
  constexpr double kTol = 1e-4;
  auto run = [&](const std::string& name, const std::vector<Tensor<double>>& inputs, const testing::GraphBuilder& b) {
    const auto g = gradcheck(inputs, b);
    r.check(g.rel_error <= kTol && g.analytic_norm > 0, name + " rel error " + fmt(g.rel_error));
    r.note(name + " " + fmt(g.rel_error, 2));
  };
  Rng rng(101);
  const Dims d{5, 5, 5};

  for (int w : {0, 3}) {
    run(w == 0 ? "ncc" : "ncc_local", {random_tensor({1, 5, 5, 5}, rng), random_tensor({1, 5, 5, 5}, rng)},
        [w](ad::Tape<double>& t, const std::vector<ad::Var>& x) { return ad::ncc_loss(t, x[0], x[1], w); });
  }
  const auto target = random_tensor({3, 5, 5, 5}, rng, 0.0, 1.0);
  run("dice", {random_tensor({3, 5, 5, 5}, rng, 0.0, 1.0)}, [&](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
    return ad::dice_loss(t, x[0], t.constant(target));
  });
  run("smoothness", {random_tensor({3, 5, 5, 5}, rng)},
      [](ad::Tape<double>& t, const std::vector<ad::Var>& x) { return ad::smoothness_loss(t, x[0]); });
  Tensor<double> fold = testing::folded_field_5().phi;
  for (auto& p : fold.values()) p += rng.uniform(-0.05, 0.05);
  run("jacobian_loss", {fold},
      [](ad::Tape<double>& t, const std::vector<ad::Var>& x) { return ad::jacobian_loss(t, x[0]); });

  const auto w3 = random_tensor({3, 5, 5, 5}, rng);
  run("increments+integrate", {random_tensor({3, 5, 5, 5}, rng)}, [&](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
    return testing::dot(t, ad::integrate(t, ad::increments(t, x[0])), w3);
  });
  const auto wv = random_tensor({2, 5, 5, 5}, rng, 0.0, 1.0);
  run("warp", {random_tensor({2, 5, 5, 5}, rng), random_grid(d, rng)},
      [&](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
        return ad::dice_loss(t, ad::warp(t, x[0], x[1]), t.constant(wv));
      });
  Tensor<double> phi = make_identity_grid<double>(d);
  for (auto& p : phi.values()) p += rng.uniform(-0.6, 0.6);
  const auto w1 = random_tensor({5, 5, 5}, rng);
  run("jacobian_determinant", {phi}, [&](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
    return testing::dot(t, ad::jacobian_determinant(t, x[0]), w1);
  });

  const auto w_out = random_tensor({3, 4, 4, 4}, rng);
  run("conv3d", {random_tensor({2, 4, 4, 4}, rng), random_tensor({3, 2, 3, 3, 3}, rng), random_tensor({3}, rng)},
      [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
        return testing::dot(t, ad::conv3d(t, v[0], v[1], v[2], {3, 1, 1}), w_out);
      });
  run("conv_transpose3d",
      {random_tensor({2, 2, 2, 2}, rng), random_tensor({2, 3, 2, 2, 2}, rng), random_tensor({3}, rng)},
      [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
        return testing::dot(t, ad::conv_transpose3d(t, v[0], v[1], v[2], {2, 2, 0}), w_out);
      });
  const auto wn = random_tensor({2, 3, 3, 3}, rng);
  run("instance_norm+leaky_relu", {random_tensor({2, 3, 3, 3}, rng)},
      [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
        return testing::dot(t, ad::leaky_relu(t, ad::instance_norm(t, v[0]), 0.01), wn);
      });

  // Whole network, every parameter, on a 4^3 two-channel configuration.
  ArchConfig a;
  a.in_shape = {4, 4, 4};
  a.base_channels = 2;
  a.n_downsamplings = 1;
  const RegNet<double> net = testing::randomize_head(RegNet<double>(a, 103), 104);
  const auto [m, ms] = testing::random_subject(a.in_shape, 2, rng);
  const auto [f, fs] = testing::random_subject(a.in_shape, 2, rng);
  std::vector<Tensor<double>> params;
  for (const auto& p : net.parameters()) params.push_back(p.value);
  const LossWeights lw{0.1, 1.0, 0};
  run("network", params, [&](ad::Tape<double>& t, const std::vector<ad::Var>& vars) {
    return build_pair_graph(t, net, vars, m, f, ms, fs, lw).total;
  });
}

// --- 2: deformation algebra -----------------------------------------------------------------------

void deformation_algebra(Report& r) {
  Rng rng(201);
  const Dims d{5, 6, 7};
  const auto v = random_tensor({2, 5, 6, 7}, rng);
  r.check(bitwise_equal(warp_trilinear(v, DeformationGrid<double>::identity(d)), v), "identity warp (double)");
  const auto vf = v.cast<float>();
  r.check(bitwise_equal(warp_trilinear(vf, DeformationGrid<float>::identity(d)), vf), "identity warp (float)");

  const Tensor<double> ones({3, d.d, d.h, d.w}, 1.0);
  r.check(integrate_spatial_gradients(GradientField<double>{ones}).phi == make_identity_grid<double>(d),
          "exclusive cumsum of ones is the identity grid");

  double worst = 0;
  for (double s : {0.5, 1.7, 2.3}) {
    const auto det =
        jacobian_determinant_map(integrate_spatial_gradients(GradientField<double>{Tensor<double>(ones.shape(), s)})).det;
    for (std::int64_t z = 1; z < d.d - 1; ++z)
      for (std::int64_t y = 1; y < d.h - 1; ++y)
        for (std::int64_t x = 1; x < d.w - 1; ++x) worst = std::max(worst, std::abs(det[d.index(z, y, x)] - s * s * s));
  }
  r.check(worst <= 1e-6, "uniform stretch s^3, max error " + fmt(worst));
  r.note("stretch error " + fmt(worst, 2));

  const auto phi = testing::folded_field_5();
  const Dims d5{5, 5, 5};
  const auto det = jacobian_determinant_map(phi).det;
  double err = 0;
  int negatives = 0;
  for (std::int64_t z = 1; z < 4; ++z)
    for (std::int64_t y = 1; y < 4; ++y)
      for (std::int64_t x = 1; x < 4; ++x) {
        const double want = testing::central_difference_det(phi, z, y, x);
        err = std::max(err, std::abs(det[d5.index(z, y, x)] - want));
        negatives += det[d5.index(z, y, x)] < 0;
      }
  r.check(err <= 1e-12, "folded field vs 3x3 oracle, max error " + fmt(err));
  r.check(negatives > 0, "folded field has negative determinants");
  r.note(std::to_string(negatives) + " negative determinants");
}

// --- 3: PCA oracle --------------------------------------------------------------------------------

void pca_oracle(Report& r) {
  for (bool center : {false, true}) {
    for (int K : {5, 20}) {
      const auto e = testing::pca_against_oracle(testing::random_rows(50, 200, 300 + K), K, center);
      const std::string tag = std::string(center ? "centered" : "uncentered") + " K=" + std::to_string(K);
      r.check(e.projections <= 1e-8, tag + " projections " + fmt(e.projections));
      r.check(e.evr <= 1e-8, tag + " evr " + fmt(e.evr));
      r.check(e.reconstruction <= 1e-8, tag + " reconstruction " + fmt(e.reconstruction));
      r.check(e.orthonormality <= 1e-6, tag + " orthonormality " + fmt(e.orthonormality));
      r.check(e.recon_error <= 1 - e.evr_sum + 1e-6, tag + " reconstruction error identity");
      r.check(e.evr_sorted, tag + " evr sorted");
    }
  }
}

// --- 4: symmetry ----------------------------------------------------------------------------------

void symmetry(Report& r) {
  const ArchConfig a = testing::mini_arch();
  Rng rng(401);
  const auto [m, ms] = testing::random_subject(a.in_shape, 2, rng);
  const auto [f, fs] = testing::random_subject(a.in_shape, 2, rng);
  const LossWeights w;

  const RegNet<float> net = testing::randomize_head(RegNet<float>(a, 402), 403);
  const auto o1 = register_pair(net, m, f, ms, fs, w);
  const auto o2 = register_pair(net, f, m, fs, ms, w);
  bool anti = o1.latent_diff.shape() == o2.latent_diff.shape();
  for (std::size_t i = 0; anti && i < o1.latent_diff.size(); ++i) {
    const float neg = -o1.latent_diff[i];
    anti = std::memcmp(&neg, &o2.latent_diff[i], sizeof(float)) == 0;
  }
  r.check(anti, "latent difference antisymmetric bitwise");
  r.check(o1.loss_terms.total == o2.loss_terms.total, "total loss invariant under swap");
  const RegNet<double> netd = testing::randomize_head(RegNet<double>(a, 404), 405);
  const auto d1 = register_pair(netd, m, f, ms, fs, w);
  const auto d2 = register_pair(netd, f, m, fs, ms, w);
  r.check(total_loss(d1, m, f, ms, fs, w).total == total_loss(d2, f, m, fs, ms, w).total,
          "total_loss invariant under swap (64-bit)");

  const RegNet<float> zero(a, 406);
  const auto z = register_pair(zero, m, f, ms, fs, w);
  r.check(z.fwd_grid.phi == make_identity_grid<float>(a.in_shape), "zero-epoch forward grid is the identity");
  r.check(z.bwd_grid.phi == make_identity_grid<float>(a.in_shape), "zero-epoch backward grid is the identity");
  r.check(bitwise_equal(z.warped_moving.voxels, m.voxels), "zero-epoch warp reproduces the moving volume");
  r.check(argmax_labels(z.warped_moving_seg).labels == ms.labels, "zero-epoch warp reproduces the moving labels");
}

// --- 5, 6, 8: phantom pipeline --------------------------------------------------------------------

struct Pipeline {
  fs::path root;
  std::optional<DatasetManifest> manifest;
  std::optional<Checkpoint> model;
  double train_seconds = 0;
  bool trained_now = false;

  static constexpr int kEpochs = 20;
  static constexpr int kK = 32;

  TrainConfig train_config(int epochs) const {
    TrainConfig c;
    c.epochs = epochs;
    c.lr = 1e-3;
    c.batch_size = 4;
    c.eval_every = 5;
    c.threads = 1;
    c.augment.enabled = false;
    c.weights = LossWeights{0.1, 1.0, 0};
    return c;
  }

  ArchConfig arch(bool skip) const {
    ArchConfig a;
    a.in_shape = {32, 32, 32};
    a.base_channels = 8;
    a.n_downsamplings = 3;
    a.skip_connections = skip;
    return a;
  }

  const DatasetManifest& data() {
    if (!manifest) {
      const fs::path dir = root / "data";
      if (fs::exists(dir / "manifest.json")) {
        manifest = load_manifest(dir);
      } else {
        manifest = generate_phantom_dataset(PhantomSpec::translation_benchmark(0), dir);
      }
    }
    return *manifest;
  }

  Checkpoint train_run(const std::string& name, bool skip, int epochs) {
    const fs::path run = root / name;
    const fs::path done = checkpoint_path(run, epochs);
    if (fs::exists(done)) return load_checkpoint(done);
    TrainHooks hooks;
    hooks.on_eval = [name](int epoch, const EvalReport& e) {
      std::cerr << "  [" << name << "] epoch " << epoch << ": val Dice " << fmt(e.dice_before_mean) << " -> "
                << fmt(e.dice_after_mean) << ", folding " << fmt(e.folding_mean) << "\n";
    };
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res = train(data(), train_config(epochs), arch(skip), run, true, hooks);
    if (!skip) {
      train_seconds = seconds_since(t0);
      trained_now = true;
    }
    return std::move(res.checkpoint);
  }

  const Checkpoint& trained() {
    if (!model) model = train_run("run", false, kEpochs);
    return *model;
  }

  PCABasis basis_for(const Checkpoint& ck, const std::string& name) {
    const fs::path dir = root / name;
    if (!fs::exists(dir / "basis.json")) {
      const PCABasis b = fit_pca(collect_latents(ck, data(), Split::kTrain), kK, false);
      save_basis(b, dir);
    }
    return load_basis(dir);
  }
};

void end_to_end(Report& r, Pipeline& p) {
  const Checkpoint& ck = p.trained();
  const EvalReport e = evaluate(ck, p.data(), Split::kVal);
  const double gain = e.dice_after_mean - e.dice_before_mean;
  r.check(gain >= 0.10, "val Dice gain " + fmt(gain) + " (" + fmt(e.dice_before_mean) + " -> " +
                            fmt(e.dice_after_mean) + ")");
  r.check(e.folding_mean <= 0.01, "mean fold fraction " + fmt(e.folding_mean));
  r.note("Dice " + fmt(e.dice_before_mean, 3) + " -> " + fmt(e.dice_after_mean, 3));
  r.note("folding " + fmt(100 * e.folding_mean, 3) + "% (max " + fmt(100 * e.folding_max, 3) + "%)");
  if (p.trained_now) {
    r.check(p.train_seconds <= 15 * 60, "training time " + fmt(p.train_seconds) + " s");
    r.note("trained in " + fmt(p.train_seconds, 3) + " s");
  } else {
    r.note("reused checkpoint");
  }
}

void probe_sparsity(Report& r, Pipeline& p) {
  const Checkpoint& ck = p.trained();
  const RegNet<float> net = ck.network();
  const PCABasis basis = p.basis_for(ck, "basis");
  const auto val = load_subjects(p.data(), Split::kVal);
  const ProbeSpec translation = ProbeSpec::parse("translation:z:10");

  const ProbeResult t1 = affine_perturbation_probe(net, basis, val, translation);
  const double bar = 3.0 / basis.K;
  r.check(t1.dominance_ratio >= bar, "translation dominance " + fmt(t1.dominance_ratio) + " vs 3/K = " + fmt(bar));
  r.note("dominance " + fmt(t1.dominance_ratio, 3) + " >= " + fmt(bar, 3) + ", active " +
         std::to_string(t1.activation_count) + "/" + std::to_string(basis.K));

  const ProbeResult id = affine_perturbation_probe(net, basis, val, ProbeSpec::parse("identity"));
  bool zeros = !id.deltas.empty();
  for (const auto& row : id.deltas)
    for (double v : row) zeros = zeros && v == 0.0;
  r.check(zeros, "identity probe deltas exactly 0");

  const ProbeResult t2 = affine_perturbation_probe(net, basis, val, translation);
  bool same = t1.subjects == t2.subjects && t1.deltas.size() == t2.deltas.size();
  for (std::size_t i = 0; same && i < t1.deltas.size(); ++i)
    same = t1.deltas[i].size() == t2.deltas[i].size() &&
           std::memcmp(t1.deltas[i].data(), t2.deltas[i].data(), t1.deltas[i].size() * sizeof(double)) == 0;
  r.check(same, "probe deterministic across runs");
  const fs::path a = p.root / "probe_a.csv", b = p.root / "probe_b.csv";
  write_probe_csv(t1, a);
  write_probe_csv(t2, b);
  r.check(io::read_bytes(a) == io::read_bytes(b), "probe CSVs byte-identical");
}

void skip_comparison(Report& r, Pipeline& p) {
  constexpr int kSkipEpochs = 5;
  const Checkpoint& noskip = p.trained();
  const Checkpoint skip = p.train_run("run_skip", true, kSkipEpochs);
  const PCABasis bn = p.basis_for(noskip, "basis");
  const PCABasis bs = p.basis_for(skip, "basis_skip");
  const auto val = load_subjects(p.data(), Split::kVal);
  const SkipComparison c =
      skip_connection_comparison(noskip.network(), bn, skip.network(), bs, val, ProbeSpec::parse("translation:z:10"));
  const fs::path csv = p.root / "skip_comparison.csv";
  write_skip_comparison_csv(c, csv);
  const auto report = c.report();
  io::write_json(p.root / "skip_comparison.json", report);
  r.check(fs::exists(csv) && fs::file_size(csv) > 0, "comparison CSV written");
  r.check(report.contains("activation_count_noskip") && report.contains("activation_count_skip"),
          "paired activation counts reported");
  r.note("activation no-skip " + report["activation_count_noskip"].dump() + ", skip " +
         report["activation_count_skip"].dump() + " (skip trained " + std::to_string(kSkipEpochs) + " epochs)");
}

// --- 7: round trips -------------------------------------------------------------------------------

void round_trips(Report& r) {
  testing::TempDir tmp("accept_rt");
  Rng rng(701);

  Volume v = testing::random_volume({6, 5, 4}, rng);
  v.spacing = {1.25, 0.7, 2.0};
  v.voxels[0] = -0.0f;
  v.voxels[1] = 1e-41f;
  save_volume(v, tmp / "vol");
  const Volume vb = load_volume(tmp / "vol");
  r.check(bitwise_equal(vb.voxels, v.voxels) && vb.spacing == v.spacing, "volume bit-exact");
  SegMap s = SegMap::zeros({6, 5, 4}, 4);
  for (auto& l : s.labels.values()) l = static_cast<std::uint8_t>(rng.below(5));
  save_segmap(s, tmp / "seg");
  const SegMap sb = load_segmap(tmp / "seg");
  r.check(sb.labels == s.labels && sb.num_labels == s.num_labels, "segmentation bit-exact");
  Tensor<float> grid = make_identity_grid<float>({3, 4, 5});
  for (auto& g : grid.values()) g += static_cast<float>(rng.uniform(-0.3, 0.3));
  save_array(grid, tmp / "grid");
  r.check(bitwise_equal(load_array(tmp / "grid"), grid), "deformation grid bit-exact");

  const ArchConfig a = testing::mini_arch();
  const RegNet<float> net = testing::randomize_head(RegNet<float>(a, 702), 703);
  const Checkpoint c{a, net.parameters(), 3, Rng(704).state()};
  save_checkpoint(c, tmp / "c.bin");
  const Checkpoint cb = load_checkpoint(tmp / "c.bin");
  bool params_equal = cb.parameters.size() == c.parameters.size();
  for (std::size_t i = 0; params_equal && i < c.parameters.size(); ++i)
    params_equal = cb.parameters[i].name == c.parameters[i].name && bitwise_equal(cb.parameters[i].value, c.parameters[i].value);
  r.check(params_equal && cb.arch == c.arch && cb.epoch == 3 && cb.rng_state == c.rng_state, "checkpoint bit-exact");
  save_checkpoint(cb, tmp / "c2.bin");
  r.check(io::read_bytes(tmp / "c.bin") == io::read_bytes(tmp / "c2.bin"), "checkpoint file stable");

  std::vector<Subject> subjects;
  for (int i = 0; i < 6; ++i) {
    auto [sv, ss] = testing::random_subject(a.in_shape, 2, rng);
    subjects.push_back({"s" + std::to_string(i), sv, ss});
  }
  const PCABasis basis = fit_pca(collect_latents(net, subjects), 4, true);
  save_basis(basis, tmp / "basis");
  const PCABasis bb = load_basis(tmp / "basis");
  const PCABasis q = basis.quantized();
  r.check(bb.components == q.components && bb.mean == q.mean && bb.evr == basis.evr &&
              bb.model_fingerprint == net.fingerprint(),
          "basis bit-exact at stored precision");
  save_basis(bb, tmp / "basis2");
  bool files = true;
  for (const char* f : {"basis.json", "components.raw", "mean.raw"})
    files = files && io::read_bytes(tmp / "basis" / f) == io::read_bytes(tmp / "basis2" / f);
  r.check(files, "basis files stable");

  const LatentMatrix lat = collect_latents(net, subjects);
  const auto coeffs = project_all(lat, bb);
  save_coefficients(coeffs, tmp / "coeffs.csv");
  const auto cf = load_coefficients(tmp / "coeffs.csv");
  bool coeff_equal = cf.size() == coeffs.size();
  for (std::size_t i = 0; coeff_equal && i < cf.size(); ++i)
    coeff_equal = cf[i].subject_id == coeffs[i].subject_id && cf[i].a.size() == coeffs[i].a.size() &&
                  std::memcmp(cf[i].a.data(), coeffs[i].a.data(), cf[i].a.size() * sizeof(double)) == 0;
  r.check(coeff_equal, "coefficients bit-exact");

  const RegNet<float> other(a, 705);
  bool rejected = false;
  try {
    check_fingerprint(bb, other);
  } catch (const Error& e) {
    rejected = e.code() == ErrorCode::kFingerprintMismatch;
  }
  r.check(rejected, "basis fitted on another model rejected");
  rejected = false;
  try {
    decode_component(bb, 1, 1.0, other);
  } catch (const Error& e) {
    rejected = e.code() == ErrorCode::kFingerprintMismatch;
  }
  r.check(rejected, "decode with a mismatched model rejected");
  ArchConfig wrong = a;
  wrong.base_channels = 4;
  bool arch_rejected = false;
  try {
    load_checkpoint(tmp / "c.bin", &wrong);
  } catch (const Error&) {
    arch_rejected = true;
  }
  r.check(arch_rejected, "checkpoint with another architecture rejected");
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0 = unbounded here
  std::function<void(Report&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  std::string keep;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--keep" && i + 1 < argc) {
      keep = argv[++i];
    } else if (a == "-h" || a == "--help") {
      std::cout << "usage: reglat_acceptance [criterion ...] [--keep DIR]\n";
      return 0;
    } else {
      try {
        selected.insert(std::stoi(a));
      } catch (const std::exception&) {
        std::cerr << "unknown argument " << a << "\n";
        return 2;
      }
    }
  }
  log::set_verbose(false);

  std::unique_ptr<testing::TempDir> scratch;
  Pipeline pipe;
  if (keep.empty()) {
    scratch = std::make_unique<testing::TempDir>("acceptance");
    pipe.root = scratch->path();
  } else {
    pipe.root = keep;
    fs::create_directories(pipe.root);
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient suite", 120, gradients},
      {2, "deformation algebra", 30, deformation_algebra},
      {3, "PCA oracle", 30, pca_oracle},
      {4, "symmetry", 0, symmetry},
      {5, "end-to-end phantom registration", 0, [&](Report& r) { end_to_end(r, pipe); }},
      {6, "probe sparsity", 0, [&](Report& r) { probe_sparsity(r, pipe); }},
      {7, "artifact round trips", 0, round_trips},
      {8, "skip-connection comparison", 0, [&](Report& r) { skip_comparison(r, pipe); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    std::cerr << "criterion " << c.id << ": " << c.name << " ...\n";
    Report r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(r);
    } catch (const std::exception& e) {
      r.check(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (c.budget_seconds > 0) r.check(secs <= c.budget_seconds, "runtime " + fmt(secs) + " s over budget");
    std::cout << (r.ok() ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): ";
    if (r.ok()) {
      std::cout << r.total() << " checks";
      for (const auto& n : r.notes()) std::cout << "; " << n;
    } else {
      for (std::size_t i = 0; i < r.failed().size(); ++i) std::cout << (i ? "; " : "") << r.failed()[i];
    }
    std::cout << " [" << fmt(secs, 3) << " s]" << std::endl;
    failures += !r.ok();
  }
  return failures == 0 ? 0 : 1;
}
