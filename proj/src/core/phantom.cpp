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

#include "reglat/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "reglat/core/io.hpp"
#include "reglat/core/rng.hpp"
#include "reglat/sampling.hpp"

namespace reglat {

namespace fs = std::filesystem;
using io::Json;

namespace {

std::string kind_name(Structure::Kind k) { return k == Structure::Kind::kBox ? "box" : "ellipsoid"; }

Structure::Kind kind_from(const std::string& s) {
  if (s == "box") return Structure::Kind::kBox;
  if (s == "ellipsoid") return Structure::Kind::kEllipsoid;
  fail(ErrorCode::kInvalidArgument, "unknown structure kind '" + s + "'");
}

Json arr(const std::array<double, 3>& a) { return Json::array({a[0], a[1], a[2]}); }

std::array<double, 3> arr3(const Json& j, const char* key, std::array<double, 3> fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  require(v.size() == 3, std::string(key) + " must have 3 entries");
  return {v[0], v[1], v[2]};
}

// Approximate signed distance in voxels (negative inside).
double signed_distance(const Structure& s, const double q[3]) {
  if (s.kind == Structure::Kind::kBox) {
    double outside = 0, inside = -1e300;
    for (int a = 0; a < 3; ++a) {
      const double d = std::abs(q[a] - s.center[a]) - s.radii[a];
      outside += std::max(d, 0.0) * std::max(d, 0.0);
      inside = std::max(inside, d);
    }
    return outside > 0 ? std::sqrt(outside) : inside;
  }
  double r2 = 0;
  for (int a = 0; a < 3; ++a) {
    const double t = (q[a] - s.center[a]) / s.radii[a];
    r2 += t * t;
  }
  const double mean_r = (s.radii[0] + s.radii[1] + s.radii[2]) / 3.0;
  return (std::sqrt(r2) - 1.0) * mean_r;
}

// Smooth displacement field: a control lattice of normal draws spanning the
// volume, upsampled trilinearly. Returns (3, D, H, W).
Tensor<double> smooth_warp(int size, int control, double amplitude, std::uint64_t seed) {
  const Dims d{size, size, size};
  Tensor<double> u({3, size, size, size});
  if (amplitude == 0.0) return u;
  Rng rng(seed);
  const Dims cd{control, control, control};
  std::vector<double> lattice(3 * cd.count());
  for (auto& v : lattice) v = amplitude * rng.normal();
  const double scale = double(control - 1) / double(size - 1);
  for (int c = 0; c < 3; ++c)
    for (std::int64_t z = 0; z < size; ++z)
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x)
          u[c * d.count() + d.index(z, y, x)] = sampling::trilinear(
              lattice.data() + c * cd.count(), cd, z * scale, y * scale, x * scale);
  return u;
}

}  // namespace

std::vector<Structure> PhantomSpec::default_structures(int size) {
  const double f = size / 32.0, c = (size - 1) / 2.0;
  using K = Structure::Kind;
  return {
      {K::kEllipsoid, {c, c, c}, {8 * f, 8 * f, 9 * f}, 0.35, 0},
      {K::kEllipsoid, {c, c, c - 4.5 * f}, {5 * f, 5 * f, 3.5 * f}, 0.85, 1},
      {K::kEllipsoid, {c, c, c + 4.5 * f}, {5 * f, 5 * f, 3.5 * f}, 0.85, 2},
      {K::kBox, {c + 4.5 * f, c + 3.5 * f, c}, {2 * f, 2 * f, 1.5 * f}, 0.6, 3},
  };
}

PhantomSpec PhantomSpec::translation_benchmark(std::uint64_t seed) {
  PhantomSpec s;
  s.structures = default_structures(s.size);
  s.jitter.translation = {6.0, 2.0, 2.0};
  s.seed = seed;
  return s;
}

int PhantomSpec::num_labels() const {
  int l = 0;
  for (const auto& s : structures) l = std::max(l, s.label);
  return l;
}

void PhantomSpec::validate() const {
  require(size >= 8 && size <= 256, "phantom size must be in [8, 256]");
  require(n_subjects >= 2, "phantom needs at least 2 subjects");
  require(n_val >= 0 && n_val < n_subjects, "n_val must be in [0, n_subjects)");
  require(!structures.empty(), "phantom needs at least one structure");
  require(warp_control_points >= 2, "warp needs at least 2 control points per axis");
  require(noise_sigma >= 0 && smooth_warp_amplitude >= 0 && jitter.scale >= 0 && jitter.scale < 1,
          "noise, warp amplitude and scale jitter must be non-negative (scale < 1)");
  require(num_labels() >= 1 && num_labels() <= 255, "phantom needs labeled structures (1..255)");
  for (int l = 1; l <= num_labels(); ++l) {
    const bool present = std::any_of(structures.begin(), structures.end(),
                                     [l](const Structure& s) { return s.label == l; });
    require(present, "label " + std::to_string(l) + " has no structure");
  }
  const double c = (size - 1) / 2.0;
  // Extreme linear parts: angles sampled over their ranges, both zoom limits.
  const Dims dims{size, size, size};
  std::vector<Eigen::Matrix3d> linear;
  constexpr int kSteps = 9;
  for (int i = 0; i < kSteps; ++i)
    for (int j = 0; j < kSteps; ++j)
      for (int k = 0; k < kSteps; ++k)
        for (double zoom : {1.0 - jitter.scale, 1.0 + jitter.scale}) {
          const double t[3] = {2.0 * i / (kSteps - 1) - 1, 2.0 * j / (kSteps - 1) - 1, 2.0 * k / (kSteps - 1) - 1};
          Affine a = affine::scaling(zoom, dims);
          for (int ax = 0; ax < 3; ++ax) a = affine::rotation(ax, t[ax] * jitter.rotation[ax], dims) * a;
          linear.push_back(a.topLeftCorner<3, 3>());
        }
  // Warp displacement is normal; 4 sigma bounds it for all practical draws.
  const double warp = 4.0 * smooth_warp_amplitude;
  for (const auto& s : structures) {
    for (int a = 0; a < 3; ++a)
      require(s.radii[a] > 0, "structure radii must be positive");
    double reach[3] = {0, 0, 0};
    for (int corner = 0; corner < 8; ++corner) {
      Eigen::Vector3d v;
      for (int a = 0; a < 3; ++a) v[a] = s.center[a] - c + ((corner >> a) & 1 ? s.radii[a] : -s.radii[a]);
      for (const auto& m : linear) {
        const Eigen::Vector3d w = m * v;
        for (int a = 0; a < 3; ++a) reach[a] = std::max(reach[a], std::abs(w[a]));
      }
    }
    for (int a = 0; a < 3; ++a) {
      const double lo = c - reach[a] - jitter.translation[a] - warp;
      const double hi = c + reach[a] + jitter.translation[a] + warp;
      if (lo < 0 || hi > size - 1) {
        fail(ErrorCode::kInvalidArgument,
             "structure (label " + std::to_string(s.label) + ") can leave the volume along axis " +
                 std::to_string(a) + " under the maximal jitter");
      }
    }
  }
}

Json PhantomSpec::to_json() const {
  Json st = Json::array();
  for (const auto& s : structures)
    st.push_back({{"kind", kind_name(s.kind)},
                  {"center", arr(s.center)},
                  {"radii", arr(s.radii)},
                  {"intensity", s.intensity},
                  {"label", s.label}});
  return Json{{"size", size},
              {"n_subjects", n_subjects},
              {"n_val", n_val},
              {"structures", st},
              {"jitter",
               {{"translation", arr(jitter.translation)},
                {"rotation", arr(jitter.rotation)},
                {"scale", jitter.scale}}},
              {"smooth_warp_amplitude", smooth_warp_amplitude},
              {"warp_control_points", warp_control_points},
              {"noise_sigma", noise_sigma},
              {"seed", seed}};
}

PhantomSpec PhantomSpec::from_json(const Json& j) {
  PhantomSpec s;
  try {
    s.size = j.value("size", s.size);
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.n_val = j.value("n_val", s.n_val);
    if (j.contains("structures")) {
      for (const auto& e : j.at("structures")) {
        Structure st;
        st.kind = kind_from(e.value("kind", std::string("ellipsoid")));
        st.center = arr3(e, "center", {});
        st.radii = arr3(e, "radii", {});
        st.intensity = e.value("intensity", 1.0);
        st.label = e.value("label", 0);
        s.structures.push_back(st);
      }
    } else {
      s.structures = default_structures(s.size);
    }
    if (j.contains("jitter")) {
      const auto& jt = j.at("jitter");
      s.jitter.translation = arr3(jt, "translation", {});
      s.jitter.rotation = arr3(jt, "rotation", {});
      s.jitter.scale = jt.value("scale", 0.0);
    }
    s.smooth_warp_amplitude = j.value("smooth_warp_amplitude", s.smooth_warp_amplitude);
    s.warp_control_points = j.value("warp_control_points", s.warp_control_points);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad phantom spec: ") + e.what());
  }
  return s;
}

PhantomSubject render_phantom_subject(const PhantomSpec& spec, int index) {
  spec.validate();
  require(index >= 0 && index < spec.n_subjects, "subject index out of range");
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const Dims d{spec.size, spec.size, spec.size};

  SubjectTruth t;
  char id[32];
  std::snprintf(id, sizeof id, "sub%03d", index);
  t.id = id;
  for (int a = 0; a < 3; ++a) t.translation[a] = rng.uniform(-1, 1) * spec.jitter.translation[a];
  for (int a = 0; a < 3; ++a) t.rotation_deg[a] = rng.uniform(-1, 1) * spec.jitter.rotation[a];
  t.scale = 1.0 + rng.uniform(-1, 1) * spec.jitter.scale;
  t.warp_seed = rng.next();
  Affine a = affine::scaling(t.scale, d);
  for (int ax = 0; ax < 3; ++ax) a = affine::rotation(ax, t.rotation_deg[ax], d) * a;
  a = affine::translation(0, t.translation[0]) * affine::translation(1, t.translation[1]) *
      affine::translation(2, t.translation[2]) * a;
  t.affine = a;
  const Affine inv = a.inverse();

  const Tensor<double> u =
      smooth_warp(spec.size, spec.warp_control_points, spec.smooth_warp_amplitude, t.warp_seed);
  PhantomSubject out{Volume::zeros(d), SegMap::zeros(d, spec.num_labels()), t};
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const std::size_t i = d.index(z, y, x);
        const Eigen::Vector4d p(z + u[i], y + u[d.count() + i], x + u[2 * d.count() + i], 1.0);
        const Eigen::Vector4d qv = inv * p;
        const double q[3] = {qv[0], qv[1], qv[2]};
        double value = 0.0;
        int label = 0;
        for (const auto& s : spec.structures) {
          const double sd = signed_distance(s, q);
          const double alpha = std::clamp(0.5 - sd, 0.0, 1.0);
          value = value * (1 - alpha) + s.intensity * alpha;
          if (sd <= 0 && s.label > 0) label = s.label;
        }
        if (spec.noise_sigma > 0) value += rng.normal(0.0, spec.noise_sigma);
        out.volume.voxels[i] = static_cast<float>(value);
        out.seg.labels[i] = static_cast<std::uint8_t>(label);
      }
  return out;
}

DatasetManifest generate_phantom_dataset(const PhantomSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.root = out_dir;
  Json truth = Json::array();
  for (int i = 0; i < spec.n_subjects; ++i) {
    const PhantomSubject s = render_phantom_subject(spec, i);
    for (int l = 1; l <= spec.num_labels(); ++l) {
      const auto& v = s.seg.labels.values();
      if (std::find(v.begin(), v.end(), static_cast<std::uint8_t>(l)) == v.end()) {
        fail(ErrorCode::kInvalidArgument,
             "label " + std::to_string(l) + " vanished in subject " + s.truth.id);
      }
    }
    const fs::path vol = fs::path("subjects") / s.truth.id / "volume";
    const fs::path seg = fs::path("subjects") / s.truth.id / "seg";
    save_volume(s.volume, out_dir / vol);
    save_segmap(s.seg, out_dir / seg);
    m.subjects.push_back({s.truth.id, vol, seg,
                          i >= spec.n_subjects - spec.n_val ? Split::kVal : Split::kTrain});
    Json aff = Json::array();
    for (int r = 0; r < 4; ++r)
      aff.push_back({s.truth.affine(r, 0), s.truth.affine(r, 1), s.truth.affine(r, 2), s.truth.affine(r, 3)});
    truth.push_back({{"id", s.truth.id},
                     {"affine", aff},
                     {"translation", arr(s.truth.translation)},
                     {"rotation_deg", arr(s.truth.rotation_deg)},
                     {"scale", s.truth.scale},
                     {"warp_seed", s.truth.warp_seed}});
  }
  io::write_json(out_dir / "truth.json", Json{{"convention", "subject = A * template (z, y, x, 1)"},
                                              {"subjects", truth}});
  io::write_json(out_dir / "phantom.json", spec.to_json());
  save_manifest(m, out_dir);
  return m;
}

std::vector<SubjectTruth> load_truth(const fs::path& path) {
  const Json j = io::read_json(fs::is_directory(path) ? path / "truth.json" : path);
  std::vector<SubjectTruth> out;
  try {
    for (const auto& e : j.at("subjects")) {
      SubjectTruth t;
      t.id = e.at("id").get<std::string>();
      const auto rows = e.at("affine").get<std::vector<std::vector<double>>>();
      require(rows.size() == 4, "affine must be 4x4", ErrorCode::kFormat);
      for (int r = 0; r < 4; ++r) {
        require(rows[r].size() == 4, "affine must be 4x4", ErrorCode::kFormat);
        for (int c = 0; c < 4; ++c) t.affine(r, c) = rows[r][c];
      }
      t.translation = arr3(e, "translation", {});
      t.rotation_deg = arr3(e, "rotation_deg", {});
      t.scale = e.value("scale", 1.0);
      t.warp_seed = e.value("warp_seed", std::uint64_t{0});
      out.push_back(t);
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad truth file: ") + e.what());
  }
  return out;
}

}  // namespace reglat
