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

#include "reglat/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>
#include <unordered_map>

#include "reglat/core/io.hpp"
#include "reglat/warp.hpp"

namespace reglat {

namespace fs = std::filesystem;
using io::Json;

// --- probe specification -------------------------------------------------------------

namespace {

int parse_axis(const std::string& s) {
  if (s == "z" || s == "0") return 0;
  if (s == "y" || s == "1") return 1;
  if (s == "x" || s == "2") return 2;
  fail(ErrorCode::kInvalidArgument, "unknown axis '" + s + "' (use z, y, x or 0, 1, 2)");
}

double parse_number(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    fail(ErrorCode::kInvalidArgument, "not a number: '" + s + "'");
  }
  return v;
}

const char* axis_name(int axis) { return axis == 0 ? "z" : axis == 1 ? "y" : "x"; }

}  // namespace

std::vector<ProbeSpec> ProbeSpec::defaults() {
  return {translation(0, 10.0), rotation(0, 20.0), scaling(0.2)};
}

ProbeSpec ProbeSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  require(!parts.empty(), "empty probe specification");
  ProbeSpec s;
  const std::string& kind = parts[0];
  if (kind == "identity") {
    require(parts.size() == 1, "identity takes no parameters");
  } else if (kind == "translation" || kind == "rotation") {
    require(parts.size() <= 3, "expected " + kind + "[:axis[:amount]]");
    s = kind == "translation" ? translation(0, 10.0) : rotation(0, 20.0);
    if (parts.size() >= 2) s.axis = parse_axis(parts[1]);
    if (parts.size() == 3) s.amount = parse_number(parts[2]);
  } else if (kind == "scaling") {
    require(parts.size() <= 2, "expected scaling[:factor]");
    s = scaling(0.2);
    if (parts.size() == 2) s.amount = parse_number(parts[1]);
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown transform '" + kind + "'");
  }
  s.validate();
  return s;
}

std::string ProbeSpec::name() const {
  switch (kind) {
    case Kind::kTranslation: return "translation";
    case Kind::kRotation: return "rotation";
    case Kind::kScaling: return "scaling";
    case Kind::kIdentity: break;
  }
  return "identity";
}

std::string ProbeSpec::describe() const {
  switch (kind) {
    case Kind::kTranslation:
    case Kind::kRotation: return name() + ":" + axis_name(axis) + ":" + io::format_double(amount);
    case Kind::kScaling: return name() + ":" + io::format_double(amount);
    case Kind::kIdentity: break;
  }
  return "identity";
}

void ProbeSpec::validate() const {
  require(axis >= 0 && axis < 3, "probe axis must be 0, 1 or 2");
  require(std::isfinite(amount), "probe amount must be finite");
  if (kind == Kind::kScaling) require(amount > -1.0, "scaling factor must exceed -1");
}

Affine ProbeSpec::affine(Dims dims) const {
  validate();
  switch (kind) {
    case Kind::kTranslation: return affine::translation(axis, amount);
    case Kind::kRotation: return affine::rotation(axis, amount, dims);
    case Kind::kScaling: return affine::scaling(1.0 + amount, dims);
    case Kind::kIdentity: break;
  }
  return Affine::Identity();
}

// --- probe results ---------------------------------------------------------------------

ComponentStats component_stats(std::vector<double> v) {
  require(!v.empty(), "statistics of an empty sample");
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
  };
  return {quantile(0.5), quantile(0.25), quantile(0.75), v.front(), v.back()};
}

void summarize(ProbeResult& r) {
  require(!r.deltas.empty(), "probe result has no subjects");
  const std::size_t K = r.deltas.front().size();
  r.stats.clear();
  double max_median = 0, sum_median = 0;
  for (std::size_t j = 0; j < K; ++j) {
    std::vector<double> col;
    for (const auto& row : r.deltas) col.push_back(row.at(j));
    r.stats.push_back(component_stats(std::move(col)));
    max_median = std::max(max_median, r.stats.back().median);
    sum_median += r.stats.back().median;
  }
  r.dominance_ratio = sum_median > 0 ? max_median / sum_median : 0.0;
  r.activation_count = 0;
  if (max_median > 0)
    for (const auto& s : r.stats) r.activation_count += s.median > 0.1 * max_median;
}

Json ProbeResult::summary_json() const {
  Json comps = Json::array();
  for (std::size_t j = 0; j < stats.size(); ++j) {
    const auto& s = stats[j];
    comps.push_back({{"component", j + 1},
                     {"median", s.median},
                     {"q1", s.q1},
                     {"q3", s.q3},
                     {"min", s.min},
                     {"max", s.max}});
  }
  return Json{{"transform", transform},
              {"K", K()},
              {"n_subjects", subjects.size()},
              {"dominance_ratio", dominance_ratio},
              {"uniform_baseline", K() > 0 ? 1.0 / K() : 0.0},
              {"activation_count", activation_count},
              {"components", comps}};
}

ProbeResult affine_perturbation_probe(const RegNet<float>& net, const PCABasis& basis,
                                      std::vector<Subject> subjects, const ProbeSpec& spec) {
  require(!subjects.empty(), "probe split has no subjects");
  check_fingerprint(basis, net);
  std::stable_sort(subjects.begin(), subjects.end(), [](const Subject& a, const Subject& b) { return a.id < b.id; });
  ProbeResult r;
  r.transform = spec.describe();
  for (const auto& s : subjects) {
    const Affine a = spec.affine(s.volume.dims());
    const Volume moved = spec.kind == ProbeSpec::Kind::kIdentity ? s.volume : apply_affine(s.volume, a);
    const auto za = net.encode(s.volume), zb = net.encode(moved);
    const auto pa = project(za.flat(), basis), pb = project(zb.flat(), basis);
    std::vector<double> d(pa.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = std::abs(pa[j] - pb[j]);
    r.subjects.push_back(s.id);
    r.deltas.push_back(std::move(d));
  }
  summarize(r);
  return r;
}

void write_probe_csv(const ProbeResult& r, const fs::path& path) {
  std::string out = "transform,subject,component,abs_delta\n";
  for (std::size_t i = 0; i < r.subjects.size(); ++i)
    for (std::size_t j = 0; j < r.deltas[i].size(); ++j)
      out += r.transform + "," + r.subjects[i] + "," + std::to_string(j + 1) + "," +
             io::format_double(r.deltas[i][j]) + "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_text(path, out);
}

ProbeResult read_probe_csv(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "transform,subject,component,abs_delta") {
    fail(ErrorCode::kFormat, path.string() + ": unexpected probe CSV header");
  }
  ProbeResult r;
  std::map<std::string, std::size_t> row_of;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string p; std::getline(ls, p, ',');) f.push_back(p);
    if (f.size() != 4) fail(ErrorCode::kFormat, path.string() + ": malformed row '" + line + "'");
    r.transform = f[0];
    auto [it, inserted] = row_of.try_emplace(f[1], r.subjects.size());
    if (inserted) {
      r.subjects.push_back(f[1]);
      r.deltas.emplace_back();
    }
    char* end = nullptr;
    const long j = std::strtol(f[2].c_str(), &end, 10);
    const double v = std::strtod(f[3].c_str(), nullptr);
    auto& row = r.deltas[it->second];
    if (*end != '\0' || j != long(row.size()) + 1) {
      fail(ErrorCode::kFormat, path.string() + ": components out of order for " + f[1]);
    }
    row.push_back(v);
  }
  summarize(r);
  return r;
}

Json SkipComparison::report() const {
  return Json{{"transform", noskip.transform},
              {"noskip", noskip.summary_json()},
              {"skip", skip.summary_json()},
              {"activation_count_noskip", noskip.activation_count},
              {"activation_count_skip", skip.activation_count},
              {"noskip_le_skip", noskip.activation_count <= skip.activation_count}};
}

SkipComparison skip_connection_comparison(const RegNet<float>& noskip, const PCABasis& basis_noskip,
                                          const RegNet<float>& skip, const PCABasis& basis_skip,
                                          const std::vector<Subject>& subjects, const ProbeSpec& spec) {
  return {affine_perturbation_probe(noskip, basis_noskip, subjects, spec),
          affine_perturbation_probe(skip, basis_skip, subjects, spec)};
}

void write_skip_comparison_csv(const SkipComparison& c, const fs::path& path) {
  std::string out = "model,component,median,q1,q3,activated\n";
  for (const auto* r : {&c.noskip, &c.skip}) {
    const char* model = r == &c.noskip ? "noskip" : "skip";
    double max_median = 0;
    for (const auto& s : r->stats) max_median = std::max(max_median, s.median);
    for (std::size_t j = 0; j < r->stats.size(); ++j) {
      const auto& s = r->stats[j];
      out += std::string(model) + "," + std::to_string(j + 1) + "," + io::format_double(s.median) + "," +
             io::format_double(s.q1) + "," + io::format_double(s.q3) + "," +
             (max_median > 0 && s.median > 0.1 * max_median ? "1" : "0") + "\n";
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_text(path, out);
}

// --- slices and contours ----------------------------------------------------------------

namespace {

struct PlaneMap {
  std::int64_t rows, cols;
  std::int64_t stride_slice, stride_row, stride_col;
};

PlaneMap plane(Dims d, int axis, std::int64_t index) {
  require(axis >= 0 && axis < 3, "slice axis must be 0, 1 or 2");
  require(index >= 0 && index < d[axis], "slice index " + std::to_string(index) + " out of range for axis " +
                                             std::to_string(axis));
  const std::int64_t strides[3] = {d.h * d.w, d.w, 1};
  const int ra = axis == 0 ? 1 : 0, ca = axis == 2 ? 1 : 2;
  return {d[ra], d[ca], strides[axis], strides[ra], strides[ca]};
}

}  // namespace

Slice extract_slice(const Tensor<float>& vol, int axis, std::int64_t index) {
  const Dims d = Dims::from_shape(vol.shape());
  const PlaneMap p = plane(d, axis, index);
  Slice s{int(p.rows), int(p.cols), std::vector<float>(std::size_t(p.rows * p.cols))};
  for (std::int64_t r = 0; r < p.rows; ++r)
    for (std::int64_t c = 0; c < p.cols; ++c)
      s.values[std::size_t(r * p.cols + c)] = vol[std::size_t(index * p.stride_slice + r * p.stride_row + c * p.stride_col)];
  return s;
}

Slice extract_slice(const SegMap& seg, int axis, std::int64_t index, int label) {
  const Dims d = seg.dims();
  const PlaneMap p = plane(d, axis, index);
  Slice s{int(p.rows), int(p.cols), std::vector<float>(std::size_t(p.rows * p.cols))};
  for (std::int64_t r = 0; r < p.rows; ++r)
    for (std::int64_t c = 0; c < p.cols; ++c)
      s.values[std::size_t(r * p.cols + c)] =
          seg.labels[std::size_t(index * p.stride_slice + r * p.stride_row + c * p.stride_col)] == label ? 1.0f : 0.0f;
  return s;
}

std::string encode_pgm(const Slice& s, double lo, double hi) {
  require(hi > lo, "PGM intensity window must be non-empty");
  std::string out = "P5\n" + std::to_string(s.cols) + " " + std::to_string(s.rows) + "\n255\n";
  for (float v : s.values) {
    const double t = std::clamp((double(v) - lo) / (hi - lo), 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(t * 255.0))));
  }
  return out;
}

Pgm decode_pgm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int maxval = 0;
  Pgm p;
  in >> magic >> p.cols >> p.rows >> maxval;
  if (magic != "P5" || p.cols <= 0 || p.rows <= 0 || maxval != 255 || in.get() == EOF) {
    fail(ErrorCode::kFormat, "not an 8-bit binary PGM");
  }
  const auto start = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - start != std::size_t(p.rows) * std::size_t(p.cols)) fail(ErrorCode::kFormat, "PGM payload size mismatch");
  p.pixels.assign(bytes.begin() + long(start), bytes.end());
  return p;
}

std::vector<Polygon> marching_squares(const Slice& mask) {
  const int R = mask.rows, C = mask.cols;
  // Padded by one background pixel on every side so every contour closes.
  auto on = [&](int r, int c) {
    if (r < 1 || c < 1 || r > R || c > C) return false;
    return mask.values[std::size_t((r - 1) * C + (c - 1))] > 0.5f;
  };
  // Edge keys: horizontal edge (i,j)-(i,j+1) and vertical edge (i,j)-(i+1,j).
  const std::int64_t W = C + 3;
  auto hkey = [&](int i, int j) { return (std::int64_t(i) * W + j) * 2; };
  auto vkey = [&](int i, int j) { return (std::int64_t(i) * W + j) * 2 + 1; };
  auto point = [&](std::int64_t key) -> std::array<double, 2> {
    const std::int64_t cell = key / 2;
    const double i = double(cell / W), j = double(cell % W);
    return key % 2 == 0 ? std::array<double, 2>{i - 1, j + 0.5 - 1} : std::array<double, 2>{i + 0.5 - 1, j - 1};
  };

  std::vector<std::array<std::int64_t, 2>> segs;
  for (int i = 0; i <= R; ++i)
    for (int j = 0; j <= C; ++j) {
      const int code = (on(i, j) << 3) | (on(i, j + 1) << 2) | (on(i + 1, j + 1) << 1) | int(on(i + 1, j));
      const std::int64_t top = hkey(i, j), bottom = hkey(i + 1, j), left = vkey(i, j), right = vkey(i, j + 1);
      switch (code) {
        case 1: case 14: segs.push_back({left, bottom}); break;
        case 2: case 13: segs.push_back({bottom, right}); break;
        case 3: case 12: segs.push_back({left, right}); break;
        case 4: case 11: segs.push_back({top, right}); break;
        case 6: case 9: segs.push_back({top, bottom}); break;
        case 7: case 8: segs.push_back({left, top}); break;
        // Saddles: the two foreground corners stay separate.
        case 5: segs.push_back({left, bottom}); segs.push_back({top, right}); break;
        case 10: segs.push_back({left, top}); segs.push_back({bottom, right}); break;
        default: break;
      }
    }

  std::unordered_map<std::int64_t, std::array<int, 2>> incident;
  for (int s = 0; s < int(segs.size()); ++s)
    for (std::int64_t k : segs[std::size_t(s)]) {
      auto [it, fresh] = incident.try_emplace(k, std::array<int, 2>{-1, -1});
      (it->second[0] < 0 ? it->second[0] : it->second[1]) = s;
    }

  std::vector<Polygon> out;
  std::vector<char> used(segs.size(), 0);
  for (std::size_t s0 = 0; s0 < segs.size(); ++s0) {
    if (used[s0]) continue;
    Polygon poly;
    const std::int64_t start = segs[s0][0];
    std::int64_t key = start;
    int seg = int(s0);
    while (true) {
      used[std::size_t(seg)] = 1;
      poly.push_back(point(key));
      const auto& sk = segs[std::size_t(seg)];
      key = sk[0] == key ? sk[1] : sk[0];
      if (key == start) break;
      const auto& inc = incident.at(key);
      seg = inc[0] == seg ? inc[1] : inc[0];
      if (seg < 0 || used[std::size_t(seg)]) fail(ErrorCode::kInternal, "marching squares produced an open contour");
    }
    out.push_back(std::move(poly));
  }
  return out;
}

Slice rasterize(const std::vector<Polygon>& polygons, int rows, int cols) {
  Slice s{rows, cols, std::vector<float>(std::size_t(rows) * std::size_t(cols), 0.0f)};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      bool inside = false;
      for (const auto& p : polygons)
        for (std::size_t a = 0, b = p.size() - 1; a < p.size(); b = a++) {
          const double ra = p[a][0], ca = p[a][1], rb = p[b][0], cb = p[b][1];
          if ((ra > r) != (rb > r) && c < (cb - ca) * (r - ra) / (rb - ra) + ca) inside = !inside;
        }
      s.values[std::size_t(r * cols + c)] = inside ? 1.0f : 0.0f;
    }
  return s;
}

std::vector<ContourRecord> contours_for(const SegMap& seg, int axis, std::int64_t index, const std::string& role) {
  std::vector<ContourRecord> out;
  for (int l = 1; l <= seg.num_labels; ++l) {
    auto polys = marching_squares(extract_slice(seg, axis, index, l));
    if (!polys.empty()) out.push_back({index, axis, l, role, std::move(polys)});
  }
  return out;
}

Json contours_json(const std::vector<ContourRecord>& records) {
  Json out = Json::array();
  for (const auto& rec : records)
    for (const auto& p : rec.polygons) {
      Json pts = Json::array();
      for (const auto& q : p) pts.push_back({q[0], q[1]});
      out.push_back({{"slice", rec.slice}, {"axis", rec.axis}, {"label", rec.label}, {"role", rec.role}, {"points", pts}});
    }
  return out;
}

// --- sweeps and field PCA ---------------------------------------------------------------------

std::vector<fs::path> lambda_sweep(const RegNet<float>& net, const PCABasis& basis, const Subject& subject, int j,
                                   const SweepOptions& opt, const fs::path& out_dir) {
  require(!opt.lambdas.empty(), "lambda sweep needs at least one lambda");
  require(j >= 1 && j <= basis.K, "component index must be in [1, K]");
  const Dims d = subject.volume.dims();
  std::array<std::int64_t, 3> idx{};
  for (int a = 0; a < 3; ++a) idx[a] = opt.slices[a] < 0 ? d[a] / 2 : opt.slices[a];
  fs::create_directories(out_dir);

  std::vector<fs::path> images;
  Json contours = Json::array();
  for (double lambda : opt.lambdas) {
    const auto grid = decode_component(basis, j, lambda, net);
    const Volume warped = warp_volume(subject.volume, grid);
    const SegMap warped_seg = argmax_labels(warp_segmentation(subject.seg, grid));
    const JacobianMap<float> jac = jacobian_determinant_map(grid);
    Json per_axis = Json::array();
    for (int a = 0; a < 3; ++a) {
      const fs::path img = out_dir / ("j" + std::to_string(j) + "_lambda" + io::format_double(lambda) + "_axis" +
                                      std::to_string(a) + ".pgm");
      io::write_text(img, encode_pgm(extract_slice(warped.voxels, a, idx[a])));
      images.push_back(img);
      auto recs = contours_for(subject.seg, a, idx[a], "original");
      auto def = contours_for(warped_seg, a, idx[a], "deformed");
      recs.insert(recs.end(), def.begin(), def.end());
      per_axis.push_back({{"axis", a}, {"slice", idx[a]}, {"image", img.filename().string()}, {"contours", contours_json(recs)}});
    }
    contours.push_back({{"lambda", lambda}, {"folding_fraction", folding_fraction(jac)}, {"planes", per_axis}});
  }
  io::write_json(out_dir / "contours.json", contours);
  io::write_json(out_dir / "sweep.json", Json{{"subject", subject.id},
                                              {"component", j},
                                              {"lambdas", opt.lambdas},
                                              {"slices", idx},
                                              {"model_fingerprint", basis.model_fingerprint}});
  return images;
}

PCABasis pca_on_fields(const RegNet<float>& net, const std::vector<Subject>& subjects, const Subject& reference, int K,
                       bool center) {
  std::vector<const Subject*> moving;
  for (const auto& s : subjects)
    if (s.id != reference.id) moving.push_back(&s);
  require(moving.size() >= 2, "field PCA needs at least 2 subjects besides the reference");
  const std::size_t n = 3 * reference.volume.dims().count();
  Eigen::MatrixXd rows(Eigen::Index(moving.size()), Eigen::Index(n));
  for (std::size_t i = 0; i < moving.size(); ++i) {
    const auto out = register_pair(net, moving[i]->volume, reference.volume, moving[i]->seg, reference.seg);
    const auto v = out.fwd_grad.inc.values();
    for (std::size_t k = 0; k < n; ++k) rows(Eigen::Index(i), Eigen::Index(k)) = v[k];
  }
  PCABasis b = fit_pca(rows, K, center);
  b.model_fingerprint = net.fingerprint();
  return b;
}

}  // namespace reglat
