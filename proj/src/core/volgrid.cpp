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

#include "reglat/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "reglat/core/io.hpp"
#include "reglat/core/log.hpp"
#include "reglat/sampling.hpp"

namespace reglat {

namespace fs = std::filesystem;
using io::Json;

void validate(const Volume& v) {
  require(v.voxels.rank() == 3, "volume must be rank 3, got " + shape_str(v.voxels.shape()));
  require(v.dims().valid(), "volume extents must be positive");
  require(v.voxels.all_finite(), "volume contains non-finite values");
}

void validate(const SegMap& s) {
  require(s.labels.rank() == 3, "segmentation must be rank 3");
  require(s.dims().valid(), "segmentation extents must be positive");
  require(s.num_labels >= 1 && s.num_labels <= 255, "label count out of range");
  for (auto l : s.labels.values()) {
    if (l > s.num_labels) {
      fail(ErrorCode::kFormat, "label " + std::to_string(int(l)) + " exceeds label count " +
                                   std::to_string(s.num_labels));
    }
  }
}

Volume normalize_volume(const Volume& v) {
  validate(v);
  const auto values = v.voxels.values();
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (float x : values) mean += x;
  mean /= n;
  double var = 0.0;
  for (float x : values) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);

  Volume out{Tensor<float>(v.voxels.shape()), v.spacing};
  if (!(sd > 0.0)) {
    log::warn("normalize_volume: constant input, returning zeros");
    return out;
  }
  std::vector<double> z(values.size());
  double lo = 5.0, hi = -5.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    z[i] = std::clamp((values[i] - mean) / sd, -5.0, 5.0);
    lo = std::min(lo, z[i]);
    hi = std::max(hi, z[i]);
  }
  if (!(hi > lo)) {
    log::warn("normalize_volume: input flat after clipping, returning zeros");
    return out;
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.voxels[i] = static_cast<float>((z[i] - lo) / (hi - lo));
  }
  return out;
}

template <class T>
Tensor<T> make_identity_grid(Dims d) {
  require(d.valid(), "identity grid needs positive extents");
  Tensor<T> g({3, d.d, d.h, d.w});
  const std::size_t n = d.count();
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const std::size_t i = d.index(z, y, x);
        g[i] = static_cast<T>(z);
        g[n + i] = static_cast<T>(y);
        g[2 * n + i] = static_cast<T>(x);
      }
  return g;
}

template <class T>
Tensor<T> one_hot(const SegMap& seg) {
  const Dims d = seg.dims();
  const std::size_t n = d.count();
  Tensor<T> out({seg.num_labels + 1, d.d, d.h, d.w});
  for (std::size_t i = 0; i < n; ++i) {
    const int l = seg.labels[i];
    require(l <= seg.num_labels, "label exceeds label count");
    out[static_cast<std::size_t>(l) * n + i] = T(1);
  }
  return out;
}

template <class T>
SegMap argmax_labels(const Tensor<T>& soft) {
  require(soft.rank() == 4 && soft.dim(0) >= 2, "soft labels must be (L+1, D, H, W)");
  const Dims d = Dims::from_shape(soft.shape(), 1);
  const auto channels = static_cast<std::size_t>(soft.dim(0));
  const std::size_t n = d.count();
  SegMap out = SegMap::zeros(d, static_cast<int>(channels - 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < channels; ++c) {
      if (soft[c * n + i] > soft[best * n + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

template Tensor<float> make_identity_grid<float>(Dims);
template Tensor<double> make_identity_grid<double>(Dims);
template Tensor<float> one_hot<float>(const SegMap&);
template Tensor<double> one_hot<double>(const SegMap&);
template SegMap argmax_labels<float>(const Tensor<float>&);
template SegMap argmax_labels<double>(const Tensor<double>&);

// --- affine -----------------------------------------------------------------

namespace affine {

Affine translation(int axis, double voxels) {
  require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
  Affine a = Affine::Identity();
  a(axis, 3) = voxels;
  return a;
}

Affine center_about(const Affine& linear, Dims dims) {
  Eigen::Vector3d c((dims.d - 1) / 2.0, (dims.h - 1) / 2.0, (dims.w - 1) / 2.0);
  Affine to = Affine::Identity(), back = Affine::Identity();
  to.block<3, 1>(0, 3) = -c;
  back.block<3, 1>(0, 3) = c;
  return back * linear * to;
}

Affine rotation(int axis, double degrees, Dims dims) {
  require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
  const double t = degrees * std::numbers::pi / 180.0;
  const int p = (axis + 1) % 3, q = (axis + 2) % 3;
  Affine r = Affine::Identity();
  r(p, p) = std::cos(t);
  r(p, q) = -std::sin(t);
  r(q, p) = std::sin(t);
  r(q, q) = std::cos(t);
  return center_about(r, dims);
}

Affine scaling(double factor, Dims dims) {
  require(factor > 0.0, "scale factor must be positive");
  Affine s = Affine::Identity();
  s(0, 0) = s(1, 1) = s(2, 2) = factor;
  return center_about(s, dims);
}

Affine flip(int axis, Dims dims) {
  require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
  Affine f = Affine::Identity();
  f(axis, axis) = -1.0;
  return center_about(f, dims);
}

}  // namespace affine

namespace {

Affine checked_inverse(const Affine& a) {
  require(a.allFinite(), "affine has non-finite entries");
  require(std::abs(a(3, 0)) + std::abs(a(3, 1)) + std::abs(a(3, 2)) == 0.0 && a(3, 3) == 1.0,
          "affine bottom row must be (0, 0, 0, 1)");
  const double det = a.block<3, 3>(0, 0).determinant();
  require(std::abs(det) > 1e-12, "affine matrix is singular");
  return a.inverse();
}

// Coordinates within 1e-9 of a lattice point are snapped so that rotations by
// multiples of 90 degrees and integer shifts resample exactly.
double snap(double c) {
  const double r = std::round(c);
  return std::abs(c - r) < 1e-9 ? r : c;
}

template <class Fn>
void for_each_source(Dims d, const Affine& inv, Fn&& fn) {
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const Eigen::Vector4d q = inv * Eigen::Vector4d(double(z), double(y), double(x), 1.0);
        fn(d.index(z, y, x), snap(q[0]), snap(q[1]), snap(q[2]));
      }
}

std::int64_t nearest_index(double c, std::int64_t n) {
  const auto i = static_cast<std::int64_t>(std::lround(c));
  return std::clamp<std::int64_t>(i, 0, n - 1);
}

}  // namespace

Volume apply_affine(const Volume& v, const Affine& a, Interp interp) {
  validate(v);
  const Affine inv = checked_inverse(a);
  const Dims d = v.dims();
  Volume out{Tensor<float>(v.voxels.shape()), v.spacing};
  if (interp == Interp::kNearest) {
    for_each_source(d, inv, [&](std::size_t i, double z, double y, double x) {
      out.voxels[i] = v.voxels[d.index(nearest_index(z, d.d), nearest_index(y, d.h),
                                       nearest_index(x, d.w))];
    });
    return out;
  }
  // Interpolate in double so exact lattice hits reproduce the input exactly.
  const Tensor<double> src = v.voxels.cast<double>();
  for_each_source(d, inv, [&](std::size_t i, double z, double y, double x) {
    out.voxels[i] = static_cast<float>(sampling::trilinear(src.data(), d, z, y, x));
  });
  return out;
}

SegMap apply_affine(const SegMap& s, const Affine& a) {
  validate(s);
  const Affine inv = checked_inverse(a);
  const Dims d = s.dims();
  SegMap out = SegMap::zeros(d, s.num_labels);
  for_each_source(d, inv, [&](std::size_t i, double z, double y, double x) {
    out.labels[i] = s.labels[d.index(nearest_index(z, d.d), nearest_index(y, d.h),
                                     nearest_index(x, d.w))];
  });
  return out;
}

// --- volume store -------------------------------------------------------------

namespace {

constexpr const char* kFormatTag = "reglat-volume";
constexpr int kFormatVersion = 1;

Json make_meta(const Shape& shape, const char* dtype, const std::array<double, 3>& spacing) {
  Json m;
  m["format"] = kFormatTag;
  m["version"] = kFormatVersion;
  m["shape"] = shape;
  m["dtype"] = dtype;
  m["spacing"] = spacing;
  m["byte_order"] = "little";
  m["order"] = "C";
  return m;
}

struct RawArray {
  Json meta;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

RawArray read_raw(const fs::path& dir, const std::string& want_dtype) {
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "no volume store at " + dir.string());
  RawArray r;
  r.meta = io::read_json(dir / "meta.json");
  const auto& m = r.meta;
  try {
    if (m.value("format", std::string()) != kFormatTag || m.value("version", 0) != kFormatVersion) {
      fail(ErrorCode::kFormat, dir.string() + ": not a reglat volume store (bad format tag)");
    }
    if (m.at("byte_order") != "little" || m.at("order") != "C") {
      fail(ErrorCode::kFormat, dir.string() + ": unsupported byte order or layout");
    }
    if (m.at("dtype") != want_dtype) {
      fail(ErrorCode::kFormat, dir.string() + ": expected dtype " + want_dtype + ", found " +
                                   m.at("dtype").get<std::string>());
    }
    r.shape = m.at("shape").get<Shape>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, dir.string() + "/meta.json: " + e.what());
  }
  for (auto s : r.shape) {
    if (s <= 0) fail(ErrorCode::kFormat, dir.string() + ": non-positive extent in shape");
  }
  r.payload = io::read_bytes(dir / "data.raw");
  const std::size_t elem = want_dtype == "u8" ? 1 : 4;
  if (r.payload.size() != shape_numel(r.shape) * elem) {
    fail(ErrorCode::kFormat, dir.string() + ": payload holds " + std::to_string(r.payload.size()) +
                                 " bytes, shape " + shape_str(r.shape) + " needs " +
                                 std::to_string(shape_numel(r.shape) * elem));
  }
  return r;
}

void write_raw(const fs::path& dir, const Json& meta, const std::vector<std::uint8_t>& payload) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  io::write_json(dir / "meta.json", meta);
  io::write_bytes(dir / "data.raw", payload);
}

std::array<double, 3> read_spacing(const Json& meta) {
  std::array<double, 3> sp{1.0, 1.0, 1.0};
  if (meta.contains("spacing")) {
    try {
      sp = meta.at("spacing").get<std::array<double, 3>>();
    } catch (const Json::exception& e) {
      fail(ErrorCode::kFormat, std::string("bad spacing: ") + e.what());
    }
  }
  return sp;
}

}  // namespace

void save_volume(const Volume& v, const fs::path& dir) {
  validate(v);
  std::vector<std::uint8_t> bytes;
  io::append_le<float>(bytes, v.voxels.values());
  write_raw(dir, make_meta(v.voxels.shape(), "f32", v.spacing), bytes);
}

Volume load_volume(const fs::path& dir) {
  RawArray r = read_raw(dir, "f32");
  if (r.shape.size() != 3) fail(ErrorCode::kFormat, dir.string() + ": volume shape must be rank 3");
  Volume v{Tensor<float>(r.shape, io::decode_le<float>(r.payload)), read_spacing(r.meta)};
  if (!v.voxels.all_finite()) fail(ErrorCode::kFormat, dir.string() + ": non-finite voxel values");
  return v;
}

void save_segmap(const SegMap& s, const fs::path& dir) {
  validate(s);
  Json meta = make_meta(s.labels.shape(), "u8", {1.0, 1.0, 1.0});
  meta["num_labels"] = s.num_labels;
  write_raw(dir, meta, std::vector<std::uint8_t>(s.labels.storage().begin(), s.labels.storage().end()));
}

SegMap load_segmap(const fs::path& dir) {
  RawArray r = read_raw(dir, "u8");
  if (r.shape.size() != 3) fail(ErrorCode::kFormat, dir.string() + ": label map shape must be rank 3");
  if (!r.meta.contains("num_labels") || !r.meta["num_labels"].is_number_integer()) {
    fail(ErrorCode::kFormat, dir.string() + ": label map meta lacks num_labels");
  }
  SegMap s{Tensor<std::uint8_t>(r.shape, std::move(r.payload)), r.meta["num_labels"].get<int>()};
  validate(s);
  return s;
}

void save_array(const Tensor<float>& t, const fs::path& dir) {
  require(t.all_finite(), "array contains non-finite values");
  std::vector<std::uint8_t> bytes;
  io::append_le<float>(bytes, t.values());
  write_raw(dir, make_meta(t.shape(), "f32", {1.0, 1.0, 1.0}), bytes);
}

Tensor<float> load_array(const fs::path& dir) {
  RawArray r = read_raw(dir, "f32");
  return Tensor<float>(r.shape, io::decode_le<float>(r.payload));
}

// --- manifest -------------------------------------------------------------------

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "val"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  fail(ErrorCode::kInvalidArgument, "unknown split '" + s + "' (expected train or val)");
}

std::vector<SubjectEntry> DatasetManifest::in_split(Split split) const {
  std::vector<SubjectEntry> out;
  for (const auto& s : subjects)
    if (s.split == split) out.push_back(s);
  return out;
}

const SubjectEntry& DatasetManifest::find(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  fail(ErrorCode::kInvalidArgument, "unknown subject '" + id + "'");
}

Volume DatasetManifest::load_subject_volume(const SubjectEntry& s) const {
  return load_volume(root / s.volume_path);
}

SegMap DatasetManifest::load_subject_seg(const SubjectEntry& s) const {
  return load_segmap(root / s.seg_path);
}

void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  Json subjects = Json::array();
  for (const auto& s : m.subjects) {
    subjects.push_back({{"id", s.id},
                        {"volume_path", s.volume_path.generic_string()},
                        {"seg_path", s.seg_path.generic_string()},
                        {"split", to_string(s.split)}});
  }
  io::write_json(dir / "manifest.json", Json{{"version", 1}, {"subjects", subjects}});
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  if (!fs::exists(file)) fail(ErrorCode::kIo, "manifest not found: " + file.string());
  const Json j = io::read_json(file);
  DatasetManifest m;
  m.root = file.parent_path();
  std::set<std::string> seen;
  try {
    for (const auto& e : j.at("subjects")) {
      SubjectEntry s;
      s.id = e.at("id").get<std::string>();
      s.volume_path = e.at("volume_path").get<std::string>();
      s.seg_path = e.at("seg_path").get<std::string>();
      s.split = split_from_string(e.at("split").get<std::string>());
      if (!seen.insert(s.id).second) fail(ErrorCode::kFormat, "duplicate subject id '" + s.id + "'");
      for (const auto& p : {s.volume_path, s.seg_path}) {
        if (!fs::exists(m.root / p / "meta.json")) {
          fail(ErrorCode::kIo, "subject '" + s.id + "': missing store " + (m.root / p).string());
        }
      }
      m.subjects.push_back(std::move(s));
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, file.string() + ": " + e.what());
  }
  return m;
}

}  // namespace reglat
