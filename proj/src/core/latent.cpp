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

#include "reglat/latent.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <Eigen/SVD>

#include "reglat/core/io.hpp"
#include "reglat/warp.hpp"

namespace reglat {

namespace fs = std::filesystem;
using io::Json;

namespace {

constexpr char kLatentMagic[8] = {'R', 'G', 'L', 'T', 'L', 'A', 'T', 'N'};
constexpr std::uint32_t kLatentVersion = 1;

template <class T>
void append_scalar(std::vector<std::uint8_t>& out, T v) {
  io::append_le<T>(out, std::span<const T>(&v, 1));
}

std::vector<std::uint8_t> float_bytes(const float* data, std::size_t n) {
  std::vector<std::uint8_t> out;
  io::append_le<float>(out, std::span<const float>(data, n));
  return out;
}

std::vector<float> read_floats(const fs::path& path, std::size_t expected) {
  const auto bytes = io::read_bytes(path);
  if (bytes.size() != expected * sizeof(float)) {
    fail(ErrorCode::kFormat, path.string() + ": expected " + std::to_string(expected * sizeof(float)) +
                                 " bytes, found " + std::to_string(bytes.size()));
  }
  return io::decode_le<float>(bytes);
}

}  // namespace

// --- latent matrix ------------------------------------------------------------------

LatentMatrix collect_latents(const RegNet<float>& net, const std::vector<Subject>& subjects) {
  require(!subjects.empty(), "no subjects to encode");
  LatentMatrix l;
  l.model_fingerprint = net.fingerprint();
  l.rows.resize(static_cast<Eigen::Index>(subjects.size()),
                static_cast<Eigen::Index>(net.arch().latent_size()));
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto z = net.encode(subjects[i].volume);
    const auto flat = z.flat();
    std::memcpy(l.rows.row(static_cast<Eigen::Index>(i)).data(), flat.data(), flat.size() * sizeof(float));
    l.subject_ids.push_back(subjects[i].id);
  }
  return l;
}

LatentMatrix collect_latents(const Checkpoint& ckpt, const DatasetManifest& m, Split split) {
  return collect_latents(ckpt.network(), load_subjects(m, split));
}

void save_latents(const LatentMatrix& l, const fs::path& path) {
  const auto payload = float_bytes(l.rows.data(), static_cast<std::size_t>(l.rows.size()));
  io::Fnv1a h;
  h.update(payload.data(), payload.size());
  const std::string header = Json{{"n", l.n()},
                                  {"N", l.dim()},
                                  {"subject_ids", l.subject_ids},
                                  {"model_fingerprint", l.model_fingerprint},
                                  {"dtype", "f32"},
                                  {"payload_fnv1a", h.hex()}}
                                 .dump();
  std::vector<std::uint8_t> out(kLatentMagic, kLatentMagic + 8);
  append_scalar<std::uint32_t>(out, kLatentVersion);
  append_scalar<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_bytes(path, out);
}

LatentMatrix load_latents(const fs::path& path) {
  const auto bytes = io::read_bytes(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kLatentMagic, 8) != 0) {
    fail(ErrorCode::kFormat, where + "not a latent matrix file");
  }
  if (io::decode_le<std::uint32_t>({bytes.data() + 8, 4})[0] != kLatentVersion) {
    fail(ErrorCode::kFormat, where + "unsupported version");
  }
  const auto header_len = io::decode_le<std::uint64_t>({bytes.data() + 12, 8})[0];
  if (header_len > bytes.size() - 20) fail(ErrorCode::kFormat, where + "truncated header");
  LatentMatrix l;
  try {
    const Json h = Json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(header_len));
    const auto n = h.at("n").get<std::size_t>(), dim = h.at("N").get<std::size_t>();
    const std::span<const std::uint8_t> payload(bytes.data() + 20 + header_len, bytes.size() - 20 - header_len);
    if (payload.size() != n * dim * sizeof(float)) fail(ErrorCode::kFormat, where + "payload size mismatch");
    io::Fnv1a fh;
    fh.update(payload.data(), payload.size());
    if (fh.hex() != h.at("payload_fnv1a").get<std::string>()) fail(ErrorCode::kFormat, where + "checksum mismatch");
    l.subject_ids = h.at("subject_ids").get<std::vector<std::string>>();
    if (l.subject_ids.size() != n) fail(ErrorCode::kFormat, where + "subject id count mismatch");
    l.model_fingerprint = h.at("model_fingerprint").get<std::string>();
    const auto values = io::decode_le<float>(payload);
    l.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    std::memcpy(l.rows.data(), values.data(), values.size() * sizeof(float));
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, where + "corrupt header: " + e.what());
  }
  return l;
}

// --- PCA ---------------------------------------------------------------------------------

Eigen::VectorXd PCABasis::component(int j) const {
  require(j >= 1 && j <= K, "component index must be in [1, K]");
  return components.row(j - 1).transpose();
}

PCABasis PCABasis::quantized() const {
  PCABasis q = *this;
  q.components = components.cast<float>().cast<double>();
  q.mean = mean.cast<float>().cast<double>();
  return q;
}

PCABasis fit_pca(const Eigen::MatrixXd& rows, int K, bool center) {
  const Eigen::Index n = rows.rows(), dim = rows.cols();
  require(n >= 2, "PCA needs at least 2 rows");
  const Eigen::Index max_k = std::min<Eigen::Index>(n - (center ? 1 : 0), dim);
  require(K >= 1 && K <= max_k, "K = " + std::to_string(K) + " exceeds the available rank " + std::to_string(max_k));
  require(rows.allFinite(), "latent rows contain non-finite values", ErrorCode::kNumeric);

  PCABasis b;
  b.K = K;
  b.center = center;
  b.mean = center ? Eigen::VectorXd(rows.colwise().mean().transpose()) : Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd y = rows;
  if (center) y.rowwise() -= b.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double total = sv.squaredNorm();
  require(total > 0, "latent rows have zero variance", ErrorCode::kNumeric);

  b.components = svd.matrixV().leftCols(K).transpose();
  for (Eigen::Index j = 0; j < K; ++j) {
    Eigen::Index arg = 0;
    b.components.row(j).cwiseAbs().maxCoeff(&arg);
    if (b.components(j, arg) < 0) b.components.row(j) *= -1.0;
  }
  b.singular_values = sv.head(K);
  b.evr = sv.head(K).array().square() / total;
  return b;
}

PCABasis fit_pca(const LatentMatrix& l, int K, bool center) {
  PCABasis b = fit_pca(Eigen::MatrixXd(l.rows.cast<double>()), K, center);
  b.model_fingerprint = l.model_fingerprint;
  return b;
}

Eigen::VectorXd project(const Eigen::VectorXd& flat, const PCABasis& basis) {
  require(static_cast<std::size_t>(flat.size()) == basis.dim(), "latent length does not match the basis");
  if (basis.center) return basis.components * (flat - basis.mean);
  return basis.components * flat;
}

std::vector<double> project(std::span<const float> flat, const PCABasis& basis) {
  const Eigen::VectorXd v =
      Eigen::Map<const Eigen::VectorXf>(flat.data(), static_cast<Eigen::Index>(flat.size())).cast<double>();
  const Eigen::VectorXd a = project(v, basis);
  return {a.data(), a.data() + a.size()};
}

std::vector<CoefficientVector> project_all(const LatentMatrix& l, const PCABasis& basis) {
  require(l.model_fingerprint == basis.model_fingerprint,
          "latents and basis come from different models", ErrorCode::kFingerprintMismatch);
  std::vector<CoefficientVector> out;
  for (std::size_t i = 0; i < l.n(); ++i) {
    const auto row = l.rows.row(static_cast<Eigen::Index>(i));
    out.push_back({l.subject_ids[i], project(std::span<const float>(row.data(), l.dim()), basis)});
  }
  return out;
}

Eigen::VectorXd reconstruct(const std::vector<double>& a, const PCABasis& basis) {
  require(a.size() == static_cast<std::size_t>(basis.K), "coefficient vector must have K entries");
  const Eigen::VectorXd z =
      basis.components.transpose() * Eigen::Map<const Eigen::VectorXd>(a.data(), basis.K);
  return basis.center ? Eigen::VectorXd(z + basis.mean) : z;
}

void check_fingerprint(const PCABasis& basis, const RegNet<float>& net) {
  const std::string fp = net.fingerprint();
  if (basis.model_fingerprint != fp) {
    fail(ErrorCode::kFingerprintMismatch,
         "basis was fitted on model " + basis.model_fingerprint + ", not " + fp);
  }
  require(basis.dim() == net.arch().latent_size(), "basis dimension does not match the model latent size",
          ErrorCode::kFingerprintMismatch);
}

GradientField<float> decode_coefficients(const PCABasis& basis, const std::vector<double>& a,
                                         const RegNet<float>& net) {
  check_fingerprint(basis, net);
  require(a.size() == static_cast<std::size_t>(basis.K), "coefficient vector must have K entries");
  for (double v : a) require(std::isfinite(v), "coefficients must be finite");
  const Eigen::VectorXf z =
      (basis.components.transpose() * Eigen::Map<const Eigen::VectorXd>(a.data(), basis.K)).cast<float>();
  const auto code = LatentCode<float>::unflatten(std::span<const float>(z.data(), static_cast<std::size_t>(z.size())),
                                                 net.arch());
  return net.decode(code);
}

DeformationGrid<float> decode_component(const PCABasis& basis, int j, double lambda, const RegNet<float>& net) {
  require(j >= 1 && j <= basis.K, "component index must be in [1, K]");
  std::vector<double> a(static_cast<std::size_t>(basis.K), 0.0);
  a[static_cast<std::size_t>(j - 1)] = lambda;
  return integrate_spatial_gradients(decode_coefficients(basis, a, net));
}

// --- files ----------------------------------------------------------------------------------

void save_basis(const PCABasis& b, const fs::path& dir) {
  fs::create_directories(dir);
  const PCABasis q = b.quantized();
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> comps = q.components.cast<float>();
  const Eigen::VectorXf mean = q.mean.cast<float>();
  const auto cbytes = float_bytes(comps.data(), static_cast<std::size_t>(comps.size()));
  const auto mbytes = float_bytes(mean.data(), static_cast<std::size_t>(mean.size()));
  io::Fnv1a ch, mh;
  ch.update(cbytes.data(), cbytes.size());
  mh.update(mbytes.data(), mbytes.size());
  const Json j{{"K", b.K},
               {"N", b.dim()},
               {"evr", std::vector<double>(b.evr.data(), b.evr.data() + b.evr.size())},
               {"singular_values",
                std::vector<double>(b.singular_values.data(), b.singular_values.data() + b.singular_values.size())},
               {"center", b.center},
               {"sign_convention", "max-abs-positive"},
               {"model_fingerprint", b.model_fingerprint},
               {"dtype", "f32"},
               {"components_fnv1a", ch.hex()},
               {"mean_fnv1a", mh.hex()}};
  io::write_bytes(dir / "components.raw", cbytes);
  io::write_bytes(dir / "mean.raw", mbytes);
  io::write_json(dir / "basis.json", j);
}

PCABasis load_basis(const fs::path& dir) {
  const Json j = io::read_json(dir / "basis.json");
  PCABasis b;
  try {
    b.K = j.at("K").get<int>();
    const auto dim = j.at("N").get<std::size_t>();
    require(b.K >= 1 && dim >= 1, dir.string() + ": invalid basis dimensions", ErrorCode::kFormat);
    require(j.value("sign_convention", std::string()) == "max-abs-positive",
            dir.string() + ": unknown sign convention", ErrorCode::kFormat);
    b.center = j.at("center").get<bool>();
    b.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    const auto evr = j.at("evr").get<std::vector<double>>();
    const auto sv = j.at("singular_values").get<std::vector<double>>();
    require(evr.size() == std::size_t(b.K) && sv.size() == std::size_t(b.K),
            dir.string() + ": evr / singular value count differs from K", ErrorCode::kFormat);
    b.evr = Eigen::Map<const Eigen::VectorXd>(evr.data(), b.K);
    b.singular_values = Eigen::Map<const Eigen::VectorXd>(sv.data(), b.K);
    const auto comps = read_floats(dir / "components.raw", std::size_t(b.K) * dim);
    const auto mean = read_floats(dir / "mean.raw", dim);
    b.components =
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            comps.data(), b.K, static_cast<Eigen::Index>(dim))
            .cast<double>();
    b.mean = Eigen::Map<const Eigen::VectorXf>(mean.data(), static_cast<Eigen::Index>(dim)).cast<double>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, dir.string() + "/basis.json: " + e.what());
  }
  return b;
}

void save_coefficients(const std::vector<CoefficientVector>& c, const fs::path& path) {
  require(!c.empty(), "no coefficient vectors to write");
  const std::size_t K = c.front().a.size();
  std::string out = "subject";
  for (std::size_t j = 1; j <= K; ++j) out += ",a" + std::to_string(j);
  out += "\n";
  for (const auto& v : c) {
    require(v.a.size() == K, "coefficient vectors differ in length");
    require(v.subject_id.find_first_of(",\n\"") == std::string::npos, "subject id not CSV-safe: " + v.subject_id);
    out += v.subject_id;
    for (double a : v.a) out += "," + io::format_double(a);
    out += "\n";
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_text(path, out);
}

std::vector<CoefficientVector> load_coefficients(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("subject", 0) != 0) {
    fail(ErrorCode::kFormat, path.string() + ": missing coefficient header");
  }
  const std::size_t K = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<CoefficientVector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    CoefficientVector v;
    std::getline(row, v.subject_id, ',');
    std::string cell;
    while (std::getline(row, cell, ',')) {
      // strtod keeps subnormals (it only flags them through errno).
      char* end = nullptr;
      const double a = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size()) {
        fail(ErrorCode::kFormat, path.string() + ": bad value '" + cell + "'");
      }
      v.a.push_back(a);
    }
    if (v.a.size() != K) fail(ErrorCode::kFormat, path.string() + ": row for " + v.subject_id + " has wrong length");
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace reglat
