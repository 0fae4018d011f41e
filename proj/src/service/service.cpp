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

#include "reglat/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <limits>

#include "reglat/core/io.hpp"
#include "reglat/core/log.hpp"
#include "reglat/warp.hpp"

namespace reglat::service {

namespace fs = std::filesystem;
using io::Json;

std::shared_ptr<const Model> Model::load(const ServiceConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
  RegNet<float> net = ckpt.network();
  PCABasis basis = load_basis(cfg.basis_dir);
  check_fingerprint(basis, net);
  const DatasetManifest m = load_manifest(cfg.manifest);
  require(!m.subjects.empty(), "dataset has no subjects");

  std::map<std::string, Subject> subjects;
  for (Split split : {Split::kTrain, Split::kVal})
    for (auto& s : load_subjects(m, split)) {
      require(s.volume.dims() == ckpt.arch.in_shape, "subject " + s.id + " does not match the model input shape");
      subjects.emplace(s.id, std::move(s));
    }
  std::vector<std::string> order;
  for (const auto& e : m.subjects) order.push_back(e.id);

  const std::string bf = service::basis_fingerprint(basis);
  return std::make_shared<const Model>(
      Model{std::move(net), std::move(basis), std::move(subjects), std::move(order), cfg.probe_dir, bf});
}

std::string basis_fingerprint(const PCABasis& basis) {
  const PCABasis q = basis.quantized();
  io::Fnv1a h;
  for (Eigen::Index i = 0; i < q.components.size(); ++i) {
    const float v = static_cast<float>(q.components.data()[i]);
    h.update(&v, sizeof v);
  }
  for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
    const float v = static_cast<float>(q.mean[i]);
    h.update(&v, sizeof v);
  }
  h.update(basis.center ? "c" : "u");
  return h.hex();
}

std::string probe_file_name(const ProbeSpec& spec) {
  std::string name = spec.describe();
  std::replace(name.begin(), name.end(), ':', '_');
  return name + ".csv";
}

std::string base64_encode(const std::string& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = std::uint32_t(std::uint8_t(bytes[i])) << 16 | std::uint32_t(std::uint8_t(bytes[i + 1])) << 8 |
                            std::uint8_t(bytes[i + 2]);
    for (int k = 18; k >= 0; k -= 6) out.push_back(kAlphabet[(n >> k) & 63]);
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t n = std::uint32_t(std::uint8_t(bytes[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(bytes[i + 1])) << 8;
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

namespace {

void check_plane(const Subject& s, int axis, std::int64_t index) {
  require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
  const Dims d = s.volume.dims();
  require(index >= 0 && index < d[axis],
          "slice index " + std::to_string(index) + " out of range [0, " + std::to_string(d[axis]) + ")");
}

Json plane_header(const Subject& s, int axis, std::int64_t index, const Slice& slice) {
  return Json{{"api_version", kApiVersion}, {"subject", s.id}, {"axis", axis},
              {"index", index},             {"rows", slice.rows}, {"cols", slice.cols}};
}

}  // namespace

Json slice_payload(const Subject& s, int axis, std::int64_t index) {
  check_plane(s, axis, index);
  const Slice slice = extract_slice(s.volume.voxels, axis, index);
  Json out = plane_header(s, axis, index, slice);
  out["image"] = base64_encode(encode_pgm(slice));
  out["contours"] = contours_json(contours_for(s.seg, axis, index, "original"));
  return out;
}

Json deform_payload(const RegNet<float>& net, const PCABasis& basis, const Subject& s,
                    const std::vector<double>& coefficients, int axis, std::int64_t index) {
  require(coefficients.size() == std::size_t(basis.K),
          "expected " + std::to_string(basis.K) + " coefficients, got " + std::to_string(coefficients.size()));
  for (double c : coefficients) require(std::isfinite(c), "coefficients must be finite");
  check_plane(s, axis, index);
  const auto grid = integrate_spatial_gradients(decode_coefficients(basis, coefficients, net));
  const Volume warped = warp_volume(s.volume, grid);
  const SegMap warped_seg = argmax_labels(warp_segmentation(s.seg, grid));
  const auto jac = jacobian_determinant_map(grid);
  const Dims d = grid.dims();
  double min_det = std::numeric_limits<double>::infinity();
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x)
        if (is_interior(d, z, y, x)) min_det = std::min(min_det, double(jac.det[d.index(z, y, x)]));

  const Slice slice = extract_slice(warped.voxels, axis, index);
  Json out = plane_header(s, axis, index, slice);
  out["coefficients"] = coefficients;
  out["image"] = base64_encode(encode_pgm(slice));
  out["contours_original"] = contours_json(contours_for(s.seg, axis, index, "original"));
  out["contours_deformed"] = contours_json(contours_for(warped_seg, axis, index, "deformed"));
  out["jacobian_stats"] = {{"min_det", min_det}, {"fold_fraction", folding_fraction(jac)}};
  return out;
}

// --- dispatch ------------------------------------------------------------------------------

namespace {

Response error(int status, const std::string& message) {
  return {status, Json{{"api_version", kApiVersion}, {"error", message}}};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t end = std::min(path.find('/', start), path.size());
    if (end > start) parts.push_back(path.substr(start, end - start));
    start = end + 1;
  }
  return parts;
}

std::int64_t parse_int(const std::string& text, const std::string& what) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), what + " must be an integer");
  return v;
}

std::int64_t json_int(const Json& j, const std::string& key, std::int64_t fallback) {
  if (!j.contains(key)) return fallback;
  require(j[key].is_number_integer(), key + " must be an integer");
  return j[key].get<std::int64_t>();
}

enum class Route { kNone, kMeta, kSlice, kDeform, kProbe };

}  // namespace

Service::Service(std::string cors_origin) : cors_origin_(std::move(cors_origin)) {}
Service::~Service() = default;

void Service::initialize(std::shared_ptr<const Model> model) {
  std::lock_guard lock(mu_);
  model_ = std::move(model);
}

bool Service::ready() const { return model() != nullptr; }

std::shared_ptr<const Model> Service::model() const {
  std::lock_guard lock(mu_);
  return model_;
}

Response Service::handle(const std::string& method, const std::string& path,
                         const std::multimap<std::string, std::string>& query, const std::string& body) const {
  const auto parts = split_path(path);
  Route route = Route::kNone;
  std::string expected = "GET";
  if (parts.size() == 2 && parts[0] == "api" && parts[1] == "meta") {
    route = Route::kMeta;
  } else if (parts.size() == 4 && parts[0] == "api" && parts[1] == "subject" && parts[3] == "slice") {
    route = Route::kSlice;
  } else if (parts.size() == 2 && parts[0] == "api" && parts[1] == "deform") {
    route = Route::kDeform;
    expected = "POST";
  } else if (parts.size() == 3 && parts[0] == "api" && parts[1] == "probe") {
    route = Route::kProbe;
  }
  if (route == Route::kNone) return error(404, "no route for " + path);
  if (method == "OPTIONS") return {204, Json()};
  if (method != expected) return error(405, method + " not allowed on " + path);

  const auto m = model();
  if (!m) return error(503, "service is not initialized");

  auto find_subject = [&](const std::string& id) -> const Subject* {
    const auto it = m->subjects.find(id);
    return it == m->subjects.end() ? nullptr : &it->second;
  };

  try {
    switch (route) {
      case Route::kMeta: {
        const Dims d = m->net.arch().in_shape;
        Json probes = Json::array();
        if (!m->probe_dir.empty() && fs::is_directory(m->probe_dir)) {
          std::vector<std::string> names;
          for (const auto& e : fs::directory_iterator(m->probe_dir))
            if (e.path().extension() == ".csv") names.push_back(e.path().stem().string());
          std::sort(names.begin(), names.end());
          probes = names;
        }
        return {200, Json{{"api_version", kApiVersion},
                          {"K", m->basis.K},
                          {"evr", std::vector<double>(m->basis.evr.data(), m->basis.evr.data() + m->basis.evr.size())},
                          {"subjects", m->subject_order},
                          {"shape", {d.d, d.h, d.w}},
                          {"num_labels", m->subjects.begin()->second.seg.num_labels},
                          {"center_mode", m->basis.center ? "centered" : "uncentered"},
                          {"fingerprints", {{"model", m->net.fingerprint()}, {"basis", m->basis_fingerprint}}},
                          {"probes", probes}}};
      }
      case Route::kSlice: {
        const Subject* s = find_subject(parts[2]);
        if (!s) return error(404, "unknown subject '" + parts[2] + "'");
        const Dims d = s->volume.dims();
        int axis = 0;
        std::int64_t index = -1;
        if (auto it = query.find("axis"); it != query.end()) axis = int(parse_int(it->second, "axis"));
        require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
        if (auto it = query.find("index"); it != query.end()) index = parse_int(it->second, "index");
        else index = d[axis] / 2;
        return {200, slice_payload(*s, axis, index)};
      }
      case Route::kDeform: {
        const Json req = Json::parse(body, nullptr, false);
        if (req.is_discarded() || !req.is_object()) return error(400, "request body must be a JSON object");
        if (!req.contains("subject_id") || !req["subject_id"].is_string()) return error(422, "subject_id is required");
        const Subject* s = find_subject(req["subject_id"].get<std::string>());
        if (!s) return error(404, "unknown subject '" + req["subject_id"].get<std::string>() + "'");
        if (!req.contains("coefficients") || !req["coefficients"].is_array())
          return error(422, "coefficients must be an array");
        std::vector<double> coeffs;
        for (const auto& c : req["coefficients"]) {
          if (!c.is_number()) return error(422, "coefficients must be numbers");
          coeffs.push_back(c.get<double>());
        }
        const int axis = int(json_int(req, "axis", 0));
        require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
        const std::int64_t index = json_int(req, "slice_index", s->volume.dims()[axis] / 2);
        return {200, deform_payload(m->net, m->basis, *s, coeffs, axis, index)};
      }
      case Route::kProbe: {
        ProbeSpec spec;
        try {
          spec = ProbeSpec::parse(parts[2]);
        } catch (const Error& e) {
          return error(404, e.what());
        }
        const fs::path csv = m->probe_dir / probe_file_name(spec);
        if (m->probe_dir.empty() || !fs::exists(csv)) return error(404, "probe " + spec.describe() + " has not been computed");
        const ProbeResult r = read_probe_csv(csv);
        Json out = r.summary_json();
        out["api_version"] = kApiVersion;
        return {200, out};
      }
      case Route::kNone: break;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument) return error(422, e.what());
    log::error(std::string("request failed: ") + e.what());
    return error(500, e.what());
  } catch (const std::exception& e) {
    log::error(std::string("request failed: ") + e.what());
    return error(500, e.what());
  }
  return error(404, "no route for " + path);
}

// --- HTTP ------------------------------------------------------------------------------------

struct Service::Http {
  httplib::Server server;
};

int Service::bind(const std::string& host, int port) {
  if (!http_) {
    http_ = std::make_unique<Http>();
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      const Response r = handle(req.method, req.path, req.params, req.body);
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", cors_origin_);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      if (r.status != 204) res.set_content(r.body.dump(), "application/json");
    };
    http_->server.Get(".*", handler);
    http_->server.Post(".*", handler);
    http_->server.Put(".*", handler);
    http_->server.Delete(".*", handler);
    http_->server.Options(".*", handler);
  }
  const int bound = port == 0 ? http_->server.bind_to_any_port(host) : (http_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) fail(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void Service::listen() {
  require(http_ != nullptr, "bind() must precede listen()");
  http_->server.listen_after_bind();
}

void Service::stop() {
  if (http_) http_->server.stop();
}

}  // namespace reglat::service
