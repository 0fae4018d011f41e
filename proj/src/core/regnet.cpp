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

#include "reglat/regnet.hpp"

#include <cmath>
#include <cstring>

#include "reglat/core/io.hpp"
#include "reglat/core/rng.hpp"
#include "reglat/ops.hpp"

namespace reglat {

namespace fs = std::filesystem;
using io::Json;

// --- ArchConfig -------------------------------------------------------------------

void ArchConfig::validate() const {
  require(in_shape.valid(), "in_shape must be positive");
  require(n_downsamplings >= 0 && n_downsamplings <= 6, "n_downsamplings must be in [0, 6]");
  require(base_channels >= 1 && base_channels <= 256, "base_channels must be in [1, 256]");
  require(kernel_size == 3, "only kernel_size 3 is supported");
  require(negative_slope >= 0.0 && negative_slope < 1.0, "negative_slope must be in [0, 1)");
  require(norm == "instance", "only instance normalization is supported");
  const std::int64_t f = std::int64_t{1} << n_downsamplings;
  require(in_shape.d % f == 0 && in_shape.h % f == 0 && in_shape.w % f == 0,
          "in_shape " + dims_str(in_shape) + " is not divisible by 2^" +
              std::to_string(n_downsamplings));
  require(latent_dims().count() >= 2, "bottleneck must hold at least 2 voxels per channel");
}

Dims ArchConfig::latent_dims() const {
  const std::int64_t f = std::int64_t{1} << n_downsamplings;
  return {in_shape.d / f, in_shape.h / f, in_shape.w / f};
}

Json ArchConfig::to_json() const {
  return Json{{"in_shape", {in_shape.d, in_shape.h, in_shape.w}},
              {"base_channels", base_channels},
              {"n_downsamplings", n_downsamplings},
              {"kernel_size", kernel_size},
              {"negative_slope", negative_slope},
              {"skip_connections", skip_connections},
              {"norm", norm}};
}

ArchConfig ArchConfig::from_json(const Json& j) {
  ArchConfig a;
  try {
    if (j.contains("in_shape")) {
      const auto s = j.at("in_shape").get<std::vector<std::int64_t>>();
      require(s.size() == 3, "in_shape must have 3 entries");
      a.in_shape = {s[0], s[1], s[2]};
    }
    a.base_channels = j.value("base_channels", a.base_channels);
    a.n_downsamplings = j.value("n_downsamplings", a.n_downsamplings);
    a.kernel_size = j.value("kernel_size", a.kernel_size);
    a.negative_slope = j.value("negative_slope", a.negative_slope);
    a.skip_connections = j.value("skip_connections", a.skip_connections);
    a.norm = j.value("norm", a.norm);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad architecture config: ") + e.what());
  }
  a.validate();
  return a;
}

// --- LatentCode ---------------------------------------------------------------------

template <class T>
LatentCode<T> LatentCode<T>::unflatten(std::span<const T> flat, const ArchConfig& arch) {
  require(flat.size() == arch.latent_size(),
          "latent vector has length " + std::to_string(flat.size()) + ", expected " +
              std::to_string(arch.latent_size()));
  const Dims d = arch.latent_dims();
  return {Tensor<T>({arch.latent_channels(), d.d, d.h, d.w}, std::vector<T>(flat.begin(), flat.end()))};
}

// --- parameter layout ---------------------------------------------------------------

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  double fan_in;  // 0 = zero init
};

constexpr int kDownKernel = 2;

std::vector<ParamSpec> layout(const ArchConfig& a) {
  std::vector<ParamSpec> specs;
  const std::int64_t k = a.kernel_size;
  auto conv = [&](const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t ks,
                  bool zero) {
    const double fan = zero ? 0.0 : double(cin * ks * ks * ks);
    specs.push_back({name + ".w", {cout, cin, ks, ks, ks}, fan});
    specs.push_back({name + ".b", {cout}, 0.0});
  };
  auto up = [&](const std::string& name, std::int64_t cin, std::int64_t cout) {
    const std::int64_t ks = kDownKernel;
    specs.push_back({name + ".w", {cin, cout, ks, ks, ks}, double(cin)});
    specs.push_back({name + ".b", {cout}, 0.0});
  };
  const int L = a.n_downsamplings;
  for (int l = 0; l <= L; ++l) {
    const std::int64_t c = a.channels_at(l);
    if (l == 0) {
      conv("enc0.conv1", 1, c, k, false);
    } else {
      conv("down" + std::to_string(l), a.channels_at(l - 1), c, kDownKernel, false);
      conv("enc" + std::to_string(l) + ".conv1", c, c, k, false);
    }
    conv("enc" + std::to_string(l) + ".conv2", c, c, k, false);
  }
  for (int l = L; l >= 0; --l) {
    const std::int64_t c = a.channels_at(l);
    std::int64_t in = c;
    if (l < L) {
      up("up" + std::to_string(l), a.channels_at(l + 1), c);
      if (a.skip_connections) in = 2 * c;
    }
    conv("dec" + std::to_string(l) + ".conv1", in, c, k, false);
    conv("dec" + std::to_string(l) + ".conv2", c, c, k, false);
  }
  conv("head", a.channels_at(0), 3, k, true);
  return specs;
}

}  // namespace

template <class T>
RegNet<T>::RegNet(ArchConfig arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  Rng rng(seed);
  for (const auto& spec : layout(arch_)) {
    Tensor<T> t(spec.shape);
    if (spec.fan_in > 0.0) {
      // He-uniform: keeps activation variance through leaky ReLU stacks.
      const double bound = std::sqrt(6.0 / spec.fan_in);
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params_.push_back({spec.name, std::move(t)});
  }
}

template <class T>
RegNet<T>::RegNet(ArchConfig arch, std::vector<NamedTensor<T>> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  const auto specs = layout(arch_);
  if (specs.size() != params_.size()) {
    fail(ErrorCode::kFormat, "parameter count " + std::to_string(params_.size()) +
                                 " does not match architecture (" + std::to_string(specs.size()) +
                                 ")");
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name != params_[i].name || specs[i].shape != params_[i].value.shape()) {
      fail(ErrorCode::kFormat, "parameter '" + params_[i].name + "' " +
                                   shape_str(params_[i].value.shape()) + " does not match expected '" +
                                   specs[i].name + "' " + shape_str(specs[i].shape));
    }
  }
}

template <class T>
std::size_t RegNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <class T>
const Tensor<T>& RegNet<T>::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  fail(ErrorCode::kInvalidArgument, "no parameter named " + name);
}

template <class T>
template <class U>
RegNet<U> RegNet<T>::cast() const {
  std::vector<NamedTensor<U>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.value.template cast<U>()});
  return RegNet<U>(arch_, std::move(out));
}

template <class T>
std::vector<ad::Var> RegNet<T>::bind(ad::Tape<T>& tape, bool trainable) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
  return vars;
}

namespace {

// Walks the parameter list in layout order.
class ParamCursor {
 public:
  explicit ParamCursor(const std::vector<ad::Var>& params) : params_(params) {}
  std::pair<ad::Var, ad::Var> next_pair() {
    require(pos_ + 1 < params_.size(), "parameter list exhausted");
    auto w = params_[pos_], b = params_[pos_ + 1];
    pos_ += 2;
    return {w, b};
  }
  void seek_decoder(const ArchConfig& a) {
    // Encoder: level 0 has 2 convs, every other level 3 (down + 2).
    pos_ = 2 * (2 + 3 * static_cast<std::size_t>(a.n_downsamplings));
  }

 private:
  const std::vector<ad::Var>& params_;
  std::size_t pos_ = 0;
};

constexpr nn::ConvGeometry kSame{3, 1, 1};
constexpr nn::ConvGeometry kHalve{kDownKernel, 2, 0};

}  // namespace

template <class T>
typename RegNet<T>::Encoded RegNet<T>::encode(ad::Tape<T>& tape, const std::vector<ad::Var>& params,
                                              ad::Var x) const {
  const auto& xs = tape.value(x).shape();
  require(xs.size() == 4 && xs[0] == 1 && Dims::from_shape(xs, 1) == arch_.in_shape,
          "encoder input " + shape_str(xs) + " does not match in_shape " + dims_str(arch_.in_shape));
  const T slope = static_cast<T>(arch_.negative_slope);
  ParamCursor cur(params);
  auto norm_act = [&](ad::Var h) { return ad::leaky_relu(tape, ad::instance_norm(tape, h), slope); };
  Encoded out;
  ad::Var h = x;
  for (int l = 0; l <= arch_.n_downsamplings; ++l) {
    if (l > 0) {
      auto [w, b] = cur.next_pair();
      h = norm_act(ad::conv3d(tape, h, w, b, kHalve));
    }
    for (int i = 0; i < 2; ++i) {
      auto [w, b] = cur.next_pair();
      h = norm_act(ad::conv3d(tape, h, w, b, kSame));
    }
    if (l < arch_.n_downsamplings) out.skips.push_back(h);
  }
  out.latent = h;
  return out;
}

template <class T>
ad::Var RegNet<T>::decode_raw(ad::Tape<T>& tape, const std::vector<ad::Var>& params, ad::Var diff,
                              const std::vector<ad::Var>& skip_diffs) const {
  const Dims ld = arch_.latent_dims();
  const Shape want{arch_.latent_channels(), ld.d, ld.h, ld.w};
  require(tape.value(diff).shape() == want, "decoder input " + shape_str(tape.value(diff).shape()) +
                                                " does not match bottleneck " + shape_str(want));
  require(skip_diffs.empty() || (arch_.skip_connections &&
                                 skip_diffs.size() == static_cast<std::size_t>(arch_.n_downsamplings)),
          "skip differences do not match the architecture");
  const T slope = static_cast<T>(arch_.negative_slope);
  ParamCursor cur(params);
  cur.seek_decoder(arch_);
  ad::Var h = diff;
  for (int l = arch_.n_downsamplings; l >= 0; --l) {
    if (l < arch_.n_downsamplings) {
      auto [w, b] = cur.next_pair();
      h = ad::leaky_relu(tape, ad::conv_transpose3d(tape, h, w, b, kHalve), slope);
      if (arch_.skip_connections) {
        ad::Var skip = skip_diffs.empty()
                           ? tape.constant(Tensor<T>(tape.value(h).shape()))
                           : skip_diffs[static_cast<std::size_t>(l)];
        h = ad::concat_channels(tape, h, skip);
      }
    }
    for (int i = 0; i < 2; ++i) {
      auto [w, b] = cur.next_pair();
      h = ad::leaky_relu(tape, ad::conv3d(tape, h, w, b, kSame), slope);
    }
  }
  auto [w, b] = cur.next_pair();
  return ad::conv3d(tape, h, w, b, kSame);
}

template <class T>
LatentCode<T> RegNet<T>::encode(const Volume& v) const {
  validate(v);
  require(v.dims() == arch_.in_shape,
          "volume " + dims_str(v.dims()) + " does not match in_shape " + dims_str(arch_.in_shape));
  ad::Tape<T> tape;
  const auto params = bind(tape, false);
  const Dims d = v.dims();
  auto x = tape.constant(v.voxels.template cast<T>().reshaped({1, d.d, d.h, d.w}));
  return {tape.value(encode(tape, params, x).latent)};
}

template <class T>
GradientField<T> RegNet<T>::decode(const LatentCode<T>& z) const {
  ad::Tape<T> tape;
  const auto params = bind(tape, false);
  auto raw = decode_raw(tape, params, tape.constant(z.act), {});
  return {increments_from_raw(tape.value(raw))};
}

template <class T>
std::string RegNet<T>::fingerprint() const {
  if constexpr (std::is_same_v<T, float>) {
    return model_fingerprint(arch_, params_);
  } else {
    return cast<float>().fingerprint();
  }
}

// --- registration graph -----------------------------------------------------------

template <class T>
PairGraph<T> build_pair_graph(ad::Tape<T>& tape, const RegNet<T>& net,
                              const std::vector<ad::Var>& params, const Volume& moving,
                              const Volume& fixed, const SegMap& moving_seg,
                              const SegMap& fixed_seg, const LossWeights& weights) {
  weights.validate();
  validate(moving);
  validate(fixed);
  require(moving.dims() == fixed.dims(), "moving and fixed volumes differ in shape");
  require(moving_seg.dims() == moving.dims() && fixed_seg.dims() == fixed.dims(),
          "segmentation extents differ from their volumes");
  require(moving_seg.num_labels == fixed_seg.num_labels, "label counts differ");
  const Dims d = moving.dims();
  const Shape vshape{1, d.d, d.h, d.w};

  PairGraph<T> g;
  auto xm = tape.constant(moving.voxels.template cast<T>().reshaped(vshape));
  auto xf = tape.constant(fixed.voxels.template cast<T>().reshaped(vshape));
  auto om = tape.constant(one_hot<T>(moving_seg));
  auto of = tape.constant(one_hot<T>(fixed_seg));

  const auto em = net.encode(tape, params, xm);
  const auto ef = net.encode(tape, params, xf);
  g.latent_diff = ad::sub(tape, em.latent, ef.latent);
  const ad::Var diff_b = ad::sub(tape, ef.latent, em.latent);
  std::vector<ad::Var> skips_f, skips_b;
  if (net.arch().skip_connections) {
    for (std::size_t l = 0; l < em.skips.size(); ++l) {
      skips_f.push_back(ad::sub(tape, em.skips[l], ef.skips[l]));
      skips_b.push_back(ad::sub(tape, ef.skips[l], em.skips[l]));
    }
  }

  g.fwd_inc = ad::increments(tape, net.decode_raw(tape, params, g.latent_diff, skips_f));
  g.bwd_inc = ad::increments(tape, net.decode_raw(tape, params, diff_b, skips_b));
  g.fwd_grid = ad::integrate(tape, g.fwd_inc);
  g.bwd_grid = ad::integrate(tape, g.bwd_inc);

  g.warped_moving = ad::warp(tape, xm, g.fwd_grid);
  g.warped_moving_seg = ad::warp(tape, om, g.fwd_grid);
  g.warped_fixed = ad::warp(tape, xf, g.bwd_grid);
  g.warped_fixed_seg = ad::warp(tape, of, g.bwd_grid);

  const int win = weights.ncc_window;
  g.sim_f = ad::ncc_loss(tape, g.warped_moving, xf, win);
  g.seg_f = ad::dice_loss(tape, g.warped_moving_seg, of);
  g.smooth_f = ad::smoothness_loss(tape, g.fwd_inc);
  g.sim_b = ad::ncc_loss(tape, g.warped_fixed, xm, win);
  g.seg_b = ad::dice_loss(tape, g.warped_fixed_seg, om);
  g.smooth_b = ad::smoothness_loss(tape, g.bwd_inc);

  const T alpha = static_cast<T>(weights.alpha), beta = static_cast<T>(weights.beta);
  std::vector<ad::Var> terms_f{g.sim_f, g.seg_f, g.smooth_f};
  std::vector<ad::Var> terms_b{g.sim_b, g.seg_b, g.smooth_b};
  std::vector<T> w{T(1), T(1), alpha};
  if (weights.beta > 0.0) {
    g.jac_f = ad::jacobian_loss(tape, g.fwd_grid);
    g.jac_b = ad::jacobian_loss(tape, g.bwd_grid);
    terms_f.push_back(g.jac_f);
    terms_b.push_back(g.jac_b);
    w.push_back(beta);
  }
  const ad::Var total_f = ad::weighted_sum(tape, terms_f, w);
  const ad::Var total_b = ad::weighted_sum(tape, terms_b, w);
  g.total = ad::weighted_sum(tape, {total_f, total_b}, {T(1), T(1)});

  auto val = [&](ad::Var v) { return v.valid() ? static_cast<double>(tape.scalar(v)) : 0.0; };
  g.terms.fwd = {val(g.sim_f), val(g.seg_f), val(g.smooth_f), val(g.jac_f)};
  g.terms.bwd = {val(g.sim_b), val(g.seg_b), val(g.smooth_b), val(g.jac_b)};
  g.terms.total = val(g.total);
  return g;
}

template <class T>
RegistrationOutput<T> register_pair(const RegNet<T>& net, const Volume& moving,
                                    const Volume& fixed, const SegMap& moving_seg,
                                    const SegMap& fixed_seg, const LossWeights& weights) {
  ad::Tape<T> tape;
  const auto params = net.bind(tape, false);
  const PairGraph<T> g =
      build_pair_graph(tape, net, params, moving, fixed, moving_seg, fixed_seg, weights);
  RegistrationOutput<T> out;
  out.fwd_grad = {tape.value(g.fwd_inc)};
  out.bwd_grad = {tape.value(g.bwd_inc)};
  out.fwd_grid = {tape.value(g.fwd_grid)};
  out.bwd_grid = {tape.value(g.bwd_grid)};
  out.warped_moving = {tape.value(g.warped_moving).template cast<float>().reshaped(moving.dims().shape()),
                       moving.spacing};
  out.warped_moving_seg = tape.value(g.warped_moving_seg);
  out.latent_diff = tape.value(g.latent_diff);
  out.loss_terms = g.terms;
  return out;
}

template <class T>
LossTerms total_loss(const RegistrationOutput<T>& out, const Volume& moving, const Volume& fixed,
                     const SegMap& moving_seg, const SegMap& fixed_seg,
                     const LossWeights& weights) {
  weights.validate();
  const Dims d = moving.dims();
  const Shape vshape{1, d.d, d.h, d.w};
  const Tensor<T> xm = moving.voxels.template cast<T>().reshaped(vshape);
  const Tensor<T> xf = fixed.voxels.template cast<T>().reshaped(vshape);
  const Tensor<T> om = one_hot<T>(moving_seg), of = one_hot<T>(fixed_seg);
  auto direction = [&](const GradientField<T>& inc, const DeformationGrid<T>& grid,
                       const Tensor<T>& src, const Tensor<T>& src_seg, const Tensor<T>& dst,
                       const Tensor<T>& dst_seg) {
    DirectionTerms t;
    t.sim = reglat::ncc_loss(warp_trilinear(src, grid), dst, weights.ncc_window);
    t.seg = reglat::dice_loss(warp_trilinear(src_seg, grid), dst_seg);
    t.smooth = smoothness_loss(inc);
    t.jac = weights.beta > 0.0 ? static_cast<double>(jacobian_loss(grid)) : 0.0;
    return t;
  };
  LossTerms terms;
  terms.fwd = direction(out.fwd_grad, out.fwd_grid, xm, om, xf, of);
  terms.bwd = direction(out.bwd_grad, out.bwd_grid, xf, of, xm, om);
  terms.total = terms.fwd.weighted(weights) + terms.bwd.weighted(weights);
  return terms;
}

// --- checkpoints --------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'G', 'L', 'T', 'C', 'K', 'P', 'T'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  io::append_le<std::uint32_t>(out, std::span<const std::uint32_t>(&v, 1));
}
void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  io::append_le<std::uint64_t>(out, std::span<const std::uint64_t>(&v, 1));
}

}  // namespace

std::string model_fingerprint(const ArchConfig& arch, const std::vector<NamedTensor<float>>& params) {
  io::Fnv1a h;
  h.update(arch.to_json().dump());
  std::vector<std::uint8_t> bytes;
  for (const auto& p : params) {
    h.update(p.name);
    h.update(shape_str(p.value.shape()));
    bytes.clear();
    io::append_le<float>(bytes, p.value.values());
    h.update(bytes.data(), bytes.size());
  }
  return h.hex();
}

void save_checkpoint(const Checkpoint& c, const fs::path& path) {
  Json index = Json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& p : c.parameters) {
    index.push_back({{"name", p.name},
                     {"shape", p.value.shape()},
                     {"offset", payload.size()},
                     {"count", p.value.size()}});
    io::append_le<float>(payload, p.value.values());
  }
  io::Fnv1a payload_hash;
  payload_hash.update(payload.data(), payload.size());
  const Json header{{"version", kCheckpointVersion},
                    {"arch", c.arch.to_json()},
                    {"epoch", c.epoch},
                    {"rng_state", c.rng_state},
                    {"dtype", "f32"},
                    {"parameters", index},
                    {"payload_bytes", payload.size()},
                    {"payload_fnv1a", payload_hash.hex()},
                    {"fingerprint", model_fingerprint(c.arch, c.parameters)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  append_u32(out, kCheckpointVersion);
  append_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_bytes(path, out);
}

Checkpoint load_checkpoint(const fs::path& path, const ArchConfig* expected) {
  if (!fs::exists(path)) fail(ErrorCode::kIo, "checkpoint not found: " + path.string());
  const auto bytes = io::read_bytes(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    fail(ErrorCode::kFormat, where + "not a reglat checkpoint (bad magic)");
  }
  const auto version = io::decode_le<std::uint32_t>({bytes.data() + 8, 4})[0];
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kFormat, where + "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = io::decode_le<std::uint64_t>({bytes.data() + 12, 8})[0];
  if (header_len > bytes.size() - 20) fail(ErrorCode::kFormat, where + "truncated header");
  Json header;
  try {
    header = Json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(header_len));
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, where + "corrupt header: " + e.what());
  }
  const std::span<const std::uint8_t> payload(bytes.data() + 20 + header_len,
                                              bytes.size() - 20 - header_len);
  Checkpoint c;
  try {
    if (header.at("dtype") != "f32") fail(ErrorCode::kFormat, where + "unsupported dtype");
    if (header.at("payload_bytes").get<std::size_t>() != payload.size()) {
      fail(ErrorCode::kFormat, where + "payload holds " + std::to_string(payload.size()) +
                                   " bytes, header declares " +
                                   std::to_string(header.at("payload_bytes").get<std::size_t>()));
    }
    io::Fnv1a h;
    h.update(payload.data(), payload.size());
    if (h.hex() != header.at("payload_fnv1a").get<std::string>()) {
      fail(ErrorCode::kFormat, where + "payload checksum mismatch");
    }
    c.arch = ArchConfig::from_json(header.at("arch"));
    c.epoch = header.at("epoch").get<int>();
    c.rng_state = header.at("rng_state").get<std::string>();
    for (const auto& e : header.at("parameters")) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      const Shape shape = e.at("shape").get<Shape>();
      if (count != shape_numel(shape) || offset + count * 4 > payload.size()) {
        fail(ErrorCode::kFormat, where + "parameter index out of range");
      }
      c.parameters.push_back({e.at("name").get<std::string>(),
                              Tensor<float>(shape, io::decode_le<float>(payload.subspan(offset, count * 4)))});
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kFormat, where + "corrupt header: " + e.what());
  }
  if (expected && !(*expected == c.arch)) {
    fail(ErrorCode::kInvalidArgument, where + "architecture mismatch: checkpoint has " +
                                          c.arch.to_json().dump() + ", expected " +
                                          expected->to_json().dump());
  }
  RegNet<float>(c.arch, c.parameters);  // shape check against the layout
  return c;
}

template struct LatentCode<float>;
template struct LatentCode<double>;
template class RegNet<float>;
template class RegNet<double>;
template RegNet<double> RegNet<float>::cast<double>() const;
template RegNet<float> RegNet<double>::cast<float>() const;
template RegNet<float> RegNet<float>::cast<float>() const;
template RegNet<double> RegNet<double>::cast<double>() const;

#define REGLAT_INSTANTIATE_PAIR(T)                                                            \
  template PairGraph<T> build_pair_graph<T>(ad::Tape<T>&, const RegNet<T>&,                   \
                                            const std::vector<ad::Var>&, const Volume&,       \
                                            const Volume&, const SegMap&, const SegMap&,      \
                                            const LossWeights&);                              \
  template RegistrationOutput<T> register_pair<T>(const RegNet<T>&, const Volume&,            \
                                                  const Volume&, const SegMap&,               \
                                                  const SegMap&, const LossWeights&);         \
  template LossTerms total_loss<T>(const RegistrationOutput<T>&, const Volume&, const Volume&, \
                                   const SegMap&, const SegMap&, const LossWeights&);

REGLAT_INSTANTIATE_PAIR(float)
REGLAT_INSTANTIATE_PAIR(double)

}  // namespace reglat
