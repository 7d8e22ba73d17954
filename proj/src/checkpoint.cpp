// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Parameter payloads are 32-bit floats; header and
// shape fields are fixed-width little-endian integers so files are
// byte-stable across runs and readable without this codebase.

#include "sdfsplat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sdfsplat {

namespace {

constexpr char kMagic[12] = {'S', 'D', 'F', 'S', 'P', 'L',
                             'A', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) { le(v); }
  void i32(int32_t v) { le(static_cast<uint32_t>(v)); }
  void u64(uint64_t v) { le(v); }
  void i64(int64_t v) { le(static_cast<uint64_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  void f32_array(const double* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) f32(static_cast<float>(p[i]));
  }
  void raw(const std::string& s) { buf_ += s; }
  const std::string& str() const { return buf_; }

 private:
  template <class U> void le(U v) {
    for (size_t i = 0; i < sizeof(U); ++i)
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint32_t u32() { return le<uint32_t>(); }
  int32_t i32() { return static_cast<int32_t>(le<uint32_t>()); }
  uint64_t u64() { return le<uint64_t>(); }
  int64_t i64() { return static_cast<int64_t>(le<uint64_t>()); }
  float f32() {
    const uint32_t bits = le<uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const uint64_t bits = le<uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void f32_array(double* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<double>(f32());
  }
  std::string bytes(size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }
  size_t remaining() const { return size_ - pos_; }
  void expect_done() const {
    if (pos_ != size_)
      throw IoError("checkpoint: trailing bytes in " + what_);
  }

 private:
  const char* take(size_t n) {
    if (pos_ + n > size_)
      throw IoError("checkpoint: truncated " + what_);
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  template <class U> U le() {
    const char* p = take(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  const char* data_;
  size_t size_, pos_ = 0;
  std::string what_;
};

void write_box(ByteWriter& w, const Box3<double>& b) {
  for (int k = 0; k < 3; ++k) w.f64(b.lo[k]);
  for (int k = 0; k < 3; ++k) w.f64(b.hi[k]);
}

Box3<double> read_box(ByteReader& r) {
  Box3<double> b;
  for (int k = 0; k < 3; ++k) b.lo[k] = r.f64();
  for (int k = 0; k < 3; ++k) b.hi[k] = r.f64();
  return b;
}

// Splat fields in declared order: means, quats, log_scales, opacities,
// colors, then the motion arrays when present, then ids.
void write_splats(ByteWriter& w, const GaussianSet<double>& gs,
                  const MotionBasis<double>* mb) {
  const int n = gs.size();
  const int b = mb ? mb->num_bases() : 0;
  const int t = mb ? mb->num_frames : 0;
  w.u32(static_cast<uint32_t>(n));
  w.u32(static_cast<uint32_t>(b));
  w.u32(static_cast<uint32_t>(t));
  w.f32_array(gs.means.data(), gs.means.size());
  w.f32_array(gs.quats.data(), gs.quats.size());
  w.f32_array(gs.log_scales.data(), gs.log_scales.size());
  w.f32_array(gs.opacities.data(), gs.opacities.size());
  w.f32_array(gs.colors.data(), gs.colors.size());
  if (mb) {
    for (int j = 0; j < b; ++j)
      w.f32_array(mb->basis_mu[j].data(), mb->basis_mu[j].size());
    for (int j = 0; j < b; ++j)
      w.f32_array(mb->basis_rot[j].data(), mb->basis_rot[j].size());
    w.f32_array(mb->coeffs.data(), mb->coeffs.size());
  }
  for (int i = 0; i < n; ++i) w.i64(gs.ids[i]);
  w.i64(gs.next_id);
}

void read_splats(ByteReader& r, GaussianSet<double>& gs,
                 MotionBasis<double>* mb) {
  const int n = static_cast<int>(r.u32());
  const int b = static_cast<int>(r.u32());
  const int t = static_cast<int>(r.u32());
  if (n < 0 || b < 0 || t < 0)
    throw IoError("checkpoint: negative splat counts");
  if (!mb && (b != 0 || t != 0))
    throw IoError("checkpoint: unexpected motion arrays in static section");
  gs = GaussianSet<double>::zeros(n);
  r.f32_array(gs.means.data(), gs.means.size());
  r.f32_array(gs.quats.data(), gs.quats.size());
  r.f32_array(gs.log_scales.data(), gs.log_scales.size());
  r.f32_array(gs.opacities.data(), gs.opacities.size());
  r.f32_array(gs.colors.data(), gs.colors.size());
  if (mb) {
    *mb = MotionBasis<double>::zeros(b, t, n);
    for (int j = 0; j < b; ++j)
      r.f32_array(mb->basis_mu[j].data(), mb->basis_mu[j].size());
    for (int j = 0; j < b; ++j)
      r.f32_array(mb->basis_rot[j].data(), mb->basis_rot[j].size());
    r.f32_array(mb->coeffs.data(), mb->coeffs.size());
  }
  for (int i = 0; i < n; ++i) gs.ids[i] = r.i64();
  gs.next_id = r.i64();
}

void write_mlp_shape(ByteWriter& w, const Mlp<double>& m) {
  w.u32(static_cast<uint32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    w.u32(static_cast<uint32_t>(l.w.rows()));
    w.u32(static_cast<uint32_t>(l.w.cols()));
  }
}

Mlp<double> read_mlp_shape(ByteReader& r) {
  const uint32_t nl = r.u32();
  if (nl < 1 || nl > 64) throw IoError("checkpoint: bad MLP layer count");
  Mlp<double> m;
  for (uint32_t l = 0; l < nl; ++l) {
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    if (rows < 1 || cols < 1 || rows > 65536 || cols > 65536)
      throw IoError("checkpoint: bad MLP layer shape");
    m.layers.push_back({MatXR<double>::Zero(rows, cols),
                        VecX<double>::Zero(rows)});
  }
  return m;
}

// Header: L, per-level resolution, features per level, the four MLP
// shapes, latent widths D_z and D_a, frame count T, then the positional
// encoding setup and the two boxes. Parameters follow as one flat float
// stream in the shared collection order.
std::string encode_sdf(const SdfModel<double>& model) {
  ByteWriter w;
  SdfModel<double> m = model;  // collect_params needs mutable views
  w.u32(static_cast<uint32_t>(m.grid.levels()));
  for (int res : m.grid.res) w.u32(static_cast<uint32_t>(res));
  w.u32(static_cast<uint32_t>(m.grid.feat));
  write_mlp_shape(w, m.mlp_def);
  write_mlp_shape(w, m.mlp_hyp);
  write_mlp_shape(w, m.mlp_sdf);
  write_mlp_shape(w, m.mlp_rgb);
  w.u32(static_cast<uint32_t>(m.z.cols()));
  w.u32(static_cast<uint32_t>(m.a.cols()));
  w.u32(static_cast<uint32_t>(m.num_frames));
  w.u32(static_cast<uint32_t>(m.arch.hyper_dim));
  w.u32(static_cast<uint32_t>(m.arch.pe_x_freqs));
  w.u32(static_cast<uint32_t>(m.arch.pe_dir_freqs));
  write_box(w, m.grid.box);
  write_box(w, m.world_box);
  int64_t total = 0;
  const auto params = collect_params(m);
  for (const auto& p : params) total += p.size;
  w.u64(static_cast<uint64_t>(total));
  for (const auto& p : params) w.f32_array(p.data, p.size);
  return w.str();
}

SdfModel<double> decode_sdf(ByteReader& r) {
  SdfModel<double> m;
  const int levels = static_cast<int>(r.u32());
  if (levels < 1 || levels > 16)
    throw IoError("checkpoint: bad grid level count");
  m.grid.res.resize(levels);
  for (int l = 0; l < levels; ++l) {
    m.grid.res[l] = static_cast<int>(r.u32());
    if (m.grid.res[l] < 2 || m.grid.res[l] > 4096)
      throw IoError("checkpoint: bad grid resolution");
  }
  m.grid.feat = static_cast<int>(r.u32());
  if (m.grid.feat < 1 || m.grid.feat > 64)
    throw IoError("checkpoint: bad grid feature width");
  m.mlp_def = read_mlp_shape(r);
  m.mlp_hyp = read_mlp_shape(r);
  m.mlp_sdf = read_mlp_shape(r);
  m.mlp_rgb = read_mlp_shape(r);
  const int d_z = static_cast<int>(r.u32());
  const int d_a = static_cast<int>(r.u32());
  m.num_frames = static_cast<int>(r.u32());
  if (m.num_frames < 1) throw IoError("checkpoint: bad frame count");
  m.arch.hyper_dim = static_cast<int>(r.u32());
  m.arch.pe_x_freqs = static_cast<int>(r.u32());
  m.arch.pe_dir_freqs = static_cast<int>(r.u32());
  m.grid.box = read_box(r);
  m.world_box = read_box(r);

  m.arch.grid_res = m.grid.res;
  m.arch.grid_feat = m.grid.feat;
  m.arch.latent_dim = d_z;
  const auto hidden = [](const Mlp<double>& mlp, int& depth, int& width) {
    depth = static_cast<int>(mlp.layers.size()) - 1;
    width = depth > 0 ? static_cast<int>(mlp.layers.front().w.rows()) : 0;
  };
  hidden(m.mlp_def, m.arch.def_depth, m.arch.def_width);
  hidden(m.mlp_hyp, m.arch.hyp_depth, m.arch.hyp_width);
  hidden(m.mlp_sdf, m.arch.sdf_depth, m.arch.sdf_width);
  hidden(m.mlp_rgb, m.arch.rgb_depth, m.arch.rgb_width);
  m.arch.pretrain_iters = 0;  // construction-time shaping never re-runs

  for (int res : m.grid.res)
    m.grid.data.push_back(
        MatXR<double>::Zero(static_cast<int64_t>(res) * res * res,
                            m.grid.feat));
  m.z = MatXR<double>::Zero(m.num_frames, d_z);
  m.a = MatXR<double>::Zero(m.num_frames, d_a);

  const auto params = collect_params(m);
  int64_t total = 0;
  for (const auto& p : params) total += p.size;
  const int64_t stored = static_cast<int64_t>(r.u64());
  if (stored != total)
    throw IoError("checkpoint: sdf parameter count mismatch (" +
                  std::to_string(stored) + " vs " + std::to_string(total) +
                  ")");
  for (const auto& p : params) r.f32_array(p.data, p.size);
  return m;
}

std::string encode_meta(const Checkpoint& ck) {
  ByteWriter w;
  w.i32(ck.meta.canonical_t);
  w.i32(ck.meta.num_timesteps);
  w.u64(ck.meta.seed);
  write_box(w, ck.meta.span);
  w.u8(ck.has_sdf ? 1 : 0);
  w.u8(ck.has_background ? 1 : 0);
  return w.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("meta", encode_meta(ck));
  {
    ByteWriter w;
    write_splats(w, ck.gs, &ck.mb);
    sections.emplace_back("gaussians", w.str());
  }
  if (ck.has_sdf) sections.emplace_back("sdf", encode_sdf(ck.sdf));
  if (ck.has_background) {
    ByteWriter w;
    write_splats(w, ck.background, nullptr);
    sections.emplace_back("background", w.str());
  }

  ByteWriter top;
  top.raw(std::string(kMagic, sizeof(kMagic)));
  top.u32(kVersion);
  top.u32(static_cast<uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    top.u32(static_cast<uint32_t>(name.size()));
    top.raw(name);
    top.u64(payload.size());
    top.raw(payload);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out.write(top.str().data(),
            static_cast<std::streamsize>(top.str().size()));
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  ByteReader top(blob.data(), blob.size(), "file " + path);
  if (top.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw IoError("checkpoint: bad magic in " + path);
  const uint32_t version = top.u32();
  if (version != kVersion)
    throw IoError("checkpoint: unsupported version " +
                  std::to_string(version));
  const uint32_t nsect = top.u32();
  if (nsect > 16) throw IoError("checkpoint: implausible section count");

  Checkpoint ck;
  bool saw_meta = false, saw_gauss = false, saw_sdf = false, saw_bg = false;
  for (uint32_t s = 0; s < nsect; ++s) {
    const uint32_t name_len = top.u32();
    if (name_len > 64) throw IoError("checkpoint: bad section name");
    const std::string name = top.bytes(name_len);
    const uint64_t payload_len = top.u64();
    const std::string payload = top.bytes(payload_len);
    ByteReader r(payload.data(), payload.size(), "section " + name);
    if (name == "meta") {
      ck.meta.canonical_t = r.i32();
      ck.meta.num_timesteps = r.i32();
      ck.meta.seed = r.u64();
      ck.meta.span = read_box(r);
      ck.has_sdf = r.u8() != 0;
      ck.has_background = r.u8() != 0;
      saw_meta = true;
    } else if (name == "gaussians") {
      read_splats(r, ck.gs, &ck.mb);
      saw_gauss = true;
    } else if (name == "sdf") {
      ck.sdf = decode_sdf(r);
      saw_sdf = true;
    } else if (name == "background") {
      read_splats(r, ck.background, nullptr);
      saw_bg = true;
    } else {
      throw IoError("checkpoint: unknown section " + name);
    }
    r.expect_done();
  }
  top.expect_done();
  if (!saw_meta || !saw_gauss)
    throw IoError("checkpoint: missing meta or gaussians section");
  if (ck.has_sdf != saw_sdf || ck.has_background != saw_bg)
    throw IoError("checkpoint: section flags disagree with contents");
  return ck;
}

}  // namespace sdfsplat
