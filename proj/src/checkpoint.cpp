#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "uvfield/errors.hpp"
#include "uvfield/neural_fields.hpp"

// Layout (all little-endian):
//   "NUVO1"
//   u32 charts, u32 pe_degree_chart, u32 pe_degree_map, u32 texture_res,
//   u32 layers, u32 width, u32 include_input, u32 mlp_count (= 2n+1),
//   f64 center.x, f64 center.y, f64 center.z, f64 scale, u32 source_kind
//   f32 parameters: c, t_0..t_{n-1}, s_0..s_{n-1}, sigma, N_0..N_{n-1}
//     MLP layer: weight row-major (out x in), then bias
//     N_i: texel-major (iy, ix), 3 channels per texel

namespace uvfield {

namespace {

constexpr char kMagic[5] = {'N', 'U', 'V', 'O', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) bytes_.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) bytes_.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }
  const char* take(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void write_mlp(Writer& w, const Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
    const Eigen::MatrixXf& W = mlp.weight(l).values;
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) w.f32(W(r, c));
    const Eigen::MatrixXf& b = mlp.bias(l).values;
    for (Eigen::Index r = 0; r < b.rows(); ++r) w.f32(b(r, 0));
  }
}

void read_mlp(Reader& rd, Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
    Eigen::MatrixXf& W = mlp.weight(l).values;
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = rd.f32();
    Eigen::MatrixXf& b = mlp.bias(l).values;
    for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, 0) = rd.f32();
  }
}

}  // namespace

void save_checkpoint(const AtlasModel& model, const std::string& path) {
  const ModelConfig& cfg = model.config();
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(static_cast<std::uint32_t>(cfg.charts));
  w.u32(static_cast<std::uint32_t>(cfg.pe_degree_chart));
  w.u32(static_cast<std::uint32_t>(cfg.pe_degree_map));
  w.u32(static_cast<std::uint32_t>(cfg.texture_res));
  w.u32(static_cast<std::uint32_t>(cfg.layers));
  w.u32(static_cast<std::uint32_t>(cfg.width));
  w.u32(cfg.include_input ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(model.mlp_count()));
  w.f64(model.normalization.center.x());
  w.f64(model.normalization.center.y());
  w.f64(model.normalization.center.z());
  w.f64(model.normalization.scale);
  w.u32(model.source_kind);

  write_mlp(w, model.chart_field());
  for (int i = 0; i < model.charts(); ++i) write_mlp(w, model.texture_field(i));
  for (int i = 0; i < model.charts(); ++i) write_mlp(w, model.surface_field(i));
  w.f32(model.sigma().values(0, 0));
  for (int i = 0; i < model.charts(); ++i) {
    const Eigen::MatrixXf& grid = model.normal_grid(i).values;
    for (Eigen::Index t = 0; t < grid.cols(); ++t)
      for (Eigen::Index ch = 0; ch < 3; ++ch) w.f32(grid(ch, t));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

AtlasModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader rd(std::move(bytes));
  const char* magic = rd.take(sizeof(kMagic));
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic): " + path);
  if (magic[4] != kMagic[4])
    throw FormatError(std::string("unsupported checkpoint version '") + magic[4] + "': " + path);

  ModelConfig cfg;
  cfg.charts = static_cast<int>(rd.u32());
  cfg.pe_degree_chart = static_cast<int>(rd.u32());
  cfg.pe_degree_map = static_cast<int>(rd.u32());
  cfg.texture_res = static_cast<int>(rd.u32());
  cfg.layers = static_cast<int>(rd.u32());
  cfg.width = static_cast<int>(rd.u32());
  cfg.include_input = rd.u32() != 0;
  const std::uint32_t mlp_count = rd.u32();
  if (cfg.charts < 1 || cfg.charts > 4096 || cfg.layers < 2 || cfg.layers > 64 || cfg.width < 1 ||
      cfg.width > 8192 || cfg.texture_res < 1 || cfg.texture_res > 16384 || cfg.pe_degree_chart < 1 ||
      cfg.pe_degree_chart > 32 || cfg.pe_degree_map < 1 || cfg.pe_degree_map > 32)
    throw FormatError("checkpoint header out of range: " + path);
  if (mlp_count != static_cast<std::uint32_t>(2 * cfg.charts + 1))
    throw FormatError("checkpoint MLP count does not match chart count: " + path);

  AtlasModel model(cfg);
  model.normalization.center.x() = rd.f64();
  model.normalization.center.y() = rd.f64();
  model.normalization.center.z() = rd.f64();
  model.normalization.scale = rd.f64();
  model.source_kind = rd.u32();

  std::size_t expected = 0;
  for (const ad::Parameter* p : model.parameters()) expected += static_cast<std::size_t>(p->size()) * 4;
  rd.need(expected);

  read_mlp(rd, model.chart_field());
  for (int i = 0; i < model.charts(); ++i) read_mlp(rd, model.texture_field(i));
  for (int i = 0; i < model.charts(); ++i) read_mlp(rd, model.surface_field(i));
  model.sigma().values(0, 0) = rd.f32();
  for (int i = 0; i < model.charts(); ++i) {
    Eigen::MatrixXf& grid = model.normal_grid(i).values;
    for (Eigen::Index t = 0; t < grid.cols(); ++t)
      for (Eigen::Index ch = 0; ch < 3; ++ch) grid(ch, t) = rd.f32();
  }
  if (!rd.at_end()) throw FormatError("trailing bytes after checkpoint payload: " + path);
  return model;
}

}  // namespace uvfield
