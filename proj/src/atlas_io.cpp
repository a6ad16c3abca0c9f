#include "uvfield/atlas_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <unordered_map>

#include "uvfield/errors.hpp"

namespace uvfield {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_for_write(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write: " + path);
  return f;
}

void close_checked(FilePtr& f, const std::string& path) {
  const bool bad = std::ferror(f.get()) != 0;
  if (std::fclose(f.release()) != 0 || bad) throw IoError("failed writing: " + path);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

bool ChartRect::contains(const Vec2& p, double tol) const {
  return p.x() >= origin.x() - tol && p.y() >= origin.y() - tol && p.x() <= origin.x() + size.x() + tol &&
         p.y() <= origin.y() + size.y() + tol;
}

Vec2 ChartLayout::pack(int chart, const Vec2& local) const {
  if (chart < 0 || chart >= charts) throw ContractViolation("ChartLayout::pack: chart out of range");
  const ChartRect& r = inner[static_cast<std::size_t>(chart)];
  return r.origin + local.cwiseProduct(r.size);
}

ChartLayout pack_atlas(int charts, int resolution) {
  if (charts < 1) throw ContractViolation("pack_atlas: need at least one chart");
  if (resolution < 1) throw ContractViolation("pack_atlas: resolution must be >= 1");
  ChartLayout layout;
  layout.charts = charts;
  layout.resolution = resolution;
  layout.grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(charts)) - 1e-12));
  while (layout.grid * layout.grid < charts) ++layout.grid;
  const double cell = 1.0 / layout.grid;
  const double texel = 1.0 / resolution;
  if (cell <= 2.0 * texel) throw ContractViolation("pack_atlas: resolution too small for the gutter");
  for (int i = 0; i < charts; ++i) {
    ChartRect full{Vec2((i % layout.grid) * cell, (i / layout.grid) * cell), Vec2(cell, cell)};
    layout.cells.push_back(full);
    layout.inner.push_back({full.origin + Vec2(texel, texel), full.size - Vec2(2 * texel, 2 * texel)});
  }
  return layout;
}

std::vector<std::size_t> BakedAtlas::vertices_per_chart() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(layout.charts), 0);
  for (int c : vertex_chart)
    if (c >= 0 && c < layout.charts) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

BakedAtlas bake(const AtlasModel& model, const Mesh& mesh, int atlas_resolution) {
  for (const ad::Parameter* p : model.parameters())
    if (!p->values.allFinite()) throw NumericFault("bake: model parameter " + p->name + " is not finite");
  const int n = model.charts();
  const std::size_t nv = mesh.positions.size();
  BakedAtlas baked;
  baked.layout = pack_atlas(n, atlas_resolution);

  Eigen::MatrixXf x(3, static_cast<Eigen::Index>(nv));
  for (std::size_t v = 0; v < nv; ++v)
    x.col(static_cast<Eigen::Index>(v)) = model.normalization.apply(mesh.positions[v]).cast<float>();
  const Eigen::MatrixXf pmf = chart_pmf(model, x);
  std::vector<Eigen::MatrixXf> uv;
  for (int i = 0; i < n; ++i) uv.push_back(texture_coord(model, i, x));
  if (!pmf.allFinite()) throw NumericFault("bake: chart probabilities are not finite");

  baked.vertex_chart.resize(nv);
  baked.vertex_uv.resize(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    Eigen::Index best = 0;
    pmf.col(static_cast<Eigen::Index>(v)).maxCoeff(&best);  // first maximum on ties
    baked.vertex_chart[v] = static_cast<int>(best);
    baked.vertex_uv[v] = uv[static_cast<std::size_t>(best)].col(static_cast<Eigen::Index>(v)).cast<double>();
  }

  baked.triangle_chart.resize(mesh.triangles.size());
  baked.corner_uv.resize(3 * mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Triangle& tri = mesh.triangles[t];
    int chart = baked.vertex_chart[static_cast<std::size_t>(tri[0])];
    if (chart != baked.vertex_chart[static_cast<std::size_t>(tri[1])] ||
        chart != baked.vertex_chart[static_cast<std::size_t>(tri[2])]) {
      Eigen::VectorXd votes = Eigen::VectorXd::Zero(n);
      for (int v : tri) votes += pmf.col(v).cast<double>();
      Eigen::Index best = 0;
      votes.maxCoeff(&best);
      chart = static_cast<int>(best);
    }
    baked.triangle_chart[t] = chart;
    for (int c = 0; c < 3; ++c) {
      const Vec2 local = uv[static_cast<std::size_t>(chart)].col(tri[c]).cast<double>();
      baked.corner_uv[3 * t + static_cast<std::size_t>(c)] = baked.layout.pack(chart, local);
    }
  }

  for (const Triangle& tri : mesh.triangles) {
    for (int c = 0; c < 3; ++c) {
      int a = tri[c], b = tri[(c + 1) % 3];
      if (baked.vertex_chart[static_cast<std::size_t>(a)] == baked.vertex_chart[static_cast<std::size_t>(b)]) continue;
      if (a > b) std::swap(a, b);
      baked.seam_edges.push_back({a, b});
    }
  }
  std::sort(baked.seam_edges.begin(), baked.seam_edges.end());
  baked.seam_edges.erase(std::unique(baked.seam_edges.begin(), baked.seam_edges.end()), baked.seam_edges.end());
  return baked;
}

BakedAtlas baked_from_mesh(const Mesh& mesh, int atlas_resolution) {
  if (!mesh.has_uv()) throw FormatError("mesh has no texture coordinates");
  BakedAtlas baked;
  int charts = 1;
  for (int c : mesh.triangle_chart) charts = std::max(charts, c + 1);
  baked.layout = pack_atlas(charts, atlas_resolution);
  baked.corner_uv = mesh.corner_uv;
  baked.triangle_chart = mesh.triangle_chart;
  if (baked.triangle_chart.size() != mesh.triangles.size()) baked.triangle_chart.assign(mesh.triangles.size(), 0);
  // Vertex data is not stored in OBJ; take it from the first corner that uses each vertex.
  baked.vertex_chart.assign(mesh.positions.size(), -1);
  baked.vertex_uv.assign(mesh.positions.size(), Vec2::Zero());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int c = 0; c < 3; ++c) {
      const auto v = static_cast<std::size_t>(mesh.triangles[t][c]);
      if (baked.vertex_chart[v] >= 0) continue;
      baked.vertex_chart[v] = std::max(0, baked.triangle_chart[t]);
      baked.vertex_uv[v] = baked.corner_uv[3 * t + static_cast<std::size_t>(c)];
    }
  return baked;
}

Mesh apply_bake(const Mesh& mesh, const BakedAtlas& baked) {
  if (baked.corner_uv.size() != 3 * mesh.triangles.size())
    throw ContractViolation("apply_bake: bake does not match the mesh");
  Mesh out = mesh;
  out.corner_uv = baked.corner_uv;
  out.triangle_chart = baked.triangle_chart;
  return out;
}

void export_obj(const Mesh& mesh, const BakedAtlas& baked, const std::string& path, const std::string& texture_name) {
  if (baked.corner_uv.size() != 3 * mesh.triangles.size() || baked.triangle_chart.size() != mesh.triangles.size())
    throw ContractViolation("export_obj: bake does not match the mesh");
  const std::filesystem::path obj_path(path);
  std::filesystem::path mtl_path = obj_path;
  mtl_path.replace_extension(".mtl");

  {
    FilePtr mtl = open_for_write(mtl_path.string());
    std::fprintf(mtl.get(), "newmtl atlas\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\n");
    if (!texture_name.empty()) std::fprintf(mtl.get(), "map_Kd %s\n", texture_name.c_str());
    close_checked(mtl, mtl_path.string());
  }

  FilePtr f = open_for_write(path);
  std::fprintf(f.get(), "mtllib %s\n", mtl_path.filename().string().c_str());
  // Full round-trip precision so re-imported meshes score identically.
  for (const Vec3& p : mesh.positions) std::fprintf(f.get(), "v %.17g %.17g %.17g\n", p.x(), p.y(), p.z());

  const auto charts = static_cast<std::size_t>(std::max(baked.layout.charts, 1));
  std::unordered_map<std::size_t, std::size_t> vt_index;
  std::vector<std::size_t> corner_vt(baked.corner_uv.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t key = static_cast<std::size_t>(mesh.triangles[t][c]) * charts +
                              static_cast<std::size_t>(std::max(baked.triangle_chart[t], 0));
      const std::size_t corner = 3 * t + static_cast<std::size_t>(c);
      auto [it, fresh] = vt_index.try_emplace(key, vt_index.size());
      if (fresh) {
        const Vec2& uv = baked.corner_uv[corner];
        std::fprintf(f.get(), "vt %.17g %.17g\n", uv.x(), uv.y());
      }
      corner_vt[corner] = it->second + 1;
    }
  }

  std::fprintf(f.get(), "usemtl atlas\n");
  int current = -2;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (baked.triangle_chart[t] != current) {
      current = baked.triangle_chart[t];
      std::fprintf(f.get(), "g chart_%d\n", current);
    }
    const Triangle& tri = mesh.triangles[t];
    std::fprintf(f.get(), "f %d/%zu %d/%zu %d/%zu\n", tri[0] + 1, corner_vt[3 * t], tri[1] + 1, corner_vt[3 * t + 1],
                 tri[2] + 1, corner_vt[3 * t + 2]);
  }
  close_checked(f, path);
}

Image normal_atlas_image(const AtlasModel& model, int resolution) {
  const ChartLayout layout = pack_atlas(model.charts(), resolution);
  Image img(resolution, resolution);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const Vec2 uv((x + 0.5) / resolution, 1.0 - (y + 0.5) / resolution);
      const int gx = std::min(static_cast<int>(uv.x() * layout.grid), layout.grid - 1);
      const int gy = std::min(static_cast<int>(uv.y() * layout.grid), layout.grid - 1);
      const int chart = gy * layout.grid + gx;
      if (chart >= layout.charts) continue;
      const ChartRect& r = layout.inner[static_cast<std::size_t>(chart)];
      if (!r.contains(uv)) continue;
      const Vec2 local = (uv - r.origin).cwiseQuotient(r.size);
      const Eigen::Vector3f n = normal_texture_lookup(model, chart, local.cast<float>());
      std::uint8_t* px = img.at(x, y);
      for (int c = 0; c < 3; ++c) px[c] = to_byte((n[c] + 1.0) / 2.0);
    }
  }
  return img;
}

void rasterize_normal_atlas(const AtlasModel& model, int resolution, const std::string& path) {
  write_png(normal_atlas_image(model, resolution), path);
}

Image render_preview(const Mesh& mesh, const Bvh& bvh, const BakedAtlas& baked, const Image& texture,
                     const Camera& camera) {
  const PixelBuffer buf = render_buffers(mesh, bvh, baked.corner_uv, camera);
  Image img(buf.width, buf.height);
  for (int y = 0; y < buf.height; ++y) {
    for (int x = 0; x < buf.width; ++x) {
      const std::size_t i = buf.index(x, y);
      if (!buf.hit[i]) continue;
      const double shade = std::abs(mesh.face_normal(static_cast<std::size_t>(buf.triangle[i])).dot(buf.direction[i]));
      double rgb[3];
      sample_bilinear(texture, buf.uv[i].x(), buf.uv[i].y(), rgb);
      std::uint8_t* px = img.at(x, y);
      for (int c = 0; c < 3; ++c) px[c] = to_byte(rgb[c] * shade);
    }
  }
  return img;
}

std::vector<std::string> texture_preview(const Mesh& mesh, const BakedAtlas& baked, const Image& texture,
                                         std::span<const Camera> cameras, const std::string& prefix) {
  if (texture.width <= 0 || texture.height <= 0) throw ContractViolation("texture_preview: empty texture");
  const Bvh bvh(mesh);
  std::vector<std::string> paths;
  char suffix[32];
  for (std::size_t k = 0; k < cameras.size(); ++k) {
    std::snprintf(suffix, sizeof suffix, "_%03zu.png", k);
    paths.push_back(prefix + suffix);
    write_png(render_preview(mesh, bvh, baked, texture, cameras[k]), paths.back());
  }
  return paths;
}

}  // namespace uvfield
