#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "uvfield/geometry.hpp"
#include "uvfield/image.hpp"
#include "uvfield/neural_fields.hpp"
#include "uvfield/render.hpp"

namespace uvfield {

struct ChartRect {
  Vec2 origin = Vec2::Zero();  // lower-left corner in the packed unit square
  Vec2 size = Vec2::Ones();
  bool contains(const Vec2& p, double tol = 0.0) const;
};

/// Square charts on a g x g grid, g = ceil(sqrt(n)); chart i sits in cell
/// (i mod g, i div g) counted from the lower-left, inset one texel per side so
/// neighbouring charts are separated by a 2-texel gutter.
struct ChartLayout {
  int charts = 1;
  int grid = 1;
  int resolution = 1024;
  std::vector<ChartRect> cells;  // full grid cells
  std::vector<ChartRect> inner;  // usable area after the gutter

  /// Maps a chart-local coordinate in [0,1]^2 into the packed square.
  Vec2 pack(int chart, const Vec2& local) const;
};

ChartLayout pack_atlas(int charts, int resolution = 1024);

struct BakedAtlas {
  ChartLayout layout;
  std::vector<int> vertex_chart;        // argmax of c, lowest index on ties
  std::vector<Vec2> vertex_uv;          // t_{vertex_chart}(v), chart-local
  std::vector<int> triangle_chart;      // unanimous chart, else the probability-sum vote
  std::vector<Vec2> corner_uv;          // packed, 3 per triangle
  std::vector<std::array<int, 2>> seam_edges;  // (a < b), endpoints disagree on vertex_chart

  std::vector<std::size_t> vertices_per_chart() const;
};

/// Evaluates the model on the mesh (input coordinates; the model's stored
/// normalization is applied here). Throws NumericFault for non-finite models.
BakedAtlas bake(const AtlasModel& model, const Mesh& mesh, int atlas_resolution = 1024);

/// Rebuilds the bake-side view of an imported OBJ (corner UVs and chart groups).
/// Throws FormatError when the mesh carries no texture coordinates.
BakedAtlas baked_from_mesh(const Mesh& mesh, int atlas_resolution = 1024);

/// Mesh copy with corner_uv and triangle_chart filled from the bake.
Mesh apply_bake(const Mesh& mesh, const BakedAtlas& baked);

/// OBJ with v / vt / f v/vt records, "g chart_<k>" groups and a companion .mtl
/// next to it referencing `texture_name` (if non-empty). One vt per (vertex, chart) pair.
void export_obj(const Mesh& mesh, const BakedAtlas& baked, const std::string& path,
                const std::string& texture_name = {});

/// Packed image of every normal grid, (x,y,z) -> RGB via (v+1)/2. Row 0 is v = 1.
Image normal_atlas_image(const AtlasModel& model, int resolution);
void rasterize_normal_atlas(const AtlasModel& model, int resolution, const std::string& path);

/// Ray-cast render sampling `texture` at the interpolated packed UV, shaded by |face normal . view|.
Image render_preview(const Mesh& mesh, const Bvh& bvh, const BakedAtlas& baked, const Image& texture,
                     const Camera& camera);
/// Writes <prefix>_000.png, <prefix>_001.png, ... and returns the paths.
std::vector<std::string> texture_preview(const Mesh& mesh, const BakedAtlas& baked, const Image& texture,
                                         std::span<const Camera> cameras, const std::string& prefix);

}  // namespace uvfield
