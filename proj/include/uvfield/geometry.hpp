#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "uvfield/neural_fields.hpp"
#include "uvfield/random.hpp"

namespace uvfield {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Triangle = std::array<int, 3>;

/// Triangles below this area are kept in the mesh but never sampled.
inline constexpr double kDegenerateArea = 1e-12;

struct Mesh {
  std::vector<Vec3> positions;
  std::vector<Triangle> triangles;
  std::vector<Vec3> normals;  // per vertex, unit length
  // Optional per-corner bake data: 3 entries per triangle when present.
  std::vector<Vec2> corner_uv;
  // Optional per-triangle chart id (from "g chart_<k>" groups on import).
  std::vector<int> triangle_chart;

  bool has_uv() const { return !triangles.empty() && corner_uv.size() == 3 * triangles.size(); }
  double triangle_area(std::size_t t) const;
  Vec3 face_normal(std::size_t t) const;  // unit, or zero for degenerate triangles
  double total_area() const;
};

struct SurfaceSample {
  Vec3 x = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 tangent_p = Vec3::UnitX();
  Vec3 tangent_q = Vec3::UnitY();
  int triangle = -1;
};

/// Reads v/vn/vt/f records; polygons are fan-triangulated. Missing normals are
/// filled by area-weighted face-normal averaging. Throws ParseError/IoError.
Mesh load_mesh(const std::string& path);

/// Recomputes per-vertex normals as normalized sums of area-weighted face normals.
void compute_vertex_normals(Mesh& mesh);

/// Transform taking the mesh bounding box into [-1, 1]^3 (uniform scale, centered).
Similarity unit_cube_transform(std::span<const Vec3> points);
Similarity unit_cube_transform(const Mesh& mesh);
Mesh transformed(const Mesh& mesh, const Similarity& sim);

/// Icosahedron subdivided `level` times and projected to the unit sphere (20 * 4^level triangles).
Mesh make_icosphere(int level);

enum class NormalMode { Interpolated, Flat };

/// p, q with p . n = 0 and q = n x p; the in-plane angle is uniform in [0, 2pi).
std::pair<Vec3, Vec3> tangent_frame(const Vec3& normal, Rng& rng);

/// Inverse-transform area sampler over the mesh's non-degenerate triangles.
class AreaSampler {
 public:
  explicit AreaSampler(const Mesh& mesh, NormalMode mode = NormalMode::Interpolated);

  double total_area() const { return total_; }
  /// Triangle index for a uniform draw r in [0, 1).
  int pick_triangle(double r) const;
  SurfaceSample sample(Rng& rng) const;
  /// Appends `count` samples to `out`.
  void sample(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const;

 private:
  const Mesh* mesh_;
  NormalMode mode_;
  std::vector<double> cdf_;
  std::vector<int> tri_;
  double total_ = 0.0;
};

std::vector<SurfaceSample> sample_surface(const Mesh& mesh, std::size_t count, Rng& rng,
                                          NormalMode mode = NormalMode::Interpolated);

/// ASCII "x y z nx ny nz" per line. Zero-normal records are skipped and counted.
std::vector<SurfaceSample> load_point_cloud(const std::string& path, Rng& rng, std::size_t* rejected = nullptr);
void write_point_cloud(const std::string& path, std::span<const SurfaceSample> samples);

struct Hit {
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();  // weights of the triangle's vertices 0, 1, 2
  double distance = 0.0;
};

/// Watertight ray/triangle test; returns hits with distance > 0 only.
std::optional<Hit> intersect_triangle(const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& origin,
                                      const Vec3& direction);

/// Bounding-volume hierarchy over a mesh. The mesh must outlive the BVH.
class Bvh {
 public:
  explicit Bvh(const Mesh& mesh);

  /// Nearest forward hit; equal distances resolve to the lower triangle index.
  std::optional<Hit> intersect(const Vec3& origin, const Vec3& direction) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;  // child index, or -1 for leaves
    int right = -1;
    int first = 0;  // leaf range into order_
    int count = 0;
  };

  int build(int first, int count);

  const Mesh* mesh_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
};

std::optional<Hit> ray_intersect(const Bvh& bvh, const Vec3& origin, const Vec3& direction);

}  // namespace uvfield
