#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uvfield/geometry.hpp"

namespace uvfield {

struct Camera {
  Vec3 position = Vec3(0, 0, 3);
  Vec3 target = Vec3::Zero();
  Vec3 up = Vec3::UnitY();
  double fov_y = 0.7853981633974483;  // 45 degrees
  int width = 256;
  int height = 256;

  /// Unit direction of the primary ray through the center of pixel (x, y); row 0 is the top.
  Vec3 ray_direction(int x, int y) const;
  void validate() const;
};

/// Center (vertex mean) and radius (farthest vertex) of the mesh.
struct BoundingSphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};
BoundingSphere bounding_sphere(const Mesh& mesh);

/// Uniform positions on a sphere of 2.5x the bounding radius, all aimed at the centroid.
std::vector<Camera> sample_cameras(const Mesh& mesh, int count, std::uint64_t seed, int width = 256,
                                   int height = 256);

struct PixelBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> hit;
  std::vector<int> triangle;   // -1 where no hit
  std::vector<Vec2> uv;        // interpolated corner UV; zero where no hit
  std::vector<double> depth;   // ray distance; +inf where no hit
  std::vector<Vec3> direction; // primary ray direction

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  std::size_t hit_count() const;
};

/// One primary ray per pixel center; `corner_uv` holds 3 entries per triangle (may be empty).
PixelBuffer render_buffers(const Mesh& mesh, const Bvh& bvh, std::span<const Vec2> corner_uv, const Camera& camera);

}  // namespace uvfield
