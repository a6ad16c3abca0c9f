#include "uvfield/render.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "uvfield/errors.hpp"

namespace uvfield {

void Camera::validate() const {
  if (!(position - target).allFinite() || (position - target).norm() == 0.0)
    throw ContractViolation("Camera: position must differ from target");
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw ContractViolation("Camera: fov must lie in (0, pi)");
  if (width < 1 || height < 1) throw ContractViolation("Camera: image size must be positive");
}

Vec3 Camera::ray_direction(int x, int y) const {
  const Vec3 forward = (target - position).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 true_up = right.cross(forward);
  const double half = std::tan(0.5 * fov_y);
  const double aspect = static_cast<double>(width) / height;
  const double sx = ((x + 0.5) / width * 2.0 - 1.0) * half * aspect;
  const double sy = (1.0 - (y + 0.5) / height * 2.0) * half;
  return (forward + sx * right + sy * true_up).normalized();
}

BoundingSphere bounding_sphere(const Mesh& mesh) {
  BoundingSphere s;
  if (mesh.positions.empty()) return s;
  for (const Vec3& p : mesh.positions) s.center += p;
  s.center /= static_cast<double>(mesh.positions.size());
  for (const Vec3& p : mesh.positions) s.radius = std::max(s.radius, (p - s.center).norm());
  return s;
}

std::vector<Camera> sample_cameras(const Mesh& mesh, int count, std::uint64_t seed, int width, int height) {
  if (count < 1) throw ContractViolation("sample_cameras: count must be >= 1");
  const BoundingSphere sphere = bounding_sphere(mesh);
  if (!(sphere.radius > 0.0) || !std::isfinite(sphere.radius))
    throw ContractViolation("sample_cameras: degenerate mesh bounds");
  Rng rng(seed);
  std::vector<Camera> cameras;
  for (int k = 0; k < count; ++k) {
    const double z = 2.0 * rng.uniform() - 1.0;
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 dir(r * std::cos(phi), r * std::sin(phi), z);
    Camera cam;
    cam.position = sphere.center + 2.5 * sphere.radius * dir;
    cam.target = sphere.center;
    cam.up = std::abs(dir.y()) > 0.999 ? Vec3::UnitX() : Vec3::UnitY();
    cam.width = width;
    cam.height = height;
    cameras.push_back(cam);
  }
  return cameras;
}

std::size_t PixelBuffer::hit_count() const {
  std::size_t n = 0;
  for (std::uint8_t h : hit) n += h;
  return n;
}

PixelBuffer render_buffers(const Mesh& mesh, const Bvh& bvh, std::span<const Vec2> corner_uv, const Camera& camera) {
  camera.validate();
  if (!corner_uv.empty() && corner_uv.size() != 3 * mesh.triangles.size())
    throw ContractViolation("render_buffers: corner_uv must hold 3 entries per triangle");
  PixelBuffer buf;
  buf.width = camera.width;
  buf.height = camera.height;
  const std::size_t n = static_cast<std::size_t>(buf.width) * buf.height;
  buf.hit.assign(n, 0);
  buf.triangle.assign(n, -1);
  buf.uv.assign(n, Vec2::Zero());
  buf.depth.assign(n, std::numeric_limits<double>::infinity());
  buf.direction.resize(n);
  for (int y = 0; y < buf.height; ++y) {
    for (int x = 0; x < buf.width; ++x) {
      const std::size_t i = buf.index(x, y);
      const Vec3 dir = camera.ray_direction(x, y);
      buf.direction[i] = dir;
      const auto hit = bvh.intersect(camera.position, dir);
      if (!hit) continue;
      buf.hit[i] = 1;
      buf.triangle[i] = hit->triangle;
      buf.depth[i] = hit->distance;
      if (!corner_uv.empty()) {
        const std::size_t c = 3 * static_cast<std::size_t>(hit->triangle);
        buf.uv[i] = hit->barycentric[0] * corner_uv[c] + hit->barycentric[1] * corner_uv[c + 1] +
                    hit->barycentric[2] * corner_uv[c + 2];
      }
    }
  }
  return buf;
}

}  // namespace uvfield
