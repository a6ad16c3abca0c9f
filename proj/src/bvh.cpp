#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uvfield/errors.hpp"
#include "uvfield/geometry.hpp"

namespace uvfield {

namespace {
constexpr int kLeafSize = 4;
}  // namespace

std::optional<Hit> intersect_triangle(const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& origin,
                                      const Vec3& direction) {
  // Woop, Benthin, Wald: watertight ray/triangle intersection.
  int kz = 0;
  direction.cwiseAbs().maxCoeff(&kz);
  int kx = (kz + 1) % 3;
  int ky = (kx + 1) % 3;
  if (direction[kz] < 0.0) std::swap(kx, ky);
  const double sx = direction[kx] / direction[kz];
  const double sy = direction[ky] / direction[kz];
  const double sz = 1.0 / direction[kz];

  const Vec3 a = v0 - origin, b = v1 - origin, c = v2 - origin;
  const double ax = a[kx] - sx * a[kz], ay = a[ky] - sy * a[kz];
  const double bx = b[kx] - sx * b[kz], by = b[ky] - sy * b[kz];
  const double cx = c[kx] - sx * c[kz], cy = c[ky] - sy * c[kz];

  const double u = cx * by - cy * bx;
  const double v = ax * cy - ay * cx;
  const double w = bx * ay - by * ax;
  if ((u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0)) return std::nullopt;
  const double det = u + v + w;
  if (det == 0.0) return std::nullopt;

  const double az = sz * a[kz], bz = sz * b[kz], cz = sz * c[kz];
  const double t_scaled = u * az + v * bz + w * cz;
  const double t = t_scaled / det;
  if (!(t > 0.0) || !std::isfinite(t)) return std::nullopt;
  Hit hit;
  hit.barycentric = Vec3(u / det, v / det, w / det);
  hit.distance = t;
  return hit;
}

Bvh::Bvh(const Mesh& mesh) : mesh_(&mesh) {
  const int n = static_cast<int>(mesh.triangles.size());
  order_.resize(static_cast<std::size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  centroids_.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const Triangle& tri = mesh.triangles[static_cast<std::size_t>(t)];
    centroids_[static_cast<std::size_t>(t)] = (mesh.positions[tri[0]] + mesh.positions[tri[1]] + mesh.positions[tri[2]]) / 3.0;
  }
  if (n > 0) {
    nodes_.reserve(static_cast<std::size_t>(2 * n));
    build(0, n);
  }
}

int Bvh::build(int first, int count) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box, cbox;
  for (int k = first; k < first + count; ++k) {
    const int t = order_[static_cast<std::size_t>(k)];
    const Triangle& tri = mesh_->triangles[static_cast<std::size_t>(t)];
    for (int v : tri) box.extend(mesh_->positions[static_cast<std::size_t>(v)]);
    cbox.extend(centroids_[static_cast<std::size_t>(t)]);
  }
  nodes_[static_cast<std::size_t>(id)].box = box;
  if (count <= kLeafSize) {
    nodes_[static_cast<std::size_t>(id)].first = first;
    nodes_[static_cast<std::size_t>(id)].count = count;
    return id;
  }
  int axis = 0;
  cbox.sizes().maxCoeff(&axis);
  const int half = count / 2;
  auto begin = order_.begin() + first;
  std::nth_element(begin, begin + half, begin + count, [&](int l, int r) {
    const double cl = centroids_[static_cast<std::size_t>(l)][axis], cr = centroids_[static_cast<std::size_t>(r)][axis];
    return cl < cr || (cl == cr && l < r);
  });
  const int left = build(first, half);
  const int right = build(first + half, count - half);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::optional<Hit> Bvh::intersect(const Vec3& origin, const Vec3& direction) const {
  if (nodes_.empty()) return std::nullopt;
  const Vec3 inv = direction.cwiseInverse();
  // Slab test widened slightly so boxes never reject a hit the triangle test accepts.
  constexpr double kWiden = 1.0 + 4.0 * std::numeric_limits<double>::epsilon();
  auto box_entry = [&](const Eigen::AlignedBox3d& box, double& t_enter) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
      if (direction[k] == 0.0) {
        if (origin[k] < box.min()[k] || origin[k] > box.max()[k]) return false;
        continue;
      }
      double ta = (box.min()[k] - origin[k]) * inv[k];
      double tb = (box.max()[k] - origin[k]) * inv[k];
      if (ta > tb) std::swap(ta, tb);
      tb *= kWiden;
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    t_enter = t0;
    return true;
  };

  std::optional<Hit> best;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
    double t_enter = 0.0;
    if (!box_entry(node.box, t_enter)) continue;
    if (best && t_enter > best->distance) continue;
    if (node.left < 0) {
      for (int k = node.first; k < node.first + node.count; ++k) {
        const int t = order_[static_cast<std::size_t>(k)];
        const Triangle& tri = mesh_->triangles[static_cast<std::size_t>(t)];
        auto hit = intersect_triangle(mesh_->positions[tri[0]], mesh_->positions[tri[1]], mesh_->positions[tri[2]],
                                      origin, direction);
        if (!hit) continue;
        if (!best || hit->distance < best->distance || (hit->distance == best->distance && t < best->triangle)) {
          hit->triangle = t;
          best = hit;
        }
      }
    } else {
      if (top + 2 > 128) throw ContractViolation("Bvh: traversal stack overflow");
      stack[top++] = node.right;
      stack[top++] = node.left;
    }
  }
  return best;
}

std::optional<Hit> ray_intersect(const Bvh& bvh, const Vec3& origin, const Vec3& direction) {
  return bvh.intersect(origin, direction);
}

}  // namespace uvfield
