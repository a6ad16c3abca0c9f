#include <doctest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "uvfield/errors.hpp"
#include "uvfield/geometry.hpp"

using namespace uvfield;

namespace {

// Brute-force nearest hit with the same tie rule as the BVH.
std::optional<Hit> scan_all(const Mesh& m, const Vec3& o, const Vec3& d) {
  std::optional<Hit> best;
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    auto h = intersect_triangle(m.positions[tri[0]], m.positions[tri[1]], m.positions[tri[2]], o, d);
    if (h && (!best || h->distance < best->distance)) {
      h->triangle = static_cast<int>(t);
      best = h;
    }
  }
  return best;
}

// Fan of triangles around the origin with deliberately unequal areas.
Mesh uneven_fan(int count) {
  Mesh m;
  m.positions.push_back(Vec3::Zero());
  double angle = 0.0;
  const double total = count * (count + 1) / 2.0;
  for (int k = 0; k <= count; ++k) {
    m.positions.emplace_back(std::cos(angle), std::sin(angle), 0.0);
    angle += 1.5 * M_PI * (k + 1) / total;
  }
  for (int k = 0; k < count; ++k) m.triangles.push_back({0, k + 1, k + 2});
  compute_vertex_normals(m);
  return m;
}

}  // namespace

TEST_CASE("load_mesh: single triangle") {
  uvtest::TempDir dir;
  uvtest::write_text(dir.file("t.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const Mesh m = load_mesh(dir.file("t.obj"));
  CHECK(m.positions.size() == 3);
  CHECK(m.triangles.size() == 1);
  REQUIRE(m.normals.size() == 3);
  CHECK(m.normals[0].isApprox(Vec3::UnitZ()));
  CHECK_FALSE(m.has_uv());
}

TEST_CASE("load_mesh: quad cube is fan triangulated into 12 triangles") {
  uvtest::TempDir dir;
  uvtest::write_text(dir.file("cube.obj"),
                     "# cube\nmtllib x.mtl\no cube\n"
                     "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\n"
                     "v -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n"
                     "usemtl m\ns off\n"
                     "f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 3 4 8 7\nf 2 3 7 6\nf 4 1 5 8\n");
  const Mesh m = load_mesh(dir.file("cube.obj"));
  CHECK(m.triangles.size() == 12);
  CHECK(m.total_area() == doctest::Approx(24.0));
  for (const Vec3& n : m.normals) CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-4));
  // Corner normals point away from the center.
  for (std::size_t v = 0; v < m.positions.size(); ++v) CHECK(m.normals[v].dot(m.positions[v]) > 0.0);
}

TEST_CASE("load_mesh: v/vt/vn faces and negative indices") {
  uvtest::TempDir dir;
  uvtest::write_text(dir.file("a.obj"),
                     "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
                     "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nvn 0 0 1\n"
                     "f -4/-4/-1 -3/-3/-1 -2/-2/-1 -1/-1/-1\n");
  const Mesh m = load_mesh(dir.file("a.obj"));
  REQUIRE(m.triangles.size() == 2);
  CHECK(m.triangles[1] == Triangle{0, 2, 3});
  REQUIRE(m.has_uv());
  CHECK(m.corner_uv[4].isApprox(Vec2(1, 1)));
}

TEST_CASE("load_mesh: chart groups become per-triangle chart ids") {
  uvtest::TempDir dir;
  uvtest::write_text(dir.file("g.obj"),
                     "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
                     "g chart_1\nf 1 2 3\ng chart_0\nf 1 3 4\n");
  const Mesh m = load_mesh(dir.file("g.obj"));
  REQUIRE(m.triangle_chart.size() == 2);
  CHECK(m.triangle_chart[0] == 1);
  CHECK(m.triangle_chart[1] == 0);
}

TEST_CASE("load_mesh: malformed records name the line") {
  uvtest::TempDir dir;
  auto expect_line = [&](const std::string& text, std::size_t line) {
    uvtest::write_text(dir.file("bad.obj"), text);
    try {
      load_mesh(dir.file("bad.obj"));
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == line);
    }
  };
  expect_line("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", 4);
  expect_line("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 7\n", 5);
  expect_line("v 0 0\n", 1);
  expect_line("v 0 0 0\nv 1 0 0\nf 1 2\n", 3);
  expect_line("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 a 3\n", 4);
  CHECK_THROWS_AS(load_mesh(dir.file("missing.obj")), IoError);
}

TEST_CASE("icosphere: counts, unit radius, outward orientation") {
  for (int level = 0; level <= 3; ++level) {
    const Mesh m = make_icosphere(level);
    const std::size_t f = 20 * (std::size_t{1} << (2 * level));
    CHECK(m.triangles.size() == f);
    CHECK(m.positions.size() == f / 2 + 2);  // Euler: V - E + F = 2 with E = 3F/2
    for (const Vec3& p : m.positions) CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
      const auto& tri = m.triangles[t];
      const Vec3 c = (m.positions[tri[0]] + m.positions[tri[1]] + m.positions[tri[2]]) / 3.0;
      CHECK(m.face_normal(t).dot(c) > 0.0);
    }
  }
  CHECK(make_icosphere(3).total_area() == doctest::Approx(4 * M_PI).epsilon(0.02));
}

TEST_CASE("unit cube transform maps the bounding box into [-1, 1]^3") {
  Mesh m = uvtest::flat_quad(3.0);
  for (auto& p : m.positions) p += Vec3(10, -4, 2);
  const Mesh n = transformed(m, unit_cube_transform(m));
  Eigen::AlignedBox3d box;
  for (const Vec3& p : n.positions) box.extend(p);
  CHECK(box.min().x() == doctest::Approx(-1.0));
  CHECK(box.max().y() == doctest::Approx(1.0));
  CHECK(box.center().norm() == doctest::Approx(0.0));
}

TEST_CASE("tangent frames are orthonormal and right handed") {
  Rng rng(3);
  {
    const auto [p, q] = tangent_frame(Vec3::UnitZ(), rng);
    CHECK(std::abs(p.z()) < 1e-6);
    CHECK(std::abs(q.z()) < 1e-6);
  }
  for (int k = 0; k < 10000; ++k) {
    Vec3 n(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (n.norm() < 1e-3) continue;
    n.normalize();
    const auto [p, q] = tangent_frame(n, rng);
    CHECK(std::abs(p.dot(q)) < 1e-6);
    CHECK(std::abs(p.dot(n)) < 1e-6);
    CHECK(std::abs(p.norm() - 1) < 1e-5);
    CHECK(std::abs(q.norm() - 1) < 1e-5);
    CHECK((p.cross(q) - n).norm() < 1e-5);
  }
  CHECK_THROWS_AS(tangent_frame(Vec3::Zero(), rng), ContractViolation);
}

TEST_CASE("tangent frame angle is uniform") {
  Rng rng(8);
  const Vec3 n = Vec3::UnitZ();
  std::array<int, 8> bins{};
  const int draws = 80000;
  for (int k = 0; k < draws; ++k) {
    const Vec3 p = tangent_frame(n, rng).first;
    double a = std::atan2(p.y(), p.x());
    if (a < 0) a += 2 * M_PI;
    ++bins[std::min(7, static_cast<int>(a / (2 * M_PI) * 8))];
  }
  double chi2 = 0;
  for (int b : bins) chi2 += (b - draws / 8.0) * (b - draws / 8.0) / (draws / 8.0);
  CHECK(chi2 < 18.48);  // chi-square 0.99 quantile, 7 degrees of freedom
}

TEST_CASE("area sampling: two triangles with areas 1 and 3") {
  Mesh m;
  m.positions = {{0, 0, 0}, {2, 0, 0}, {0, 1, 0}, {10, 0, 0}, {16, 0, 0}, {10, 1, 0}};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  compute_vertex_normals(m);
  Rng rng(1);
  const auto samples = sample_surface(m, 100000, rng);
  std::size_t second = 0;
  for (const auto& s : samples) second += s.triangle == 1;
  CHECK(std::abs(second / 1e5 - 0.75) < 0.01);
}

TEST_CASE("area sampling passes a chi-square test and stays on the surface") {
  const Mesh m = uneven_fan(20);
  AreaSampler sampler(m);
  Rng rng(2);
  std::vector<SurfaceSample> samples;
  sampler.sample(100000, rng, samples);
  REQUIRE(samples.size() == 100000);
  std::vector<double> counts(m.triangles.size(), 0.0);
  for (const auto& s : samples) {
    counts[s.triangle] += 1;
    const auto& t = m.triangles[s.triangle];
    const Vec3 n = m.face_normal(s.triangle);
    CHECK(std::abs(n.dot(s.x - m.positions[t[0]])) < 1e-6);
    CHECK(std::abs(s.normal.norm() - 1) < 1e-5);
    CHECK(std::abs(s.tangent_p.dot(s.normal)) < 1e-5);
  }
  double chi2 = 0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    const double expected = 1e5 * m.triangle_area(t) / m.total_area();
    chi2 += (counts[t] - expected) * (counts[t] - expected) / expected;
  }
  CHECK(chi2 < 36.19);  // chi-square 0.99 quantile, 19 degrees of freedom
}

TEST_CASE("sampling is deterministic, appends, and skips degenerate triangles") {
  Mesh m = uneven_fan(5);
  m.positions.push_back(Vec3(5, 5, 5));
  m.triangles.push_back({1, 1, 7});
  compute_vertex_normals(m);
  Rng a(4), b(4);
  const auto sa = sample_surface(m, 500, a), sb = sample_surface(m, 500, b);
  for (std::size_t k = 0; k < sa.size(); ++k) {
    CHECK(sa[k].x == sb[k].x);
    CHECK(sa[k].tangent_q == sb[k].tangent_q);
    CHECK(sa[k].triangle != 5);
  }
  AreaSampler sampler(m);
  std::vector<SurfaceSample> out(3);
  sampler.sample(10, a, out);
  CHECK(out.size() == 13);
}

TEST_CASE("flat normal mode uses the face normal") {
  const Mesh m = make_icosphere(1);
  AreaSampler sampler(m, NormalMode::Flat);
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    const SurfaceSample s = sampler.sample(rng);
    CHECK((s.normal - m.face_normal(s.triangle)).norm() < 1e-12);
  }
}

TEST_CASE("zero total area is a contract violation") {
  Mesh m;
  m.positions = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  m.triangles = {{0, 1, 2}};
  m.normals.assign(3, Vec3::UnitZ());
  CHECK_THROWS_AS(AreaSampler{m}, ContractViolation);
}

TEST_CASE("point clouds: normalization, rejection, round trip, errors") {
  uvtest::TempDir dir;
  Rng rng(6);
  uvtest::write_text(dir.file("one.xyz"), "0 0 0 0 0 2\n");
  auto one = load_point_cloud(dir.file("one.xyz"), rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].normal.isApprox(Vec3::UnitZ()));
  CHECK(std::abs(one[0].tangent_p.dot(one[0].normal)) < 1e-6);

  uvtest::write_text(dir.file("empty.xyz"), "");
  CHECK(load_point_cloud(dir.file("empty.xyz"), rng).empty());

  uvtest::write_text(dir.file("zero.xyz"), "1 2 3 0 0 0\n1 2 3 1 0 0\n");
  std::size_t rejected = 0;
  CHECK(load_point_cloud(dir.file("zero.xyz"), rng, &rejected).size() == 1);
  CHECK(rejected == 1);

  uvtest::write_text(dir.file("bad.xyz"), "1 2 3 0 0 1\n1 2 x 0 0 1\n");
  try {
    load_point_cloud(dir.file("bad.xyz"), rng);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }

  const auto samples = sample_surface(make_icosphere(2), 200, rng);
  write_point_cloud(dir.file("rt.xyz"), samples);
  const auto back = load_point_cloud(dir.file("rt.xyz"), rng);
  REQUIRE(back.size() == samples.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK((back[k].x - samples[k].x).norm() < 1e-6);
    CHECK((back[k].normal - samples[k].normal).norm() < 1e-6);
  }
}

TEST_CASE("ray/triangle: centroid barycentrics and parallel miss") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  const Vec3 centroid = (a + b + c) / 3.0;
  const auto hit = intersect_triangle(a, b, c, centroid + Vec3(0, 0, 2), Vec3(0, 0, -1));
  REQUIRE(hit);
  CHECK((hit->barycentric - Vec3::Constant(1.0 / 3.0)).norm() < 1e-6);
  CHECK(hit->distance == doctest::Approx(2.0));
  CHECK_FALSE(intersect_triangle(a, b, c, Vec3(-1, 0.2, 0), Vec3(1, 0, 0)));
  CHECK_FALSE(intersect_triangle(a, b, c, Vec3(-1, 0.2, 0.5), Vec3(1, 0, 0)));
  // Behind the origin.
  CHECK_FALSE(intersect_triangle(a, b, c, centroid + Vec3(0, 0, 2), Vec3(0, 0, 1)));
  // Barycentric weights follow vertex order.
  const auto at_b = intersect_triangle(a, b, c, Vec3(0.9, 0.05, 1), Vec3(0, 0, -1));
  REQUIRE(at_b);
  CHECK(at_b->barycentric.y() == doctest::Approx(0.9));
  CHECK(at_b->barycentric.z() == doctest::Approx(0.05));
}

TEST_CASE("BVH agrees with a brute-force scan") {
  Mesh m = make_icosphere(3);
  // A second, offset sphere makes occlusion order matter.
  const Mesh s = make_icosphere(2);
  const int base = static_cast<int>(m.positions.size());
  for (const Vec3& p : s.positions) m.positions.push_back(0.4 * p + Vec3(0.3, 0.1, -0.2));
  for (const auto& t : s.triangles) m.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  compute_vertex_normals(m);
  const Bvh bvh(m);
  CHECK(bvh.node_count() > 1);
  Rng rng(7);
  int hits = 0;
  for (int k = 0; k < 1000; ++k) {
    Vec3 o(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    Vec3 target(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    if (k % 5 == 0) target = Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
    const Vec3 d = (target - o).normalized();
    const auto fast = ray_intersect(bvh, o, d);
    const auto slow = scan_all(m, o, d);
    REQUIRE(fast.has_value() == slow.has_value());
    if (!fast) continue;
    ++hits;
    CHECK(fast->triangle == slow->triangle);
    CHECK(std::abs(fast->distance - slow->distance) < 1e-9);
  }
  CHECK(hits > 500);
}

TEST_CASE("BVH ties resolve to the lower triangle index") {
  Mesh m;
  m.positions = {{-1, -1, 0}, {1, -1, 0}, {0, 1, 0}};
  m.triangles = {{0, 1, 2}, {0, 1, 2}, {2, 1, 0}};
  m.normals.assign(3, Vec3::UnitZ());
  const Bvh bvh(m);
  const auto hit = bvh.intersect(Vec3(0, 0, 3), Vec3(0, 0, -1));
  REQUIRE(hit);
  CHECK(hit->triangle == 0);
}
