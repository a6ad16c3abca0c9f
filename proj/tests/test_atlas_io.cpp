#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "test_util.hpp"
#include "uvfield/atlas_io.hpp"
#include "uvfield/errors.hpp"
#include "uvfield/image.hpp"

using namespace uvfield;

namespace {

std::size_t count_prefix(const std::string& text, const std::string& prefix) {
  std::size_t n = 0, pos = 0;
  while ((pos = text.find('\n' + prefix, pos)) != std::string::npos) {
    ++n;
    ++pos;
  }
  return n + (text.rfind(prefix, 0) == 0 ? 1 : 0);
}

}  // namespace

TEST_CASE("pack_atlas grid and gutter") {
  const ChartLayout one = pack_atlas(1, 100);
  CHECK(one.grid == 1);
  CHECK(one.cells[0].size.isApprox(Vec2(1, 1)));
  CHECK(one.inner[0].origin.isApprox(Vec2(0.01, 0.01)));
  CHECK(one.inner[0].size.isApprox(Vec2(0.98, 0.98)));

  const ChartLayout four = pack_atlas(4, 100);
  CHECK(four.grid == 2);
  CHECK(four.cells[3].origin.isApprox(Vec2(0.5, 0.5)));
  CHECK(four.cells[1].origin.isApprox(Vec2(0.5, 0.0)));
  CHECK(four.inner[2].size.isApprox(Vec2(0.48, 0.48)));
  // Neighbouring charts are two texels apart.
  CHECK(four.inner[1].origin.x() - (four.inner[0].origin.x() + four.inner[0].size.x()) == doctest::Approx(0.02));

  const ChartLayout five = pack_atlas(5);
  CHECK(five.grid == 3);
  CHECK(five.cells.size() == 5);
  CHECK(five.cells[4].origin.isApprox(Vec2(1.0 / 3, 1.0 / 3)));
  CHECK(five.pack(4, Vec2(0, 0)).isApprox(five.inner[4].origin));
  CHECK(five.pack(4, Vec2(1, 1)).isApprox(five.inner[4].origin + five.inner[4].size));
  CHECK(pack_atlas(9).grid == 3);
  CHECK(pack_atlas(10).grid == 4);
  CHECK_THROWS_AS(pack_atlas(0), ContractViolation);
  CHECK_THROWS_AS(five.pack(5, Vec2(0, 0)), ContractViolation);
}

TEST_CASE("bake with one chart equals direct field evaluation") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(1), 3);
  m.normalization.center = Vec3(0.5, 0, 0);
  m.normalization.scale = 0.5;
  const Mesh mesh = uvtest::grid_quad(6, 2.0);
  const BakedAtlas b = bake(m, mesh);
  for (std::size_t v = 0; v < mesh.positions.size(); ++v) {
    CHECK(b.vertex_chart[v] == 0);
    const Eigen::Vector3f x = m.normalization.apply(mesh.positions[v]).cast<float>();
    CHECK((b.vertex_uv[v] - texture_coord(m, 0, x).cast<double>()).norm() < 1e-6);
  }
  CHECK(b.seam_edges.empty());
  CHECK(b.vertices_per_chart() == std::vector<std::size_t>{mesh.positions.size()});
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int c = 0; c < 3; ++c)
      CHECK((b.corner_uv[3 * t + c] - b.layout.pack(0, b.vertex_uv[mesh.triangles[t][c]])).norm() < 1e-12);
}

TEST_CASE("bake reproduces forced chart regions and votes on straddling triangles") {
  AtlasModel m = uvtest::fixed_point_model();
  // Odd grid: no vertex sits on the x = 0 split.
  const Mesh mesh = uvtest::grid_quad(5, 0.9);
  const BakedAtlas b = bake(m, mesh);
  for (std::size_t v = 0; v < mesh.positions.size(); ++v) CHECK(b.vertex_chart[v] == (mesh.positions[v].x() > 0 ? 1 : 0));
  CHECK_FALSE(b.seam_edges.empty());
  for (const auto& e : b.seam_edges) {
    CHECK(e[0] < e[1]);
    CHECK(b.vertex_chart[e[0]] != b.vertex_chart[e[1]]);
  }
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    Eigen::VectorXf votes = Eigen::VectorXf::Zero(2);
    for (int v : tri) votes += chart_pmf(m, Eigen::Vector3f(mesh.positions[v].cast<float>()));
    Eigen::Index expected = 0;
    votes.maxCoeff(&expected);
    CHECK(b.triangle_chart[t] == expected);
    // Corners are evaluated under the triangle's chart, not the vertex's.
    for (int c = 0; c < 3; ++c) {
      const Vec2 local = texture_coord(m, b.triangle_chart[t], Eigen::Vector3f(mesh.positions[tri[c]].cast<float>())).cast<double>();
      CHECK((b.corner_uv[3 * t + c] - b.layout.pack(b.triangle_chart[t], local)).norm() < 1e-12);
      CHECK(b.layout.inner[b.triangle_chart[t]].contains(b.corner_uv[3 * t + c], 1e-12));
    }
  }
}

TEST_CASE("scaling chart logits leaves baked charts unchanged") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(3), 8);
  const Mesh mesh = uvtest::grid_quad(8);
  const BakedAtlas a = bake(m, mesh);
  auto& last = m.chart_field();
  last.weight(1).values *= 3.0f;
  last.bias(1).values *= 3.0f;
  const BakedAtlas b = bake(m, mesh);
  CHECK(a.vertex_chart == b.vertex_chart);
}

TEST_CASE("bake refuses non-finite models") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(2), 1);
  m.texture_field(1).weight(0).values(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(bake(m, uvtest::grid_quad(2)), NumericFault);
}

TEST_CASE("export and re-import round trip") {
  uvtest::TempDir dir;
  AtlasModel m = uvtest::fixed_point_model();
  Mesh mesh = uvtest::grid_quad(5, 0.9);
  for (auto& p : mesh.positions) p = p * 3.0 + Vec3(1, 2, 3);
  m.normalization.center = Vec3(1, 2, 3);
  m.normalization.scale = 1.0 / 3.0;
  const BakedAtlas b = bake(m, mesh);
  export_obj(mesh, b, dir.file("out.obj"), "atlas.png");
  const std::string text = uvtest::read_text(dir.file("out.obj"));
  CHECK(text.find("mtllib out.mtl") != std::string::npos);
  CHECK(uvtest::read_text(dir.file("out.mtl")).find("map_Kd atlas.png") != std::string::npos);

  const Mesh back = load_mesh(dir.file("out.obj"));
  REQUIRE(back.positions.size() == mesh.positions.size());
  REQUIRE(back.triangles.size() == mesh.triangles.size());
  for (std::size_t v = 0; v < mesh.positions.size(); ++v) CHECK((back.positions[v] - mesh.positions[v]).norm() < 1e-5);
  REQUIRE(back.has_uv());
  for (std::size_t k = 0; k < b.corner_uv.size(); ++k) {
    CHECK((back.corner_uv[k] - b.corner_uv[k]).norm() < 1e-5);
    CHECK(back.corner_uv[k].minCoeff() >= 0.0);
    CHECK(back.corner_uv[k].maxCoeff() <= 1.0);
  }
  CHECK(back.triangle_chart == b.triangle_chart);

  // Vertices used by triangles of both charts get one vt per chart.
  std::set<std::pair<int, int>> used;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int v : mesh.triangles[t]) used.insert({v, b.triangle_chart[t]});
  const std::size_t vt = count_prefix(text, "vt ");
  CHECK(vt == used.size());
  CHECK(vt > mesh.positions.size());

  const BakedAtlas reread = baked_from_mesh(back);
  CHECK(reread.layout.charts == 2);
  CHECK(reread.corner_uv.size() == b.corner_uv.size());
}

TEST_CASE("export without seams writes one vt per vertex") {
  uvtest::TempDir dir;
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(1), 5);
  const Mesh mesh = uvtest::grid_quad(4);
  export_obj(mesh, bake(m, mesh), dir.file("one.obj"));
  const std::string text = uvtest::read_text(dir.file("one.obj"));
  CHECK(count_prefix(text, "vt ") == mesh.positions.size());
  CHECK(count_prefix(text, "g chart_") == 1);
  CHECK_THROWS_AS(export_obj(mesh, bake(m, mesh), dir.file("no/such/dir/x.obj")), IoError);
  CHECK_THROWS_AS(baked_from_mesh(mesh), FormatError);
}

TEST_CASE("normal atlas image") {
  uvtest::TempDir dir;
  AtlasModel m = init_model(uvtest::tiny_config(4), 2);  // grids start at (0, 0, 1)
  const Image img = normal_atlas_image(m, 64);
  CHECK(img.width == 64);
  CHECK(img.height == 64);
  const ChartLayout layout = pack_atlas(4, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Vec2 uv((x + 0.5) / 64, 1 - (y + 0.5) / 64);
      bool inside = false;
      for (const auto& r : layout.inner) inside = inside || r.contains(uv);
      const std::uint8_t* px = img.at(x, y);
      if (inside) {
        CHECK(px[0] == 128);
        CHECK(px[1] == 128);
        CHECK(px[2] == 255);
      } else {
        CHECK(px[0] + px[1] + px[2] == 0);
      }
    }

  // Random grids: pixel at a cell center matches the bilinear lookup.
  Rng rng(3);
  for (int i = 0; i < 4; ++i)
    for (Eigen::Index k = 0; k < m.normal_grid(i).values.size(); ++k)
      m.normal_grid(i).values.data()[k] = static_cast<float>(rng.uniform(-1, 1));
  const Image r = normal_atlas_image(m, 128);
  const ChartLayout l = pack_atlas(4, 128);
  for (int i = 0; i < 4; ++i) {
    const Vec2 center = l.cells[i].origin + 0.5 * l.cells[i].size;
    const int px = static_cast<int>(center.x() * 128), py = static_cast<int>((1 - center.y()) * 128);
    const Vec2 uv((px + 0.5) / 128, 1 - (py + 0.5) / 128);
    const Vec2 local = (uv - l.inner[i].origin).cwiseQuotient(l.inner[i].size);
    const Eigen::Vector3f n = normal_texture_lookup(m, i, local.cast<float>());
    for (int c = 0; c < 3; ++c) CHECK(std::abs(r.at(px, py)[c] / 255.0 - (n[c] + 1) / 2) <= 1.0 / 255 + 1e-9);
  }
  rasterize_normal_atlas(m, 32, dir.file("n.png"));
  const Image back = read_png(dir.file("n.png"));
  CHECK(back.width == 32);
  CHECK(back.pixels == normal_atlas_image(m, 32).pixels);
}

TEST_CASE("texture preview: white texture shows pure shading, checker stays undistorted") {
  uvtest::TempDir dir;
  const Mesh mesh = uvtest::grid_quad(4);
  // Isometric single-chart bake: uv = (x + 1) / 2.
  BakedAtlas b;
  b.layout = pack_atlas(1, 1024);
  b.triangle_chart.assign(mesh.triangles.size(), 0);
  for (const auto& t : mesh.triangles)
    for (int v : t) b.corner_uv.push_back((mesh.positions[v].head<2>() + Vec2(1, 1)) / 2);
  Camera cam;
  cam.position = Vec3(0, 0, 3);
  cam.width = cam.height = 96;
  const Bvh bvh(mesh);

  Image white(4, 4);
  std::fill(white.pixels.begin(), white.pixels.end(), 255);
  const Image shaded = render_preview(mesh, bvh, b, white, cam);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      const Vec3 d = cam.ray_direction(x, y);
      const double t = 3.0 / -d.z();
      const Vec3 p = cam.position + t * d;
      if (std::abs(p.x()) > 0.99 || std::abs(p.y()) > 0.99) continue;
      const auto expected = static_cast<int>(std::lround(std::abs(d.z()) * 255));
      INFO(x << "," << y);
      CHECK(std::abs(shaded.at(x, y)[0] - expected) <= 1);
    }

  const int cells = 8, res = 64;
  Image checker(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const bool on = ((x / (res / cells)) + (y / (res / cells))) % 2 == 0;
      std::fill(checker.at(x, y), checker.at(x, y) + 3, on ? 255 : 0);
    }
  const Image img = render_preview(mesh, bvh, b, checker, cam);
  int tested = 0;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      const Vec3 d = cam.ray_direction(x, y);
      const Vec3 p = cam.position + (3.0 / -d.z()) * d;
      if (std::abs(p.x()) > 0.99 || std::abs(p.y()) > 0.99) continue;
      const Vec2 uv = b.layout.pack(0, (p.head<2>() + Vec2(1, 1)) / 2);
      const double tx = uv.x() * res, ty = (1 - uv.y()) * res;  // image row 0 is v = 1
      const double fx = tx / (res / cells), fy = ty / (res / cells);
      // Skip pixels within 1.5 texels of a cell edge, where filtering blends.
      const double margin = 1.5 / (res / cells);
      if (std::abs(fx - std::round(fx)) < margin || std::abs(fy - std::round(fy)) < margin) continue;
      const bool on = (static_cast<int>(fx) + static_cast<int>(fy)) % 2 == 0;
      ++tested;
      CHECK((img.at(x, y)[0] > 100) == on);
    }
  CHECK(tested > 1000);

  const std::vector<Camera> cams = {cam, cam};
  const auto paths = texture_preview(mesh, b, checker, cams, dir.file("view"));
  REQUIRE(paths.size() == 2);
  CHECK(paths[0] == dir.file("view_000.png"));
  CHECK(uvtest::read_text(paths[0]) == uvtest::read_text(paths[1]));
  CHECK(read_png(paths[1]).pixels == img.pixels);
}
