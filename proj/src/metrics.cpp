#include "uvfield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "uvfield/errors.hpp"
#include "uvfield/trainer.hpp"

namespace uvfield {

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median: empty input");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::optional<double> metric_boundary(const PixelBuffer& buf, double uv_threshold, double depth_threshold) {
  std::size_t hits = 0, boundary = 0;
  const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  for (int y = 0; y < buf.height; ++y) {
    for (int x = 0; x < buf.width; ++x) {
      const std::size_t i = buf.index(x, y);
      if (!buf.hit[i]) continue;
      ++hits;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx[k], ny = y + dy[k];
        if (nx < 0 || ny < 0 || nx >= buf.width || ny >= buf.height) continue;
        const std::size_t j = buf.index(nx, ny);
        if (!buf.hit[j]) continue;
        if ((buf.uv[i] - buf.uv[j]).norm() > uv_threshold && std::abs(buf.depth[i] - buf.depth[j]) <= depth_threshold) {
          ++boundary;
          break;
        }
      }
    }
  }
  if (hits == 0) return std::nullopt;
  return 1.0 - static_cast<double>(boundary) / static_cast<double>(hits);
}

std::vector<std::optional<double>> triangle_stretch_ratios(const Mesh& mesh, std::span<const Vec2> corner_uv) {
  if (corner_uv.size() != 3 * mesh.triangles.size())
    throw ContractViolation("triangle_stretch_ratios: corner_uv must hold 3 entries per triangle");
  std::vector<std::optional<double>> out(mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const double area3 = mesh.triangle_area(t);
    if (!(area3 > kDegenerateArea)) continue;
    const Vec2 a = corner_uv[3 * t + 1] - corner_uv[3 * t], b = corner_uv[3 * t + 2] - corner_uv[3 * t];
    out[t] = 0.5 * std::abs(a.x() * b.y() - a.y() * b.x()) / area3;
  }
  return out;
}

std::vector<std::optional<double>> triangle_tangent_cosines(const Mesh& mesh, std::span<const Vec2> corner_uv) {
  if (corner_uv.size() != 3 * mesh.triangles.size())
    throw ContractViolation("triangle_tangent_cosines: corner_uv must hold 3 entries per triangle");
  std::vector<std::optional<double>> out(mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Triangle& tri = mesh.triangles[t];
    const Vec3 e1 = mesh.positions[tri[1]] - mesh.positions[tri[0]];
    const Vec3 e2 = mesh.positions[tri[2]] - mesh.positions[tri[0]];
    const Vec2 d1 = corner_uv[3 * t + 1] - corner_uv[3 * t], d2 = corner_uv[3 * t + 2] - corner_uv[3 * t];
    const double det = d1.x() * d2.y() - d2.x() * d1.y();
    if (det == 0.0 || !std::isfinite(det)) continue;
    // Solve [e1 e2] = [T B] [d1 d2] for the 3D images of the +U and +V directions.
    const Vec3 tangent = (d2.y() * e1 - d1.y() * e2) / det;
    const Vec3 bitangent = (d1.x() * e2 - d2.x() * e1) / det;
    const double denom = tangent.norm() * bitangent.norm();
    if (!(denom > 0.0) || !std::isfinite(denom)) continue;
    out[t] = std::min(1.0, std::abs(tangent.dot(bitangent)) / denom);
  }
  return out;
}

std::optional<double> metric_stretch(std::span<const std::optional<double>> ratios, const PixelBuffer& buf) {
  std::vector<double> r;
  for (std::size_t i = 0; i < buf.hit.size(); ++i) {
    if (!buf.hit[i]) continue;
    const auto& v = ratios[static_cast<std::size_t>(buf.triangle[i])];
    if (v) r.push_back(*v);
  }
  if (r.empty()) return std::nullopt;
  const double m = median(r);
  if (!(m > 0.0)) return 0.0;
  for (double& v : r) v = std::abs(v / m - 1.0);
  return std::max(0.0, 1.0 - median(std::move(r)));
}

std::optional<double> metric_conformal(std::span<const std::optional<double>> cosines, const PixelBuffer& buf) {
  std::vector<double> c;
  for (std::size_t i = 0; i < buf.hit.size(); ++i) {
    if (!buf.hit[i]) continue;
    const auto& v = cosines[static_cast<std::size_t>(buf.triangle[i])];
    if (v) c.push_back(*v);
  }
  if (c.empty()) return std::nullopt;
  return 1.0 - median(std::move(c));
}

std::optional<double> metric_stretch(const Mesh& mesh, const BakedAtlas& baked, const PixelBuffer& buffer) {
  const auto ratios = triangle_stretch_ratios(mesh, baked.corner_uv);
  return metric_stretch(ratios, buffer);
}

std::optional<double> metric_conformal(const Mesh& mesh, const BakedAtlas& baked, const PixelBuffer& buffer) {
  const auto cosines = triangle_tangent_cosines(mesh, baked.corner_uv);
  return metric_conformal(cosines, buffer);
}

std::optional<double> ViewMetrics::editability() const {
  if (!boundary || !stretch || !conformal) return std::nullopt;
  return *boundary * (*stretch + *conformal) / 2.0;
}

double metric_editability(std::span<const ViewMetrics> views) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const ViewMetrics& v : views)
    if (const auto e = v.editability()) {
      acc += *e;
      ++n;
    }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

double metric_uv_efficiency(const AtlasModel& model, const SurfaceSource& source, int texel_res,
                            std::size_t sample_count, std::uint64_t seed) {
  if (texel_res < 1) throw ContractViolation("metric_uv_efficiency: texel_res must be >= 1");
  const int n = model.charts();
  const auto res = static_cast<std::size_t>(texel_res);
  std::vector<std::uint8_t> marked(static_cast<std::size_t>(n) * res * res, 0);
  Rng rng = Rng::stream(seed, 2);
  constexpr std::size_t kChunk = 4096;
  std::vector<SurfaceSample> samples;
  for (std::size_t done = 0; done < sample_count; done += kChunk) {
    const std::size_t m = std::min(kChunk, sample_count - done);
    samples.clear();
    source.draw(m, rng, samples);
    Eigen::MatrixXf x(3, static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) x.col(static_cast<Eigen::Index>(k)) = samples[k].x.cast<float>();
    const Eigen::MatrixXf pmf = chart_pmf(model, x);
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < pmf.cols(); ++k) {
      Eigen::Index best = 0;
      pmf.col(k).maxCoeff(&best);
      members[static_cast<std::size_t>(best)].push_back(k);
    }
    for (int i = 0; i < n; ++i) {
      const auto& cols = members[static_cast<std::size_t>(i)];
      if (cols.empty()) continue;
      Eigen::MatrixXf xi(3, static_cast<Eigen::Index>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) xi.col(static_cast<Eigen::Index>(k)) = x.col(cols[k]);
      const Eigen::MatrixXf uv = texture_coord(model, i, xi);
      for (Eigen::Index k = 0; k < uv.cols(); ++k) {
        const auto tx = static_cast<std::size_t>(std::clamp<double>(std::floor(uv(0, k) * texel_res), 0.0, texel_res - 1.0));
        const auto ty = static_cast<std::size_t>(std::clamp<double>(std::floor(uv(1, k) * texel_res), 0.0, texel_res - 1.0));
        marked[(static_cast<std::size_t>(i) * res + ty) * res + tx] = 1;
      }
    }
  }
  std::size_t count = 0;
  for (std::uint8_t b : marked) count += b;
  return static_cast<double>(count) / static_cast<double>(marked.size());
}

namespace {

double mean_of(const std::vector<ViewMetrics>& views, std::optional<double> ViewMetrics::*field) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const ViewMetrics& v : views)
    if (v.*field) {
      acc += *(v.*field);
      ++n;
    }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

}  // namespace

MetricsReport evaluate_atlas(const Mesh& mesh, const BakedAtlas& baked, const EvalParams& params) {
  if (baked.corner_uv.size() != 3 * mesh.triangles.size())
    throw ContractViolation("evaluate_atlas: bake does not match the mesh");
  MetricsReport report;
  report.params = params;
  report.depth_threshold = params.depth_fraction * 2.0 * bounding_sphere(mesh).radius;
  const Bvh bvh(mesh);
  const auto ratios = triangle_stretch_ratios(mesh, baked.corner_uv);
  const auto cosines = triangle_tangent_cosines(mesh, baked.corner_uv);
  for (const Camera& cam : sample_cameras(mesh, params.views, params.seed, params.width, params.height)) {
    const PixelBuffer buf = render_buffers(mesh, bvh, baked.corner_uv, cam);
    ViewMetrics v;
    v.hits = buf.hit_count();
    v.boundary = metric_boundary(buf, params.uv_threshold, report.depth_threshold);
    v.stretch = metric_stretch(ratios, buf);
    v.conformal = metric_conformal(cosines, buf);
    report.views.push_back(v);
  }
  report.boundary = mean_of(report.views, &ViewMetrics::boundary);
  report.stretch = mean_of(report.views, &ViewMetrics::stretch);
  report.conformal = mean_of(report.views, &ViewMetrics::conformal);
  report.editability = report.boundary * (report.stretch + report.conformal) / 2.0;
  report.editability_view_mean = metric_editability(report.views);
  return report;
}

MetricsReport evaluate_atlas(const Mesh& mesh, const BakedAtlas& baked, const EvalParams& params,
                             const AtlasModel& model, const SurfaceSource& source) {
  MetricsReport report = evaluate_atlas(mesh, baked, params);
  report.uv_efficiency = metric_uv_efficiency(model, source, params.texel_res, params.uv_samples, params.seed);
  return report;
}

std::string MetricsReport::to_json() const {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["boundary"] = boundary;
  j["stretch"] = stretch;
  j["conformal"] = conformal;
  j["editability"] = editability;
  j["editability_view_mean"] = editability_view_mean;
  if (uv_efficiency) j["uv_efficiency"] = *uv_efficiency;
  ordered_json views_json = ordered_json::array();
  for (const ViewMetrics& v : views) {
    views_json.push_back({{"hits", v.hits},
                          {"boundary", opt(v.boundary)},
                          {"stretch", opt(v.stretch)},
                          {"conformal", opt(v.conformal)},
                          {"editability", opt(v.editability())}});
  }
  j["views"] = views_json;
  j["params"] = {{"views", params.views},
                 {"width", params.width},
                 {"height", params.height},
                 {"seed", params.seed},
                 {"fov_degrees", 45.0},
                 {"camera_radius_factor", 2.5},
                 {"uv_threshold", params.uv_threshold},
                 {"depth_fraction", params.depth_fraction},
                 {"depth_threshold", depth_threshold},
                 {"texel_res", params.texel_res},
                 {"uv_samples", params.uv_samples}};
  j["definitions"] = {
      {"stretch", "1 - median |r/median(r) - 1| over hit pixels, r = UV area / 3D area of the pixel's triangle"},
      {"conformal", "1 - median |cos| between the 3D images of +U and +V over hit pixels"},
      {"boundary", "1 - fraction of hit pixels with a 4-neighbour whose UV differs by > uv_threshold at depth "
                   "difference <= depth_threshold"},
      {"editability", "boundary * (stretch + conformal) / 2 of the view means"},
      {"uv_efficiency", "fraction of texels (n charts x texel_res^2) hit by surface samples mapped through their "
                        "argmax chart; our definition"}};
  return j.dump(2) + "\n";
}

void MetricsReport::write_json(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write report: " + path);
  f << to_json();
  if (!f) throw IoError("failed writing report: " + path);
}

std::string MetricsReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "boundary=%.4f stretch=%.4f conformal=%.4f editability=%.4f", boundary, stretch,
                conformal, editability);
  std::string out = buf;
  if (uv_efficiency) {
    std::snprintf(buf, sizeof buf, " uv_efficiency=%.4f", *uv_efficiency);
    out += buf;
  }
  return out;
}

}  // namespace uvfield
