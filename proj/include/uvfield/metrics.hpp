#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uvfield/atlas_io.hpp"
#include "uvfield/geometry.hpp"
#include "uvfield/neural_fields.hpp"
#include "uvfield/render.hpp"

namespace uvfield {

class SurfaceSource;

/// Average of the two middle values for even counts. Throws on empty input.
double median(std::vector<double> values);

/// 1 - boundary/hit pixels; nullopt when nothing was hit.
std::optional<double> metric_boundary(const PixelBuffer& buffer, double uv_threshold, double depth_threshold);

/// UV-area / 3D-area per triangle (nullopt for degenerate 3D triangles).
std::vector<std::optional<double>> triangle_stretch_ratios(const Mesh& mesh, std::span<const Vec2> corner_uv);
/// |cos| between the 3D directions of +U and +V per triangle (nullopt for degenerate UV triangles).
std::vector<std::optional<double>> triangle_tangent_cosines(const Mesh& mesh, std::span<const Vec2> corner_uv);

std::optional<double> metric_stretch(const Mesh& mesh, const BakedAtlas& baked, const PixelBuffer& buffer);
std::optional<double> metric_conformal(const Mesh& mesh, const BakedAtlas& baked, const PixelBuffer& buffer);
// Per-triangle tables precomputed once for many views.
std::optional<double> metric_stretch(std::span<const std::optional<double>> ratios, const PixelBuffer& buffer);
std::optional<double> metric_conformal(std::span<const std::optional<double>> cosines, const PixelBuffer& buffer);

struct ViewMetrics {
  std::size_t hits = 0;
  std::optional<double> boundary, stretch, conformal;
  /// boundary * (stretch + conformal) / 2 when all three are defined.
  std::optional<double> editability() const;
};

/// Mean over views of each view's editability (views with undefined parts are skipped).
double metric_editability(std::span<const ViewMetrics> views);

/// Fraction of the n * texel_res^2 texels hit by t_{argmax c}(x) over `sample_count` surface samples.
double metric_uv_efficiency(const AtlasModel& model, const SurfaceSource& source, int texel_res = 128,
                            std::size_t sample_count = std::size_t{1} << 20, std::uint64_t seed = 0);

struct EvalParams {
  int views = 16;
  int width = 256;
  int height = 256;
  std::uint64_t seed = 0;
  double uv_threshold = 0.1;
  double depth_fraction = 0.02;  // of the scene diameter
  int texel_res = 128;
  std::size_t uv_samples = std::size_t{1} << 20;
};

struct MetricsReport {
  double boundary = 0.0;
  double stretch = 0.0;
  double conformal = 0.0;
  double editability = 0.0;            // boundary * (stretch + conformal) / 2 of the view means
  double editability_view_mean = 0.0;  // mean of per-view editability
  std::optional<double> uv_efficiency;
  std::vector<ViewMetrics> views;
  EvalParams params;
  double depth_threshold = 0.0;

  std::string to_json() const;
  void write_json(const std::string& path) const;
  std::string summary() const;
};

/// Renders `params.views` cameras and aggregates the per-view metrics. Mesh in input coordinates.
MetricsReport evaluate_atlas(const Mesh& mesh, const BakedAtlas& baked, const EvalParams& params);
/// As above plus UV efficiency from the model (samples drawn from `source`).
MetricsReport evaluate_atlas(const Mesh& mesh, const BakedAtlas& baked, const EvalParams& params,
                             const AtlasModel& model, const SurfaceSource& source);

}  // namespace uvfield
