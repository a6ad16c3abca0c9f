// Small models and batches shared by the loss tests and the acceptance runner.
#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "uvfield/geometry.hpp"
#include "uvfield/losses.hpp"
#include "uvfield/neural_fields.hpp"

namespace uvtest {

using namespace uvfield;

inline ModelConfig tiny_config(int charts = 2) {
  ModelConfig c;
  c.charts = charts;
  c.layers = 2;
  c.width = 8;
  c.pe_degree_chart = 1;
  c.pe_degree_map = 1;
  c.texture_res = 4;
  return c;
}

inline void randomize(AtlasModel& m, Rng& rng, double range = 0.8) {
  for (ad::Parameter* p : m.parameters())
    for (Eigen::Index i = 0; i < p->values.size(); ++i)
      p->values.data()[i] = static_cast<float>(rng.uniform(-range, range));
  m.sigma().values(0, 0) = static_cast<float>(rng.uniform(0.0, 0.01));
}

inline AtlasModel random_model(const ModelConfig& cfg, std::uint64_t seed) {
  AtlasModel m = init_model(cfg, seed);
  Rng rng(seed ^ 0xabcdefULL);
  randomize(m, rng);
  return m;
}

inline SurfaceSample random_sample(Rng& rng) {
  SurfaceSample s;
  s.x = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  Vec3 n;
  do n = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  while (n.norm() < 0.1);
  s.normal = n.normalized();
  std::tie(s.tangent_p, s.tangent_q) = tangent_frame(s.normal, rng);
  return s;
}

inline Batch random_batch(std::size_t surface, std::size_t uv, Rng& rng) {
  Batch b;
  for (std::size_t k = 0; k < surface; ++k) b.surface.push_back(random_sample(rng));
  for (std::size_t k = 0; k < uv; ++k) b.uv.emplace_back(rng.uniform(), rng.uniform());
  return b;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Two charts split at x = 0 with a steep softmax; both surface fields are
// constant, t_0(x) = sigmoid(x0, x1) and t_1(x) = sigmoid(-x0, x1), so every
// term has an exact (up to e^-200) zero on `fixed_point_batch`.
inline AtlasModel fixed_point_model() {
  AtlasModel m = init_model(tiny_config(2), 1);
  for (ad::Parameter* p : m.parameters()) p->values.setZero();
  const float K = 200.0f;
  // Encoded layout per component: [v, sin(pi v), cos(pi v)].
  Mlp& c = m.chart_field();
  c.weight(0).values(0, 0) = 1.0f;
  c.bias(0).values(0, 0) = 1.0f;  // h = x0 + 1 on [-1, 1]
  c.weight(1).values(0, 0) = -K;
  c.bias(1).values(0, 0) = K;
  c.weight(1).values(1, 0) = K;
  c.bias(1).values(1, 0) = -K;
  for (int i = 0; i < 2; ++i) {
    Mlp& t = m.texture_field(i);
    t.weight(0).values(0, 0) = i == 0 ? 1.0f : -1.0f;
    t.weight(0).values(1, 3) = 1.0f;
    t.bias(0).values(0, 0) = 2.0f;
    t.bias(0).values(1, 0) = 2.0f;
    t.weight(1).values(0, 0) = 1.0f;
    t.weight(1).values(1, 1) = 1.0f;
    t.bias(1).values(0, 0) = -2.0f;
    t.bias(1).values(1, 0) = -2.0f;
    m.surface_field(i).bias(1).values(0, 0) = i == 0 ? -0.5f : 0.5f;
    auto& grid = m.normal_grid(i).values;
    grid.row(2).setOnes();
  }
  const double eps = 1e-2;
  const double dp = sigmoid(-0.5 + eps) - sigmoid(-0.5), dq = sigmoid(eps) - 0.5;
  m.sigma().values(0, 0) = static_cast<float>(dp * dq);
  return m;
}

inline Batch fixed_point_batch() {
  Batch b;
  for (int k = 0; k < 4; ++k) {
    SurfaceSample s;
    const bool left = k % 2 == 0;
    s.x = Vec3(left ? -0.5 : 0.5, 0, 0);
    s.normal = Vec3::UnitZ();
    s.tangent_p = left ? Vec3::UnitX() : Vec3(-Vec3::UnitX());
    s.tangent_q = s.normal.cross(s.tangent_p);
    b.surface.push_back(s);
  }
  b.uv.assign(3, Vec2(sigmoid(-0.5), 0.5));
  return b;
}

/// Chart i of the result is chart perm[i] of `m`.
inline AtlasModel permute_charts(const AtlasModel& m, const std::vector<int>& perm) {
  AtlasModel r = m;
  const Mlp& c = m.chart_field();
  const std::size_t last = c.layer_count() - 1;
  for (int i = 0; i < m.charts(); ++i) {
    r.chart_field().weight(last).values.row(i) = c.weight(last).values.row(perm[i]);
    r.chart_field().bias(last).values.row(i) = c.bias(last).values.row(perm[i]);
    r.texture_field(i) = m.texture_field(perm[i]);
    r.surface_field(i) = m.surface_field(perm[i]);
    r.normal_grid(i) = m.normal_grid(perm[i]);
  }
  return r;
}

}  // namespace uvtest
