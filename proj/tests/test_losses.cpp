#include <doctest.h>

#include <cmath>
#include <limits>

#include "fd_check.hpp"
#include "fixtures.hpp"
#include "reference.hpp"
#include "uvfield/errors.hpp"
#include "uvfield/losses.hpp"

using namespace uvfield;
using uvtest::fixed_point_batch;
using uvtest::fixed_point_model;

namespace {

SurfaceSample sample_at(const Vec3& x) {
  SurfaceSample s;
  s.x = x;
  return s;
}

// n = 1 model whose fields are constant: t = sigmoid(bias_t), s = bias_s.
AtlasModel constant_model(const Vec2& t_logit, const Vec3& s_value) {
  AtlasModel m = init_model(uvtest::tiny_config(1), 1);
  for (ad::Parameter* p : m.parameters()) p->values.setZero();
  m.texture_field(0).bias(1).values.col(0) = t_logit.cast<float>();
  m.surface_field(0).bias(1).values.col(0) = s_value.cast<float>();
  return m;
}

}  // namespace

TEST_CASE("every term matches the double-loop reference on random models") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    AtlasModel m = uvtest::random_model(uvtest::tiny_config(2), seed);
    Rng rng(seed);
    const Batch b = uvtest::random_batch(8, 8, rng);
    for (Term t : kAllTerms) {
      const double ref = uvtest::ref_term(m, b, t);
      INFO(term_name(t) << " seed " << seed);
      CHECK(std::abs(evaluate_term(m, b, t) - ref) <= 1e-6);
    }
  }
}

TEST_CASE("every term is zero at its constructed fixed point") {
  AtlasModel m = fixed_point_model();
  const Batch b = fixed_point_batch();
  for (Term t : kAllTerms) {
    INFO(term_name(t));
    CHECK(std::abs(evaluate_term(m, b, t)) <= 1e-10);
  }
}

TEST_CASE("single-point textbook values") {
  SUBCASE("cycle_3d: offset (0.1, 0, 0) gives 0.01") {
    AtlasModel m = constant_model(Vec2(0, 0), Vec3(0.25, 0.5, -0.5));
    Batch b;
    b.surface.push_back(sample_at(Vec3(0.15, 0.5, -0.5)));
    b.uv.push_back(Vec2(0.5, 0.5));
    CHECK(loss_cycle_3d(m, b) == doctest::Approx(0.01).epsilon(1e-6));
  }
  SUBCASE("cycle_2d: round-trip offset (0, 0.2) gives 0.04") {
    AtlasModel m = constant_model(Vec2(0, 0), Vec3(0.25, 0.5, -0.5));
    Batch b;
    b.surface.push_back(sample_at(Vec3::Zero()));
    b.uv.push_back(Vec2(0.5, 0.3));
    CHECK(loss_cycle_2d(m, b) == doctest::Approx(0.04).epsilon(1e-6));
  }
  SUBCASE("surface: one point each, distance 1 each way") {
    AtlasModel m = constant_model(Vec2(0, 0), Vec3(1, 0, 0));
    Batch b;
    b.surface.push_back(sample_at(Vec3::Zero()));
    b.uv.push_back(Vec2(0.5, 0.5));
    CHECK(loss_surface(m, b) == doctest::Approx(2.0));
  }
  SUBCASE("cluster: two points at +-x around a single chart") {
    AtlasModel m = constant_model(Vec2(0, 0), Vec3::Zero());
    Batch b;
    b.surface = {sample_at(Vec3(1, 0, 0)), sample_at(Vec3(-1, 0, 0))};
    b.uv.push_back(Vec2(0.5, 0.5));
    CHECK(loss_cluster(m, b) == doctest::Approx(1.0));
  }
  SUBCASE("entropy: one chart is zero, two uniform charts give 2 log 2") {
    AtlasModel one = constant_model(Vec2(0, 0), Vec3::Zero());
    Batch b;
    b.surface.push_back(sample_at(Vec3::Zero()));
    b.uv = {Vec2(0.1, 0.2), Vec2(0.7, 0.4)};
    CHECK(loss_entropy(one, b) == doctest::Approx(0.0));
    AtlasModel two = init_model(uvtest::tiny_config(2), 3);
    for (auto& w : {&two.chart_field().weight(1), &two.chart_field().bias(1)}) w->values.setZero();
    CHECK(loss_entropy(two, b) == doctest::Approx(2 * std::log(2.0)));
  }
  SUBCASE("texture: normal error (0, 0, 0.5) gives 0.25") {
    AtlasModel m = constant_model(Vec2(0, 0), Vec3::Zero());
    m.normal_grid(0).values.row(2).setConstant(1.5f);
    Batch b;
    SurfaceSample s = sample_at(Vec3::Zero());
    s.normal = Vec3::UnitZ();
    b.surface.push_back(s);
    b.uv.push_back(Vec2(0.5, 0.5));
    CHECK(loss_texture(m, b) == doctest::Approx(0.25));
  }
}

TEST_CASE("entropy decreases as each chart claims its own surface points") {
  // Sharpening the chart logits raises c(s_i(u))[i] for both charts.
  AtlasModel m = fixed_point_model();
  const Batch b = fixed_point_batch();
  auto& w = m.chart_field().weight(1).values;
  auto& bias = m.chart_field().bias(1).values;
  const Eigen::MatrixXf w0 = w, b0 = bias;
  double previous = std::numeric_limits<double>::infinity();
  for (float k : {0.0f, 0.001f, 0.01f, 0.05f, 0.2f}) {
    w = w0 * k;
    bias = b0 * k;
    const double e = loss_entropy(m, b);
    CHECK(e < previous);
    previous = e;
  }
  CHECK(previous < 1e-10);
}

TEST_CASE("conformal and stretch on known maps") {
  AtlasModel m = fixed_point_model();
  Batch b = fixed_point_batch();
  b.surface.resize(1);
  SUBCASE("parallel probes give cos^2 = 1") {
    b.surface[0].tangent_q = b.surface[0].tangent_p;
    CHECK(loss_conformal(m, b) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("45 degrees gives one half") {
    // At the origin both t components have the same slope.
    b.surface[0].x = Vec3::Zero();
    b.surface[0].tangent_q = Vec3(1, 1, 0).normalized();
    CHECK(loss_conformal(m, b) == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("stretch: area 0.3, sigma 0.1 gives 0.04") {
    // t_k(x) = sigmoid(a_k x_k - 2) with a_k chosen so the probe along axis k has length d_k.
    AtlasModel c = constant_model(Vec2(0, 0), Vec3::Zero());
    const double eps = 1e-2, d[2] = {0.6, 0.5};
    Mlp& t = c.texture_field(0);
    t.weight(0).values(0, 0) = 1.0f;
    t.weight(0).values(1, 3) = 1.0f;
    t.bias(0).values.setConstant(2.0f);
    for (int k = 0; k < 2; ++k) {
      const double target = d[k] + uvtest::sigmoid(-2.0);
      const double a = (std::log(target / (1 - target)) + 2.0) / eps;
      t.weight(1).values(k, k) = static_cast<float>(a);
      t.bias(1).values(k, 0) = static_cast<float>(-2 * a - 2);
    }
    c.sigma().values(0, 0) = 0.1f;
    const SurfaceSample s = sample_at(Vec3::Zero());
    Batch one;
    one.surface.push_back(s);
    one.uv.push_back(Vec2(0.5, 0.5));
    const auto probe = differential_probe(c, 0, s, eps);
    const double area = std::abs(probe.du_p.x() * probe.du_q.y() - probe.du_p.y() * probe.du_q.x());
    CHECK(area == doctest::Approx(0.3).epsilon(1e-3));
    const double sigma = c.sigma().values(0, 0);
    CHECK(loss_stretch(c, one) == doctest::Approx((area - sigma) * (area - sigma)).epsilon(1e-9));
    CHECK(loss_stretch(c, one) == doctest::Approx(0.04).epsilon(1e-2));
  }
}

TEST_CASE("differential probes: locally constant map and epsilon consistency") {
  AtlasModel flat = constant_model(Vec2(0.3, -0.2), Vec3::Zero());
  SurfaceSample s = sample_at(Vec3(0.1, 0.2, 0.3));
  const auto zero = differential_probe(flat, 0, s);
  CHECK(zero.du_p.norm() == 0.0);
  CHECK(zero.du_q.norm() == 0.0);

  AtlasModel m = uvtest::random_model(uvtest::tiny_config(1), 12);
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const SurfaceSample r = uvtest::random_sample(rng);
    // A small 32-bit probe points along the exact Jacobian image of p.
    const auto b = differential_probe(m, 0, r, 1e-3);
    const auto exact = uvtest::ref_probe(m, 0, r, 1e-7);
    if (b.du_p.norm() < 1e-9 || exact.p.norm() < 1e-12) continue;
    const double c = exact.p.normalized().dot(b.du_p.normalized());
    CHECK(c > std::cos(M_PI / 180.0));
  }
}

TEST_CASE("surface loss equals brute-force Chamfer") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    AtlasModel m = uvtest::random_model(uvtest::tiny_config(2), seed);
    Rng rng(seed + 50);
    const Batch b = uvtest::random_batch(16, 16, rng);
    CHECK(std::abs(loss_surface(m, b) - uvtest::ref_surface(m, b)) <= 1e-6);
  }
}

TEST_CASE("cluster loss on hard assignments equals within-cluster variance") {
  AtlasModel m = fixed_point_model();
  Batch b;
  Rng rng(4);
  std::vector<Vec3> left, right;
  for (int k = 0; k < 6; ++k) {
    const Vec3 l(-0.5 + rng.uniform(-0.2, 0.2), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Vec3 r(0.5 + rng.uniform(-0.2, 0.2), rng.uniform(-1, 1), rng.uniform(-1, 1));
    left.push_back(l);
    right.push_back(r);
    b.surface.push_back(sample_at(l));
    b.surface.push_back(sample_at(r));
  }
  b.uv.push_back(Vec2(0.5, 0.5));
  auto scatter = [](const std::vector<Vec3>& pts) {
    Vec3 mu = Vec3::Zero();
    for (const Vec3& p : pts) mu += p;
    mu /= static_cast<double>(pts.size());
    double s = 0;
    for (const Vec3& p : pts) s += (p - mu).squaredNorm();
    return s;
  };
  const double expected = (scatter(left) + scatter(right)) / static_cast<double>(b.surface.size());
  CHECK(loss_cluster(m, b) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("chart relabeling leaves chart-weighted terms unchanged") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(3), 21);
  AtlasModel p = uvtest::permute_charts(m, {2, 0, 1});
  Rng rng(21);
  const Batch b = uvtest::random_batch(8, 8, rng);
  for (Term t : {Term::Cycle3D, Term::Cluster, Term::Conformal, Term::Stretch, Term::Texture, Term::Cycle2D,
                 Term::Entropy, Term::Surface}) {
    INFO(term_name(t));
    CHECK(std::abs(evaluate_term(m, b, t) - evaluate_term(p, b, t)) <= 1e-6);
  }
}

TEST_CASE("sigma gradient is -2 mean(area - sigma)") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(2), 31);
  Rng rng(31);
  const Batch b = uvtest::random_batch(6, 4, rng);
  for (ad::Parameter* p : m.parameters()) p->zero_grad();
  ad::Graph<double> g;
  LossBuilder<double> builder(g, m, b);
  g.backward(builder.stretch());
  double expected = 0;
  const double sigma = m.sigma().values(0, 0);
  for (const auto& s : b.surface) {
    const auto c = uvtest::ref_pmf(m, s.x);
    for (int i = 0; i < 2; ++i) {
      const auto d = uvtest::ref_probe(m, i, s, 1e-2);
      expected += -2 * c[i] * (std::abs(d.p.x() * d.q.y() - d.p.y() * d.q.x()) - sigma);
    }
  }
  expected /= static_cast<double>(b.surface.size());
  CHECK(m.sigma().gradient(0, 0) == doctest::Approx(expected).epsilon(1e-9));
  const auto r = uvtest::fd_check({&m.sigma()}, [&](ad::Graph<double>& h) {
    LossBuilder<double> lb(h, m, b);
    return lb.stretch();
  });
  CHECK(r.failed == 0);
}

TEST_CASE("texel and field gradients of the texture term match finite differences") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(2), 41);
  Rng rng(41);
  const Batch b = uvtest::random_batch(4, 4, rng);
  std::vector<ad::Parameter*> params = {&m.normal_grid(0), &m.normal_grid(1), &m.texture_field(0).weight(1),
                                        &m.texture_field(1).bias(1)};
  const auto r = uvtest::fd_check(params, [&](ad::Graph<double>& g) {
    LossBuilder<double> lb(g, m, b);
    return lb.texture();
  });
  CHECK(r.failed == 0);
}

TEST_CASE("total loss: weighting, zero weights, non-finite terms") {
  const LossWeights w;
  CHECK(w.cycle_3d == 1.0);
  CHECK(w.cycle_2d == 1.0);
  CHECK(w.entropy == 0.04);
  CHECK(w.surface == 10.0);
  CHECK(w.cluster == 0.5);
  CHECK(w.conformal == 0.4);
  CHECK(w.stretch == 0.1);
  std::array<double, kTermCount> ones;
  ones.fill(1.0);
  CHECK(weighted_sum(ones, w) == doctest::Approx(13.04 + w.texture));

  AtlasModel m = uvtest::random_model(uvtest::tiny_config(2), 51);
  Rng rng(51);
  const Batch b = uvtest::random_batch(4, 4, rng);
  LossWeights zero;
  for (Term t : kAllTerms) zero[t] = 0.0;
  {
    ad::Graph<double> g;
    const auto e = total_loss(g, m, b, zero);
    CHECK(g.scalar(e.total) == 0.0);
  }
  {
    ad::Graph<double> g;
    const auto e = total_loss(g, m, b, w);
    CHECK(g.scalar(e.total) == doctest::Approx(weighted_sum(e.values, w)).epsilon(1e-12));
    for (Term t : kAllTerms) CHECK(e.values[static_cast<int>(t)] >= 0.0);
  }
  LossWeights bad;
  bad.cluster = -1;
  {
    ad::Graph<double> g;
    CHECK_THROWS_AS(total_loss(g, m, b, bad), ContractViolation);
  }
  m.sigma().values(0, 0) = std::numeric_limits<float>::quiet_NaN();
  ad::Graph<double> g;
  try {
    total_loss(g, m, b, w);
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(e.term() == "stretch");
  }
}

TEST_CASE("empty batches are contract violations") {
  AtlasModel m = uvtest::random_model(uvtest::tiny_config(1), 2);
  Batch b;
  b.uv.push_back(Vec2(0.5, 0.5));
  CHECK_THROWS_AS(loss_cycle_3d(m, b), ContractViolation);
  Batch c;
  c.surface.push_back(sample_at(Vec3::Zero()));
  CHECK_THROWS_AS(loss_cycle_2d(m, c), ContractViolation);
}
