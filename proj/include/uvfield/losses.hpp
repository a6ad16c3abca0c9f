#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "uvfield/autodiff.hpp"
#include "uvfield/geometry.hpp"
#include "uvfield/neural_fields.hpp"

namespace uvfield {

/// Surface samples (3D) and uniform texture-space samples (2D) for one step.
struct Batch {
  std::vector<SurfaceSample> surface;
  std::vector<Vec2> uv;
};

enum class Term : int { Cycle3D = 0, Cycle2D, Entropy, Surface, Cluster, Conformal, Stretch, Texture };
inline constexpr int kTermCount = 8;
inline constexpr std::array<Term, kTermCount> kAllTerms = {Term::Cycle3D, Term::Cycle2D,   Term::Entropy,
                                                           Term::Surface, Term::Cluster,   Term::Conformal,
                                                           Term::Stretch, Term::Texture};

std::string_view term_name(Term term);

struct LossWeights {
  double cycle_3d = 1.0;
  double cycle_2d = 1.0;
  double entropy = 0.04;
  double surface = 10.0;
  double cluster = 0.5;
  double conformal = 0.4;
  double stretch = 0.1;
  // No published value for this term; 1.0 is our default.
  double texture = 1.0;

  double operator[](Term term) const;
  double& operator[](Term term);
  bool valid() const;
};

struct DifferentialProbe {
  double epsilon = 1e-2;
  Vec2 du_p = Vec2::Zero();
  Vec2 du_q = Vec2::Zero();
};

inline constexpr double kPmfFloor = 1e-12;
inline constexpr double kNormFloor = 1e-12;
inline constexpr double kClusterMassFloor = 1e-8;

/// Builds loss terms on a graph, sharing field evaluations between terms.
template <typename Scalar>
class LossBuilder {
 public:
  LossBuilder(ad::Graph<Scalar>& graph, AtlasModel& model, const Batch& batch, double epsilon = 1e-2);

  ad::NodeId term(Term t);
  ad::NodeId cycle_3d();
  ad::NodeId cycle_2d();
  ad::NodeId entropy();
  ad::NodeId surface();
  ad::NodeId cluster();
  ad::NodeId conformal();
  ad::NodeId stretch();
  ad::NodeId texture();

  /// t_i(x) over the surface batch (2 x B).
  ad::NodeId uv(int chart);
  /// t_i(x + eps p) - t_i(x) and t_i(x + eps q) - t_i(x) (2 x B each).
  ad::NodeId probe_p(int chart);
  ad::NodeId probe_q(int chart);
  ad::NodeId pmf_surface();

 private:
  using Mat = typename ad::Graph<Scalar>::Mat;

  ad::NodeId points();
  ad::NodeId texture_block(int chart);
  ad::NodeId uv_points();
  ad::NodeId mapped_uv(int chart);  // s_i(u)
  ad::NodeId mapped_union();
  ad::NodeId pmf_union();
  ad::NodeId add_all(const std::vector<ad::NodeId>& scalars);

  ad::Graph<Scalar>& g_;
  AtlasModel& model_;
  const Batch& batch_;
  double epsilon_;
  std::size_t nb_ = 0, nu_ = 0;

  std::optional<ad::NodeId> points_, uv_points_, pmf_surface_, mapped_union_, pmf_union_;
  std::vector<std::optional<ad::NodeId>> block_, uv_, probe_p_, probe_q_, mapped_uv_;
};

extern template class LossBuilder<float>;
extern template class LossBuilder<double>;

struct LossEvaluation {
  ad::NodeId total;
  std::array<ad::NodeId, kTermCount> terms;
  std::array<double, kTermCount> values{};  // unweighted
  double total_value = 0.0;
};

/// Weighted sum of all terms on `graph`. Throws NumericFault naming the first non-finite term.
template <typename Scalar>
LossEvaluation total_loss(ad::Graph<Scalar>& graph, AtlasModel& model, const Batch& batch, const LossWeights& weights,
                          double epsilon = 1e-2);

/// Weighted sum of per-term values (for reporting and testing the weighting).
double weighted_sum(const std::array<double, kTermCount>& values, const LossWeights& weights);

/// Single-term evaluation in 64-bit.
double evaluate_term(AtlasModel& model, const Batch& batch, Term term, double epsilon = 1e-2);
inline double loss_cycle_3d(AtlasModel& m, const Batch& b) { return evaluate_term(m, b, Term::Cycle3D); }
inline double loss_cycle_2d(AtlasModel& m, const Batch& b) { return evaluate_term(m, b, Term::Cycle2D); }
inline double loss_entropy(AtlasModel& m, const Batch& b) { return evaluate_term(m, b, Term::Entropy); }
inline double loss_surface(AtlasModel& m, const Batch& b) { return evaluate_term(m, b, Term::Surface); }
inline double loss_cluster(AtlasModel& m, const Batch& b) { return evaluate_term(m, b, Term::Cluster); }
inline double loss_conformal(AtlasModel& m, const Batch& b, double eps = 1e-2) {
  return evaluate_term(m, b, Term::Conformal, eps);
}
inline double loss_stretch(AtlasModel& m, const Batch& b, double eps = 1e-2) {
  return evaluate_term(m, b, Term::Stretch, eps);
}
inline double loss_texture(AtlasModel& m, const Batch& b) { return evaluate_term(m, b, Term::Texture); }

DifferentialProbe differential_probe(AtlasModel& model, int chart, const SurfaceSample& sample, double epsilon = 1e-2);

}  // namespace uvfield
