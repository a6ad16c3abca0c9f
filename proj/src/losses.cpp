#include "uvfield/losses.hpp"

#include <cmath>

#include "uvfield/errors.hpp"

namespace uvfield {

std::string_view term_name(Term term) {
  switch (term) {
    case Term::Cycle3D: return "cycle_3d";
    case Term::Cycle2D: return "cycle_2d";
    case Term::Entropy: return "entropy";
    case Term::Surface: return "surface";
    case Term::Cluster: return "cluster";
    case Term::Conformal: return "conformal";
    case Term::Stretch: return "stretch";
    case Term::Texture: return "texture";
  }
  return "?";
}

double LossWeights::operator[](Term term) const { return const_cast<LossWeights&>(*this)[term]; }

double& LossWeights::operator[](Term term) {
  switch (term) {
    case Term::Cycle3D: return cycle_3d;
    case Term::Cycle2D: return cycle_2d;
    case Term::Entropy: return entropy;
    case Term::Surface: return surface;
    case Term::Cluster: return cluster;
    case Term::Conformal: return conformal;
    case Term::Stretch: return stretch;
    case Term::Texture: return texture;
  }
  throw ContractViolation("LossWeights: unknown term");
}

bool LossWeights::valid() const {
  for (Term t : kAllTerms) {
    const double w = (*this)[t];
    if (!std::isfinite(w) || w < 0.0) return false;
  }
  return true;
}

template <typename Scalar>
LossBuilder<Scalar>::LossBuilder(ad::Graph<Scalar>& graph, AtlasModel& model, const Batch& batch, double epsilon)
    : g_(graph), model_(model), batch_(batch), epsilon_(epsilon) {
  nb_ = batch.surface.size();
  nu_ = batch.uv.size();
  const auto n = static_cast<std::size_t>(model.charts());
  block_.resize(n);
  uv_.resize(n);
  probe_p_.resize(n);
  probe_q_.resize(n);
  mapped_uv_.resize(n);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::points() {
  if (!points_) {
    if (nb_ == 0) throw ContractViolation("loss: surface batch is empty");
    Mat x(3, static_cast<Eigen::Index>(nb_));
    for (std::size_t b = 0; b < nb_; ++b) x.col(static_cast<Eigen::Index>(b)) = batch_.surface[b].x.cast<Scalar>();
    points_ = g_.constant(std::move(x));
  }
  return *points_;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::uv_points() {
  if (!uv_points_) {
    if (nu_ == 0) throw ContractViolation("loss: uv batch is empty");
    Mat u(2, static_cast<Eigen::Index>(nu_));
    for (std::size_t b = 0; b < nu_; ++b) u.col(static_cast<Eigen::Index>(b)) = batch_.uv[b].cast<Scalar>();
    uv_points_ = g_.constant(std::move(u));
  }
  return *uv_points_;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::pmf_surface() {
  if (!pmf_surface_) pmf_surface_ = chart_pmf_node(g_, model_, points());
  return *pmf_surface_;
}

// t_i evaluated once over [x | x + eps p | x + eps q].
template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::texture_block(int chart) {
  auto& slot = block_.at(static_cast<std::size_t>(chart));
  if (!slot) {
    const ad::NodeId x = points();
    const auto B = static_cast<Eigen::Index>(nb_);
    Mat stacked(3, 3 * B);
    stacked.leftCols(B) = g_.value(x);
    for (std::size_t b = 0; b < nb_; ++b) {
      const SurfaceSample& s = batch_.surface[b];
      const auto c = static_cast<Eigen::Index>(b);
      stacked.col(B + c) = (s.x + epsilon_ * s.tangent_p).template cast<Scalar>();
      stacked.col(2 * B + c) = (s.x + epsilon_ * s.tangent_q).template cast<Scalar>();
    }
    slot = texture_coord_node(g_, model_, chart, g_.constant(std::move(stacked)));
  }
  return *slot;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::uv(int chart) {
  auto& slot = uv_.at(static_cast<std::size_t>(chart));
  if (!slot) slot = g_.slice_cols(texture_block(chart), 0, static_cast<Eigen::Index>(nb_));
  return *slot;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::probe_p(int chart) {
  auto& slot = probe_p_.at(static_cast<std::size_t>(chart));
  if (!slot) {
    const auto B = static_cast<Eigen::Index>(nb_);
    slot = g_.sub(g_.slice_cols(texture_block(chart), B, B), uv(chart));
  }
  return *slot;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::probe_q(int chart) {
  auto& slot = probe_q_.at(static_cast<std::size_t>(chart));
  if (!slot) {
    const auto B = static_cast<Eigen::Index>(nb_);
    slot = g_.sub(g_.slice_cols(texture_block(chart), 2 * B, B), uv(chart));
  }
  return *slot;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::mapped_uv(int chart) {
  auto& slot = mapped_uv_.at(static_cast<std::size_t>(chart));
  if (!slot) slot = surface_coord_node(g_, model_, chart, uv_points());
  return *slot;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::mapped_union() {
  if (!mapped_union_) {
    std::vector<ad::NodeId> parts;
    for (int i = 0; i < model_.charts(); ++i) parts.push_back(mapped_uv(i));
    mapped_union_ = parts.size() == 1 ? parts[0] : g_.concat_cols(parts);
  }
  return *mapped_union_;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::pmf_union() {
  if (!pmf_union_) pmf_union_ = chart_pmf_node(g_, model_, mapped_union());
  return *pmf_union_;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::add_all(const std::vector<ad::NodeId>& scalars) {
  ad::NodeId acc = scalars.at(0);
  for (std::size_t k = 1; k < scalars.size(); ++k) acc = g_.add(acc, scalars[k]);
  return acc;
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::cycle_3d() {
  std::vector<ad::NodeId> per_chart;
  for (int i = 0; i < model_.charts(); ++i) {
    const ad::NodeId back = surface_coord_node(g_, model_, i, uv(i));
    const ad::NodeId dist = g_.squared_norm(g_.sub(back, points()));
    per_chart.push_back(g_.mean(g_.mul(g_.row(pmf_surface(), i), dist)));
  }
  return add_all(per_chart);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::cycle_2d() {
  std::vector<ad::NodeId> per_chart;
  for (int i = 0; i < model_.charts(); ++i) {
    const ad::NodeId back = texture_coord_node(g_, model_, i, mapped_uv(i));
    per_chart.push_back(g_.mean(g_.squared_norm(g_.sub(back, uv_points()))));
  }
  return add_all(per_chart);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::entropy() {
  const ad::NodeId pmf = pmf_union();
  const auto U = static_cast<Eigen::Index>(nu_);
  std::vector<ad::NodeId> per_chart;
  for (int i = 0; i < model_.charts(); ++i) {
    const ad::NodeId slice = model_.charts() == 1 ? pmf : g_.slice_cols(pmf, i * U, U);
    per_chart.push_back(g_.cross_entropy(slice, i, kPmfFloor));
  }
  return add_all(per_chart);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::surface() {
  const ad::NodeId x = points();
  const ad::NodeId mapped = mapped_union();
  return g_.add(g_.min_sq_dist(x, mapped), g_.min_sq_dist(mapped, x));
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::cluster() {
  const ad::NodeId pmf = pmf_surface();
  // Centroids from the current PMF values, held constant for the gradient.
  const Eigen::MatrixXd c = g_.value(pmf).template cast<double>();
  const Eigen::MatrixXd x = g_.value(points()).template cast<double>();
  const Eigen::Index n = c.rows(), B = c.cols();
  Eigen::MatrixXd dist(n, B);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mass = c.row(i).sum();
    if (mass < kClusterMassFloor) {
      dist.row(i).setZero();
      continue;
    }
    const Eigen::Vector3d mu = (x * c.row(i).transpose()) / mass;
    dist.row(i) = (x.colwise() - mu).colwise().squaredNorm();
  }
  return g_.scale(g_.sum(g_.mul_const(pmf, dist.cast<Scalar>())), 1.0 / static_cast<double>(B));
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::conformal() {
  std::vector<ad::NodeId> per_chart;
  for (int i = 0; i < model_.charts(); ++i) {
    const ad::NodeId a = probe_p(i), b = probe_q(i);
    const ad::NodeId norms = g_.sqrt(g_.max_const(g_.mul(g_.squared_norm(a), g_.squared_norm(b)), kNormFloor * kNormFloor));
    const ad::NodeId cos2 = g_.square(g_.div(g_.dot(a, b), norms));
    per_chart.push_back(g_.mean(g_.mul(g_.row(pmf_surface(), i), cos2)));
  }
  return add_all(per_chart);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::stretch() {
  const ad::NodeId sigma = g_.param(model_.sigma());
  std::vector<ad::NodeId> per_chart;
  for (int i = 0; i < model_.charts(); ++i) {
    const ad::NodeId area = g_.abs(g_.cross2(probe_p(i), probe_q(i)));
    const ad::NodeId dev = g_.square(g_.sub(area, sigma));
    per_chart.push_back(g_.mean(g_.mul(g_.row(pmf_surface(), i), dev)));
  }
  return add_all(per_chart);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::texture() {
  const auto B = static_cast<Eigen::Index>(nb_);
  Mat normals(3, B);
  for (std::size_t b = 0; b < nb_; ++b)
    normals.col(static_cast<Eigen::Index>(b)) = batch_.surface[b].normal.template cast<Scalar>();
  const ad::NodeId target = g_.constant(std::move(normals));
  std::vector<ad::NodeId> per_chart;
  for (int i = 0; i < model_.charts(); ++i) {
    const ad::NodeId lookup = normal_lookup_node(g_, model_, i, uv(i));
    const ad::NodeId err = g_.squared_norm(g_.sub(lookup, target));
    per_chart.push_back(g_.mean(g_.mul(g_.row(pmf_surface(), i), err)));
  }
  return add_all(per_chart);
}

template <typename Scalar>
ad::NodeId LossBuilder<Scalar>::term(Term t) {
  switch (t) {
    case Term::Cycle3D: return cycle_3d();
    case Term::Cycle2D: return cycle_2d();
    case Term::Entropy: return entropy();
    case Term::Surface: return surface();
    case Term::Cluster: return cluster();
    case Term::Conformal: return conformal();
    case Term::Stretch: return stretch();
    case Term::Texture: return texture();
  }
  throw ContractViolation("loss: unknown term");
}

template class LossBuilder<float>;
template class LossBuilder<double>;

template <typename Scalar>
LossEvaluation total_loss(ad::Graph<Scalar>& graph, AtlasModel& model, const Batch& batch, const LossWeights& weights,
                          double epsilon) {
  if (!weights.valid()) throw ContractViolation("total_loss: weights must be finite and non-negative");
  LossBuilder<Scalar> builder(graph, model, batch, epsilon);
  LossEvaluation eval;
  for (Term t : kAllTerms) {
    const auto k = static_cast<std::size_t>(t);
    eval.terms[k] = builder.term(t);
    eval.values[k] = static_cast<double>(graph.scalar(eval.terms[k]));
    if (!std::isfinite(eval.values[k]))
      throw NumericFault("non-finite loss term " + std::string(term_name(t)), -1, std::string(term_name(t)));
  }
  ad::NodeId total = graph.scale(eval.terms[0], weights[kAllTerms[0]]);
  for (std::size_t k = 1; k < kAllTerms.size(); ++k)
    total = graph.add(total, graph.scale(eval.terms[k], weights[kAllTerms[k]]));
  eval.total = total;
  eval.total_value = weighted_sum(eval.values, weights);
  return eval;
}

template LossEvaluation total_loss<float>(ad::Graph<float>&, AtlasModel&, const Batch&, const LossWeights&, double);
template LossEvaluation total_loss<double>(ad::Graph<double>&, AtlasModel&, const Batch&, const LossWeights&, double);

double weighted_sum(const std::array<double, kTermCount>& values, const LossWeights& weights) {
  double total = 0.0;
  for (Term t : kAllTerms) total += weights[t] * values[static_cast<std::size_t>(t)];
  return total;
}

double evaluate_term(AtlasModel& model, const Batch& batch, Term term, double epsilon) {
  ad::Graph<double> graph;
  LossBuilder<double> builder(graph, model, batch, epsilon);
  return graph.scalar(builder.term(term));
}

DifferentialProbe differential_probe(AtlasModel& model, int chart, const SurfaceSample& sample, double epsilon) {
  Batch batch;
  batch.surface.push_back(sample);
  ad::Graph<double> graph;
  LossBuilder<double> builder(graph, model, batch, epsilon);
  DifferentialProbe probe;
  probe.epsilon = epsilon;
  probe.du_p = graph.value(builder.probe_p(chart)).col(0);
  probe.du_q = graph.value(builder.probe_q(chart)).col(0);
  return probe;
}

}  // namespace uvfield
