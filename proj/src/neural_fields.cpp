#include "uvfield/neural_fields.hpp"

#include <cmath>
#include <numbers>

#include "uvfield/errors.hpp"
#include "uvfield/random.hpp"

namespace uvfield {

Mlp::Mlp(std::string name, int in_dim, int out_dim, int layers, int width) : in_dim_(in_dim), out_dim_(out_dim) {
  if (layers < 2) throw ContractViolation("Mlp: need at least 2 layers");
  if (width < 1 || in_dim < 1 || out_dim < 1) throw ContractViolation("Mlp: dimensions must be positive");
  int fan_in = in_dim;
  for (int l = 0; l < layers; ++l) {
    const int fan_out = l + 1 == layers ? out_dim : width;
    weights_.emplace_back(name + ".w" + std::to_string(l), fan_out, fan_in);
    biases_.emplace_back(name + ".b" + std::to_string(l), fan_out, 1);
    fan_in = fan_out;
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    count += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  return count;
}

Eigen::MatrixXf Mlp::evaluate(const Eigen::MatrixXf& input) const {
  if (input.rows() != in_dim_) throw ContractViolation("Mlp::evaluate: input dimension mismatch");
  Eigen::MatrixXf h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXf next;
    next.noalias() = weights_[l].values * h;
    next.colwise() += biases_[l].values.col(0);
    if (l + 1 < weights_.size()) next = next.cwiseMax(0.0f);
    h = std::move(next);
  }
  return h;
}

template <typename Scalar>
ad::NodeId Mlp::forward(ad::Graph<Scalar>& graph, ad::NodeId input) {
  ad::NodeId h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = graph.affine(h, graph.param(weights_[l]), graph.param(biases_[l]));
    if (l + 1 < weights_.size()) h = graph.relu(h);
  }
  return h;
}

template ad::NodeId Mlp::forward<float>(ad::Graph<float>&, ad::NodeId);
template ad::NodeId Mlp::forward<double>(ad::Graph<double>&, ad::NodeId);

int encoded_dim(int k, int degree, bool include_input) { return k * ((include_input ? 1 : 0) + 2 * degree); }

AtlasModel::AtlasModel(const ModelConfig& config) : config_(config) {
  if (config.charts < 1) throw ContractViolation("AtlasModel: chart count must be >= 1");
  if (config.texture_res < 1) throw ContractViolation("AtlasModel: texture resolution must be >= 1");
  if (config.pe_degree_chart < 1 || config.pe_degree_map < 1)
    throw ContractViolation("AtlasModel: encoding degrees must be >= 1");
  const int in3_c = encoded_dim(3, config.pe_degree_chart, config.include_input);
  const int in3_t = encoded_dim(3, config.pe_degree_map, config.include_input);
  const int in2_s = encoded_dim(2, config.pe_degree_map, config.include_input);
  chart_ = Mlp("c", in3_c, config.charts, config.layers, config.width);
  for (int i = 0; i < config.charts; ++i)
    texture_.emplace_back("t" + std::to_string(i), in3_t, 2, config.layers, config.width);
  for (int i = 0; i < config.charts; ++i)
    surface_.emplace_back("s" + std::to_string(i), in2_s, 3, config.layers, config.width);
  sigma_ = ad::Parameter("sigma", 1, 1);
  const Eigen::Index texels = static_cast<Eigen::Index>(config.texture_res) * config.texture_res;
  for (int i = 0; i < config.charts; ++i) normals_.emplace_back("N" + std::to_string(i), 3, texels);
}

namespace {
void check_chart(const AtlasModel& m, int i) {
  if (i < 0 || i >= m.charts())
    throw ContractViolation("chart index " + std::to_string(i) + " out of range [0, " + std::to_string(m.charts()) +
                            ")");
}
}  // namespace

Mlp& AtlasModel::texture_field(int i) {
  check_chart(*this, i);
  return texture_[static_cast<std::size_t>(i)];
}
Mlp& AtlasModel::surface_field(int i) {
  check_chart(*this, i);
  return surface_[static_cast<std::size_t>(i)];
}
const Mlp& AtlasModel::texture_field(int i) const {
  check_chart(*this, i);
  return texture_[static_cast<std::size_t>(i)];
}
const Mlp& AtlasModel::surface_field(int i) const {
  check_chart(*this, i);
  return surface_[static_cast<std::size_t>(i)];
}
ad::Parameter& AtlasModel::normal_grid(int i) {
  check_chart(*this, i);
  return normals_[static_cast<std::size_t>(i)];
}
const ad::Parameter& AtlasModel::normal_grid(int i) const {
  check_chart(*this, i);
  return normals_[static_cast<std::size_t>(i)];
}

std::vector<ad::Parameter*> AtlasModel::parameters() {
  std::vector<ad::Parameter*> out;
  auto add_mlp = [&](Mlp& m) {
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
      out.push_back(&m.weight(l));
      out.push_back(&m.bias(l));
    }
  };
  add_mlp(chart_);
  for (Mlp& m : texture_) add_mlp(m);
  for (Mlp& m : surface_) add_mlp(m);
  out.push_back(&sigma_);
  for (ad::Parameter& p : normals_) out.push_back(&p);
  return out;
}

std::vector<const ad::Parameter*> AtlasModel::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (ad::Parameter* p : const_cast<AtlasModel*>(this)->parameters()) out.push_back(p);
  return out;
}

Eigen::MatrixXf positional_encoding(const Eigen::MatrixXf& x, int degree, bool include_input) {
  if (degree < 1) throw ContractViolation("positional_encoding: degree must be >= 1");
  const Eigen::Index block = (include_input ? 1 : 0) + 2 * degree;
  Eigen::MatrixXf out(x.rows() * block, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index k = 0; k < x.rows(); ++k) {
      float* o = out.col(c).data() + k * block;
      const float v = x(k, c);
      if (include_input) *o++ = v;
      float freq = std::numbers::pi_v<float>;
      for (int j = 0; j < degree; ++j) {
        *o++ = std::sin(freq * v);
        *o++ = std::cos(freq * v);
        freq *= 2.0f;
      }
    }
  }
  return out;
}

AtlasModel init_model(const ModelConfig& config, std::uint64_t seed) {
  AtlasModel model(config);
  Rng rng(seed);
  // Hidden layers: U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias. Output layer:
  // zero for c and t_i, 0.1x the hidden bound for s_i.
  auto init_mlp = [&](Mlp& mlp, double output_scale) {
    for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
      ad::Parameter& w = mlp.weight(l);
      const bool output = l + 1 == mlp.layer_count();
      const double scale = output ? output_scale : 1.0;
      if (scale == 0.0) continue;
      const double bound = scale * std::sqrt(6.0 / static_cast<double>(w.values.cols()));
      for (Eigen::Index r = 0; r < w.values.rows(); ++r)
        for (Eigen::Index c = 0; c < w.values.cols(); ++c)
          w.values(r, c) = static_cast<float>(rng.uniform(-bound, bound));
    }
  };
  init_mlp(model.chart_field(), 0.0);
  for (int i = 0; i < model.charts(); ++i) init_mlp(model.texture_field(i), 0.0);
  for (int i = 0; i < model.charts(); ++i) init_mlp(model.surface_field(i), 0.1);
  model.sigma().values(0, 0) = 1.0f;
  for (int i = 0; i < model.charts(); ++i) {
    ad::Parameter& grid = model.normal_grid(i);
    grid.values.row(0).setZero();
    grid.values.row(1).setZero();
    grid.values.row(2).setOnes();
  }
  return model;
}

namespace {
Eigen::MatrixXf softmax_cols(const Eigen::MatrixXf& logits) {
  Eigen::MatrixXf out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const float mx = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - mx).exp();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}
}  // namespace

Eigen::MatrixXf chart_pmf(const AtlasModel& model, const Eigen::MatrixXf& x) {
  const ModelConfig& cfg = model.config();
  return softmax_cols(model.chart_field().evaluate(positional_encoding(x, cfg.pe_degree_chart, cfg.include_input)));
}

Eigen::VectorXf chart_pmf(const AtlasModel& model, const Eigen::Vector3f& x) {
  return chart_pmf(model, Eigen::MatrixXf(x)).col(0);
}

Eigen::MatrixXf texture_coord(const AtlasModel& model, int chart, const Eigen::MatrixXf& x) {
  const ModelConfig& cfg = model.config();
  const Eigen::MatrixXf raw =
      model.texture_field(chart).evaluate(positional_encoding(x, cfg.pe_degree_map, cfg.include_input));
  return raw.unaryExpr([](float v) { return 1.0f / (1.0f + std::exp(-v)); });
}

Eigen::Vector2f texture_coord(const AtlasModel& model, int chart, const Eigen::Vector3f& x) {
  return texture_coord(model, chart, Eigen::MatrixXf(x)).col(0);
}

Eigen::MatrixXf surface_coord(const AtlasModel& model, int chart, const Eigen::MatrixXf& u) {
  const ModelConfig& cfg = model.config();
  return model.surface_field(chart).evaluate(positional_encoding(u, cfg.pe_degree_map, cfg.include_input));
}

Eigen::Vector3f surface_coord(const AtlasModel& model, int chart, const Eigen::Vector2f& u) {
  return surface_coord(model, chart, Eigen::MatrixXf(u)).col(0);
}

Eigen::Vector3f normal_texture_lookup(const AtlasModel& model, int chart, const Eigen::Vector2f& u) {
  const ad::Parameter& grid = model.normal_grid(chart);
  const int res = model.texture_res();
  const double max_coord = res - 1;
  const double fx = std::clamp(static_cast<double>(u.x()) * res - 0.5, 0.0, max_coord);
  const double fy = std::clamp(static_cast<double>(u.y()) * res - 0.5, 0.0, max_coord);
  const int x0 = std::min(static_cast<int>(std::floor(fx)), res - 1);
  const int y0 = std::min(static_cast<int>(std::floor(fy)), res - 1);
  const int x1 = std::min(x0 + 1, res - 1);
  const int y1 = std::min(y0 + 1, res - 1);
  const float wx = static_cast<float>(fx - x0), wy = static_cast<float>(fy - y0);
  auto texel = [&](int x, int y) -> Eigen::Vector3f { return grid.values.col(y * res + x); };
  return (1.0f - wy) * ((1.0f - wx) * texel(x0, y0) + wx * texel(x1, y0)) +
         wy * ((1.0f - wx) * texel(x0, y1) + wx * texel(x1, y1));
}

template <typename Scalar>
ad::NodeId chart_pmf_node(ad::Graph<Scalar>& graph, AtlasModel& model, ad::NodeId x) {
  const ModelConfig& cfg = model.config();
  const ad::NodeId enc = graph.encode(x, cfg.pe_degree_chart, cfg.include_input);
  return graph.softmax(model.chart_field().forward(graph, enc));
}

template <typename Scalar>
ad::NodeId texture_coord_node(ad::Graph<Scalar>& graph, AtlasModel& model, int chart, ad::NodeId x) {
  const ModelConfig& cfg = model.config();
  const ad::NodeId enc = graph.encode(x, cfg.pe_degree_map, cfg.include_input);
  return graph.sigmoid(model.texture_field(chart).forward(graph, enc));
}

template <typename Scalar>
ad::NodeId surface_coord_node(ad::Graph<Scalar>& graph, AtlasModel& model, int chart, ad::NodeId u) {
  const ModelConfig& cfg = model.config();
  const ad::NodeId enc = graph.encode(u, cfg.pe_degree_map, cfg.include_input);
  return model.surface_field(chart).forward(graph, enc);
}

template <typename Scalar>
ad::NodeId normal_lookup_node(ad::Graph<Scalar>& graph, AtlasModel& model, int chart, ad::NodeId u) {
  return graph.bilinear(graph.param(model.normal_grid(chart)), u, model.texture_res());
}

#define UVFIELD_INSTANTIATE(S)                                                            \
  template ad::NodeId chart_pmf_node<S>(ad::Graph<S>&, AtlasModel&, ad::NodeId);          \
  template ad::NodeId texture_coord_node<S>(ad::Graph<S>&, AtlasModel&, int, ad::NodeId); \
  template ad::NodeId surface_coord_node<S>(ad::Graph<S>&, AtlasModel&, int, ad::NodeId); \
  template ad::NodeId normal_lookup_node<S>(ad::Graph<S>&, AtlasModel&, int, ad::NodeId);
UVFIELD_INSTANTIATE(float)
UVFIELD_INSTANTIATE(double)
#undef UVFIELD_INSTANTIATE

}  // namespace uvfield
