#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uvfield/autodiff.hpp"

namespace uvfield {

/// Uniform scale + translation taking input coordinates into the training frame.
struct Similarity {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return (p - center) * scale; }
  Eigen::Vector3d invert(const Eigen::Vector3d& p) const { return p / scale + center; }
};

struct ModelConfig {
  int charts = 4;
  int layers = 8;  // fully-connected layers per MLP, including the output layer
  int width = 256;
  int pe_degree_chart = 1;
  int pe_degree_map = 4;
  bool include_input = true;
  int texture_res = 128;
};

enum class Head : std::uint8_t { Linear, Sigmoid, Softmax };

/// Plain ReLU multilayer perceptron: in -> width -> ... -> width -> out.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, int in_dim, int out_dim, int layers, int width);

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  std::size_t layer_count() const { return weights_.size(); }
  std::size_t parameter_count() const;

  ad::Parameter& weight(std::size_t layer) { return weights_[layer]; }
  ad::Parameter& bias(std::size_t layer) { return biases_[layer]; }
  const ad::Parameter& weight(std::size_t layer) const { return weights_[layer]; }
  const ad::Parameter& bias(std::size_t layer) const { return biases_[layer]; }

  /// Pre-head outputs (out_dim x B) for inputs (in_dim x B), no graph.
  Eigen::MatrixXf evaluate(const Eigen::MatrixXf& input) const;

  template <typename Scalar>
  ad::NodeId forward(ad::Graph<Scalar>& graph, ad::NodeId input);

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  std::vector<ad::Parameter> weights_;
  std::vector<ad::Parameter> biases_;
};

/// Chart assignment field, per-chart texture and surface fields, the average
/// stretch scalar and per-chart normal grids. Chart indices are 0-based.
class AtlasModel {
 public:
  AtlasModel() = default;
  explicit AtlasModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  int charts() const { return config_.charts; }
  int texture_res() const { return config_.texture_res; }
  std::size_t mlp_count() const { return 2 * texture_.size() + 1; }

  Mlp& chart_field() { return chart_; }
  Mlp& texture_field(int i);
  Mlp& surface_field(int i);
  const Mlp& chart_field() const { return chart_; }
  const Mlp& texture_field(int i) const;
  const Mlp& surface_field(int i) const;
  ad::Parameter& sigma() { return sigma_; }
  const ad::Parameter& sigma() const { return sigma_; }
  /// 3 x (res*res) grid, texel (ix, iy) in column iy*res + ix.
  ad::Parameter& normal_grid(int i);
  const ad::Parameter& normal_grid(int i) const;

  /// Every trainable tensor in checkpoint order: c, t_1..t_n, s_1..s_n, sigma, N_1..N_n.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

  Similarity normalization;
  /// 0 = fitted to a mesh, 1 = fitted to a point cloud.
  std::uint32_t source_kind = 0;

 private:
  ModelConfig config_;
  Mlp chart_;
  std::vector<Mlp> texture_;
  std::vector<Mlp> surface_;
  ad::Parameter sigma_;
  std::vector<ad::Parameter> normals_;
};

/// Encoded width for a k-dimensional input.
int encoded_dim(int k, int degree, bool include_input);

/// Per component [x, sin(2^j pi x), cos(2^j pi x) for j < degree]; columns are points.
Eigen::MatrixXf positional_encoding(const Eigen::MatrixXf& x, int degree, bool include_input = true);

/// Deterministic initialization; see README for the weight scheme.
AtlasModel init_model(const ModelConfig& config, std::uint64_t seed);

/// PMF over charts for each column of x (3 x B) -> n x B.
Eigen::MatrixXf chart_pmf(const AtlasModel& model, const Eigen::MatrixXf& x);
Eigen::VectorXf chart_pmf(const AtlasModel& model, const Eigen::Vector3f& x);
/// t_i(x): 3 x B -> 2 x B, each entry in (0, 1).
Eigen::MatrixXf texture_coord(const AtlasModel& model, int chart, const Eigen::MatrixXf& x);
Eigen::Vector2f texture_coord(const AtlasModel& model, int chart, const Eigen::Vector3f& x);
/// s_i(u): 2 x B -> 3 x B.
Eigen::MatrixXf surface_coord(const AtlasModel& model, int chart, const Eigen::MatrixXf& u);
Eigen::Vector3f surface_coord(const AtlasModel& model, int chart, const Eigen::Vector2f& u);
/// Bilinear lookup of N_i at u with clamp-to-edge.
Eigen::Vector3f normal_texture_lookup(const AtlasModel& model, int chart, const Eigen::Vector2f& u);

// Graph builders used by the losses. Inputs are 3 x B (points) or 2 x B (uv).
template <typename Scalar>
ad::NodeId chart_pmf_node(ad::Graph<Scalar>& graph, AtlasModel& model, ad::NodeId x);
template <typename Scalar>
ad::NodeId texture_coord_node(ad::Graph<Scalar>& graph, AtlasModel& model, int chart, ad::NodeId x);
template <typename Scalar>
ad::NodeId surface_coord_node(ad::Graph<Scalar>& graph, AtlasModel& model, int chart, ad::NodeId u);
template <typename Scalar>
ad::NodeId normal_lookup_node(ad::Graph<Scalar>& graph, AtlasModel& model, int chart, ad::NodeId u);

/// Writes the binary checkpoint (magic "NUVO1", little-endian header, f32 parameters).
void save_checkpoint(const AtlasModel& model, const std::string& path);
/// Throws FormatError on magic/version mismatch or truncation, IoError if unreadable.
AtlasModel load_checkpoint(const std::string& path);

}  // namespace uvfield
