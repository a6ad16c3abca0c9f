#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace uvfield::ad {

/// Trainable tensor. Values are stored in 32-bit; gradients accumulate in 64-bit.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::string name;
  Eigen::MatrixXf values;
  Eigen::MatrixXd gradient;
  Eigen::MatrixXf adam_m;
  Eigen::MatrixXf adam_v;
  std::size_t skipped_steps = 0;

  Eigen::Index size() const { return values.size(); }
  void zero_grad() { gradient.setZero(); }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. A non-finite gradient leaves the parameter
/// and its moments untouched, bumps `skipped_steps` and returns false.
bool adam_step(Parameter& param, double lr, const AdamConfig& config, long step);

/// base_lr * (1 + cos(pi * step / total_steps)) / 2, with step clamped to total_steps.
double cosine_decay_lr(double base_lr, long step, long total_steps);

/// Handle to a node in a Graph.
struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

enum class Op : std::uint8_t {
  Constant,
  Param,
  Affine,
  Relu,
  Sigmoid,
  Softmax,
  Sin,
  Cos,
  Encode,
  Add,
  Sub,
  Mul,
  Div,
  Square,
  Sqrt,
  Abs,
  MaxConst,
  ScaleConst,
  MulConst,
  SliceCols,
  ConcatCols,
  Row,
  SquaredNorm,
  Dot,
  Cross2,
  Sum,
  Mean,
  CrossEntropy,
  MinSqDist,
  Bilinear,
};

const char* op_name(Op op);

/// Reverse-mode graph over column-batched matrices (features x batch).
///
/// Nodes are appended in evaluation order, so the node list is topologically
/// sorted by construction and backward() walks it in reverse. reset() keeps the
/// node storage, so rebuilding the same topology every iteration reuses the
/// matrices allocated by the previous pass.
template <typename Scalar>
class Graph {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void reset();
  std::size_t size() const { return size_; }

  NodeId constant(const Mat& value);
  NodeId constant(Mat&& value);
  /// Leaf bound to a Parameter. Repeated calls for the same Parameter return the same node.
  NodeId param(Parameter& p);

  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  /// Column-wise softmax.
  NodeId softmax(NodeId x);
  NodeId sin(NodeId x);
  NodeId cos(NodeId x);
  /// Per component c: [x_c, sin(2^j pi x_c), cos(2^j pi x_c) for j < degree].
  NodeId encode(NodeId x, int degree, bool include_input);

  NodeId add(NodeId a, NodeId b);
  /// a - b; b may be 1x1 and is then broadcast.
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId square(NodeId x);
  NodeId sqrt(NodeId x);
  NodeId abs(NodeId x);
  /// max(x, floor); no gradient where the floor is active.
  NodeId max_const(NodeId x, double floor);
  NodeId scale(NodeId x, double factor);
  /// Elementwise product with a constant matrix (gradient stopped on the constant).
  NodeId mul_const(NodeId x, const Mat& c);

  NodeId slice_cols(NodeId x, Eigen::Index start, Eigen::Index count);
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId row(NodeId x, Eigen::Index r);

  /// Column-wise squared Euclidean norm: k x B -> 1 x B.
  NodeId squared_norm(NodeId x);
  /// Column-wise dot product: k x B, k x B -> 1 x B.
  NodeId dot(NodeId a, NodeId b);
  /// Column-wise 2D cross product a.x*b.y - a.y*b.x: 2 x B -> 1 x B.
  NodeId cross2(NodeId a, NodeId b);

  /// Sum of all entries (64-bit accumulation).
  NodeId sum(NodeId x);
  /// Mean of all entries (64-bit accumulation).
  NodeId mean(NodeId x);
  /// -mean_b log(max(p[cls, b], floor)) over the columns of a PMF matrix.
  NodeId cross_entropy(NodeId pmf, Eigen::Index cls, double floor = 1e-12);
  /// mean over query columns of min over reference columns of squared distance.
  /// The nearest neighbour (lowest index on ties) is fixed per evaluation.
  NodeId min_sq_dist(NodeId query, NodeId reference);
  /// Bilinear lookup with edge clamping into a grid stored as C x (res*res),
  /// texel (ix, iy) at column iy*res + ix with center ((ix+.5)/res, (iy+.5)/res).
  NodeId bilinear(NodeId grid, NodeId uv, int res);

  const Mat& value(NodeId id) const { return nodes_[check(id)].value; }
  Scalar scalar(NodeId id) const;
  /// Gradient of the last backward() output with respect to this node (empty if unreached).
  Mat grad(NodeId id) const {
    const Node& n = nodes_[check(id)];
    return n.has_grad ? n.grad : Mat();
  }
  Op op(NodeId id) const { return nodes_[check(id)].op; }

  /// Accumulates d(output)/d(values) into every bound Parameter's gradient.
  /// Throws ContractViolation if output is not 1x1 and NumericFault naming the
  /// first node with a non-finite value.
  void backward(NodeId output);

 private:
  struct Node {
    Op op = Op::Constant;
    int a = -1, b = -1;
    std::vector<int> parts;
    Mat value;
    Mat grad;
    bool has_grad = false;
    double constant = 0.0;
    Eigen::Index ia = 0, ib = 0;
    Parameter* param = nullptr;
    std::vector<Eigen::Index> index;
    Mat aux;
  };

  int check(NodeId id) const;
  Node& push(Op op, int a = -1, int b = -1);
  Mat& grad_of(int i);
  // Adds e to node i's gradient; the first contribution is assigned, skipping the zero fill.
  template <typename Expr>
  void accumulate(int i, const Expr& e) {
    Node& n = nodes_[i];
    if (n.has_grad) {
      n.grad.noalias() += e;
    } else {
      n.grad.noalias() = e;
      n.has_grad = true;
    }
  }
  void backprop(int i);

  std::vector<Node> nodes_;
  std::size_t size_ = 0;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace uvfield::ad
