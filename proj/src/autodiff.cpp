#include "uvfield/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "uvfield/errors.hpp"

namespace uvfield::ad {

Parameter::Parameter(std::string name_, Eigen::Index rows, Eigen::Index cols)
    : name(std::move(name_)),
      values(Eigen::MatrixXf::Zero(rows, cols)),
      gradient(Eigen::MatrixXd::Zero(rows, cols)),
      adam_m(Eigen::MatrixXf::Zero(rows, cols)),
      adam_v(Eigen::MatrixXf::Zero(rows, cols)) {}

bool adam_step(Parameter& param, double lr, const AdamConfig& config, long step) {
  if (step < 1) throw ContractViolation("adam_step: step must be >= 1");
  if (param.gradient.rows() != param.values.rows() || param.gradient.cols() != param.values.cols())
    throw ContractViolation("adam_step: gradient shape mismatch for " + param.name);
  if (!param.gradient.allFinite()) {
    ++param.skipped_steps;
    return false;
  }
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  const auto g = param.gradient.array();
  const Eigen::ArrayXXd m = config.beta1 * param.adam_m.array().cast<double>() + (1.0 - config.beta1) * g;
  const Eigen::ArrayXXd v = config.beta2 * param.adam_v.array().cast<double>() + (1.0 - config.beta2) * g.square();
  param.adam_m = m.cast<float>().matrix();
  param.adam_v = v.cast<float>().matrix();
  const Eigen::ArrayXXd update = lr * (m / bc1) / ((v / bc2).sqrt() + config.eps);
  param.values = (param.values.array().cast<double>() - update).cast<float>().matrix();
  return true;
}

double cosine_decay_lr(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const double t = static_cast<double>(std::clamp(step, 0L, total_steps)) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Encode: return "encode";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::MaxConst: return "max_const";
    case Op::ScaleConst: return "scale";
    case Op::MulConst: return "mul_const";
    case Op::SliceCols: return "slice_cols";
    case Op::ConcatCols: return "concat_cols";
    case Op::Row: return "row";
    case Op::SquaredNorm: return "squared_norm";
    case Op::Dot: return "dot";
    case Op::Cross2: return "cross2";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::MinSqDist: return "min_sq_dist";
    case Op::Bilinear: return "bilinear";
  }
  return "?";
}

namespace {

// Shared bilinear addressing: clamp-to-edge over texel centers.
struct BilinearTap {
  Eigen::Index x0, x1, y0, y1;
  double wx, wy;
  bool clamped_x, clamped_y;
};

BilinearTap bilinear_tap(double u, double v, int res) {
  BilinearTap t{};
  const double max_coord = res - 1;
  double fx = u * res - 0.5;
  double fy = v * res - 0.5;
  t.clamped_x = !(fx > 0.0 && fx < max_coord);
  t.clamped_y = !(fy > 0.0 && fy < max_coord);
  fx = std::clamp(fx, 0.0, max_coord);
  fy = std::clamp(fy, 0.0, max_coord);
  t.x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(fx)), res - 1);
  t.y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(fy)), res - 1);
  t.x1 = std::min<Eigen::Index>(t.x0 + 1, res - 1);
  t.y1 = std::min<Eigen::Index>(t.y0 + 1, res - 1);
  t.wx = fx - static_cast<double>(t.x0);
  t.wy = fy - static_cast<double>(t.y0);
  return t;
}

}  // namespace

template <typename Scalar>
int Graph<Scalar>::check(NodeId id) const {
  if (id.index < 0 || static_cast<std::size_t>(id.index) >= size_)
    throw ContractViolation("graph: invalid node id " + std::to_string(id.index));
  return id.index;
}

template <typename Scalar>
void Graph<Scalar>::reset() {
  size_ = 0;
}

template <typename Scalar>
typename Graph<Scalar>::Node& Graph<Scalar>::push(Op op, int a, int b) {
  if (size_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[size_++];
  n.op = op;
  n.a = a;
  n.b = b;
  n.parts.clear();
  n.constant = 0.0;
  n.ia = n.ib = 0;
  n.param = nullptr;
  n.index.clear();
  n.has_grad = false;
  return n;
}

template <typename Scalar>
typename Graph<Scalar>::Mat& Graph<Scalar>::grad_of(int i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Scalar>
Scalar Graph<Scalar>::scalar(NodeId id) const {
  const Mat& v = value(id);
  if (v.size() != 1) throw ContractViolation("graph: node is not a scalar");
  return v(0, 0);
}

template <typename Scalar>
NodeId Graph<Scalar>::constant(const Mat& value) {
  Node& n = push(Op::Constant);
  n.value = value;
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::constant(Mat&& value) {
  Node& n = push(Op::Constant);
  n.value = std::move(value);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::param(Parameter& p) {
  for (std::size_t i = 0; i < size_; ++i)
    if (nodes_[i].op == Op::Param && nodes_[i].param == &p) return {static_cast<int>(i)};
  Node& n = push(Op::Param);
  n.param = &p;
  n.value = p.values.template cast<Scalar>();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::affine(NodeId x, NodeId weight, NodeId bias) {
  const int ix = check(x), iw = check(weight), ib = check(bias);
  if (nodes_[iw].value.cols() != nodes_[ix].value.rows() || nodes_[ib].value.rows() != nodes_[iw].value.rows() ||
      nodes_[ib].value.cols() != 1)
    throw ContractViolation("affine: shape mismatch");
  Node& n = push(Op::Affine);
  n.parts = {ix, iw, ib};
  const Mat& W = nodes_[iw].value;
  n.value.noalias() = W * nodes_[ix].value;
  n.value.colwise() += nodes_[ib].value.col(0);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::relu(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Relu, ix);
  n.value = nodes_[ix].value.cwiseMax(Scalar(0));
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::sigmoid(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Sigmoid, ix);
  n.value = nodes_[ix].value.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::softmax(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Softmax, ix);
  const Mat& in = nodes_[ix].value;
  n.value.resize(in.rows(), in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c) {
    const Scalar mx = in.col(c).maxCoeff();
    n.value.col(c) = (in.col(c).array() - mx).exp();
    n.value.col(c) /= n.value.col(c).sum();
  }
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::sin(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Sin, ix);
  n.value = nodes_[ix].value.array().sin().matrix();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::cos(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Cos, ix);
  n.value = nodes_[ix].value.array().cos().matrix();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::encode(NodeId x, int degree, bool include_input) {
  if (degree < 1) throw ContractViolation("encode: degree must be >= 1");
  const int ix = check(x);
  Node& n = push(Op::Encode, ix);
  n.ia = degree;
  n.ib = include_input ? 1 : 0;
  const Mat& in = nodes_[ix].value;
  const Eigen::Index block = n.ib + 2 * degree;
  n.value.resize(in.rows() * block, in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c) {
    for (Eigen::Index k = 0; k < in.rows(); ++k) {
      Scalar* out = n.value.col(c).data() + k * block;
      const Scalar v = in(k, c);
      if (include_input) *out++ = v;
      Scalar freq = static_cast<Scalar>(std::numbers::pi);
      for (int j = 0; j < degree; ++j) {
        *out++ = std::sin(freq * v);
        *out++ = std::cos(freq * v);
        freq *= Scalar(2);
      }
    }
  }
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::add(NodeId a, NodeId b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != nodes_[ib].value.rows() || nodes_[ia].value.cols() != nodes_[ib].value.cols())
    throw ContractViolation("add: shape mismatch");
  Node& n = push(Op::Add, ia, ib);
  n.value = nodes_[ia].value + nodes_[ib].value;
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::sub(NodeId a, NodeId b) {
  const int ia = check(a), ib = check(b);
  const Mat& va = nodes_[ia].value;
  const Mat& vb = nodes_[ib].value;
  const bool broadcast = vb.size() == 1 && va.size() != 1;
  if (!broadcast && (va.rows() != vb.rows() || va.cols() != vb.cols()))
    throw ContractViolation("sub: shape mismatch");
  Node& n = push(Op::Sub, ia, ib);
  n.ia = broadcast ? 1 : 0;
  if (broadcast)
    n.value = (nodes_[ia].value.array() - nodes_[ib].value(0, 0)).matrix();
  else
    n.value = nodes_[ia].value - nodes_[ib].value;
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::mul(NodeId a, NodeId b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != nodes_[ib].value.rows() || nodes_[ia].value.cols() != nodes_[ib].value.cols())
    throw ContractViolation("mul: shape mismatch");
  Node& n = push(Op::Mul, ia, ib);
  n.value = nodes_[ia].value.cwiseProduct(nodes_[ib].value);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::div(NodeId a, NodeId b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != nodes_[ib].value.rows() || nodes_[ia].value.cols() != nodes_[ib].value.cols())
    throw ContractViolation("div: shape mismatch");
  Node& n = push(Op::Div, ia, ib);
  n.value = nodes_[ia].value.cwiseQuotient(nodes_[ib].value);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::square(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Square, ix);
  n.value = nodes_[ix].value.cwiseAbs2();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::sqrt(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Sqrt, ix);
  n.value = nodes_[ix].value.cwiseSqrt();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::abs(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Abs, ix);
  n.value = nodes_[ix].value.cwiseAbs();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::max_const(NodeId x, double floor) {
  const int ix = check(x);
  Node& n = push(Op::MaxConst, ix);
  n.constant = floor;
  n.value = nodes_[ix].value.cwiseMax(static_cast<Scalar>(floor));
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::scale(NodeId x, double factor) {
  const int ix = check(x);
  Node& n = push(Op::ScaleConst, ix);
  n.constant = factor;
  n.value = nodes_[ix].value * static_cast<Scalar>(factor);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::mul_const(NodeId x, const Mat& c) {
  const int ix = check(x);
  if (nodes_[ix].value.rows() != c.rows() || nodes_[ix].value.cols() != c.cols())
    throw ContractViolation("mul_const: shape mismatch");
  Node& n = push(Op::MulConst, ix);
  n.aux = c;
  n.value = nodes_[ix].value.cwiseProduct(c);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::slice_cols(NodeId x, Eigen::Index start, Eigen::Index count) {
  const int ix = check(x);
  if (start < 0 || count < 0 || start + count > nodes_[ix].value.cols())
    throw ContractViolation("slice_cols: range out of bounds");
  Node& n = push(Op::SliceCols, ix);
  n.ia = start;
  n.ib = count;
  n.value = nodes_[ix].value.middleCols(start, count);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  std::vector<int> idx;
  Eigen::Index cols = 0;
  const Eigen::Index rows = nodes_[check(parts[0])].value.rows();
  for (NodeId p : parts) {
    const int i = check(p);
    if (nodes_[i].value.rows() != rows) throw ContractViolation("concat_cols: row mismatch");
    cols += nodes_[i].value.cols();
    idx.push_back(i);
  }
  Node& n = push(Op::ConcatCols);
  n.parts = std::move(idx);
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (int i : n.parts) {
    n.value.middleCols(at, nodes_[i].value.cols()) = nodes_[i].value;
    at += nodes_[i].value.cols();
  }
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::row(NodeId x, Eigen::Index r) {
  const int ix = check(x);
  if (r < 0 || r >= nodes_[ix].value.rows()) throw ContractViolation("row: index out of range");
  Node& n = push(Op::Row, ix);
  n.ia = r;
  n.value = nodes_[ix].value.row(r);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::squared_norm(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::SquaredNorm, ix);
  n.value = nodes_[ix].value.colwise().squaredNorm();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::dot(NodeId a, NodeId b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != nodes_[ib].value.rows() || nodes_[ia].value.cols() != nodes_[ib].value.cols())
    throw ContractViolation("dot: shape mismatch");
  Node& n = push(Op::Dot, ia, ib);
  n.value = nodes_[ia].value.cwiseProduct(nodes_[ib].value).colwise().sum();
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::cross2(NodeId a, NodeId b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != 2 || nodes_[ib].value.rows() != 2 ||
      nodes_[ia].value.cols() != nodes_[ib].value.cols())
    throw ContractViolation("cross2: expects two 2 x B inputs");
  Node& n = push(Op::Cross2, ia, ib);
  const Mat& va = nodes_[ia].value;
  const Mat& vb = nodes_[ib].value;
  n.value = va.row(0).cwiseProduct(vb.row(1)) - va.row(1).cwiseProduct(vb.row(0));
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::sum(NodeId x) {
  const int ix = check(x);
  Node& n = push(Op::Sum, ix);
  const double s = nodes_[ix].value.template cast<double>().sum();
  n.value.resize(1, 1);
  n.value(0, 0) = static_cast<Scalar>(s);
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::mean(NodeId x) {
  const int ix = check(x);
  if (nodes_[ix].value.size() == 0) throw ContractViolation("mean: empty input");
  Node& n = push(Op::Mean, ix);
  const double s = nodes_[ix].value.template cast<double>().sum();
  n.value.resize(1, 1);
  n.value(0, 0) = static_cast<Scalar>(s / static_cast<double>(nodes_[ix].value.size()));
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::cross_entropy(NodeId pmf, Eigen::Index cls, double floor) {
  const int ip = check(pmf);
  if (cls < 0 || cls >= nodes_[ip].value.rows()) throw ContractViolation("cross_entropy: class out of range");
  if (nodes_[ip].value.cols() == 0) throw ContractViolation("cross_entropy: empty batch");
  Node& n = push(Op::CrossEntropy, ip);
  const Mat& p = nodes_[ip].value;
  n.ia = cls;
  n.constant = floor;
  double s = 0.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) s -= std::log(std::max<double>(p(cls, c), floor));
  n.value.resize(1, 1);
  n.value(0, 0) = static_cast<Scalar>(s / static_cast<double>(p.cols()));
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::min_sq_dist(NodeId query, NodeId reference) {
  const int iq = check(query), ir = check(reference);
  if (nodes_[iq].value.rows() != nodes_[ir].value.rows() || nodes_[iq].value.cols() == 0 ||
      nodes_[ir].value.cols() == 0)
    throw ContractViolation("min_sq_dist: incompatible or empty point sets");
  Node& n = push(Op::MinSqDist, iq, ir);
  const Mat& q = nodes_[iq].value;
  const Mat& r = nodes_[ir].value;
  n.index.resize(static_cast<std::size_t>(q.cols()));
  const Eigen::Index dim = q.rows();
  double total = 0.0;
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    Eigen::Index best = 0;
    Scalar best_d = std::numeric_limits<Scalar>::infinity();
    const Scalar* qc = q.data() + c * dim;
    const Scalar* rk = r.data();
    for (Eigen::Index k = 0; k < r.cols(); ++k, rk += dim) {
      Scalar d = 0;
      for (Eigen::Index j = 0; j < dim; ++j) d += (qc[j] - rk[j]) * (qc[j] - rk[j]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    n.index[static_cast<std::size_t>(c)] = best;
    total += best_d;
  }
  n.value.resize(1, 1);
  n.value(0, 0) = static_cast<Scalar>(total / static_cast<double>(q.cols()));
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
NodeId Graph<Scalar>::bilinear(NodeId grid, NodeId uv, int res) {
  const int ig = check(grid), iu = check(uv);
  if (res < 1 || nodes_[ig].value.cols() != static_cast<Eigen::Index>(res) * res || nodes_[iu].value.rows() != 2)
    throw ContractViolation("bilinear: grid must be C x res^2 and uv 2 x B");
  Node& n = push(Op::Bilinear, ig, iu);
  const Mat& g = nodes_[ig].value;
  const Mat& u = nodes_[iu].value;
  n.ia = res;
  n.value.resize(g.rows(), u.cols());
  const Eigen::Index ch = g.rows();
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    const BilinearTap t = bilinear_tap(u(0, c), u(1, c), res);
    const Scalar wx = static_cast<Scalar>(t.wx), wy = static_cast<Scalar>(t.wy);
    const Scalar w00 = (Scalar(1) - wx) * (Scalar(1) - wy), w10 = wx * (Scalar(1) - wy);
    const Scalar w01 = (Scalar(1) - wx) * wy, w11 = wx * wy;
    const Scalar* p00 = g.data() + (t.y0 * res + t.x0) * ch;
    const Scalar* p10 = g.data() + (t.y0 * res + t.x1) * ch;
    const Scalar* p01 = g.data() + (t.y1 * res + t.x0) * ch;
    const Scalar* p11 = g.data() + (t.y1 * res + t.x1) * ch;
    Scalar* out = n.value.data() + c * ch;
    for (Eigen::Index r = 0; r < ch; ++r) out[r] = w00 * p00[r] + w10 * p10[r] + w01 * p01[r] + w11 * p11[r];
  }
  return {static_cast<int>(size_ - 1)};
}

template <typename Scalar>
void Graph<Scalar>::backward(NodeId output) {
  const int out = check(output);
  if (nodes_[out].value.size() != 1) throw ContractViolation("backward: output must be a scalar");
  // x * 0 is NaN exactly for non-finite x, and the product sum vectorizes where allFinite does not.
  for (int i = 0; i <= out; ++i) {
    if ((nodes_[i].value.array() * Scalar(0)).sum() != Scalar(0))
      throw NumericFault("non-finite forward value at node " + std::to_string(i) + " (" + op_name(nodes_[i].op) + ")");
  }
  for (int i = 0; i <= out; ++i) nodes_[i].has_grad = false;
  grad_of(out).setOnes();
  for (int i = out; i >= 0; --i) {
    if (!nodes_[i].has_grad) continue;
    backprop(i);
  }
}

template <typename Scalar>
void Graph<Scalar>::backprop(int i) {
  Node& n = nodes_[i];
  const Mat& g = n.grad;
  switch (n.op) {
    case Op::Constant:
      break;
    case Op::Param:
      n.param->gradient += g.template cast<double>();
      break;
    case Op::Affine: {
      const int ix = n.parts[0], iw = n.parts[1], ib = n.parts[2];
      accumulate(iw, g * nodes_[ix].value.transpose());
      accumulate(ib, g.rowwise().sum());
      if (nodes_[ix].op != Op::Constant) accumulate(ix, nodes_[iw].value.transpose() * g);
      break;
    }
    case Op::Relu:
      accumulate(n.a, (nodes_[n.a].value.array() > Scalar(0)).select(g, Scalar(0)).matrix());
      break;
    case Op::Sigmoid:
      accumulate(n.a, (g.array() * n.value.array() * (Scalar(1) - n.value.array())).matrix());
      break;
    case Op::Softmax: {
      Mat& ga = grad_of(n.a);
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        const Scalar s = n.value.col(c).dot(g.col(c));
        ga.col(c).array() += n.value.col(c).array() * (g.col(c).array() - s);
      }
      break;
    }
    case Op::Sin:
      accumulate(n.a, (g.array() * nodes_[n.a].value.array().cos()).matrix());
      break;
    case Op::Cos:
      grad_of(n.a) -= (g.array() * nodes_[n.a].value.array().sin()).matrix();
      break;
    case Op::Encode: {
      if (nodes_[n.a].op == Op::Constant) break;
      Mat& ga = grad_of(n.a);
      const Eigen::Index block = n.ib + 2 * n.ia;
      for (Eigen::Index c = 0; c < ga.cols(); ++c) {
        for (Eigen::Index k = 0; k < ga.rows(); ++k) {
          const Scalar* go = g.col(c).data() + k * block;
          const Scalar* vo = n.value.col(c).data() + k * block;
          Scalar acc = 0;
          if (n.ib) {
            acc += *go++;
            ++vo;
          }
          Scalar freq = static_cast<Scalar>(std::numbers::pi);
          for (Eigen::Index j = 0; j < n.ia; ++j) {
            // d sin = freq cos, d cos = -freq sin
            acc += freq * (go[0] * vo[1] - go[1] * vo[0]);
            go += 2;
            vo += 2;
            freq *= Scalar(2);
          }
          ga(k, c) += acc;
        }
      }
      break;
    }
    case Op::Add:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case Op::Sub:
      grad_of(n.a) += g;
      if (n.ia)
        grad_of(n.b)(0, 0) -= static_cast<Scalar>(g.template cast<double>().sum());
      else
        grad_of(n.b) -= g;
      break;
    case Op::Mul:
      accumulate(n.a, g.cwiseProduct(nodes_[n.b].value));
      accumulate(n.b, g.cwiseProduct(nodes_[n.a].value));
      break;
    case Op::Div: {
      const Mat& vb = nodes_[n.b].value;
      grad_of(n.a) += g.cwiseQuotient(vb);
      grad_of(n.b) -= (g.array() * n.value.array() / vb.array()).matrix();
      break;
    }
    case Op::Square:
      accumulate(n.a, (Scalar(2) * g.array() * nodes_[n.a].value.array()).matrix());
      break;
    case Op::Sqrt:
      grad_of(n.a) += (g.array() / (Scalar(2) * n.value.array())).matrix();
      break;
    case Op::Abs:
      grad_of(n.a) += (g.array() * nodes_[n.a].value.array().sign()).matrix();
      break;
    case Op::MaxConst:
      grad_of(n.a) +=
          (nodes_[n.a].value.array() > static_cast<Scalar>(n.constant)).select(g, Scalar(0)).matrix();
      break;
    case Op::ScaleConst:
      accumulate(n.a, g * static_cast<Scalar>(n.constant));
      break;
    case Op::MulConst:
      accumulate(n.a, g.cwiseProduct(n.aux));
      break;
    case Op::SliceCols:
      grad_of(n.a).middleCols(n.ia, n.ib) += g;
      break;
    case Op::ConcatCols: {
      Eigen::Index at = 0;
      for (int p : n.parts) {
        const Eigen::Index cols = nodes_[p].value.cols();
        accumulate(p, g.middleCols(at, cols));
        at += cols;
      }
      break;
    }
    case Op::Row:
      grad_of(n.a).row(n.ia) += g;
      break;
    case Op::SquaredNorm: {
      accumulate(n.a, (nodes_[n.a].value.array().rowwise() * (Scalar(2) * g.row(0).array())).matrix());
      break;
    }
    case Op::Dot: {
      accumulate(n.a, (nodes_[n.b].value.array().rowwise() * g.row(0).array()).matrix());
      accumulate(n.b, (nodes_[n.a].value.array().rowwise() * g.row(0).array()).matrix());
      break;
    }
    case Op::Cross2: {
      const Mat& va = nodes_[n.a].value;
      const Mat& vb = nodes_[n.b].value;
      Mat& ga = grad_of(n.a);
      ga.row(0) += g.cwiseProduct(vb.row(1));
      ga.row(1) -= g.cwiseProduct(vb.row(0));
      Mat& gb = grad_of(n.b);
      gb.row(1) += g.cwiseProduct(va.row(0));
      gb.row(0) -= g.cwiseProduct(va.row(1));
      break;
    }
    case Op::Sum:
      grad_of(n.a).array() += g(0, 0);
      break;
    case Op::Mean:
      grad_of(n.a).array() += g(0, 0) / static_cast<Scalar>(nodes_[n.a].value.size());
      break;
    case Op::CrossEntropy: {
      const Mat& p = nodes_[n.a].value;
      Mat& ga = grad_of(n.a);
      const Scalar scale = g(0, 0) / static_cast<Scalar>(p.cols());
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const Scalar pc = p(n.ia, c);
        if (pc > static_cast<Scalar>(n.constant)) ga(n.ia, c) -= scale / pc;
      }
      break;
    }
    case Op::MinSqDist: {
      const Mat& q = nodes_[n.a].value;
      const Mat& r = nodes_[n.b].value;
      const bool q_const = nodes_[n.a].op == Op::Constant;
      const bool r_const = nodes_[n.b].op == Op::Constant;
      const Scalar scale = Scalar(2) * g(0, 0) / static_cast<Scalar>(q.cols());
      Mat* gq = q_const ? nullptr : &grad_of(n.a);
      Mat* gr = r_const ? nullptr : &grad_of(n.b);
      for (Eigen::Index c = 0; c < q.cols(); ++c) {
        const Eigen::Index k = n.index[static_cast<std::size_t>(c)];
        if (gq) gq->col(c) += scale * (q.col(c) - r.col(k));
        if (gr) gr->col(k) -= scale * (q.col(c) - r.col(k));
      }
      break;
    }
    case Op::Bilinear: {
      const int res = static_cast<int>(n.ia);
      const Mat& grid = nodes_[n.a].value;
      const Mat& uv = nodes_[n.b].value;
      Mat& gg = grad_of(n.a);
      Mat* gu = nodes_[n.b].op == Op::Constant ? nullptr : &grad_of(n.b);
      const Eigen::Index ch = grid.rows();
      for (Eigen::Index c = 0; c < uv.cols(); ++c) {
        const BilinearTap t = bilinear_tap(uv(0, c), uv(1, c), res);
        const Scalar wx = static_cast<Scalar>(t.wx), wy = static_cast<Scalar>(t.wy);
        const Eigen::Index k00 = (t.y0 * res + t.x0) * ch, k10 = (t.y0 * res + t.x1) * ch;
        const Eigen::Index k01 = (t.y1 * res + t.x0) * ch, k11 = (t.y1 * res + t.x1) * ch;
        const Scalar* gc = g.data() + c * ch;
        const Scalar w00 = (Scalar(1) - wx) * (Scalar(1) - wy), w10 = wx * (Scalar(1) - wy);
        const Scalar w01 = (Scalar(1) - wx) * wy, w11 = wx * wy;
        Scalar* gd = gg.data();
        for (Eigen::Index r = 0; r < ch; ++r) {
          gd[k00 + r] += w00 * gc[r];
          gd[k10 + r] += w10 * gc[r];
          gd[k01 + r] += w01 * gc[r];
          gd[k11 + r] += w11 * gc[r];
        }
        if (gu) {
          const Scalar* v = grid.data();
          Scalar du = 0, dv = 0;
          for (Eigen::Index r = 0; r < ch; ++r) {
            du += ((Scalar(1) - wy) * (v[k10 + r] - v[k00 + r]) + wy * (v[k11 + r] - v[k01 + r])) * gc[r];
            dv += ((Scalar(1) - wx) * (v[k01 + r] - v[k00 + r]) + wx * (v[k11 + r] - v[k10 + r])) * gc[r];
          }
          if (!t.clamped_x) (*gu)(0, c) += du * static_cast<Scalar>(res);
          if (!t.clamped_y) (*gu)(1, c) += dv * static_cast<Scalar>(res);
        }
      }
      break;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace uvfield::ad
