#include "minkgeo/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace minkgeo::ad {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

void Tape::check_valid(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("Tape: var does not belong to this tape");
}

int Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(Var v) const {
  check_valid(v);
  return nodes_[v.id];
}

Var Tape::scalar(double value, bool requires_grad) {
  Node n;
  n.shape = Shape::scalar();
  n.value = {value};
  n.needs_grad = requires_grad;
  const int id = push(std::move(n));
  return {id, Shape::scalar()};
}

Var Tape::grid(int h, int w, std::span<const double> values, bool requires_grad) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("Tape::grid: bad dimensions");
  if (values.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("Tape::grid: value count does not match shape");
  Node n;
  n.shape = Shape::grid(h, w);
  n.value.assign(values.begin(), values.end());
  n.needs_grad = requires_grad;
  const int id = push(std::move(n));
  return {id, Shape::grid(h, w)};
}

Var Tape::vector(std::span<const double> values, bool requires_grad) {
  if (values.empty()) throw std::invalid_argument("Tape::vector: empty vector");
  Node n;
  n.shape = Shape::vector(static_cast<int>(values.size()));
  n.value.assign(values.begin(), values.end());
  n.needs_grad = requires_grad;
  const Shape out = n.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::binary(Op op, Var a, Var b) {
  check_valid(a);
  check_valid(b);
  const Node& na = nodes_[a.id];
  const Node& nb = nodes_[b.id];

  Shape out;
  if (na.shape == nb.shape) {
    out = na.shape;
  } else if (na.shape.kind == ShapeKind::scalar) {
    out = nb.shape;
  } else if (nb.shape.kind == ShapeKind::scalar) {
    out = na.shape;
  } else {
    throw std::invalid_argument("Tape: shape mismatch in elementwise op");
  }

  Node n;
  n.op = op;
  n.shape = out;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  n.value.resize(out.size());

  const bool a_scalar = na.shape.kind == ShapeKind::scalar && !(out.kind == ShapeKind::scalar);
  const bool b_scalar = nb.shape.kind == ShapeKind::scalar && !(out.kind == ShapeKind::scalar);
  for (int i = 0; i < out.size(); ++i) {
    const double x = na.value[a_scalar ? 0 : i];
    const double y = nb.value[b_scalar ? 0 : i];
    double r = 0.0;
    switch (op) {
      case Op::add: r = x + y; break;
      case Op::sub: r = x - y; break;
      case Op::mul: r = x * y; break;
      case Op::div:
        if (y == 0.0) throw std::domain_error("Tape::div: division by zero");
        r = x / y;
        break;
      case Op::min2: r = x < y ? x : y; break;
      case Op::max2: r = x > y ? x : y; break;
      default: throw std::logic_error("Tape::binary: bad op");
    }
    n.value[i] = r;
  }
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::add(Var a, Var b) { return binary(Op::add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::mul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::div, a, b); }
Var Tape::min2(Var a, Var b) { return binary(Op::min2, a, b); }
Var Tape::max2(Var a, Var b) { return binary(Op::max2, a, b); }

Var Tape::unary(Op op, Var a) {
  check_valid(a);
  const Node& na = nodes_[a.id];
  Node n;
  n.op = op;
  n.shape = na.shape;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value.resize(na.shape.size());
  for (int i = 0; i < na.shape.size(); ++i) {
    const double x = na.value[i];
    double r = 0.0;
    switch (op) {
      case Op::neg: r = -x; break;
      case Op::abs: r = std::abs(x); break;
      case Op::log1p:
        if (x <= -1.0) throw std::domain_error("Tape::log1p: argument <= -1");
        r = std::log1p(x);
        break;
      case Op::exp: r = std::exp(x); break;
      case Op::sqrt:
        if (x < 0.0) throw std::domain_error("Tape::sqrt: negative argument");
        r = std::sqrt(x);
        break;
      case Op::sigmoid: r = sigmoid_stable(x); break;
      case Op::softplus: r = softplus_stable(x); break;
      case Op::gelu: {
        const double u = kGeluC * (x + kGeluA * x * x * x);
        r = 0.5 * x * (1.0 + std::tanh(u));
        break;
      }
      case Op::tanh: r = std::tanh(x); break;
      case Op::symlog: r = (x < 0.0 ? -1.0 : 1.0) * std::log1p(std::abs(x)); break;
      default: throw std::logic_error("Tape::unary: bad op");
    }
    n.value[i] = r;
  }
  const Shape out = na.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::neg(Var a) { return unary(Op::neg, a); }
Var Tape::abs(Var a) { return unary(Op::abs, a); }
Var Tape::log1p(Var a) { return unary(Op::log1p, a); }
Var Tape::exp(Var a) { return unary(Op::exp, a); }
Var Tape::sqrt(Var a) { return unary(Op::sqrt, a); }
Var Tape::sigmoid(Var a) { return unary(Op::sigmoid, a); }
Var Tape::softplus(Var a) { return unary(Op::softplus, a); }
Var Tape::gelu(Var a) { return unary(Op::gelu, a); }
Var Tape::tanh(Var a) { return unary(Op::tanh, a); }
Var Tape::symlog(Var a) { return unary(Op::symlog, a); }

Var Tape::sum(Var a) {
  check_valid(a);
  const Node& na = nodes_[a.id];
  Node n;
  n.op = Op::sum;
  n.shape = Shape::scalar();
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  double s = 0.0;
  for (double v : na.value) s += v;
  n.value = {s};
  const int id = push(std::move(n));
  return {id, Shape::scalar()};
}

Var Tape::shift(Var g, int dy, int dx) {
  check_valid(g);
  const Node& na = nodes_[g.id];
  if (na.shape.kind != ShapeKind::grid)
    throw std::invalid_argument("Tape::shift: grid expected");
  const int h = na.shape.rows, w = na.shape.cols;
  Node n;
  n.op = Op::shift;
  n.shape = na.shape;
  n.a = g.id;
  n.i0 = dy;
  n.i1 = dx;
  n.needs_grad = na.needs_grad;
  n.value.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int r = 0; r < h; ++r) {
    const int sr = r - dy;
    if (sr < 0 || sr >= h) continue;
    for (int c = 0; c < w; ++c) {
      const int sc = c - dx;
      if (sc < 0 || sc >= w) continue;
      n.value[static_cast<std::size_t>(r) * w + c] =
          na.value[static_cast<std::size_t>(sr) * w + sc];
    }
  }
  const Shape out = na.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::slice(Var vec, int start, int len) {
  check_valid(vec);
  const Node& na = nodes_[vec.id];
  if (na.shape.kind != ShapeKind::vector)
    throw std::invalid_argument("Tape::slice: vector expected");
  if (start < 0 || len <= 0 || start + len > na.shape.rows)
    throw std::invalid_argument("Tape::slice: range out of bounds");
  Node n;
  n.op = Op::slice;
  n.shape = Shape::vector(len);
  n.a = vec.id;
  n.i0 = start;
  n.i1 = len;
  n.needs_grad = na.needs_grad;
  n.value.assign(na.value.begin() + start, na.value.begin() + start + len);
  const Shape out = n.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("Tape::concat: empty input");
  Node n;
  n.op = Op::concat;
  n.needs_grad = false;
  for (Var p : parts) {
    check_valid(p);
    const Node& np = nodes_[p.id];
    if (np.shape.kind == ShapeKind::grid)
      throw std::invalid_argument("Tape::concat: scalars and vectors only");
    n.srcs.push_back(p.id);
    n.needs_grad = n.needs_grad || np.needs_grad;
    n.value.insert(n.value.end(), np.value.begin(), np.value.end());
  }
  n.shape = Shape::vector(static_cast<int>(n.value.size()));
  const Shape out = n.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::reshape(Var a, Shape shape) {
  check_valid(a);
  const Node& na = nodes_[a.id];
  if (na.shape.size() != shape.size())
    throw std::invalid_argument("Tape::reshape: element count must be preserved");
  Node n;
  n.op = Op::reshape;
  n.shape = shape;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.value = na.value;
  const int id = push(std::move(n));
  return {id, shape};
}

Var Tape::softmax(Var vec) {
  check_valid(vec);
  const Node& na = nodes_[vec.id];
  if (na.shape.kind != ShapeKind::vector)
    throw std::invalid_argument("Tape::softmax: vector expected");
  Node n;
  n.op = Op::softmax;
  n.shape = na.shape;
  n.a = vec.id;
  n.needs_grad = na.needs_grad;
  double mx = na.value[0];
  for (double v : na.value) mx = std::max(mx, v);
  double z = 0.0;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < na.value.size(); ++i) {
    n.value[i] = std::exp(na.value[i] - mx);
    z += n.value[i];
  }
  for (double& v : n.value) v /= z;
  const Shape out = na.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::cumsum(Var vec) {
  check_valid(vec);
  const Node& na = nodes_[vec.id];
  if (na.shape.kind != ShapeKind::vector)
    throw std::invalid_argument("Tape::cumsum: vector expected");
  Node n;
  n.op = Op::cumsum;
  n.shape = na.shape;
  n.a = vec.id;
  n.needs_grad = na.needs_grad;
  n.value.resize(na.value.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < na.value.size(); ++i) {
    acc += na.value[i];
    n.value[i] = acc;
  }
  const Shape out = na.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::dot(Var a, Var b) {
  check_valid(a);
  check_valid(b);
  const Node& na = nodes_[a.id];
  const Node& nb = nodes_[b.id];
  if (na.shape.kind != ShapeKind::vector || nb.shape.kind != ShapeKind::vector ||
      na.shape.rows != nb.shape.rows)
    throw std::invalid_argument("Tape::dot: matching vectors expected");
  Node n;
  n.op = Op::dot;
  n.shape = Shape::scalar();
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  double s = 0.0;
  for (std::size_t i = 0; i < na.value.size(); ++i) s += na.value[i] * nb.value[i];
  n.value = {s};
  const int id = push(std::move(n));
  return {id, Shape::scalar()};
}

Var Tape::matvec(Var m, Var x) {
  check_valid(m);
  check_valid(x);
  const Node& nm = nodes_[m.id];
  const Node& nx = nodes_[x.id];
  if (nm.shape.kind != ShapeKind::grid || nx.shape.kind != ShapeKind::vector ||
      nm.shape.cols != nx.shape.rows)
    throw std::invalid_argument("Tape::matvec: grid(r,c) and vector(c) expected");
  const int rows = nm.shape.rows, cols = nm.shape.cols;
  Node n;
  n.op = Op::matvec;
  n.shape = Shape::vector(rows);
  n.a = m.id;
  n.b = x.id;
  n.needs_grad = nm.needs_grad || nx.needs_grad;
  n.value.resize(rows);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* wrow = nm.value.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) s += wrow[c] * nx.value[c];
    n.value[r] = s;
  }
  const Shape out = n.shape;
  const int id = push(std::move(n));
  return {id, out};
}

Var Tape::scale(Var a, double c) {
  check_valid(a);
  const Node& na = nodes_[a.id];
  Node n;
  n.op = Op::scale;
  n.shape = na.shape;
  n.a = a.id;
  n.c0 = c;
  n.needs_grad = na.needs_grad;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < na.value.size(); ++i) n.value[i] = c * na.value[i];
  const Shape out = na.shape;
  const int id = push(std::move(n));
  return {id, out};
}

std::span<const double> Tape::value(Var v) const { return node(v).value; }

double Tape::value_scalar(Var v) const {
  const Node& n = node(v);
  if (n.shape.kind != ShapeKind::scalar)
    throw std::invalid_argument("Tape::value_scalar: scalar expected");
  return n.value[0];
}

std::span<const double> Tape::adjoint(Var v) const {
  const Node& n = node(v);
  if (n.adjoint.empty())
    throw std::logic_error("Tape::adjoint: run backward() first");
  return n.adjoint;
}

void Tape::backward(Var output) {
  check_valid(output);
  if (nodes_[output.id].shape.kind != ShapeKind::scalar)
    throw std::invalid_argument("Tape::backward: output must be a scalar");

  for (Node& n : nodes_) n.adjoint.assign(n.value.size(), 0.0);
  nodes_[output.id].adjoint[0] = 1.0;

  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.op == Op::leaf) continue;

    switch (n.op) {
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div:
      case Op::min2:
      case Op::max2: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const bool a_scalar =
            na.shape.kind == ShapeKind::scalar && n.shape.kind != ShapeKind::scalar;
        const bool b_scalar =
            nb.shape.kind == ShapeKind::scalar && n.shape.kind != ShapeKind::scalar;
        for (int i = 0; i < n.shape.size(); ++i) {
          const double g = n.adjoint[i];
          if (g == 0.0) continue;
          const int ia = a_scalar ? 0 : i;
          const int ib = b_scalar ? 0 : i;
          const double x = na.value[ia];
          const double y = nb.value[ib];
          double ga = 0.0, gb = 0.0;
          switch (n.op) {
            case Op::add: ga = g; gb = g; break;
            case Op::sub: ga = g; gb = -g; break;
            case Op::mul: ga = g * y; gb = g * x; break;
            case Op::div: ga = g / y; gb = -g * x / (y * y); break;
            case Op::min2:
              if (x < y) ga = g;
              else if (y < x) gb = g;
              else { ga = 0.5 * g; gb = 0.5 * g; }
              break;
            case Op::max2:
              if (x > y) ga = g;
              else if (y > x) gb = g;
              else { ga = 0.5 * g; gb = 0.5 * g; }
              break;
            default: break;
          }
          if (na.needs_grad) na.adjoint[ia] += ga;
          if (nb.needs_grad) nb.adjoint[ib] += gb;
        }
        break;
      }
      case Op::neg:
      case Op::abs:
      case Op::log1p:
      case Op::exp:
      case Op::sqrt:
      case Op::sigmoid:
      case Op::softplus:
      case Op::gelu:
      case Op::tanh:
      case Op::symlog: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        for (int i = 0; i < n.shape.size(); ++i) {
          const double g = n.adjoint[i];
          if (g == 0.0) continue;
          const double x = na.value[i];
          const double y = n.value[i];
          double d = 0.0;
          switch (n.op) {
            case Op::neg: d = -1.0; break;
            case Op::abs: d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
            case Op::log1p: d = 1.0 / (1.0 + x); break;
            case Op::exp: d = y; break;
            case Op::sqrt: d = 0.5 / y; break;
            case Op::sigmoid: d = y * (1.0 - y); break;
            case Op::softplus: d = sigmoid_stable(x); break;
            case Op::gelu: {
              const double u = kGeluC * (x + kGeluA * x * x * x);
              const double t = std::tanh(u);
              const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
              d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
              break;
            }
            case Op::tanh: d = 1.0 - y * y; break;
            case Op::symlog: d = 1.0 / (1.0 + std::abs(x)); break;
            default: break;
          }
          na.adjoint[i] += g * d;
        }
        break;
      }
      case Op::sum: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        const double g = n.adjoint[0];
        if (g == 0.0) break;
        for (double& a : na.adjoint) a += g;
        break;
      }
      case Op::shift: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        const int h = n.shape.rows, w = n.shape.cols;
        for (int r = 0; r < h; ++r) {
          const int sr = r - n.i0;
          if (sr < 0 || sr >= h) continue;
          for (int c = 0; c < w; ++c) {
            const int sc = c - n.i1;
            if (sc < 0 || sc >= w) continue;
            na.adjoint[static_cast<std::size_t>(sr) * w + sc] +=
                n.adjoint[static_cast<std::size_t>(r) * w + c];
          }
        }
        break;
      }
      case Op::slice: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        for (int i = 0; i < n.i1; ++i) na.adjoint[n.i0 + i] += n.adjoint[i];
        break;
      }
      case Op::concat: {
        std::size_t offset = 0;
        for (int src : n.srcs) {
          Node& ns = nodes_[src];
          if (ns.needs_grad)
            for (std::size_t i = 0; i < ns.value.size(); ++i)
              ns.adjoint[i] += n.adjoint[offset + i];
          offset += ns.value.size();
        }
        break;
      }
      case Op::reshape: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        for (std::size_t i = 0; i < n.adjoint.size(); ++i)
          na.adjoint[i] += n.adjoint[i];
        break;
      }
      case Op::softmax: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        double gy = 0.0;
        for (std::size_t i = 0; i < n.value.size(); ++i)
          gy += n.adjoint[i] * n.value[i];
        for (std::size_t i = 0; i < n.value.size(); ++i)
          na.adjoint[i] += n.value[i] * (n.adjoint[i] - gy);
        break;
      }
      case Op::cumsum: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        double acc = 0.0;
        for (int i = static_cast<int>(n.value.size()) - 1; i >= 0; --i) {
          acc += n.adjoint[i];
          na.adjoint[i] += acc;
        }
        break;
      }
      case Op::dot: {
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const double g = n.adjoint[0];
        if (g == 0.0) break;
        for (std::size_t i = 0; i < na.value.size(); ++i) {
          if (na.needs_grad) na.adjoint[i] += g * nb.value[i];
          if (nb.needs_grad) nb.adjoint[i] += g * na.value[i];
        }
        break;
      }
      case Op::matvec: {
        Node& nm = nodes_[n.a];
        Node& nx = nodes_[n.b];
        const int rows = nm.shape.rows, cols = nm.shape.cols;
        for (int r = 0; r < rows; ++r) {
          const double g = n.adjoint[r];
          if (g == 0.0) continue;
          const double* wrow = nm.value.data() + static_cast<std::size_t>(r) * cols;
          double* wadj = nm.adjoint.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) {
            if (nm.needs_grad) wadj[c] += g * nx.value[c];
            if (nx.needs_grad) nx.adjoint[c] += g * wrow[c];
          }
        }
        break;
      }
      case Op::scale: {
        Node& na = nodes_[n.a];
        if (!na.needs_grad) break;
        for (std::size_t i = 0; i < n.adjoint.size(); ++i)
          na.adjoint[i] += n.c0 * n.adjoint[i];
        break;
      }
      case Op::leaf:
        break;
    }
  }
}

}  // namespace minkgeo::ad
