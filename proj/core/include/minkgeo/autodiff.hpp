#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace minkgeo::ad {

enum class ShapeKind : std::uint8_t { scalar, grid, vector };

struct Shape {
  ShapeKind kind = ShapeKind::scalar;
  int rows = 1;
  int cols = 1;

  static Shape scalar() { return {ShapeKind::scalar, 1, 1}; }
  static Shape grid(int h, int w) { return {ShapeKind::grid, h, w}; }
  static Shape vector(int n) { return {ShapeKind::vector, n, 1}; }

  int size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

/// Handle into a tape; cheap to copy.
struct Var {
  int id = -1;
  Shape shape;
};

/// Reverse-mode tape over f64 scalars, 2-D grids and vectors. One tape per
/// evaluation; values are recorded at forward time and adjoints filled by
/// backward(). Elementwise binaries broadcast a scalar against a grid or
/// vector; all other shape mixes are errors.
class Tape {
 public:
  // Leaves.
  Var scalar(double value, bool requires_grad = false);
  Var grid(int h, int w, std::span<const double> values, bool requires_grad = false);
  Var vector(std::span<const double> values, bool requires_grad = false);

  // Elementwise binary.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);  // rejects zero denominators at forward time
  Var min2(Var a, Var b);  // ties split the adjoint 0.5/0.5
  Var max2(Var a, Var b);

  // Elementwise unary.
  Var neg(Var a);
  Var abs(Var a);
  Var log1p(Var a);  // rejects x <= -1 at forward time
  Var exp(Var a);
  Var sqrt(Var a);   // rejects x < 0 at forward time
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var gelu(Var a);   // tanh approximation with its exact analytic derivative
  Var tanh(Var a);
  Var symlog(Var a); // sign(x) * log(1+|x|)

  // Structure.
  Var sum(Var a);                       // -> scalar
  Var shift(Var grid, int dy, int dx);  // translate with zero padding
  Var slice(Var vec, int start, int len);
  Var concat(std::span<const Var> parts);  // scalars/vectors -> vector
  Var reshape(Var a, Shape shape);         // same element count
  Var softmax(Var vec);
  Var cumsum(Var vec);
  Var dot(Var a, Var b);                // vectors -> scalar
  Var matvec(Var m, Var x);             // grid(r,c) * vector(c) -> vector(r)
  Var scale(Var a, double c);

  std::span<const double> value(Var v) const;
  double value_scalar(Var v) const;

  /// Reverse sweep from a scalar output; fills adjoints of every node that
  /// can influence it through a requires_grad leaf.
  void backward(Var output);
  std::span<const double> adjoint(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    leaf, add, sub, mul, div, min2, max2, neg, abs, log1p, exp, sqrt,
    sigmoid, softplus, gelu, tanh, symlog, sum, shift, slice, concat,
    reshape, softmax, cumsum, dot, matvec, scale,
  };

  struct Node {
    Op op = Op::leaf;
    Shape shape;
    std::vector<double> value;
    std::vector<double> adjoint;
    int a = -1, b = -1;
    std::vector<int> srcs;  // concat only
    int i0 = 0, i1 = 0;     // shift dy/dx, slice start/len
    double c0 = 0.0;        // scale factor
    bool needs_grad = false;
  };

  int push(Node node);
  const Node& node(Var v) const;
  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a);
  void check_valid(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace minkgeo::ad
