#include <doctest.h>

#include <array>
#include <cmath>
#include <functional>

#include "minkgeo/autodiff.hpp"
#include "minkgeo/rng.hpp"
#include "test_util.hpp"

using namespace minkgeo;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

// Scalarize an op under test with fixed random weights and compare the
// reverse-mode input gradient against central differences.
double primitive_max_rel_err(
    const std::function<Var(Tape&, Var)>& op, const std::vector<double>& x0,
    Shape shape, std::uint64_t seed, double h = 1e-6) {
  auto build = [&](Tape& t, std::span<const double> xv, bool rg) {
    Var x = shape.kind == ad::ShapeKind::grid
                ? t.grid(shape.rows, shape.cols, xv, rg)
                : (shape.kind == ad::ShapeKind::vector ? t.vector(xv, rg)
                                                       : t.scalar(xv[0], rg));
    Var y = op(t, x);
    Rng wrng(seed ^ 0xabcdef);
    std::vector<double> w(static_cast<std::size_t>(y.shape.size()));
    for (double& v : w) v = wrng.uniform(-1.0, 1.0);
    Var wv = y.shape.kind == ad::ShapeKind::scalar
                 ? t.scalar(w[0])
                 : (y.shape.kind == ad::ShapeKind::vector
                        ? t.vector(w)
                        : t.grid(y.shape.rows, y.shape.cols, w));
    return t.sum(t.mul(y, wv));
  };

  std::vector<double> grad;
  {
    Tape t;
    Var x{};
    Var out = [&] {
      x = shape.kind == ad::ShapeKind::grid
              ? t.grid(shape.rows, shape.cols, x0, true)
              : (shape.kind == ad::ShapeKind::vector ? t.vector(x0, true)
                                                     : t.scalar(x0[0], true));
      Var y = op(t, x);
      Rng wrng(seed ^ 0xabcdef);
      std::vector<double> w(static_cast<std::size_t>(y.shape.size()));
      for (double& v : w) v = wrng.uniform(-1.0, 1.0);
      Var wv = y.shape.kind == ad::ShapeKind::scalar
                   ? t.scalar(w[0])
                   : (y.shape.kind == ad::ShapeKind::vector
                          ? t.vector(w)
                          : t.grid(y.shape.rows, y.shape.cols, w));
      return t.sum(t.mul(y, wv));
    }();
    t.backward(out);
    auto g = t.adjoint(x);
    grad.assign(g.begin(), g.end());
  }

  auto scalar_f = [&](const std::vector<double>& xv) {
    Tape t;
    return t.value_scalar(build(t, xv, false));
  };
  std::vector<double> fd = testutil::fd_gradient(scalar_f, x0, h);
  return testutil::max_rel_err(grad, fd);
}

std::vector<double> sample(std::uint64_t seed, int n, double lo, double hi) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("closed-form derivative identities") {
  Tape t;
  Var x = t.scalar(0.0, true);
  Var y = t.sigmoid(x);
  t.backward(y);
  CHECK(t.adjoint(x)[0] == doctest::Approx(0.25).epsilon(1e-15));

  for (double p : {-2.0, 0.0, 3.0}) {
    Tape t2;
    Var a = t2.scalar(p, true);
    Var s = t2.softplus(a);
    t2.backward(s);
    const double sig = 1.0 / (1.0 + std::exp(-p));
    CHECK(t2.adjoint(a)[0] == doctest::Approx(sig).epsilon(1e-12));
  }
}

TEST_CASE("every primitive matches central finite differences") {
  const Shape g44 = Shape::grid(4, 4);
  const Shape v6 = Shape::vector(6);

  struct Case {
    const char* name;
    std::function<Var(Tape&, Var)> op;
    Shape shape;
    double lo, hi;
  };
  const std::vector<Case> cases = {
      {"add", [](Tape& t, Var x) { return t.add(x, t.scalar(0.7)); }, g44, -2, 2},
      {"sub", [](Tape& t, Var x) { return t.sub(t.scalar(1.3), x); }, g44, -2, 2},
      {"mul", [](Tape& t, Var x) { return t.mul(x, t.scalar(-1.4)); }, g44, -2, 2},
      {"mul_pair",
       [](Tape& t, Var x) {
         Var a = t.slice(x, 0, 3);
         Var b = t.slice(x, 3, 3);
         return t.mul(a, b);
       },
       v6, -2, 2},
      {"div",
       [](Tape& t, Var x) {
         Var a = t.slice(x, 0, 3);
         Var b = t.slice(x, 3, 3);
         return t.div(a, b);
       },
       v6, 0.5, 2},
      {"neg", [](Tape& t, Var x) { return t.neg(x); }, g44, -2, 2},
      {"abs", [](Tape& t, Var x) { return t.abs(x); }, g44, 0.2, 2},
      {"abs_negative", [](Tape& t, Var x) { return t.abs(x); }, g44, -2, -0.2},
      {"log1p", [](Tape& t, Var x) { return t.log1p(x); }, g44, -0.5, 3},
      {"exp", [](Tape& t, Var x) { return t.exp(x); }, g44, -2, 2},
      {"sqrt", [](Tape& t, Var x) { return t.sqrt(x); }, g44, 0.3, 4},
      {"sigmoid", [](Tape& t, Var x) { return t.sigmoid(x); }, g44, -4, 4},
      {"softplus", [](Tape& t, Var x) { return t.softplus(x); }, g44, -4, 4},
      {"gelu", [](Tape& t, Var x) { return t.gelu(x); }, g44, -3, 3},
      {"tanh", [](Tape& t, Var x) { return t.tanh(x); }, g44, -3, 3},
      {"symlog", [](Tape& t, Var x) { return t.symlog(x); }, g44, -3, 3},
      {"min2",
       [](Tape& t, Var x) {
         Var a = t.slice(x, 0, 3);
         Var b = t.slice(x, 3, 3);
         return t.min2(a, b);
       },
       v6, -2, 2},
      {"max2",
       [](Tape& t, Var x) {
         Var a = t.slice(x, 0, 3);
         Var b = t.slice(x, 3, 3);
         return t.max2(a, b);
       },
       v6, -2, 2},
      {"sum", [](Tape& t, Var x) { return t.sum(x); }, g44, -2, 2},
      {"shift", [](Tape& t, Var x) { return t.shift(x, 1, -1); }, g44, -2, 2},
      {"slice", [](Tape& t, Var x) { return t.slice(x, 1, 4); }, v6, -2, 2},
      {"concat",
       [](Tape& t, Var x) {
         std::array<Var, 2> parts = {t.slice(x, 0, 2), t.slice(x, 2, 4)};
         return t.concat(parts);
       },
       v6, -2, 2},
      {"reshape",
       [](Tape& t, Var x) { return t.reshape(x, Shape::vector(16)); }, g44, -2, 2},
      {"softmax", [](Tape& t, Var x) { return t.softmax(x); }, v6, -3, 3},
      {"cumsum", [](Tape& t, Var x) { return t.cumsum(x); }, v6, -2, 2},
      {"dot",
       [](Tape& t, Var x) {
         Var a = t.slice(x, 0, 3);
         Var b = t.slice(x, 3, 3);
         return t.dot(a, b);
       },
       v6, -2, 2},
      {"matvec",
       [](Tape& t, Var x) {
         // First 8 entries form a 2x4 matrix, last 4 the vector.
         Var m = t.reshape(t.slice(x, 0, 8), Shape::grid(2, 4));
         Var v = t.slice(x, 8, 4);
         return t.matvec(m, v);
       },
       Shape::vector(12), -2, 2},
      {"scale", [](Tape& t, Var x) { return t.scale(x, -2.5); }, g44, -2, 2},
      {"sigmoid_of_scale",
       [](Tape& t, Var x) { return t.sigmoid(t.scale(x, 3.0)); }, g44, -2, 2},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto x0 = sample(seed * 7919 + 13, c.shape.size(), c.lo, c.hi);
      worst = std::max(worst,
                       primitive_max_rel_err(c.op, x0, c.shape, seed));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("forward-time domain errors") {
  Tape t;
  Var a = t.vector(std::vector<double>{1.0, 2.0});
  Var zero = t.vector(std::vector<double>{1.0, 0.0});
  CHECK_THROWS_AS(t.div(a, zero), std::domain_error);
  Var bad = t.vector(std::vector<double>{-1.5, 0.0});
  CHECK_THROWS_AS(t.log1p(bad), std::domain_error);
  CHECK_THROWS_AS(t.sqrt(bad), std::domain_error);
}

TEST_CASE("shape mismatches are rejected") {
  Tape t;
  Var g = t.grid(2, 3, std::vector<double>(6, 1.0));
  Var v = t.vector(std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(t.add(g, v), std::invalid_argument);
  CHECK_THROWS_AS(t.matvec(g, v), std::invalid_argument);
  CHECK_THROWS_AS(t.softmax(g), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(g), std::invalid_argument);  // non-scalar output
}

TEST_CASE("min2 subgradient convention") {
  SUBCASE("distinct arguments route to the smaller one") {
    Tape t;
    Var a = t.scalar(1.0, true);
    Var b = t.scalar(2.0, true);
    Var m = t.min2(a, b);
    t.backward(m);
    CHECK(t.adjoint(a)[0] == 1.0);
    CHECK(t.adjoint(b)[0] == 0.0);
  }
  SUBCASE("ties split evenly and stay consistent") {
    Tape t;
    Var x = t.scalar(1.5, true);
    Var m = t.min2(x, x);
    t.backward(m);
    CHECK(t.adjoint(x)[0] == 1.0);  // 0.5 + 0.5
  }
  SUBCASE("chained min over four inputs matches the n-ary oracle") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      std::array<double, 4> xs;
      for (double& v : xs) v = rng.uniform(-5.0, 5.0);
      Tape t;
      std::array<Var, 4> vars;
      for (int i = 0; i < 4; ++i) vars[i] = t.scalar(xs[i], true);
      Var m = t.min2(t.min2(vars[0], vars[1]), t.min2(vars[2], vars[3]));
      const int argmin =
          static_cast<int>(std::min_element(xs.begin(), xs.end()) - xs.begin());
      CHECK(t.value_scalar(m) == xs[argmin]);
      t.backward(m);
      for (int i = 0; i < 4; ++i)
        CHECK(t.adjoint(vars[i])[0] == (i == argmin ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("simple backward identities") {
  Tape t;
  Var x = t.grid(3, 3, sample(5, 9, -2, 2), true);
  Var f = t.sum(t.mul(x, x));
  t.backward(f);
  auto g = t.adjoint(x);
  auto v = t.value(x);
  for (int i = 0; i < 9; ++i) CHECK(g[i] == doctest::Approx(2.0 * v[i]));

  Tape t2;
  Var y = t2.scalar(3.5, true);
  Var id = t2.add(y, t2.scalar(0.0));
  t2.backward(id);
  CHECK(t2.adjoint(y)[0] == 1.0);
}

TEST_CASE("backward is linear in the output") {
  const auto x0 = sample(21, 9, -1.5, 1.5);
  const double alpha = 2.25, beta = -0.75;

  auto grad_of = [&](const std::function<Var(Tape&, Var)>& fn) {
    Tape t;
    Var x = t.grid(3, 3, x0, true);
    t.backward(fn(t, x));
    auto g = t.adjoint(x);
    return std::vector<double>(g.begin(), g.end());
  };

  auto f = [](Tape& t, Var x) { return t.sum(t.mul(x, x)); };
  auto g = [](Tape& t, Var x) { return t.sum(t.sigmoid(x)); };
  auto combo = [&](Tape& t, Var x) {
    return t.add(t.scale(f(t, x), alpha), t.scale(g(t, x), beta));
  };

  auto gf = grad_of(f), gg = grad_of(g), gc = grad_of(combo);
  for (int i = 0; i < 9; ++i)
    CHECK(gc[i] == doctest::Approx(alpha * gf[i] + beta * gg[i]).epsilon(1e-12));
}

TEST_CASE("tape replay is bit deterministic") {
  auto run = [] {
    Tape t;
    Var x = t.grid(4, 4, sample(3, 16, -1, 1), true);
    Var y = t.sum(t.mul(t.sigmoid(t.shift(x, 1, 0)), t.gelu(x)));
    t.backward(y);
    auto g = t.adjoint(x);
    std::vector<double> out(g.begin(), g.end());
    out.push_back(t.value_scalar(y));
    return out;
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
