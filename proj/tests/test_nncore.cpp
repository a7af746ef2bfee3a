#include <doctest.h>

#include <cmath>
#include <random>

#include "gapfill/nncore.hpp"
#include "gapfill/random.hpp"

using namespace gapfill;
using namespace gapfill::nn;

namespace {

double sig(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Step-by-step reference evaluation of the three gate equations with plain
// Eigen expressions, independent of the library's packed kernels.
Eigen::VectorXd reference_gru(const ParamStore& p, const std::string& pre, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& h) {
  auto B = [&](const char* n) -> const Eigen::MatrixXd& { return p.block(pre + "." + n); };
  const Eigen::VectorXd z = (B("Wz") * x + B("Uz") * h + B("bz")).unaryExpr(&sig);
  const Eigen::VectorXd r = (B("Wr") * x + B("Ur") * h + B("br")).unaryExpr(&sig);
  const Eigen::VectorXd hc =
      (B("Wh") * x + B("Uh") * r.cwiseProduct(h) + B("bh")).unaryExpr([](double a) { return std::tanh(a); });
  return (Eigen::VectorXd::Ones(h.size()) - z).cwiseProduct(h) + z.cwiseProduct(hc);
}

ParamStore gru_params(Eigen::Index input, Eigen::Index hidden, std::uint64_t seed, bool random_bias = true) {
  ShapePlan plan;
  add_gru_shapes(plan, "g", input, hidden);
  ParamStore p = init_params(plan, seed);
  if (random_bias) {
    Rng rng(seed + 1);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (const char* b : {"g.bz", "g.br", "g.bh"}) {
      for (Eigen::Index i = 0; i < hidden; ++i) p.block(b)(i) = u(rng);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("dense_forward hand examples") {
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd x(3);
  x << 0.3, -2.0, 5.0;
  CHECK(dense_forward(I, Eigen::VectorXd::Zero(3), x, Activation::identity) == x);

  const auto half = dense_forward(Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2), x, Activation::sigmoid);
  CHECK(half(0) == 0.5);
  CHECK(half(1) == 0.5);

  Eigen::MatrixXd W(2, 2);
  W << 1, 2, 3, 4;
  const auto y = dense_forward(W, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2), Activation::identity);
  CHECK(y(0) == 4.0);
  CHECK(y(1) == 8.0);

  CHECK_THROWS_AS(dense_forward(W, Eigen::VectorXd::Ones(2), x, Activation::identity), ShapeError);
}

TEST_CASE("dense_forward works for float scalars") {
  Eigen::MatrixXf W(1, 2);
  W << 0.5f, -1.0f;
  Eigen::VectorXf b(1);
  b << 0.25f;
  Eigen::VectorXf x(2);
  x << 2.0f, 1.0f;
  const Eigen::VectorXf y = dense_forward(W, b, x, Activation::identity);
  CHECK(y(0) == doctest::Approx(0.25f));
}

TEST_CASE("dense_backward of a summed identity layer gives unit bias gradient") {
  Eigen::MatrixXd W(3, 2);
  W << 1, -1, 0.5, 2, 0, 3;
  Eigen::VectorXd x(2);
  x << 0.4, -0.7;
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(3);
  const auto y = dense_forward(W, b, x, Activation::identity);
  const auto g = dense_backward(W, x, y, Activation::identity, Eigen::VectorXd::Ones(3));
  CHECK(g.db == Eigen::VectorXd::Ones(3));
  CHECK(g.dW.row(1) == x.transpose());
  CHECK(g.dx(1) == doctest::Approx(-1 + 2 + 3));
}

TEST_CASE("dense layers agree with finite differences for each activation") {
  for (auto act : {Activation::identity, Activation::sigmoid, Activation::tanh}) {
    ParamStore p;
    p.add("W", 3, 4) = Eigen::MatrixXd::Random(3, 4);
    p.add("b", 3, 1) = Eigen::VectorXd::Random(3);
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
    const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(3, 0.5, 2.0);
    LossFn loss = [&](const ParamStore& q, ParamStore* g) {
      const auto y = dense_forward(q.block("W"), q.block("b"), x, act);
      if (g) {
        const auto d = dense_backward(q.block("W"), x, y, act, w);
        g->block("W") += d.dW;
        g->block("b") += d.db;
      }
      return w.dot(y);
    };
    CHECK(grad_check(loss, p).max_rel_error < 1e-7);
  }
}

TEST_CASE("gru_cell trivial fixed points") {
  ParamStore p = gru_params(1, 1, 0, false);
  p.set_zero();
  const auto cell = gru_view(p, "g");
  Eigen::VectorXd x(1), h(1);
  x << 0.7;
  h << 1.0;
  CHECK(gru_cell(cell, x, h)(0) == 0.5);
  h << 0.0;
  CHECK(gru_cell(cell, x, h)(0) == 0.0);
}

TEST_CASE("gru_cell matches the scripted gate equations") {
  const ParamStore p = gru_params(3, 2, 42);
  Eigen::VectorXd x(3);
  x << 0.3, 0.7, 0.1;
  const Eigen::VectorXd h0 = Eigen::VectorXd::Zero(2);
  const auto got = gru_cell(gru_view(p, "g"), x, h0);
  const auto want = reference_gru(p, "g", x, h0);
  CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-15);

  Eigen::VectorXd h1(2);
  h1 << -0.4, 0.9;
  CHECK((gru_cell(gru_view(p, "g"), x, h1) - reference_gru(p, "g", x, h1)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("gru sequence forward equals repeated cells in both directions") {
  for (Eigen::Index hidden : {2, 3}) {
    const ParamStore p = gru_params(3, hidden, 7);
    Eigen::MatrixXd xs = Eigen::MatrixXd::Random(3, 6);
    for (bool reverse : {false, true}) {
      GruTrace tr;
      gru_sequence_forward(gru_view(p, "g"), xs, reverse, tr);
      Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden);
      for (Eigen::Index k = 0; k < 6; ++k) {
        const Eigen::Index t = reverse ? 5 - k : k;
        h = reference_gru(p, "g", xs.col(t), h);
        CHECK((tr.h.col(t) - h).cwiseAbs().maxCoeff() <= 1e-14);
      }
    }
  }
}

TEST_CASE("gru backward: with zero weights the state passes back at half strength") {
  // Only Wh is nonzero, so h_0 = 0.5 tanh(x_0) and, with x_1 = 0, h_1 = 0.5 h_0.
  // With loss = h_1 the gradient reaching h_0 is 0.5, seen through dL/dx_0.
  ParamStore q = gru_params(1, 1, 0, false);
  q.set_zero();
  q.block("g.Wh")(0, 0) = 1.0;
  Eigen::MatrixXd seq(1, 2);
  seq << 0.3, 0.0;
  GruTrace tr;
  gru_sequence_forward(gru_view(q, "g"), seq, false, tr);
  CHECK(tr.h(0, 1) == doctest::Approx(0.5 * tr.h(0, 0)));
  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(1, 2);
  dh(0, 1) = 1.0;
  ParamStore g = q.zeros_like();
  Eigen::MatrixXd dx(1, 2);
  gru_sequence_backward(gru_view(q, "g"), tr, dh, gru_grad_view(g, "g"), dx);
  const double th = std::tanh(0.3);
  CHECK(dx(0, 0) == doctest::Approx(0.5 * 0.5 * (1 - th * th)).epsilon(1e-12));
}

TEST_CASE("gru BPTT matches finite differences") {
  for (Eigen::Index hidden : {2, 3}) {
    for (bool reverse : {false, true}) {
      const ParamStore p = gru_params(3, hidden, 11 + static_cast<std::uint64_t>(hidden));
      const Eigen::MatrixXd xs = Eigen::MatrixXd::Random(3, 7);
      const Eigen::MatrixXd w = Eigen::MatrixXd::Random(hidden, 7);
      LossFn loss = [&](const ParamStore& q, ParamStore* g) {
        GruTrace tr;
        gru_sequence_forward(gru_view(q, "g"), xs, reverse, tr);
        if (g) {
          Eigen::MatrixXd dx(3, 7);
          gru_sequence_backward(gru_view(q, "g"), tr, w, gru_grad_view(*g, "g"), dx);
        }
        return (tr.h.array() * w.array()).sum();
      };
      CHECK(grad_check(loss, p).max_rel_error < 1e-6);
    }
  }
}

TEST_CASE("gru input gradient matches finite differences") {
  const ParamStore p = gru_params(2, 2, 5);
  Eigen::MatrixXd xs = Eigen::MatrixXd::Random(2, 5);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 5);
  auto f = [&](const Eigen::MatrixXd& in) {
    GruTrace tr;
    gru_sequence_forward(gru_view(p, "g"), in, false, tr);
    return (tr.h.array() * w.array()).sum();
  };
  GruTrace tr;
  gru_sequence_forward(gru_view(p, "g"), xs, false, tr);
  ParamStore g = p.zeros_like();
  Eigen::MatrixXd dx(2, 5);
  gru_sequence_backward(gru_view(p, "g"), tr, w, gru_grad_view(g, "g"), dx);
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    Eigen::MatrixXd a = xs, b = xs;
    a.data()[i] += 1e-6;
    b.data()[i] -= 1e-6;
    CHECK(dx.data()[i] == doctest::Approx((f(a) - f(b)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("gru hidden states stay inside (-1, 1)") {
  const ParamStore p = gru_params(3, 2, 99);
  Eigen::MatrixXd xs = 20.0 * Eigen::MatrixXd::Random(3, 200);
  GruTrace tr;
  gru_sequence_forward(gru_view(p, "g"), xs, false, tr);
  CHECK(tr.h.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  Eigen::VectorXd th(1), g(1);
  th << 1.0;
  g << 0.5;
  AdamState st;
  adam_step<double>(th, g, st, {0.1});
  CHECK(th(0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(st.step == 1);
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  Eigen::VectorXd th = Eigen::VectorXd::LinSpaced(4, -1, 1);
  const Eigen::VectorXd before = th;
  AdamState st;
  for (int i = 0; i < 3; ++i) adam_step<double>(th, Eigen::VectorXd::Zero(4), st, {0.1});
  CHECK(th == before);
  CHECK(st.step == 3);
  CHECK((st.v.array() >= 0.0).all());
}

TEST_CASE("adam with a constant unit gradient steps by lr each time") {
  Eigen::VectorXd th(1);
  th << 0.0;
  AdamState st;
  const Eigen::VectorXd g = Eigen::VectorXd::Ones(1);
  adam_step<double>(th, g, st, {0.1});
  CHECK(std::abs(th(0) + 0.1) <= 1e-6);
  adam_step<double>(th, g, st, {0.1});
  CHECK(std::abs(th(0) + 0.2) <= 1e-6);
}

TEST_CASE("adam first step is invariant to gradient scale") {
  Eigen::VectorXd g(3);
  g << 0.3, -2.0, 1e-3;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(3), b = a;
  AdamState sa, sb;
  adam_step<double>(a, g, sa, {0.01});
  adam_step<double>(b, Eigen::VectorXd(250.0 * g), sb, {0.01});
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("adam rejects mismatched lengths") {
  Eigen::VectorXd th = Eigen::VectorXd::Zero(2);
  AdamState st;
  CHECK_THROWS_AS(adam_step<double>(th, Eigen::VectorXd::Zero(3), st, {}), ShapeError);
}

TEST_CASE("init_params respects bounds, zero biases and seeds") {
  ShapePlan plan{{"W", 4, 2, false}, {"b", 4, 1, true}, {"V", 3, 7, false}};
  CHECK(glorot_bound(4, 2) == 1.0);
  const auto a = init_params(plan, 3);
  const auto b = init_params(plan, 3);
  const auto c = init_params(plan, 4);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.block("W").cwiseAbs().maxCoeff() <= 1.0);
  CHECK(a.block("V").cwiseAbs().maxCoeff() <= glorot_bound(3, 7));
  CHECK(a.block("b").isZero(0.0));
}

TEST_CASE("param store flatten, unflatten and JSON round trip") {
  ShapePlan plan;
  add_gru_shapes(plan, "x", 3, 2);
  const auto p = init_params(plan, 21);
  CHECK(p.size() == 3 * 6 + 3 * 4 + 3 * 2);
  ParamStore q = p.zeros_like();
  q.unflatten(p.flatten());
  CHECK(q == p);
  const auto text = p.to_json_text();
  CHECK(ParamStore::from_json_text(text) == p);
  CHECK(ParamStore::from_json_text(text).to_json_text() == text);
  CHECK_THROWS_AS(ParamStore::from_json_text("{\"format_version\": 1"), SchemaError);
}

TEST_CASE("grad_check on trivial functions") {
  ParamStore p;
  p.add("t", 1, 1)(0, 0) = 3.0;
  LossFn square = [](const ParamStore& q, ParamStore* g) {
    const double t = q.block("t")(0, 0);
    if (g) g->block("t")(0, 0) += 2 * t;
    return t * t;
  };
  CHECK(grad_check(square, p).max_rel_error < 1e-9);
  LossFn flat = [](const ParamStore&, ParamStore*) { return 4.0; };
  CHECK(grad_check(flat, p).max_rel_error == 0.0);
  LossFn broken = [](const ParamStore& q, ParamStore*) { return std::log(q.block("t")(0, 0) - 3.0); };
  CHECK_THROWS_AS(grad_check(broken, p), NumericalError);
}
