#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gaze3d/autodiff.hpp"
#include "gaze3d/rng.hpp"

using namespace gaze3d;

namespace {

struct LeafSpec {
  int rows, cols;
  double lo = -1.0, hi = 1.0;
};

// Central-difference comparison of d(loss)/d(leaf) for every leaf coordinate.
// The builder must construct a scalar loss from the given leaves.
template <typename T>
double max_rel_grad_error(
    const std::function<ad::Var<T>(ad::Tape<T>&, const std::vector<ad::Var<T>>&)>& build,
    const std::vector<LeafSpec>& leaf_specs, std::uint64_t seed, T h) {
  Rng rng(seed);
  std::vector<std::vector<T>> values;
  for (const LeafSpec& s : leaf_specs) {
    std::vector<T> v(static_cast<std::size_t>(s.rows) * s.cols);
    for (T& x : v) x = static_cast<T>(rng.uniform(s.lo, s.hi));
    values.push_back(std::move(v));
  }

  const auto run = [&](const std::vector<std::vector<T>>& vals, bool want_grads,
                       std::vector<std::vector<T>>* grads) -> T {
    ad::Tape<T> tape;
    std::vector<ad::Var<T>> leaves;
    for (std::size_t i = 0; i < vals.size(); ++i)
      leaves.push_back(tape.leaf(vals[i], leaf_specs[i].rows, leaf_specs[i].cols, want_grads));
    ad::Var<T> loss = build(tape, leaves);
    if (want_grads) {
      tape.backward(loss);
      grads->clear();
      for (auto leaf : leaves) grads->push_back(tape.grad(leaf));
    }
    return tape.val(loss)[0];
  };

  std::vector<std::vector<T>> analytic;
  run(values, true, &analytic);

  // worst coordinate error relative to the leaf's gradient magnitude
  double worst = 0.0;
  for (std::size_t li = 0; li < values.size(); ++li) {
    double max_abs_diff = 0.0, scale = 1e-6;
    for (std::size_t i = 0; i < values[li].size(); ++i) {
      std::vector<std::vector<T>> plus = values, minus = values;
      plus[li][i] += h;
      minus[li][i] -= h;
      const double fd =
          (static_cast<double>(run(plus, false, nullptr)) - run(minus, false, nullptr)) /
          (2.0 * static_cast<double>(h));
      const double an = analytic[li][i];
      max_abs_diff = std::max(max_abs_diff, std::abs(fd - an));
      scale = std::max({scale, std::abs(an), std::abs(fd)});
    }
    worst = std::max(worst, max_abs_diff / scale);
  }
  return worst;
}

template <typename T>
void check_primitive(
    const char* name,
    const std::function<ad::Var<T>(ad::Tape<T>&, const std::vector<ad::Var<T>>&)>& build,
    const std::vector<LeafSpec>& leaf_specs, T h, double tol) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double err = max_rel_grad_error<T>(build, leaf_specs, seed, h);
    INFO(std::string(name) << " seed " << seed << " rel err " << err);
    CHECK(err < tol);
  }
}

// weighted sum against a fixed pattern, so every output coordinate matters
template <typename T>
ad::Var<T> pin(ad::Tape<T>& tp, ad::Var<T> out) {
  const int r = tp.rows(out), c = tp.cols(out);
  std::vector<T> w(static_cast<std::size_t>(r) * c);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(0.25 + 0.5 * ((i * 2654435761u) % 97) / 97.0);
  return tp.dot(out, tp.leaf(w, r, c, false));
}

template <typename T>
void run_primitive_suite(T h, double tol) {
  using V = std::vector<ad::Var<T>>;
  using Tp = ad::Tape<T>;

  check_primitive<T>("add", [](Tp& t, const V& l) { return pin(t, t.add(l[0], l[1])); },
                     {{3, 4}, {3, 4}}, h, tol);
  check_primitive<T>("add_rowvec",
                     [](Tp& t, const V& l) { return pin(t, t.add_rowvec(l[0], l[1])); },
                     {{3, 4}, {1, 4}}, h, tol);
  check_primitive<T>("mul", [](Tp& t, const V& l) { return pin(t, t.mul(l[0], l[1])); },
                     {{3, 4}, {3, 4}}, h, tol);
  check_primitive<T>("mul_scalar",
                     [](Tp& t, const V& l) { return pin(t, t.mul_scalar(l[0], T(1.7))); }, {{3, 4}},
                     h, tol);
  check_primitive<T>("matmul", [](Tp& t, const V& l) { return pin(t, t.matmul(l[0], l[1])); },
                     {{3, 5}, {5, 4}}, h, tol);
  check_primitive<T>("transpose", [](Tp& t, const V& l) { return pin(t, t.transpose(l[0])); },
                     {{3, 5}}, h, tol);
  check_primitive<T>("relu", [](Tp& t, const V& l) { return pin(t, t.relu(l[0])); },
                     {{3, 4, 0.2, 1.0}}, h, tol);  // away from the kink
  check_primitive<T>("relu_negative", [](Tp& t, const V& l) { return pin(t, t.relu(l[0])); },
                     {{3, 4, -1.0, -0.2}}, h, tol);
  check_primitive<T>("layer_norm",
                     [](Tp& t, const V& l) { return pin(t, t.layer_norm_rows(l[0])); }, {{3, 8}},
                     h, tol);
  check_primitive<T>("rowwise_affine",
                     [](Tp& t, const V& l) { return pin(t, t.rowwise_affine(l[0], l[1], l[2])); },
                     {{3, 4}, {1, 4, 0.5, 1.5}, {1, 4}}, h, tol);
  check_primitive<T>("softmax", [](Tp& t, const V& l) {
                       return pin(t, t.softmax_rows(l[0], std::nullopt, nullptr));
                     },
                     {{3, 5}}, h, tol);
  check_primitive<T>("softmax_bias_mask", [](Tp& t, const V& l) {
                       static const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0};
                       return pin(t, t.softmax_rows(l[0], l[1], &mask));
                     },
                     {{3, 5}, {1, 5}}, h, tol);
  check_primitive<T>("concat_cols",
                     [](Tp& t, const V& l) { return pin(t, t.concat_cols(l[0], l[1])); },
                     {{3, 4}, {3, 2}}, h, tol);
  check_primitive<T>("concat_rows",
                     [](Tp& t, const V& l) { return pin(t, t.concat_rows(l[0], l[1])); },
                     {{2, 4}, {3, 4}}, h, tol);
  check_primitive<T>("slice_cols",
                     [](Tp& t, const V& l) { return pin(t, t.slice_cols(l[0], 1, 4)); }, {{3, 6}},
                     h, tol);
  check_primitive<T>("slice_rows",
                     [](Tp& t, const V& l) { return pin(t, t.slice_rows(l[0], 1, 3)); }, {{4, 3}},
                     h, tol);
  check_primitive<T>("mean", [](Tp& t, const V& l) { return t.mean_all(l[0]); }, {{3, 4}}, h, tol);
  check_primitive<T>("dot", [](Tp& t, const V& l) { return t.dot(l[0], l[1]); },
                     {{1, 6}, {1, 6}}, h, tol);
  check_primitive<T>("l2_normalize",
                     [](Tp& t, const V& l) { return pin(t, t.l2_normalize(l[0])); },
                     {{1, 3, 0.3, 1.0}}, h, tol);
  check_primitive<T>("arccos", [](Tp& t, const V& l) { return pin(t, t.arccos_clamped(l[0])); },
                     {{1, 4, -0.8, 0.8}}, h, tol);
  check_primitive<T>("mlp2", [](Tp& t, const V& l) {
                       auto h1 = t.relu(t.add_rowvec(t.matmul(l[0], l[1]), l[2]));
                       auto out = t.add_rowvec(t.matmul(h1, l[3]), l[4]);
                       return pin(t, out);
                     },
                     {{1, 8, 0.1, 1.0}, {8, 16, -0.5, 0.5}, {1, 16, 0.1, 0.3},
                      {16, 4, -0.5, 0.5}, {1, 4}},
                     h, tol);
}

}  // namespace

TEST_CASE("gradients match central differences (single precision)") {
  run_primitive_suite<float>(1e-3f, 1e-2);
}

TEST_CASE("gradients match central differences (double precision)") {
  run_primitive_suite<double>(1e-5, 1e-4);
}

TEST_CASE("softmax forward semantics") {
  ad::Tape<float> tp;
  SUBCASE("uniform logits") {
    auto x = tp.leaf({0.f, 0.f, 0.f}, 1, 3, false);
    const auto& y = tp.val(tp.softmax_rows(x, std::nullopt, nullptr));
    for (float v : y) CHECK(v == doctest::Approx(1.0f / 3));
  }
  SUBCASE("masked position renormalizes over the rest") {
    auto x = tp.leaf({0.3f, -0.2f, 5.0f}, 1, 3, false);
    const std::vector<std::uint8_t> mask = {1, 1, 0};
    const auto& y = tp.val(tp.softmax_rows(x, std::nullopt, &mask));
    CHECK(y[2] == 0.0f);
    const double z = std::exp(0.3) + std::exp(-0.2);
    CHECK(y[0] == doctest::Approx(std::exp(0.3) / z));
    CHECK(y[1] == doctest::Approx(std::exp(-0.2) / z));
  }
  SUBCASE("fully masked row yields zeros") {
    auto x = tp.leaf({1.f, 2.f, 3.f}, 1, 3, false);
    const std::vector<std::uint8_t> mask = {0, 0, 0};
    const auto& y = tp.val(tp.softmax_rows(x, std::nullopt, &mask));
    for (float v : y) CHECK(v == 0.0f);
  }
  SUBCASE("bias shifts the logits") {
    auto x = tp.leaf({0.f, 0.f}, 1, 2, false);
    auto b = tp.leaf({std::log(3.f), 0.f}, 1, 2, false);
    const auto& y = tp.val(tp.softmax_rows(x, b, nullptr));
    CHECK(y[0] == doctest::Approx(0.75f));
    CHECK(y[1] == doctest::Approx(0.25f));
  }
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  ad::Tape<float> tp;
  Rng rng(5);
  std::vector<float> vals(6 * 32);
  for (float& v : vals) v = static_cast<float>(rng.uniform(-3, 3));
  auto x = tp.leaf(vals, 6, 32, false);
  const auto& y = tp.val(tp.layer_norm_rows(x));
  for (int r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 32; ++c) mean += y[r * 32 + c];
    mean /= 32;
    for (int c = 0; c < 32; ++c) var += (y[r * 32 + c] - mean) * (y[r * 32 + c] - mean);
    var /= 32;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("quadratic form gradient is exact") {
  ad::Tape<double> tp;
  const std::vector<double> xv = {0.5, -1.5, 2.0};
  auto x = tp.leaf(xv, 1, 3, true);
  tp.backward(tp.dot(x, x));
  const auto& g = tp.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == 2.0 * xv[i]);
}

TEST_CASE("arccos gradient saturates at the clamp") {
  const double eps = 1e-7;
  SUBCASE("boundary magnitude") {
    ad::Tape<double> tp;
    auto x = tp.leaf({1.0 - eps}, 1, 1, true);
    tp.backward(tp.arccos_clamped(x, eps));
    const double bound = 1.0 / std::sqrt(2 * eps - eps * eps);
    CHECK(std::isfinite(tp.grad(x)[0]));
    CHECK(std::abs(tp.grad(x)[0]) <= bound * (1 + 1e-9));
    CHECK(std::abs(tp.grad(x)[0]) == doctest::Approx(bound).epsilon(1e-9));
  }
  SUBCASE("outside the window the gradient is zero") {
    ad::Tape<double> tp;
    auto x = tp.leaf({1.0}, 1, 1, true);
    tp.backward(tp.arccos_clamped(x, eps));
    CHECK(tp.grad(x)[0] == 0.0);
  }
}

TEST_CASE("structured shape errors") {
  ad::Tape<float> tp;
  auto a = tp.leaf(std::vector<float>(6, 1.f), 2, 3, false);
  auto b = tp.leaf(std::vector<float>(6, 1.f), 3, 2, false);
  try {
    tp.add(a, b);
    FAIL("expected a shape error");
  } catch (const domain_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
  CHECK_THROWS_AS(tp.backward(a), domain_error);  // non-scalar loss
}

TEST_CASE("identical seeds give bitwise identical forward and backward") {
  const auto run = [](std::vector<float>* grads) {
    Rng rng(17);
    std::vector<float> xv(4 * 8), wv(8 * 8);
    for (float& v : xv) v = static_cast<float>(rng.uniform(-1, 1));
    for (float& v : wv) v = static_cast<float>(rng.uniform(-1, 1));
    ad::Tape<float> tp;
    auto x = tp.leaf(xv, 4, 8, false);
    auto w = tp.leaf(wv, 8, 8, true);
    auto y = tp.layer_norm_rows(tp.relu(tp.matmul(x, w)));
    auto loss = tp.mean_all(y);
    tp.backward(loss);
    *grads = tp.grad(w);
    return tp.val(loss)[0];
  };
  std::vector<float> g1, g2;
  const float l1 = run(&g1), l2 = run(&g2);
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
