#include "oracles.hpp"
#include "sparsebody/autodiff/grad_check.hpp"
#include "sparsebody/autodiff/primitives.hpp"
#include "sparsebody/errors.hpp"

#include <doctest.h>

#include <random>

using namespace sparsebody;
using namespace sparsebody::ad;

namespace {

Tensor vec(std::initializer_list<double> v) {
  Array a(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) a[i++] = x;
  return Tensor({a.size()}, a);
}

// Checks d(f)/dx from the tape against the test-side finite-difference oracle.
double tape_vs_oracle(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tape tape;
  const Tensor xv = tape.variable(x);
  const Tensor y = f(xv);
  const Array analytic = tape.backward(y)[xv].data();
  const Array numeric = oracle::central_difference(
      [&](const Array& a) { return f(Tensor(x.shape(), a)).item(); }, x.data());
  return oracle::relative_error(analytic, numeric);
}

}  // namespace

TEST_CASE("add is componentwise") {
  const Tensor y = add(vec({1, 2}), vec({3, 4}));
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 6.0);
}

TEST_CASE("softmax of a constant row is uniform") {
  const Tensor y = softmax(Tensor({1, 2}, Array::Zero(2)));
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));
}

TEST_CASE("min over index set matches enumeration and routes gradient to the argmin") {
  const Tensor x = vec({3.0, 1.5, 2.0});
  const std::vector<Index> set{0, 1, 2};

  // Exhaustive enumeration oracle.
  double expected = x[set[0]];
  Index where = set[0];
  for (Index i : set) {
    if (x[i] < expected) {
      expected = x[i];
      where = i;
    }
  }

  Tape tape;
  const Tensor xv = tape.variable(x);
  const Tensor y = sum(min_over_sets(xv, {set}));
  CHECK(y.item() == expected);
  const Tensor g = tape.backward(y)[xv];
  for (Index i = 0; i < 3; ++i) CHECK(g[i] == (i == where ? 1.0 : 0.0));
}

TEST_CASE("min over index set ties go to the lowest index") {
  Tape tape;
  const Tensor xv = tape.variable(vec({2.0, 1.0, 1.0}));
  const Tensor y = sum(min_over_sets(xv, {{2, 1, 0}}));
  const Tensor g = tape.backward(y)[xv];
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
  CHECK(tape.nondifferentiable_count() == 1);
}

TEST_CASE("backward of sum is all ones") {
  Tape tape;
  const Tensor x = tape.variable(vec({0.3, -1.0, 7.0}));
  const Tensor g = tape.backward(sum(x))[x];
  CHECK((g.data() == 1.0).all());
}

TEST_CASE("backward of sum of squares is 2x") {
  Tape tape;
  const Tensor x = tape.variable(vec({1.0, 2.0}));
  const Tensor g = tape.backward(sum(mul(x, x)))[x];
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  const Tensor x = tape.variable(vec({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(mul(x, x)), ContractViolation);
}

TEST_CASE("shape mismatches name the primitive") {
  try {
    add(vec({1, 2}), vec({1, 2, 3}));
    FAIL("expected a DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
    CHECK(std::string(e.what()).find("[2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(gather(Tensor::zeros({2, 3}), 0, {2}), DimensionError);
}

TEST_CASE("apply_primitive dispatches by name and rejects unknown ids") {
  const std::vector<Tensor> in{vec({1, 2}), vec({3, 4})};
  CHECK(apply_primitive("multiply", in)[1] == 8.0);
  CHECK_THROWS_AS(apply_primitive("convolve", in), ConfigurationError);
  Attributes a;
  a.axis = 0;
  CHECK(apply_primitive(Primitive::kConcatenate, in, a).size() == 4);
}

TEST_CASE("subgradient conventions") {
  Tape tape;
  const Tensor x = tape.variable(vec({0.0, 0.5, -0.5}));
  const Tensor ga = tape.backward(sum(ad::abs(x)))[x];
  CHECK(ga[0] == 0.0);
  CHECK(ga[1] == 1.0);
  CHECK(ga[2] == -1.0);
  const Tensor gm = tape.backward(sum(max_constant(x, 0.5)))[x];
  CHECK(gm[1] == 0.0);
}

TEST_CASE("dropout with an all-ones mask is the identity") {
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor(rng, {4, 5});
  const Tensor y = dropout(x, Tensor::full({4, 5}, 1.0));
  CHECK((y.data() == x.data()).all());
}

TEST_CASE("every primitive matches central differences at random points") {
  std::mt19937_64 rng(20240611);
  for (int trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    const Tensor w = oracle::random_tensor(rng, {3, 4});
    const Tensor v = oracle::random_tensor(rng, {2, 3, 4});
    const Tensor bias = oracle::random_tensor(rng, {4});
    const Tensor mask(Shape{2, 3, 4}, (oracle::uniform(rng, 24, 0, 1) > 0.3).cast<double>() / 0.7);

    const Tensor x2(Shape{2, 3}, oracle::nonzero_uniform(rng, 6));
    CHECK(tape_vs_oracle([&](const Tensor& x) { return sum(mul(matmul(x, w), matmul(x, w))); }, x2) < 1e-6);
    CHECK(tape_vs_oracle([&](const Tensor& x) { return sum(mul(matmul(w, x), matmul(w, x))); },
                         oracle::random_tensor(rng, {2, 4, 3})) < 1e-6);
    CHECK(tape_vs_oracle([&](const Tensor& x) { return mean(ad::abs(add_bias(matmul(x, w), bias))); },
                         oracle::random_tensor(rng, {2, 5, 3})) < 1e-6);
    CHECK(tape_vs_oracle([&](const Tensor& x) { return sum(ad::abs(sub(softmax(x, 1), dropout(x, mask)))); },
                         Tensor(Shape{2, 3, 4}, oracle::nonzero_uniform(rng, 24, 0.2))) < 1e-4);
    CHECK(tape_vs_oracle([&](const Tensor& x) { return sum(relu(scale(x, 2.5))); },
                         Tensor(Shape{7}, oracle::nonzero_uniform(rng, 7))) < 1e-6);
    CHECK(tape_vs_oracle([&](const Tensor& x) { return sum(max_constant(x, 0.01)); },
                         Tensor(Shape{7}, oracle::nonzero_uniform(rng, 7))) < 1e-6);
    CHECK(tape_vs_oracle(
              [&](const Tensor& x) {
                return sum(mul(min_over_sets(x, {{0, 1, 2}, {3, 4, 5, 6}, {0, 6}}), vec({1.0, 2.0, 3.0})));
              },
              oracle::random_tensor(rng, {7})) < 1e-6);
    CHECK(tape_vs_oracle(
              [&](const Tensor& x) {
                const Tensor s = sum(mul(x, x), {1});
                return sum(mul(s, mean(x, {1})));
              },
              oracle::random_tensor(rng, {2, 3, 4})) < 1e-6);
    CHECK(tape_vs_oracle(
              [&](const Tensor& x) {
                const Tensor g = gather(x, 1, {2, 0, 2});
                const Tensor c = concatenate({g, x}, 1);
                return sum(mul(c, c));
              },
              oracle::random_tensor(rng, {2, 3, 4})) < 1e-6);
    CHECK(tape_vs_oracle(
              [&](const Tensor& x) {
                const Tensor t = transpose_last2(x);
                const Tensor c = compose(x, t);
                return sum(mul(c, reshape(c, {2, 3, 3})));
              },
              oracle::random_tensor(rng, {2, 3, 4})) < 1e-6);
    const Tensor rot_weights = oracle::random_tensor(rng, {3, 3, 3});
    CHECK(tape_vs_oracle(
              [&](const Tensor& q) {
                const Tensor r = quat_to_rotation(quat_normalize(q));
                return sum(mul(r, rot_weights));
              },
              oracle::random_tensor(rng, {3, 4}, 0.2, 1.0)) < 1e-4);
  }
}

TEST_CASE("forward and backward are deterministic") {
  std::mt19937_64 rng(5);
  const Tensor x0 = oracle::random_tensor(rng, {4, 6});
  const Tensor w = oracle::random_tensor(rng, {6, 3});
  const auto run = [&] {
    Tape tape;
    const Tensor x = tape.variable(x0);
    const Tensor y = mean(ad::abs(softmax(matmul(x, w))));
    return std::make_pair(y.item(), tape.backward(y)[x].data());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK((a.second == b.second).all());
}

TEST_CASE("grad_check passes the L1 norm away from zero") {
  std::mt19937_64 rng(11);
  const Tensor x(Shape{9}, oracle::nonzero_uniform(rng, 9));
  const auto r = grad_check([](const Tensor& t) { return sum(ad::abs(t)); }, x, 1e-5, 1e-4);
  CHECK(r.passed());
}

TEST_CASE("grad_check on a constant function") {
  const auto r = grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, vec({1, 2}), 1e-5, 1e-4);
  CHECK(r.passed());
  CHECK(r.max_relative_error == 0.0);
}

TEST_CASE("grad_check skips ties in min") {
  const auto r = grad_check([](const Tensor& t) { return sum(min_over_sets(t, {{0, 1}})); }, vec({1.0, 1.0}));
  CHECK(r.status == GradCheckStatus::kSkipped);
  CHECK(r.message == "non-differentiable point, skipped");
}

TEST_CASE("grad_check flags a wrong gradient and non-finite values") {
  // relu has a kink at 0; away from it a deliberately wrong rule must fail.
  const auto bad = [](const Tensor& t) {
    const Tensor detached = t.detach();
    return sum(add(mul(detached, detached), t));  // true gradient is 2x + 1, tape sees only 1
  };
  CHECK(grad_check(bad, vec({1.0, 2.0})).status == GradCheckStatus::kFail);
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return scale(sum(t), std::nan("")); }, vec({1.0})),
                  NumericError);
}

TEST_CASE("degenerate quaternion is rejected") {
  CHECK_THROWS_AS(quat_normalize(Tensor({1, 4}, Array::Zero(4))), DegenerateRotationError);
}
