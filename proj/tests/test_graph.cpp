#include <doctest.h>

#include <cmath>

#include "deari/grad_check.hpp"
#include "deari/graph.hpp"
#include "deari/params.hpp"
#include "deari/rng.hpp"

using namespace deari;

namespace {

// Central-difference probe over a single leaf, independent of the autodiff
// sweep (forward evaluations only).
real fd_on_leaf(const std::function<NodePtr(const NodePtr&)>& f, Array& x, int64_t i,
                real step = 1e-5) {
  const real saved = x[i];
  x[i] = saved + step;
  const real up = f(constant(x))->value[0];
  x[i] = saved - step;
  const real down = f(constant(x))->value[0];
  x[i] = saved;
  return (up - down) / (2 * step);
}

void check_leaf_grads(const std::function<NodePtr(const NodePtr&)>& f, Array x, real tol = 1e-4) {
  NodePtr in = leaf(x);
  NodePtr root = f(in);
  backward(root);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const real fd = fd_on_leaf(f, x, i);
    const real ad = in->grad[i];
    const real rel = std::abs(ad - fd) / std::max(std::abs(ad) + std::abs(fd), real(1e-4));
    CAPTURE(i);
    CAPTURE(ad);
    CAPTURE(fd);
    CHECK(rel < tol);
  }
}

Array random_array(Shape shape, uint64_t seed, real lo = -1.5, real hi = 1.5) {
  Array a(std::move(shape));
  Rng rng(seed);
  rng.fill_uniform(a, lo, hi);
  return a;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  NodePtr x = constant(Array::row({0}));
  CHECK(sigmoid(x)->value[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(softplus(x)->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(tanh_op(x)->value[0] == doctest::Approx(0.0));
  CHECK(relu(constant(Array::row({-2})))->value[0] == 0);
  CHECK(relu(constant(Array::row({3})))->value[0] == 3);
}

TEST_CASE("matmul identity returns operand") {
  Array a = random_array({3, 3}, 7);
  Array id({3, 3});
  for (int64_t i = 0; i < 3; ++i) id.at(i, i) = 1;
  NodePtr out = matmul(constant(id), constant(a));
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(out->value[i] == doctest::Approx(a[i]).epsilon(1e-14));
}

TEST_CASE("matmul shape mismatch raises structured error") {
  NodePtr a = constant(Array({2, 3}));
  NodePtr b = constant(Array({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(add(constant(Array({2, 3})), constant(Array({3, 2}))), ShapeError);
}

TEST_CASE("backward of sum of squares") {
  NodePtr x = leaf(Array::row({1, 2}));
  NodePtr root = sum_all(square(x));
  backward(root);
  CHECK(x->grad[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x->grad[1] == doctest::Approx(4.0).epsilon(1e-14));

  // repeated sweeps reproduce identical gradients
  backward(root);
  CHECK(x->grad[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x->grad[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("backward requires scalar root") {
  NodePtr x = leaf(Array::row({1, 2}));
  CHECK_THROWS_AS(backward(square(x)), std::invalid_argument);
}

TEST_CASE("leaf unused by the root keeps zero grad") {
  NodePtr x = leaf(Array::row({1, 2, 3}));
  NodePtr y = leaf(Array::row({2, 2}));
  x->zero_grad();
  backward(sum_all(square(y)));
  for (int64_t i = 0; i < 3; ++i) CHECK(x->grad[i] == 0);
}

TEST_CASE("every registered op matches central finite differences") {
  // One composition per op family, each reduced to a scalar through mean_all.
  using Builder = std::function<NodePtr(const NodePtr&)>;
  std::vector<std::pair<const char*, Builder>> cases;
  cases.emplace_back("exp", [](const NodePtr& x) { return mean_all(exp_op(x)); });
  cases.emplace_back("log", [](const NodePtr& x) { return mean_all(log_op(shift(square(x), 1))); });
  cases.emplace_back("sqrt", [](const NodePtr& x) { return mean_all(sqrt_op(shift(square(x), 1))); });
  cases.emplace_back("abs", [](const NodePtr& x) { return mean_all(abs_op(x)); });
  cases.emplace_back("relu", [](const NodePtr& x) { return mean_all(relu(x)); });
  cases.emplace_back("sigmoid", [](const NodePtr& x) { return mean_all(sigmoid(x)); });
  cases.emplace_back("tanh", [](const NodePtr& x) { return mean_all(tanh_op(x)); });
  cases.emplace_back("softplus", [](const NodePtr& x) { return mean_all(softplus(x)); });
  cases.emplace_back("neg/scale/shift", [](const NodePtr& x) { return mean_all(scale(shift(neg(x), 0.7), 1.3)); });
  cases.emplace_back("softmax", [](const NodePtr& x) { return mean_all(mul(softmax_last(x), x)); });
  cases.emplace_back("layer_norm", [](const NodePtr& x) { return mean_all(mul(layer_norm_last(x), x)); });
  cases.emplace_back("l2_normalize", [](const NodePtr& x) { return mean_all(mul(l2_normalize_rows(x), x)); });
  cases.emplace_back("transpose", [](const NodePtr& x) { return mean_all(square(transpose(x))); });
  cases.emplace_back("concat+slice", [](const NodePtr& x) {
    NodePtr c = concat_last(x, square(x));
    return mean_all(square(slice_last(c, 1, 4)));
  });
  cases.emplace_back("sum", [](const NodePtr& x) { return sum_all(tanh_op(x)); });

  uint64_t seed = 100;
  for (auto& [name, builder] : cases) {
    CAPTURE(name);
    check_leaf_grads(builder, random_array({3, 5}, seed++));
  }

  // binary ops against a fixed constant operand, plus row broadcast
  Array other = random_array({3, 5}, 999);
  Array rowvec = random_array({5}, 998);
  check_leaf_grads([&](const NodePtr& x) { return mean_all(mul(x, constant(other))); },
                   random_array({3, 5}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(add(x, constant(rowvec)))); },
                   random_array({3, 5}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(sub(x, constant(rowvec)))); },
                   random_array({3, 5}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(matmul(x, constant(random_array({5, 2}, 997))))); },
                   random_array({3, 5}, seed++));

  // broadcast operand itself receives gradient
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(add(constant(other), x))); },
                   random_array({5}, seed++));

  // 3-D ops
  check_leaf_grads([&](const NodePtr& x) { return mean_all(bmm(x, square(x))); },
                   random_array({2, 3, 3}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(bmm_nt(x, square(x))); },
                   random_array({2, 3, 3}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(mean_axis1(x))); },
                   random_array({2, 4, 3}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(slice_axis1(concat_axis1(x, x), 1, 3))); },
                   random_array({2, 2, 3}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(matmul(x, constant(random_array({3, 2}, 996))))); },
                   random_array({2, 4, 3}, seed++));
  check_leaf_grads([&](const NodePtr& x) { return mean_all(square(repeat_rows(x, 4))); },
                   random_array({1, 5}, seed++));

  // stack over timesteps uses the same leaf twice
  check_leaf_grads(
      [&](const NodePtr& x) {
        return mean_all(square(stack_axis1({x, square(x), x})));
      },
      random_array({2, 3}, seed++));

  // masked stable log1p-sum-exp
  Array mask({3, 5});
  Rng mrng(55);
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = mrng.uniform(0, 1) < 0.6 ? 1 : 0;
  check_leaf_grads([&](const NodePtr& x) { return mean_all(log1p_sum_exp_rows(x, mask)); },
                   random_array({3, 5}, seed++, -30, 30));
}

TEST_CASE("softmax rows sum to one") {
  Array x = random_array({4, 6}, 3, -5, 5);
  NodePtr y = softmax_last(constant(x));
  for (int64_t r = 0; r < 4; ++r) {
    real s = 0;
    for (int64_t j = 0; j < 6; ++j) s += y->value.at(r, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm rows have mean 0 and unit variance") {
  Array x = random_array({5, 16}, 11, -3, 3);
  NodePtr y = layer_norm_last(constant(x));
  for (int64_t r = 0; r < 5; ++r) {
    real mean = 0;
    for (int64_t j = 0; j < 16; ++j) mean += y->value.at(r, j);
    mean /= 16;
    real var = 0;
    for (int64_t j = 0; j < 16; ++j) {
      const real d = y->value.at(r, j) - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1) < 1e-6);
  }
}

TEST_CASE("l2_normalize yields unit rows") {
  Array x = random_array({4, 7}, 21);
  NodePtr y = l2_normalize_rows(constant(x));
  for (int64_t r = 0; r < 4; ++r) {
    real s = 0;
    for (int64_t j = 0; j < 7; ++j) s += y->value.at(r, j) * y->value.at(r, j);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("log1p_sum_exp matches naive evaluation and stays stable") {
  Array x({2, 3}, {0.5, -1.0, 2.0, 700.0, 699.0, -700.0});
  Array mask({2, 3}, {1, 1, 0, 1, 1, 1});
  NodePtr out = log1p_sum_exp_rows(constant(x), mask);
  const real naive0 = std::log(1 + std::exp(0.5) + std::exp(-1.0));
  CHECK(out->value[0] == doctest::Approx(naive0).epsilon(1e-12));
  // the huge row would overflow a naive evaluation
  CHECK(std::isfinite(out->value[1]));
  CHECK(out->value[1] == doctest::Approx(700.0 + std::log(1 + std::exp(-1.0))).epsilon(1e-9));
}

TEST_CASE("forward evaluation is deterministic") {
  Array x = random_array({4, 4}, 77);
  auto run = [&]() {
    NodePtr n = mean_all(softmax_last(matmul(constant(x), constant(x))));
    return n->value[0];
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check on parameter store compositions") {
  ParamStore store;
  Rng rng(5);
  Array w = random_array({4, 3}, 50);
  Array b = random_array({3}, 51);
  store.add("w", w);
  store.add("b", b);
  Array input = random_array({2, 4}, 52);

  SUBCASE("layer_norm then sum") {
    auto report = grad_check(store, [&](ParamBinding& p) {
      return sum_all(layer_norm_last(add(matmul(constant(input), p["w"]), p["b"])));
    });
    CHECK(report.max_rel_err < 1e-4);
  }
  SUBCASE("linear map is exact to rounding") {
    auto report = grad_check(store, [&](ParamBinding& p) {
      return sum_all(add(matmul(constant(input), p["w"]), p["b"]));
    });
    CHECK(report.max_rel_err < 1e-8);
  }
  SUBCASE("non-finite evaluation is an error") {
    store.at("w").value.fill(-1);
    CHECK_THROWS_AS(grad_check(store,
                               [&](ParamBinding& p) {
                                 return sum_all(log_op(p["w"]));
                               }),
                    std::runtime_error);
  }
}
