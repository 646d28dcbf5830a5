#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sac/gradcheck.hpp"
#include "sac/reference.hpp"
#include "sac/tensor.hpp"
#include "testutil.hpp"

using namespace sac;
using sactest::bits_equal;
using sactest::max_abs_diff;

TEST_CASE("matmul identity and projector") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, a);
  CHECK(bits_equal(out.values(), a.values()));

  Tensor proj = Tensor::from({2, 2}, {1, 0, 0, 0});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor pb = matmul(proj, b);
  std::vector<float> want{5, 6, 0, 0};
  CHECK(bits_equal(pb.values(), std::span<const float>(want)));
}

TEST_CASE("matmul errors name both shapes") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[3,4]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[5,2]"), ShapeError);
  Tensor c = Tensor::zeros({2, 3, 4});
  Tensor d = Tensor::zeros({3, 4, 2});
  CHECK_THROWS_AS(matmul(c, d), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(7);
  auto impl = [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); };
  auto ref = [](const std::vector<ref::dvec>& in) {
    return ref::matmul(in[0], {3, 4}, in[1], {4, 2}, nullptr);
  };
  auto r = gradcheck::check_op("matmul", impl, ref, {{3, 4}, {4, 2}}, rng);
  INFO(r.max_grad_diff);
  CHECK(r.pass);
}

TEST_CASE("matmul batched and broadcast") {
  Rng rng(8);
  auto ref_b = [](const std::vector<ref::dvec>& in) {
    return ref::matmul(in[0], {2, 3, 4}, in[1], {2, 4, 2}, nullptr);
  };
  auto r1 = gradcheck::check_op(
      "matmul_batched", [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }, ref_b,
      {{2, 3, 4}, {2, 4, 2}}, rng);
  CHECK(r1.pass);
  auto ref_bc = [](const std::vector<ref::dvec>& in) {
    return ref::matmul(in[0], {2, 3, 4}, in[1], {4, 2}, nullptr);
  };
  auto r2 = gradcheck::check_op(
      "matmul_broadcast", [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
      ref_bc, {{2, 3, 4}, {4, 2}}, rng);
  CHECK(r2.pass);
}

TEST_CASE("conv2d identity via 1x1 unit kernel") {
  Rng rng(3);
  Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
  Tensor w = Tensor::from({1, 1, 1, 1}, {1.0f});
  Tensor y = conv2d(x, w, 1, 0);
  CHECK(bits_equal(y.values(), x.values()));
}

TEST_CASE("conv2d all-ones 3x3 sums the window") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, w, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.0f);
}

TEST_CASE("conv2d geometry error when output would be empty") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor w = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, w, 1, 0), GeometryError);
}

TEST_CASE("conv2d gradient vs finite differences") {
  Rng rng(11);
  auto impl = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], 2, 1); };
  auto ref = [](const std::vector<ref::dvec>& in) {
    return ref::conv2d(in[0], {2, 3, 8, 8}, in[1], {4, 3, 3, 3}, 2, 1, 1, nullptr);
  };
  auto r = gradcheck::check_op("conv2d_s2p1", impl, ref, {{2, 3, 8, 8}, {4, 3, 3, 3}}, rng);
  INFO(r.max_grad_diff);
  CHECK(r.pass);
}

TEST_CASE("conv2d depthwise and pointwise gradients") {
  Rng rng(12);
  auto dw_impl = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], 1, 1, 4); };
  auto dw_ref = [](const std::vector<ref::dvec>& in) {
    return ref::conv2d(in[0], {1, 4, 6, 6}, in[1], {4, 1, 3, 3}, 1, 1, 4, nullptr);
  };
  CHECK(gradcheck::check_op("conv2d_depthwise", dw_impl, dw_ref, {{1, 4, 6, 6}, {4, 1, 3, 3}}, rng)
            .pass);
  auto pw_impl = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], 1, 0); };
  auto pw_ref = [](const std::vector<ref::dvec>& in) {
    return ref::conv2d(in[0], {2, 6, 4, 4}, in[1], {8, 6, 1, 1}, 1, 0, 1, nullptr);
  };
  CHECK(gradcheck::check_op("conv2d_pointwise", pw_impl, pw_ref, {{2, 6, 4, 4}, {8, 6, 1, 1}}, rng)
            .pass);
}

TEST_CASE("linear gradient and bias") {
  Rng rng(13);
  auto impl = [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); };
  auto ref = [](const std::vector<ref::dvec>& in) {
    return ref::linear(in[0], 5, 7, in[1], 3, &in[2]);
  };
  auto r = gradcheck::check_op("linear", impl, ref, {{5, 7}, {3, 7}, {3}}, rng);
  CHECK(r.pass);
}

TEST_CASE("layernorm of a constant vector is zero before gain/bias") {
  Tensor x = Tensor::full({1, 6}, 3.25f);
  Tensor gain = Tensor::full({6}, 1.0f);
  Tensor bias = Tensor::zeros({6});
  Tensor y = layernorm(x, -1, gain, bias);
  for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("layernorm gradient, middle axis") {
  Rng rng(14);
  auto impl = [](const std::vector<Tensor>& in) { return layernorm(in[0], 1, in[1], in[2]); };
  auto ref = [](const std::vector<ref::dvec>& in) {
    return ref::layernorm(in[0], {2, 5, 3}, 1, in[1], in[2], 1e-5);
  };
  auto r = gradcheck::check_op("layernorm", impl, ref, {{2, 5, 3}, {5}, {5}}, rng);
  INFO(r.max_grad_diff);
  CHECK(r.pass);
}

TEST_CASE("layernorm axis out of range") {
  Tensor x = Tensor::zeros({2, 3});
  Tensor g = Tensor::zeros({3});
  CHECK_THROWS_AS(layernorm(x, 2, g, g), ShapeError);
}

TEST_CASE("global_avg_pool of a constant map") {
  Tensor x = Tensor::full({2, 3, 4, 4}, 2.5f);
  Tensor y = global_avg_pool(x);
  CHECK(y.shape() == Shape{2, 3});
  for (float v : y.values()) CHECK(v == doctest::Approx(2.5f).epsilon(1e-7));
}

TEST_CASE("pool, mean, softmax, gelu gradients") {
  Rng rng(15);
  CHECK(gradcheck::check_op(
            "global_avg_pool",
            [](const std::vector<Tensor>& in) { return global_avg_pool(in[0]); },
            [](const std::vector<ref::dvec>& in) { return ref::global_avg_pool(in[0], {2, 3, 4, 4}); },
            {{2, 3, 4, 4}}, rng)
            .pass);
  CHECK(gradcheck::check_op(
            "mean_axis0", [](const std::vector<Tensor>& in) { return mean_axis(in[0], 0); },
            [](const std::vector<ref::dvec>& in) { return ref::mean_axis(in[0], {3, 4, 5}, 0); },
            {{3, 4, 5}}, rng)
            .pass);
  CHECK(gradcheck::check_op(
            "softmax", [](const std::vector<Tensor>& in) { return softmax_lastdim(in[0]); },
            [](const std::vector<ref::dvec>& in) { return ref::softmax_lastdim(in[0], 4, 5); },
            {{4, 5}}, rng)
            .pass);
  CHECK(gradcheck::check_op(
            "gelu", [](const std::vector<Tensor>& in) { return gelu(in[0]); },
            [](const std::vector<ref::dvec>& in) { return ref::gelu(in[0]); }, {{11}}, rng)
            .pass);
}

TEST_CASE("elementwise gradients") {
  Rng rng(16);
  CHECK(gradcheck::check_op(
            "add", [](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
            [](const std::vector<ref::dvec>& in) {
              ref::dvec o(in[0].size());
              for (size_t i = 0; i < o.size(); ++i) o[i] = in[0][i] + in[1][i];
              return o;
            },
            {{3, 4}, {3, 4}}, rng)
            .pass);
  CHECK(gradcheck::check_op(
            "mul", [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
            [](const std::vector<ref::dvec>& in) {
              ref::dvec o(in[0].size());
              for (size_t i = 0; i < o.size(); ++i) o[i] = in[0][i] * in[1][i];
              return o;
            },
            {{3, 4}, {3, 4}}, rng)
            .pass);
  CHECK(gradcheck::check_op(
            "scale", [](const std::vector<Tensor>& in) { return scale(in[0], 1.7f); },
            [](const std::vector<ref::dvec>& in) {
              ref::dvec o(in[0].size());
              for (size_t i = 0; i < o.size(); ++i) o[i] = 1.7f * in[0][i];
              return o;
            },
            {{9}}, rng)
            .pass);
}

TEST_CASE("elementwise shape mismatch") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
}

TEST_CASE("concat then split round-trips bit-exactly") {
  Rng rng(17);
  Tensor a = Tensor::randn({2, 3, 4}, rng);
  Tensor b = Tensor::randn({2, 5, 4}, rng);
  Tensor c = Tensor::randn({2, 1, 4}, rng);
  Tensor joined = concat({a, b, c}, 1);
  auto parts = split(joined, 1, {3, 5, 1});
  REQUIRE(parts.size() == 3);
  CHECK(bits_equal(parts[0].values(), a.values()));
  CHECK(bits_equal(parts[1].values(), b.values()));
  CHECK(bits_equal(parts[2].values(), c.values()));
}

TEST_CASE("concat ragged shapes error") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(concat({a, b}, 1), ShapeError);
  CHECK_THROWS_AS(split(a, 1, {1, 1}), ShapeError);
}

TEST_CASE("concat and split gradients flow") {
  Rng rng(18);
  Tensor a = Tensor::randn({2, 3}, rng, 1.0, true);
  Tensor b = Tensor::randn({2, 2}, rng, 1.0, true);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    Tensor j = concat({a, b}, 1);
    auto parts = split(j, 1, {1, 4});
    Tensor loss = add(sum_all(parts[0]), scale(sum_all(parts[1]), 2.0f));
    tape.backward(loss);
  }
  // columns of the joined tensor: [a0 | a1 a2 b0 b1]; first split column gets
  // weight 1, the rest weight 2
  std::vector<float> want_a{1, 2, 2, 1, 2, 2};
  std::vector<float> want_b{2, 2, 2, 2};
  CHECK(bits_equal(std::span<const float>(a.grad()), std::span<const float>(want_a)));
  CHECK(bits_equal(std::span<const float>(b.grad()), std::span<const float>(want_b)));
}

TEST_CASE("reshape and permute round-trip with gradients") {
  Rng rng(19);
  Tensor x = Tensor::randn({2, 3, 4}, rng, 1.0, true);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    Tensor y = permute(x, {2, 0, 1});
    CHECK(y.shape() == Shape{4, 2, 3});
    Tensor z = permute(y, {1, 2, 0});
    CHECK(bits_equal(z.values(), x.values()));
    Tensor r = reshape(z, {6, 4});
    tape.backward(sum_all(r));
  }
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("repeat_axis0 sums gradient over copies") {
  Rng rng(20);
  Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    Tensor y = repeat_axis0(x, 4);
    CHECK(y.shape() == Shape{4, 2, 3});
    tape.backward(sum_all(y));
  }
  for (float g : x.grad()) CHECK(g == 4.0f);
}

TEST_CASE("backward: loss = sum(x) gives ones") {
  Tensor x = Tensor::from({2, 2}, {4, 3, 2, 1}, true);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    tape.backward(sum_all(x));
  }
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward: loss = sum(x*x) analytic") {
  Tensor x = Tensor::from({2}, {1.0f, -2.0f}, true);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    tape.backward(sum_all(mul(x, x)));
  }
  CHECK(x.grad()[0] == 2.0f);
  CHECK(x.grad()[1] == -4.0f);
}

TEST_CASE("backward requires scalar connected loss") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor vec, disconnected;
  {
    Tape::Scope scope(&tape);
    vec = add(x, x);
    disconnected = Tensor::scalar(1.0f);
  }
  CHECK_THROWS_AS(tape.backward(vec), ContractError);
  CHECK_THROWS_AS(tape.backward(disconnected), ContractError);
}

TEST_CASE("repeated backward without zero_grad accumulates") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(&tape);
    loss = sum_all(x);
  }
  tape.backward(loss);
  tape.backward(loss);
  for (float g : x.grad()) CHECK(g == 2.0f);
  x.zero_grad();
  tape.backward(loss);
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("multiple uses of a tensor sum their contributions") {
  Tensor x = Tensor::from({2}, {3.0f, 5.0f}, true);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    // loss = sum(x*x + 2x) -> d/dx = 2x + 2
    Tensor loss = sum_all(add(mul(x, x), scale(x, 2.0f)));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == 8.0f);
  CHECK(x.grad()[1] == 12.0f);
}

TEST_CASE("linearity of backward") {
  Rng rng(21);
  const float a = 1.5f, b = -0.75f;
  std::vector<float> base(12);
  for (float& v : base) v = static_cast<float>(rng.normal());

  auto grad_of = [&](const std::function<Tensor(const Tensor&)>& fn) {
    Tensor x = Tensor::from({3, 4}, base, true);
    Tape tape;
    {
      Tape::Scope scope(&tape);
      tape.backward(fn(x));
    }
    return x.grad();
  };
  auto f = [](const Tensor& x) { return sum_all(mul(x, x)); };
  auto g = [](const Tensor& x) { return sum_all(x); };
  auto combined = [&](const Tensor& x) { return add(scale(f(x), a), scale(g(x), b)); };

  auto gf = grad_of(f), gg = grad_of(g), gc = grad_of(combined);
  for (size_t i = 0; i < gf.size(); ++i)
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-6));
}

TEST_CASE("determinism: identical seeds give bit-identical values and grads") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({4, 6}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 6}, rng, 0.5, true);
    Tape tape;
    {
      Tape::Scope scope(&tape);
      Tensor y = linear(x, w, Tensor());
      tape.backward(sum_all(mul(y, y)));
    }
    return std::pair{std::vector<float>(x.grad()), std::vector<float>(w.grad())};
  };
  auto [ga1, gw1] = run(99);
  auto [ga2, gw2] = run(99);
  CHECK(bits_equal(std::span<const float>(ga1), std::span<const float>(ga2)));
  CHECK(bits_equal(std::span<const float>(gw1), std::span<const float>(gw2)));
}

TEST_CASE("no tape, no recording") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = add(x, x);  // outside any tape scope
  CHECK_FALSE(y.requires_grad());
}
