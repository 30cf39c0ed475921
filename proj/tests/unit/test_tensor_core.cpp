#include <doctest.h>

#include "test_support.hpp"
#include "vqunet/optim.hpp"

using namespace vqunet;
using namespace vqunet::testing;

TEST_SUITE("conv2d") {
  TEST_CASE("identity 1x1 kernel with same padding reproduces the input") {
    Rng rng(1);
    const Tensor x = random_tensor({1, 3, 3, 1}, rng);
    const Tensor k({1, 1, 1, 1}, {1.0});
    const Tensor y = conv2d(x, k, 1, Padding::kSame);
    CHECK(y.shape() == x.shape());
    CHECK(bit_equal(y.data(), x.data()));
  }

  TEST_CASE("2x2 all-ones kernel in valid mode sums the window") {
    const Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
    const Tensor k({2, 2, 1, 1}, {1, 1, 1, 1});
    const Tensor y = conv2d(x, k, 1, Padding::kValid);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 10.0);
  }

  TEST_CASE("matches the nested-loop oracle") {
    Rng rng(2);
    const Tensor x = random_tensor({1, 5, 5, 2}, rng);
    const Tensor k = random_tensor({3, 3, 2, 4}, rng);
    for (std::size_t stride : {1u, 2u}) {
      for (bool same : {true, false}) {
        CAPTURE(stride);
        CAPTURE(same);
        std::size_t ho = 0, wo = 0;
        const auto expected = conv_oracle(x, k, stride, same, &ho, &wo);
        const Tensor y = conv2d(x, k, stride, same ? Padding::kSame : Padding::kValid);
        CHECK(y.shape() == Shape{1, ho, wo, 4});
        CHECK(max_abs_diff(y.data(), expected) < 1e-12);
      }
    }
  }

  TEST_CASE("same padding output size is ceil(H/stride), odd padding goes high") {
    Rng rng(3);
    const Tensor x = random_tensor({2, 7, 6, 1}, rng);
    const Tensor k = random_tensor({4, 4, 1, 2}, rng);
    const Tensor y = conv2d(x, k, 3, Padding::kSame);
    CHECK(y.shape() == Shape{2, 3, 2, 2});
    CHECK(max_abs_diff(y.data(), conv_oracle(x, k, 3, true)) < 1e-12);
  }

  TEST_CASE("rejects mismatched channels and bad geometry") {
    const Tensor x({1, 4, 4, 2});
    CHECK_THROWS_AS(conv2d(x, Tensor({3, 3, 3, 1}), 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor({5, 5, 2, 1}), 1, Padding::kValid), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor({3, 3, 2, 1}), 0), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({4, 4, 2}), Tensor({3, 3, 2, 1}), 1), ShapeError);
  }
}

TEST_SUITE("conv_transpose2d") {
  TEST_CASE("stride 1 with a 1x1 identity kernel reproduces the input") {
    Rng rng(4);
    const Tensor x = random_tensor({2, 3, 3, 1}, rng);
    const Tensor y = conv_transpose2d(x, Tensor({1, 1, 1, 1}, {1.0}), 1);
    CHECK(bit_equal(y.data(), x.data()));
  }

  TEST_CASE("stride 2 doubles the spatial size") {
    Rng rng(5);
    const Tensor x = random_tensor({1, 2, 2, 1}, rng);
    CHECK(conv_transpose2d(x, random_tensor({3, 3, 1, 1}, rng), 2).shape() == Shape{1, 4, 4, 1});
    CHECK(conv_transpose2d(x, random_tensor({2, 2, 3, 1}, rng), 2).shape() == Shape{1, 4, 4, 3});
  }

  TEST_CASE("is the adjoint of conv2d") {
    Rng rng(6);
    for (std::size_t stride : {1u, 2u, 3u}) {
      for (std::size_t ksize : {1u, 2u, 3u}) {
        CAPTURE(stride);
        CAPTURE(ksize);
        const Tensor k = random_tensor({ksize, ksize, 3, 2}, rng);
        const Tensor x = random_tensor({2, 4 * stride, 3 * stride, 3}, rng);
        const Tensor y = random_tensor({2, 4, 3, 2}, rng);
        const double lhs = dot(conv2d(x, k, stride).data(), y.data());
        const double rhs = dot(x.data(), conv_transpose2d(y, k, stride).data());
        CHECK(std::abs(lhs - rhs) < 1e-10);
      }
    }
  }

  TEST_CASE("input gradient equals conv2d of the upstream gradient") {
    Rng rng(7);
    const Tensor k = random_tensor({3, 3, 2, 4}, rng);
    Tensor y = random_tensor({1, 3, 3, 4}, rng, -1, 1, true);
    const Tensor upstream = random_tensor({1, 6, 6, 2}, rng);
    const Tensor loss = sum(mul(conv_transpose2d(y, k, 2), upstream));
    const Tensor wrt[] = {y};
    const auto g = gradients(loss, wrt)[0];
    CHECK(max_abs_diff(g, conv2d(upstream, k, 2).data()) < 1e-12);
  }

  TEST_CASE("rejects zero-sized spatial dims and channel mismatch") {
    CHECK_THROWS_AS(conv_transpose2d(Tensor({1, 0, 2, 1}), Tensor({3, 3, 1, 1}), 2), ShapeError);
    CHECK_THROWS_AS(conv_transpose2d(Tensor({1, 2, 2, 2}), Tensor({3, 3, 1, 1}), 2), ShapeError);
  }
}

TEST_SUITE("elementwise") {
  TEST_CASE("relu and clip values") {
    const Tensor r = relu(Tensor({3}, {-1, 0, 2}));
    CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{0, 0, 2});
    const Tensor c = clip(Tensor({3}, {-0.5, 0.4, 1.2}), 0.0, 1.0);
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{0, 0.4, 1});
  }

  TEST_CASE("relu derivative is zero at exactly zero") {
    Tensor x({3}, {-1.0, 0.0, 2.0}, true);
    backward(sum(relu(x)));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1});
  }

  TEST_CASE("add passes the upstream gradient to both operands unchanged") {
    Rng rng(8);
    Tensor a = random_tensor({2, 3}, rng, -1, 1, true);
    Tensor b = random_tensor({2, 3}, rng, -1, 1, true);
    const Tensor w = random_tensor({2, 3}, rng);
    backward(sum(mul(add(a, b), w)));
    CHECK(bit_equal(a.grad(), w.data()));
    CHECK(bit_equal(b.grad(), w.data()));
  }

  TEST_CASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), ShapeError);
    CHECK_THROWS_AS(sub(Tensor({2}), Tensor({2, 1})), ShapeError);
    CHECK_THROWS_AS(mul(Tensor({1, 2}), Tensor({2, 1})), ShapeError);
    CHECK_THROWS_AS(mse(Tensor({2}), Tensor({3})), ShapeError);
  }

  TEST_CASE("scalar broadcast through add_scalar") {
    Tensor s({}, {0.5}, true);
    const Tensor y = add_scalar(Tensor({3}, {1, 2, 3}), s);
    CHECK(y.data()[2] == 3.5);
    backward(sum(y));
    CHECK(s.grad()[0] == 3.0);
  }
}

TEST_SUITE("concat_channels") {
  TEST_CASE("channel counts add up") {
    CHECK(concat_channels(Tensor({1, 2, 2, 3}), Tensor({1, 2, 2, 5})).shape() == Shape{1, 2, 2, 8});
  }

  TEST_CASE("concatenating an empty-channel tensor is the identity") {
    Rng rng(9);
    const Tensor x = random_tensor({1, 2, 2, 3}, rng);
    const Tensor y = concat_channels(x, Tensor({1, 2, 2, 0}));
    CHECK(y.shape() == x.shape());
    CHECK(bit_equal(y.data(), x.data()));
  }

  TEST_CASE("slicing the output recovers both inputs bit-exactly") {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t ca = 1 + rng.below(4), cb = 1 + rng.below(4);
      const Tensor a = random_tensor({2, 3, 2, ca}, rng);
      const Tensor b = random_tensor({2, 3, 2, cb}, rng);
      const Tensor c = concat_channels(a, b);
      CHECK(bit_equal(slice_channels(c, 0, ca).data(), a.data()));
      CHECK(bit_equal(slice_channels(c, ca, ca + cb).data(), b.data()));
    }
  }

  TEST_CASE("mismatched leading dims are rejected") {
    CHECK_THROWS_AS(concat_channels(Tensor({1, 2, 2, 3}), Tensor({1, 2, 3, 3})), ShapeError);
  }
}

TEST_SUITE("mse") {
  TEST_CASE("analytic values") {
    Rng rng(11);
    const Tensor x = random_tensor({4, 3}, rng);
    CHECK(mse(x, x).item() == 0.0);
    CHECK(mse(Tensor({1}, {0.0}), Tensor({1}, {2.0})).item() == 4.0);
  }

  TEST_CASE("matches a scalar-loop oracle") {
    Rng rng(12);
    const Tensor a = random_tensor({3, 5, 2}, rng);
    const Tensor b = random_tensor({3, 5, 2}, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    CHECK(std::abs(mse(a, b).item() - acc / static_cast<double>(a.size())) < 1e-12);
  }
}

TEST_SUITE("stop_gradient") {
  TEST_CASE("forward identity") {
    Rng rng(13);
    const Tensor x = random_tensor({2, 2}, rng, -1, 1, true);
    CHECK(bit_equal(stop_gradient(x).data(), x.data()));
    CHECK_FALSE(stop_gradient(x).requires_grad());
  }

  TEST_CASE("x + stop_gradient(y - x) has identity Jacobian in x") {
    Rng rng(14);
    Tensor x = random_tensor({5}, rng, -1, 1, true);
    const Tensor y = random_tensor({5}, rng);
    const Tensor w = random_tensor({5}, rng);
    const Tensor z = add(x, stop_gradient(sub(y, x)));
    CHECK(max_abs_diff(z.data(), y.data()) < 1e-15);
    const Tensor wrt[] = {x};
    CHECK(bit_equal(gradients(sum(mul(w, z)), wrt)[0], w.data()));
  }

  TEST_CASE("blocked branch contributes nothing, checked against finite differences of the open branch") {
    Rng rng(15);
    Tensor x = random_tensor({6}, rng, -1, 1, true);
    const Tensor c = random_tensor({6}, rng);
    const Tensor d = random_tensor({6}, rng);
    const Tensor wrt[] = {x};
    const auto blocked = gradients(mse(stop_gradient(x), c), wrt)[0];
    CHECK(std::all_of(blocked.begin(), blocked.end(), [](double v) { return v == 0.0; }));

    const auto analytic = gradients(add(mse(stop_gradient(x), c), mse(x, d)), wrt)[0];
    const auto numeric = numeric_gradient([&] { return mse(x, d).item(); }, x);
    CHECK(relative_error(analytic, numeric) < 1e-8);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum gives all-ones gradient") {
    Tensor p({2, 3}, true);
    backward(sum(p));
    CHECK(std::all_of(p.grad().begin(), p.grad().end(), [](double v) { return v == 1.0; }));
  }

  TEST_CASE("mse of conv2d matches central finite differences") {
    Rng rng(16);
    Tensor x = random_tensor({1, 4, 4, 2}, rng, -1, 1, true);
    Tensor k = random_tensor({3, 3, 2, 3}, rng, -1, 1, true);
    const Tensor t = random_tensor({1, 4, 4, 3}, rng);
    auto build = [&] { return mse(conv2d(x, k, 1), t); };
    CHECK(gradient_error(build, k) < 1e-4);
    CHECK(gradient_error(build, x) < 1e-4);
  }

  TEST_CASE("two backward calls accumulate") {
    Rng rng(17);
    Tensor p = random_tensor({4}, rng, -1, 1, true);
    const Tensor t = random_tensor({4}, rng);
    backward(mse(p, t));
    const std::vector<double> once(p.grad().begin(), p.grad().end());
    backward(mse(p, t));
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(p.grad()[i] == 2.0 * once[i]);
  }

  TEST_CASE("non-scalar loss is rejected") {
    Tensor p({2}, true);
    CHECK_THROWS_AS(backward(scale(p, 2.0)), ShapeError);
  }

  TEST_CASE("no graph is recorded under NoGradGuard") {
    Tensor p({2}, true);
    NoGradGuard guard;
    CHECK_FALSE(scale(p, 2.0).requires_grad());
  }
}

TEST_SUITE("gradient checks") {
  // Every differentiable primitive against central differences on <= 64 elements.
  TEST_CASE("primitive ops") {
    Rng rng(18);
    const Tensor w16 = random_tensor({1, 4, 4, 1}, rng);

    SUBCASE("conv2d stride 2 same / valid") {
      Tensor x = random_tensor({1, 5, 5, 2}, rng, -1, 1, true);
      Tensor k = random_tensor({3, 3, 2, 2}, rng, -1, 1, true);
      const Tensor t2 = random_tensor({1, 3, 3, 2}, rng);
      const Tensor tv = random_tensor({1, 2, 2, 2}, rng);
      CHECK(gradient_error([&] { return mse(conv2d(x, k, 2), t2); }, x) < 1e-4);
      CHECK(gradient_error([&] { return mse(conv2d(x, k, 2), t2); }, k) < 1e-4);
      CHECK(gradient_error([&] { return mse(conv2d(x, k, 2, Padding::kValid), tv); }, k) < 1e-4);
    }
    SUBCASE("conv_transpose2d") {
      Tensor y = random_tensor({1, 2, 2, 3}, rng, -1, 1, true);
      Tensor k = random_tensor({3, 3, 1, 3}, rng, -1, 1, true);
      CHECK(gradient_error([&] { return mse(conv_transpose2d(y, k, 2), w16); }, y) < 1e-4);
      CHECK(gradient_error([&] { return mse(conv_transpose2d(y, k, 2), w16); }, k) < 1e-4);
    }
    SUBCASE("relu away from the kink") {
      Tensor x = random_tensor({16}, rng, -1, 1, true);
      for (auto& v : x.mutable_data()) v += v > 0 ? 0.1 : -0.1;
      const Tensor w = random_tensor({16}, rng);
      CHECK(gradient_error([&] { return sum(mul(relu(x), w)); }, x) < 1e-4);
    }
    SUBCASE("clip away from the bounds") {
      Tensor x = random_tensor({16}, rng, -0.5, 1.5, true);
      for (auto& v : x.mutable_data())
        if (std::abs(v) < 0.05 || std::abs(v - 1.0) < 0.05) v += 0.2;
      const Tensor w = random_tensor({16}, rng);
      CHECK(gradient_error([&] { return sum(mul(clip(x, 0.0, 1.0), w)); }, x) < 1e-4);
    }
    SUBCASE("sub, mul, scale, mean, reshape") {
      Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
      Tensor b = random_tensor({3, 4}, rng, -1, 1, true);
      auto build = [&] { return mean(mul(scale(sub(a, b), 1.5), a.reshape({4, 3}).reshape({3, 4}))); };
      CHECK(gradient_error(build, a) < 1e-4);
      CHECK(gradient_error(build, b) < 1e-4);
    }
    SUBCASE("mse both sides") {
      Tensor a = random_tensor({8}, rng, -1, 1, true);
      Tensor b = random_tensor({8}, rng, -1, 1, true);
      CHECK(gradient_error([&] { return mse(a, b); }, a) < 1e-4);
      CHECK(gradient_error([&] { return mse(a, b); }, b) < 1e-4);
    }
    SUBCASE("concat and slice") {
      Tensor a = random_tensor({1, 2, 2, 2}, rng, -1, 1, true);
      Tensor b = random_tensor({1, 2, 2, 3}, rng, -1, 1, true);
      const Tensor w = random_tensor({1, 2, 2, 4}, rng);
      auto build = [&] { return sum(mul(slice_channels(concat_channels(a, b), 1, 5), w)); };
      CHECK(gradient_error(build, a) < 1e-4);
      CHECK(gradient_error(build, b) < 1e-4);
    }
    SUBCASE("bias_add and global_avg_pool") {
      Tensor x = random_tensor({2, 2, 2, 3}, rng, -1, 1, true);
      Tensor bias = random_tensor({3}, rng, -1, 1, true);
      const Tensor t = random_tensor({2, 3}, rng);
      auto build = [&] { return mse(global_avg_pool(bias_add(x, bias)), t); };
      CHECK(gradient_error(build, x) < 1e-4);
      CHECK(gradient_error(build, bias) < 1e-4);
    }
    SUBCASE("matmul") {
      Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
      Tensor b = random_tensor({4, 5}, rng, -1, 1, true);
      const Tensor t = random_tensor({3, 5}, rng);
      CHECK(gradient_error([&] { return mse(matmul(a, b), t); }, a) < 1e-4);
      CHECK(gradient_error([&] { return mse(matmul(a, b), t); }, b) < 1e-4);
    }
    SUBCASE("gather_rows") {
      Tensor table = random_tensor({5, 3}, rng, -1, 1, true);
      const std::vector<std::int64_t> idx{4, 0, 4, 2};
      const Tensor t = random_tensor({2, 2, 3}, rng);
      CHECK(gradient_error([&] { return mse(gather_rows(table, idx, {2, 2, 3}), t); }, table) < 1e-4);
    }
    SUBCASE("softmax cross-entropy") {
      Tensor z = random_tensor({4, 5}, rng, -3, 3, true);
      const std::vector<int> labels{0, 3, 4, 1};
      CHECK(gradient_error([&] { return softmax_cross_entropy(z, labels); }, z) < 1e-4);
    }
    SUBCASE("straight_through") {
      Tensor a = random_tensor({6}, rng, -1, 1, true);
      const Tensor q = random_tensor({6}, rng);
      const Tensor w = random_tensor({6}, rng);
      const Tensor wrt[] = {a};
      CHECK(bit_equal(gradients(sum(mul(straight_through(a, q), w)), wrt)[0], w.data()));
    }
  }
}

TEST_SUITE("determinism") {
  TEST_CASE("same inputs give bit-identical outputs and gradients") {
    auto run = [] {
      Rng rng(19);
      Tensor x = random_tensor({2, 6, 6, 3}, rng, -1, 1, true);
      Tensor k = random_tensor({3, 3, 3, 4}, rng, -1, 1, true);
      Tensor k2 = random_tensor({3, 3, 2, 4}, rng, -1, 1, true);
      const Tensor y = conv_transpose2d(relu(conv2d(x, k, 2)), k2, 2);
      backward(mean(mul(y, y)));
      std::vector<double> out(y.data().begin(), y.data().end());
      out.insert(out.end(), k.grad().begin(), k.grad().end());
      out.insert(out.end(), x.grad().begin(), x.grad().end());
      return out;
    };
    const auto first = run();
    CHECK(bit_equal(first, run()));
  }
}

TEST_SUITE("optimizer_step") {
  TEST_CASE("one step on p^2 moves toward zero") {
    Parameter p("p", Tensor({1}, {1.0}));
    backward(mul(p.tensor, p.tensor).reshape({}));
    Parameter* params[] = {&p};
    optimizer_step(params, 0.1);
    CHECK(std::abs(p.tensor.data()[0]) < 1.0);
    CHECK(p.tensor.grad()[0] == 0.0);
  }

  TEST_CASE("200 steps shrink a 2-D quadratic by 1000x") {
    Parameter p("p", Tensor({2}, {1.5, -2.0}));
    const Tensor curvature({2}, {1.0, 4.0});
    auto loss = [&] { return sum(mul(curvature, mul(p.tensor, p.tensor))); };
    const double start = loss().item();
    Parameter* params[] = {&p};
    for (int i = 0; i < 200; ++i) {
      backward(loss());
      optimizer_step(params, 0.05);
    }
    CHECK(loss().item() < 1e-3 * start);
  }

  TEST_CASE("zero learning rate leaves parameters untouched") {
    Parameter p("p", Tensor({3}, {0.3, -0.7, 2.0}));
    const std::vector<double> before(p.tensor.data().begin(), p.tensor.data().end());
    Parameter* params[] = {&p};
    for (int i = 0; i < 5; ++i) {
      backward(sum(mul(p.tensor, p.tensor)));
      optimizer_step(params, 0.0);
    }
    CHECK(bit_equal(p.tensor.data(), before));
  }

  TEST_CASE("missing gradients are rejected") {
    Parameter p("p", Tensor({2}));
    Parameter* params[] = {&p};
    CHECK_THROWS_AS(optimizer_step(params, 0.1), Error);
  }

  TEST_CASE("moment buffers start at zero with matching shape") {
    Parameter p("p", Tensor({2, 3}));
    CHECK(p.first_moment == std::vector<double>(6, 0.0));
    CHECK(p.second_moment == std::vector<double>(6, 0.0));
  }

  TEST_CASE("lazy rows skip rows with an all-zero gradient") {
    Parameter p("codes", Tensor({3, 2}, {1, 1, 2, 2, 3, 3}), true);
    const std::vector<std::int64_t> idx{1};
    const Tensor t({1, 2}, {0.0, 0.0});
    Parameter* params[] = {&p};
    for (int i = 0; i < 3; ++i) {
      backward(mse(gather_rows(p.tensor, idx, {1, 2}), t));
      optimizer_step(params, 0.1);
    }
    CHECK(p.tensor.data()[0] == 1.0);
    CHECK(p.tensor.data()[4] == 3.0);
    CHECK(p.tensor.data()[2] < 2.0);
  }
}
