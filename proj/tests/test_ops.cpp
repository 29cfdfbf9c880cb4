#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "motiondiff/ops.hpp"
#include "motiondiff/rng.hpp"

using namespace motiondiff;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Gradient-vs-central-differences harness used for every primitive below.
double grad_err(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                const Tensor<double>& x) {
    return finite_diff_check<double>(f, x, 1e-5);
}

}  // namespace

TEST_CASE("softmax_rows basics", "[ops]") {
    Tensor<double> x({2}, {0.0, 0.0});
    auto y = softmax_rows(x);
    CHECK(y.data()[0] == Catch::Approx(0.5));
    CHECK(y.data()[1] == Catch::Approx(0.5));

    Tensor<double> big({3}, {1000.0, 1000.0, 1000.0});
    auto yb = softmax_rows(big);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::isfinite(yb.data()[i]));
        CHECK(yb.data()[i] == Catch::Approx(1.0 / 3.0));
    }

    Tensor<double> lg({2}, {std::log(1.0), std::log(3.0)});
    auto yl = softmax_rows(lg);
    CHECK(yl.data()[0] == Catch::Approx(0.25));
    CHECK(yl.data()[1] == Catch::Approx(0.75));
}

TEST_CASE("softmax rows sum to one for wild inputs", "[ops][property]") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const double spread = (trial % 2 == 0) ? 1.0 : 2e3;
        auto x = random_tensor({4, 6}, rng, -spread, spread);
        auto y = softmax_rows(x);
        for (int r = 0; r < 4; ++r) {
            double sum = 0;
            for (int c = 0; c < 6; ++c) {
                const double v = y.data()[r * 6 + c];
                REQUIRE(v >= 0.0);
                sum += v;
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("softmax rejects tensors without a last axis", "[ops]") {
    Tensor<double> scalar(Shape{}, {1.0});
    CHECK_THROWS_AS(softmax_rows(scalar), ShapeError);
}

TEST_CASE("primitive_forward dispatch", "[ops]") {
    SECTION("matmul hand case") {
        Tensor<double> a({2, 3}, {1, 0, 0, 0, 1, 0});
        Tensor<double> b({3, 2}, {1, 0, 0, 1, 0, 0});
        auto c = primitive_forward(OpKind::Matmul, std::vector<Tensor<double>>{a, b});
        REQUIRE(c.shape() == Shape{2, 2});
        CHECK(c.data()[0] == 1.0);
        CHECK(c.data()[1] == 0.0);
        CHECK(c.data()[2] == 0.0);
        CHECK(c.data()[3] == 1.0);
    }
    SECTION("conv with averaging kernel preserves constants") {
        auto x = Tensor<double>::full({1, 1, 5, 5}, 3.25);
        auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0 / 9.0);
        auto y = primitive_forward(OpKind::Conv2dSame, std::vector<Tensor<double>>{x, w});
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(y.data()[i] == Catch::Approx(3.25).margin(1e-12));
    }
    SECTION("concat shape law") {
        Rng rng(3);
        auto a = random_tensor({5, 4}, rng);
        auto b = random_tensor({2, 4}, rng);
        OpAttrs attrs;
        attrs.axis = 0;
        auto c = primitive_forward(OpKind::Concat, std::vector<Tensor<double>>{a, b}, attrs);
        REQUIRE(c.shape() == Shape{7, 4});
    }
    SECTION("shape mismatch names both shapes") {
        Tensor<double> a({2, 3});
        Tensor<double> b({4, 2});
        try {
            primitive_forward(OpKind::Matmul, std::vector<Tensor<double>>{a, b});
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2,3]") != std::string::npos);
            CHECK(msg.find("[4,2]") != std::string::npos);
        }
    }
}

TEST_CASE("backward basics", "[ops]") {
    SECTION("x squared at 3") {
        Tensor<double> x(Shape{}, {3.0});
        x.set_variable();
        auto y = sum_squares(x);
        auto g = backward(y, {x});
        CHECK(g[0].item() == Catch::Approx(6.0));
    }
    SECTION("sum of softmax has zero gradient") {
        Rng rng(11);
        auto x = random_tensor({3, 5}, rng);
        x.set_variable();
        auto y = scale(mean_all(softmax_rows(x)), 15.0);  // = sum of all entries = 3
        auto g = backward(y, {x});
        for (int64_t i = 0; i < g[0].numel(); ++i)
            CHECK(std::abs(g[0].data()[i]) < 1e-12);
    }
    SECTION("non-scalar objective rejected") {
        Tensor<double> x({2}, {1.0, 2.0});
        x.set_variable();
        auto y = scale(x, 2.0);
        CHECK_THROWS_AS(backward(y, {x}), ContractError);
    }
    SECTION("matmul-softmax-masked-sum chain matches finite differences") {
        Rng rng(13);
        auto w = random_tensor({4, 6}, rng);
        Tensor<double> mask({6}, {1, 0, 1, 0, 0, 1});
        auto f = [&](const Tensor<double>& x) {
            auto a = softmax_rows(matmul(x, w));
            return mean_all(mul(a, mask));
        };
        auto x = random_tensor({3, 4}, rng);
        CHECK(finite_diff_check<double>(f, x, 1e-4) < 1e-5);
    }
}

TEST_CASE("finite_diff_check contract", "[ops]") {
    Rng rng(17);
    SECTION("sum of squares") {
        auto x = random_tensor({8}, rng);
        auto f = [](const Tensor<double>& v) { return sum_squares(v); };
        CHECK(finite_diff_check<double>(f, x, 1e-5) < 1e-6);
    }
    SECTION("constant function has zero error") {
        auto x = random_tensor({4}, rng);
        auto f = [](const Tensor<double>& v) {
            (void)v;
            return Tensor<double>(Shape{}, {2.5});
        };
        CHECK(finite_diff_check<double>(f, x, 1e-5) == 0.0);
    }
    SECTION("attention-style energy through softmax") {
        // Masked-mass deficit squared, composed through a small attention map.
        auto wq = random_tensor({4, 4}, rng);
        auto keys = random_tensor({4, 5}, rng);
        Tensor<double> inbox({16}, std::vector<double>(16, 0.0));
        for (int i : {0, 1, 4, 5}) inbox.data()[i] = 1.0;
        auto f = [&](const Tensor<double>& z) {
            auto q = matmul(reshape(z, {16, 4}), wq);
            auto a = softmax_rows(matmul(q, keys));          // [16,5]
            auto col = slice(a, 1, 2, 3);                    // one token column
            auto flat = reshape(col, {16});
            auto in_mass = mean_all(mul(flat, inbox));
            auto total = mean_all(flat);
            auto ratio = div(in_mass, total);
            auto deficit = add_scalar(scale(ratio, -1.0), 1.0);
            return mul(deficit, deficit);
        };
        auto z = random_tensor({16, 4}, rng);
        CHECK(finite_diff_check<double>(f, z, 1e-5) < 1e-4);
    }
}

TEST_CASE("every primitive matches central finite differences", "[ops][property]") {
    Rng rng(23);
    constexpr double tol = 1e-4;
    auto scalarize = [](const Tensor<double>& t, const Tensor<double>& probe) {
        return sum_squares(mul(t, probe));
    };

    for (int inst = 0; inst < 10; ++inst) {
        // add (broadcast) on both operands
        {
            auto a = random_tensor({3, 2, 4}, rng);
            auto b = random_tensor({2, 1}, rng);
            auto probe = random_tensor({3, 2, 4}, rng);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(add(v, b), probe); },
                           a) < tol);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(add(a, v), probe); },
                           b) < tol);
        }
        // sub / mul / div
        {
            auto a = random_tensor({4, 3}, rng);
            auto b = random_tensor({4, 3}, rng, 0.5, 1.5);
            auto probe = random_tensor({4, 3}, rng);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(sub(v, b), probe); },
                           a) < tol);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(mul(v, b), probe); },
                           a) < tol);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(mul(a, v), probe); },
                           b) < tol);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(div(v, b), probe); },
                           a) < tol);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(div(a, v), probe); },
                           b) < tol);
        }
        // matmul, all transpose combinations
        for (bool ta : {false, true}) {
            for (bool tb : {false, true}) {
                auto a = random_tensor(ta ? Shape{4, 3} : Shape{3, 4}, rng);
                auto b = random_tensor(tb ? Shape{5, 4} : Shape{4, 5}, rng);
                auto probe = random_tensor({3, 5}, rng);
                CHECK(grad_err(
                          [&](const Tensor<double>& v) {
                              return scalarize(matmul(v, b, ta, tb), probe);
                          },
                          a) < tol);
                CHECK(grad_err(
                          [&](const Tensor<double>& v) {
                              return scalarize(matmul(a, v, ta, tb), probe);
                          },
                          b) < tol);
            }
        }
        // bmm
        for (bool tb : {false, true}) {
            auto a = random_tensor({2, 3, 4}, rng);
            auto b = random_tensor(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
            auto probe = random_tensor({2, 3, 5}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(bmm(v, b, tb), probe); },
                      a) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(bmm(a, v, tb), probe); },
                      b) < tol);
        }
        // linear
        {
            auto x = random_tensor({2, 3, 4}, rng);
            auto w = random_tensor({4, 5}, rng);
            auto b = random_tensor({5}, rng);
            auto probe = random_tensor({2, 3, 5}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(linear(v, w, b), probe); },
                      x) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(linear(x, v, b), probe); },
                      w) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(linear(x, w, v), probe); },
                      b) < tol);
        }
        // conv2d_same
        {
            auto x = random_tensor({2, 2, 5, 5}, rng);
            auto w = random_tensor({3, 2, 3, 3}, rng);
            auto b = random_tensor({3}, rng);
            auto probe = random_tensor({2, 3, 5, 5}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(conv2d_same(v, w, b), probe);
                      },
                      x) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(conv2d_same(x, v, b), probe);
                      },
                      w) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(conv2d_same(x, w, v), probe);
                      },
                      b) < tol);
        }
        // group_normalize
        {
            auto x = random_tensor({2, 3, 4}, rng);
            auto gamma = random_tensor({3}, rng, 0.5, 1.5);
            auto beta = random_tensor({3}, rng);
            auto probe = random_tensor({2, 3, 4}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(group_normalize(v, gamma, beta), probe);
                      },
                      x) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(group_normalize(x, v, beta), probe);
                      },
                      gamma) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(group_normalize(x, gamma, v), probe);
                      },
                      beta) < tol);
        }
        // softmax_rows / silu
        {
            auto x = random_tensor({3, 4}, rng);
            auto probe = random_tensor({3, 4}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(softmax_rows(v), probe); },
                      x) < tol);
            CHECK(grad_err([&](const Tensor<double>& v) { return scalarize(silu(v), probe); },
                           x) < tol);
        }
        // reshape / slice / concat / transpose2 / permute3
        {
            auto x = random_tensor({3, 4}, rng);
            auto probe = random_tensor({2, 6}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(reshape(v, {2, 6}), probe);
                      },
                      x) < tol);
            auto probe_sl = random_tensor({3, 2}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(slice(v, 1, 1, 3), probe_sl);
                      },
                      x) < tol);
            auto y = random_tensor({2, 4}, rng);
            auto probe_cc = random_tensor({5, 4}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(concat<double>({v, y}, 0), probe_cc);
                      },
                      x) < tol);
            auto probe_t = random_tensor({4, 3}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) { return scalarize(transpose2(v), probe_t); },
                      x) < tol);
            auto x3 = random_tensor({2, 3, 4}, rng);
            auto probe_p = random_tensor({4, 2, 3}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(permute3(v, {2, 0, 1}), probe_p);
                      },
                      x3) < tol);
        }
        // gather_rows / relpos_bias_add
        {
            auto table = random_tensor({6, 3}, rng);
            std::vector<int> rows = {1, 4, 1};
            auto probe = random_tensor({3, 3}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(gather_rows(v, rows), probe);
                      },
                      table) < tol);
            auto s = random_tensor({2, 3, 3}, rng);
            auto bias = random_tensor({5}, rng);
            auto probe_r = random_tensor({2, 3, 3}, rng);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(relpos_bias_add(v, bias, false), probe_r);
                      },
                      s) < tol);
            CHECK(grad_err(
                      [&](const Tensor<double>& v) {
                          return scalarize(relpos_bias_add(s, v, false), probe_r);
                      },
                      bias) < tol);
        }
        // mean / sum_squares / scale / add_scalar
        {
            auto x = random_tensor({7}, rng);
            CHECK(grad_err([](const Tensor<double>& v) { return mean_all(v); }, x) < tol);
            CHECK(grad_err([](const Tensor<double>& v) { return sum_squares(v); }, x) < tol);
            CHECK(grad_err(
                      [](const Tensor<double>& v) { return mean_all(scale(v, 3.5)); }, x) < tol);
            CHECK(grad_err(
                      [](const Tensor<double>& v) {
                          return sum_squares(add_scalar(v, 0.7));
                      },
                      x) < tol);
        }
    }
}

TEST_CASE("forward and backward are deterministic", "[ops]") {
    Rng rng(31);
    auto x = random_tensor({4, 5}, rng);
    auto w = random_tensor({5, 6}, rng);

    auto run = [&]() {
        auto xv = x.clone();
        xv.set_variable();
        auto y = sum_squares(softmax_rows(matmul(xv, w)));
        auto g = backward(y, {xv});
        std::vector<double> out(xv.numel() + 1);
        out[0] = y.item();
        std::memcpy(out.data() + 1, g[0].data(), sizeof(double) * g[0].numel());
        return out;
    };
    auto a = run();
    auto b = run();
    REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("tracing is opt-in", "[ops]") {
    Tensor<double> x({2}, {1.0, 2.0});
    x.set_variable();
    {
        NoTrace guard;
        auto y = scale(x, 2.0);
        CHECK_FALSE(y.traced());
    }
    auto y = scale(x, 2.0);
    CHECK(y.traced());

    // Untraced operands never create graph nodes.
    Tensor<double> plain({2}, {1.0, 2.0});
    CHECK_FALSE(scale(plain, 2.0).traced());
}
