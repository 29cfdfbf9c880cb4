#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "motiondiff/diffusion.hpp"
#include "motiondiff/rng.hpp"

using namespace motiondiff;

namespace {
struct NoCond {};
}  // namespace

TEST_CASE("build_schedule closed forms", "[diffusion]") {
    auto s = build_schedule<double>(2, 0.5, 0.5);
    CHECK(s.alpha_bar_at(1) == Catch::Approx(0.5));
    CHECK(s.alpha_bar_at(2) == Catch::Approx(0.25));

    CHECK_THROWS_AS(build_schedule<double>(2, 0.0, 0.0), ConfigError);
    CHECK_THROWS_AS(build_schedule<double>(2, 0.5, 0.2), ConfigError);
    CHECK_THROWS_AS(build_schedule<double>(0, 0.1, 0.2), ConfigError);

    // abar_2 = 0.25 -> sigma = sqrt(0.75/0.25) = sqrt(3)
    CHECK(s.sigma_at(2) == Catch::Approx(std::sqrt(3.0)));
}

TEST_CASE("schedule monotonicity properties", "[diffusion][property]") {
    Rng rng(41);
    for (int trial = 0; trial < 40; ++trial) {
        const double b0 = rng.uniform(1e-5, 0.3);
        const double b1 = rng.uniform(b0, 0.7);
        const int steps = rng.uniform_int(1, 300);
        auto s = build_schedule<double>(steps, b0, b1);
        for (int t = 1; t <= steps; ++t) {
            REQUIRE(s.alpha_bar_at(t) > 0.0);
            REQUIRE(s.alpha_bar_at(t) <= 1.0);
            if (t > 1) {
                REQUIRE(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
                REQUIRE(s.sigma_at(t) > s.sigma_at(t - 1));
            }
        }
    }
}

TEST_CASE("sigma step-alpha reading is exposed", "[diffusion]") {
    auto s = build_schedule<double>(3, 0.1, 0.1, SigmaMode::StepAlpha);
    // (1 - alpha_t)/alpha_t = beta/(1-beta) for every t
    for (int t = 1; t <= 3; ++t)
        CHECK(s.sigma_at(t) == Catch::Approx(std::sqrt(0.1 / 0.9)));
}

TEST_CASE("forward_diffuse closed forms", "[diffusion]") {
    auto s = build_schedule<double>(2, 0.5, 0.5);  // abar_2 = 0.25
    const Shape shape{2, 1, 2, 2};

    SECTION("eps = 0") {
        LatentVideo<double> z0(Tensor<double>::full(shape, 1.0), 0);
        auto zt = forward_diffuse(z0, 2, Tensor<double>(shape), s);
        CHECK(zt.timestep == 2);
        for (int64_t i = 0; i < zt.values.numel(); ++i)
            CHECK(zt.values.data()[i] == Catch::Approx(0.5));
    }
    SECTION("z0 = 0") {
        Rng rng(5);
        auto eps = normal_tensor<double>(shape, rng);
        LatentVideo<double> z0(Tensor<double>(shape), 0);
        auto zt = forward_diffuse(z0, 2, eps, s);
        for (int64_t i = 0; i < zt.values.numel(); ++i)
            CHECK(zt.values.data()[i] == Catch::Approx(std::sqrt(0.75) * eps.data()[i]));
    }
    SECTION("shape mismatch") {
        LatentVideo<double> z0(Tensor<double>(shape), 0);
        CHECK_THROWS_AS(forward_diffuse(z0, 2, Tensor<double>({2, 1, 2, 3}), s), ShapeError);
    }
}

TEST_CASE("forward_diffuse Monte Carlo variance", "[diffusion][oracle]") {
    auto s = build_schedule<double>(2, 0.5, 0.5);  // 1 - abar_2 = 0.75
    const Shape shape{1, 1, 1, 1};
    Rng rng(99);
    LatentVideo<double> z0(Tensor<double>(shape), 0);
    double sum = 0, sum2 = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto eps = normal_tensor<double>(shape, rng);
        const double v = forward_diffuse(z0, 2, eps, s).values.data()[0];
        sum += v;
        sum2 += v * v;
    }
    const double var = sum2 / n - (sum / n) * (sum / n);
    CHECK(var == Catch::Approx(0.75).epsilon(0.05));
}

TEST_CASE("ddpm_step final-step determinism and inversion", "[diffusion]") {
    auto s = build_schedule<double>(4, 0.1, 0.3);
    const Shape shape{1, 1, 2, 2};
    Rng rng(7);

    SECTION("t = 1 ignores fresh noise") {
        auto z = normal_tensor<double>(shape, rng);
        auto eps = normal_tensor<double>(shape, rng);
        auto a = ddpm_step(LatentVideo<double>(z, 1), eps, 1, s, normal_tensor<double>(shape, rng));
        auto b = ddpm_step(LatentVideo<double>(z, 1), eps, 1, s, Tensor<double>{});
        CHECK(a.timestep == 0);
        for (int64_t i = 0; i < a.values.numel(); ++i)
            CHECK(a.values.data()[i] == b.values.data()[i]);
    }
    SECTION("exact inverse at t = 1 with the true noise") {
        auto z0 = normal_tensor<double>(shape, rng);
        auto eps = normal_tensor<double>(shape, rng);
        auto z1 = forward_diffuse(LatentVideo<double>(z0, 0), 1, eps, s);
        auto rec = ddpm_step(z1, eps, 1, s);
        for (int64_t i = 0; i < z0.numel(); ++i)
            CHECK(rec.values.data()[i] == Catch::Approx(z0.data()[i]).margin(1e-14));
    }
    SECTION("t out of range") {
        auto z = normal_tensor<double>(shape, rng);
        CHECK_THROWS_AS(
            ddpm_step(LatentVideo<double>(z, 9), z, 9, s, Tensor<double>(shape)),
            ContractError);
    }
}

TEST_CASE("reverse chain with the analytic Gaussian predictor", "[diffusion][oracle]") {
    // For z0 ~ N(mu, s^2 I) the posterior-mean noise predictor is linear in z:
    //   eps*(z,t) = sqrt(1-abar_t) (z - sqrt(abar_t) mu) / (abar_t s^2 + 1-abar_t)
    // Sampling with it should reproduce the data mean and variance.
    const double mu = 2.0;
    const double sd = 0.8;
    auto schedule = build_schedule<double>(50, 1e-4, 0.25);

    std::function<Tensor<double>(const Tensor<double>&, int, const NoCond&)> denoiser =
        [&](const Tensor<double>& z, int t, const NoCond&) {
            const double ab = schedule.alpha_bar_at(t);
            const double denom = ab * sd * sd + 1.0 - ab;
            const double coef = std::sqrt(1.0 - ab) / denom;
            return scale(add_scalar(z, -std::sqrt(ab) * mu), coef);
        };

    const Shape shape{1, 1, 2, 2};
    double sum = 0, sum2 = 0;
    int count = 0;
    for (int i = 0; i < 1000; ++i) {
        auto z0 = sample<double, NoCond>(denoiser, NoCond{}, schedule, shape, 1000 + i);
        for (int64_t j = 0; j < z0.values.numel(); ++j) {
            const double v = z0.values.data()[j];
            sum += v;
            sum2 += v * v;
            ++count;
        }
    }
    const double mean = sum / count;
    const double var = sum2 / count - mean * mean;
    CHECK(std::abs(mean - mu) / mu < 0.05);
    CHECK(std::abs(var - sd * sd) / (sd * sd) < 0.10);
}

TEST_CASE("sampling determinism and hook neutrality", "[diffusion]") {
    auto schedule = build_schedule<double>(10, 1e-3, 0.2);
    const Shape shape{2, 1, 3, 3};
    std::function<Tensor<double>(const Tensor<double>&, int, const NoCond&)> denoiser =
        [](const Tensor<double>& z, int, const NoCond&) { return scale(z, 0.1); };

    auto a = sample<double, NoCond>(denoiser, NoCond{}, schedule, shape, 42);
    auto b = sample<double, NoCond>(denoiser, NoCond{}, schedule, shape, 42);
    REQUIRE(std::memcmp(a.values.data(), b.values.data(),
                        sizeof(double) * static_cast<size_t>(a.values.numel())) == 0);

    // A hook that applies a zero update must be bit-identical to no hook.
    GuidanceHook<double> hook;
    hook.final_timestep = 5;
    hook.step = [&](const Tensor<double>& z, int t) {
        return std::make_pair(z.clone(), denoiser(z, t, NoCond{}));
    };
    auto c = sample<double, NoCond>(denoiser, NoCond{}, schedule, shape, 42, hook);
    REQUIRE(std::memcmp(a.values.data(), c.values.data(),
                        sizeof(double) * static_cast<size_t>(a.values.numel())) == 0);

    GuidanceHook<double> bad = hook;
    bad.final_timestep = 99;
    auto run_bad = [&] { (void)sample<double, NoCond>(denoiser, NoCond{}, schedule, shape, 42, bad); };
    CHECK_THROWS_AS(run_bad(), ConfigError);
}
