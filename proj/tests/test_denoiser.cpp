#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/training.hpp"

using namespace motiondiff;

namespace {

ModelDims small_dims() {
    ModelDims dims;
    dims.d = 16;
    dims.latent_channels = 3;
    dims.latent_h = 8;
    dims.latent_w = 8;
    dims.frames = 4;
    return dims;
}

template <typename Real>
Conditioning<Real> random_conditioning(int n_tokens, int d, Rng& rng) {
    Conditioning<Real> cond;
    cond.mode = FusionMode::None;
    Tensor<Real> tokens({n_tokens, d});
    for (int64_t i = 0; i < tokens.numel(); ++i)
        tokens.data()[i] = static_cast<Real>(rng.normal());
    cond.tokens = tokens;
    cond.text_token_count = n_tokens;
    return cond;
}

}  // namespace

TEST_CASE("predict_noise shape and determinism", "[denoiser]") {
    const auto dims = small_dims();
    auto params = init_denoiser<double>(dims, FusionMode::None, 1);
    Rng rng(2);
    auto cond = random_conditioning<double>(6, dims.d, rng);
    Tensor<double> z({dims.frames, 3, 8, 8});
    for (int64_t i = 0; i < z.numel(); ++i) z.data()[i] = rng.normal();

    auto out = predict_noise(params, z, 5, cond, {GuidanceLayer::Mid, GuidanceLayer::Up});
    REQUIRE(out.eps.shape() == z.shape());
    CHECK(out.records.size() == 2 * 4);  // two layers, four frames
    CHECK(out.eps.all_finite());

    auto out2 = predict_noise(params, z, 5, cond, {GuidanceLayer::Mid, GuidanceLayer::Up});
    REQUIRE(std::memcmp(out.eps.data(), out2.eps.data(),
                        sizeof(double) * static_cast<size_t>(out.eps.numel())) == 0);

    SECTION("token dimension mismatch is a config error") {
        auto bad = random_conditioning<double>(4, dims.d + 1, rng);
        CHECK_THROWS_AS(predict_noise(params, z, 5, bad), ConfigError);
    }
    SECTION("untrained output head predicts zero") {
        for (int64_t i = 0; i < out.eps.numel(); ++i) CHECK(out.eps.data()[i] == 0.0);
    }
}

TEST_CASE("exposed attention maps are row-stochastic", "[denoiser][property]") {
    const auto dims = small_dims();
    auto params = init_denoiser<double>(dims, FusionMode::None, 3);
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto cond = random_conditioning<double>(rng.uniform_int(1, 9), dims.d, rng);
        Tensor<double> z({dims.frames, 3, 8, 8});
        for (int64_t i = 0; i < z.numel(); ++i) z.data()[i] = 3.0 * rng.normal();
        auto out = predict_noise(
            params, z, rng.uniform_int(1, 50), cond,
            {GuidanceLayer::Down, GuidanceLayer::Mid, GuidanceLayer::Up});
        REQUIRE(out.records.size() == 3 * 4);
        for (const auto& rec : out.records) {
            const int n = rec.map.dim(1);
            for (int r = 0; r < rec.map.dim(0); ++r) {
                double sum = 0;
                for (int c = 0; c < n; ++c) {
                    const double v = rec.map.data()[r * n + c];
                    REQUIRE(v >= 0.0);
                    sum += v;
                }
                REQUIRE(std::abs(sum - 1.0) <= 1e-6);
            }
        }
    }
}

TEST_CASE("spatial cross-attention closed forms", "[denoiser]") {
    Rng rng(11);
    const int d = 8;
    Tensor<double> wq({d, d}), wk({d, d}), wv({d, d});
    for (auto* t : {&wq, &wk, &wv})
        for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.normal() * 0.3;
    Tensor<double> features({d, 2, 2});
    for (int64_t i = 0; i < features.numel(); ++i) features.data()[i] = rng.normal();

    SECTION("single token attends everywhere") {
        Tensor<double> tok({1, d});
        for (int64_t i = 0; i < tok.numel(); ++i) tok.data()[i] = rng.normal();
        auto [out, rec] = spatial_cross_attention(features, tok, wq, wk, wv,
                                                  GuidanceLayer::Mid, 0);
        for (int64_t i = 0; i < rec.map.numel(); ++i) CHECK(rec.map.data()[i] == 1.0);
        // output = features + V broadcast over cells
        auto v = matmul(tok, wv);
        for (int c = 0; c < d; ++c)
            for (int s = 0; s < 4; ++s)
                CHECK(out.data()[c * 4 + s] ==
                      Catch::Approx(features.data()[c * 4 + s] + v.data()[c]));
    }
    SECTION("identical tokens split attention evenly") {
        Tensor<double> one({1, d});
        for (int64_t i = 0; i < one.numel(); ++i) one.data()[i] = rng.normal();
        auto two = concat<double>({one, one}, 0);
        auto [out, rec] = spatial_cross_attention(features, two, wq, wk, wv,
                                                  GuidanceLayer::Mid, 0);
        for (int64_t i = 0; i < rec.map.numel(); ++i)
            CHECK(rec.map.data()[i] == Catch::Approx(0.5));
    }
    SECTION("permuting tokens permutes attention columns") {
        Tensor<double> tokens({3, d});
        for (int64_t i = 0; i < tokens.numel(); ++i) tokens.data()[i] = rng.normal();
        auto perm = concat<double>({slice(tokens, 0, 2, 3), slice(tokens, 0, 0, 1),
                                    slice(tokens, 0, 1, 2)},
                                   0);  // order (2,0,1)
        auto [o1, r1] = spatial_cross_attention(features, tokens, wq, wk, wv,
                                                GuidanceLayer::Mid, 0);
        auto [o2, r2] = spatial_cross_attention(features, perm, wq, wk, wv,
                                                GuidanceLayer::Mid, 0);
        const int rows = r1.map.dim(0);
        const int perm_map[3] = {2, 0, 1};  // column j of r2 = column perm_map[j] of r1
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < 3; ++j)
                CHECK(r2.map.data()[r * 3 + j] ==
                      Catch::Approx(r1.map.data()[r * 3 + perm_map[j]]).margin(1e-12));
        for (int64_t i = 0; i < o1.numel(); ++i)
            CHECK(o2.data()[i] == Catch::Approx(o1.data()[i]).margin(1e-12));
    }
}

TEST_CASE("temporal attention contracts", "[denoiser]") {
    Rng rng(13);
    const int d = 6;

    SECTION("single frame reduces to value/output projections") {
        Tensor<double> wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d});
        for (auto* t : {&wq, &wk, &wv, &wo})
            for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.normal() * 0.4;
        Tensor<double> bias({1});
        Tensor<double> x({1, d, 2, 2});
        for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
        auto out = temporal_attention(x, wq, wk, wv, wo, bias);
        // expected: wo(wv(x)) per cell
        auto cells = permute3(reshape(x, {1, d, 4}), {2, 0, 1});
        auto expect = matmul(reshape(matmul(reshape(cells, {4, d}), wv), {4, d}), wo);
        auto expect_lchw = reshape(permute3(reshape(expect, {4, 1, d}), {1, 2, 0}), {1, d, 2, 2});
        for (int64_t i = 0; i < out.numel(); ++i)
            CHECK(out.data()[i] == Catch::Approx(expect_lchw.data()[i]).margin(1e-12));
    }
    SECTION("causal mask blocks information from later frames") {
        const int L = 5;
        Tensor<double> wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d});
        for (auto* t : {&wq, &wk, &wv, &wo})
            for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.normal() * 0.4;
        Tensor<double> bias({2 * L - 1});
        for (int64_t i = 0; i < bias.numel(); ++i) bias.data()[i] = rng.normal() * 0.1;
        Tensor<double> x({L, d, 2, 2});
        for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
        auto out = temporal_attention(x, wq, wk, wv, wo, bias, true);
        auto x2 = x.clone();
        const int64_t per_frame = x.numel() / L;
        for (int64_t i = 0; i < per_frame; ++i)
            x2.data()[(L - 1) * per_frame + i] += rng.normal();
        auto out2 = temporal_attention(x2, wq, wk, wv, wo, bias, true);
        REQUIRE(std::memcmp(out.data(), out2.data(),
                            sizeof(double) * static_cast<size_t>((L - 1) * per_frame)) == 0);
    }
    SECTION("zero bias and identical frames give identical outputs") {
        const int L = 3;
        Tensor<double> wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d});
        for (auto* t : {&wq, &wk, &wv, &wo})
            for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.normal() * 0.4;
        Tensor<double> bias({2 * L - 1});
        Tensor<double> frame({1, d, 2, 2});
        for (int64_t i = 0; i < frame.numel(); ++i) frame.data()[i] = rng.normal();
        auto x = concat<double>({frame, frame, frame}, 0);
        auto out = temporal_attention(x, wq, wk, wv, wo, bias);
        const int64_t per_frame = out.numel() / L;
        for (int f = 1; f < L; ++f)
            for (int64_t i = 0; i < per_frame; ++i)
                CHECK(out.data()[f * per_frame + i] ==
                      Catch::Approx(out.data()[i]).margin(1e-12));
    }
}

TEST_CASE("attention-mass gradients match finite differences", "[denoiser][oracle]") {
    const auto dims = small_dims();
    auto params = init_denoiser<double>(dims, FusionMode::None, 17);
    Rng rng(19);
    auto cond = random_conditioning<double>(6, dims.d, rng);

    // mass of token column 2 inside a fixed cell subset, summed over the
    // recorded mid/up maps of every frame
    Tensor<double> cell_mask({64}, std::vector<double>(64, 0.0));
    for (int i : {0, 1, 2, 8, 9, 10}) cell_mask.data()[i] = 1.0;

    auto f = [&](const Tensor<double>& z) {
        auto out = predict_noise(params, z, 7, cond,
                                 {GuidanceLayer::Mid, GuidanceLayer::Up});
        Tensor<double> total;
        for (const auto& rec : out.records) {
            auto col = reshape(slice(rec.map, 1, 2, 3), {64});
            auto masked = scale(mean_all(mul(col, cell_mask)), 64.0);
            total = total.empty() ? masked : add(total, masked);
        }
        return total;
    };

    for (int inst = 0; inst < 2; ++inst) {
        Tensor<double> z({dims.frames, 3, 8, 8});
        for (int64_t i = 0; i < z.numel(); ++i) z.data()[i] = rng.normal();
        CHECK(finite_diff_check<double>(f, z, 1e-4) < 1e-4);
    }
}

TEST_CASE("train_step contracts", "[denoiser][training]") {
    const auto dims = small_dims();
    auto table = make_token_table<double>(dims.d, 0);
    auto schedule = build_schedule<double>(20, 1e-3, 0.2);
    Rng rng(23);

    std::vector<TrainItem<double>> batch;
    for (int i = 0; i < 2; ++i) {
        TrainItem<double> item;
        item.z0 = Tensor<double>({dims.frames, 3, 8, 8});
        for (int64_t j = 0; j < item.z0.numel(); ++j) item.z0.data()[j] = rng.normal() * 0.5;
        item.caption = {"red", "disk", "moves", "right"};
        item.level = 3 + i;
        batch.push_back(std::move(item));
    }

    SECTION("initial loss is the squared noise norm") {
        auto params = init_denoiser<double>(dims, FusionMode::TokenConcat, 29);
        SgdState<double> opt;
        opt.lr = 0.0;
        const double loss = train_step(params, batch, table, schedule, opt, 99);
        CHECK(loss == Catch::Approx(1.0).epsilon(0.10));
    }
    SECTION("zero learning rate leaves parameters bit-identical") {
        auto params = init_denoiser<double>(dims, FusionMode::TokenConcat, 29);
        auto before = params;
        std::vector<std::vector<double>> snap;
        for (auto& [name, t] : before.named_params()) snap.push_back(t->vec());
        SgdState<double> opt;
        opt.lr = 0.0;
        train_step(params, batch, table, schedule, opt, 7);
        size_t k = 0;
        for (auto& [name, t] : params.named_params()) {
            REQUIRE(std::memcmp(t->data(), snap[k].data(),
                                snap[k].size() * sizeof(double)) == 0);
            ++k;
        }
    }
    SECTION("repeating a batch with a positive rate descends") {
        auto params = init_denoiser<double>(dims, FusionMode::TokenConcat, 29);
        SgdState<double> opt;
        opt.lr = 1e-3;
        const double first = train_step(params, batch, table, schedule, opt, 7);
        const double second = train_step(params, batch, table, schedule, opt, 7);
        CHECK(second < first);
    }
}
