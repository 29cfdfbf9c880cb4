#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "motiondiff/clipgen.hpp"
#include "motiondiff/codec.hpp"
#include "motiondiff/conditioning.hpp"

using namespace motiondiff;
namespace fs = std::filesystem;

namespace {

std::array<double, 2> centroid(const Image& frame, const Image& background) {
    double sx = 0, sy = 0, mass = 0;
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            double d = 0;
            for (int c = 0; c < 3; ++c)
                d += std::abs(frame.at(x, y, c) - background.at(x, y, c));
            if (d > 0.15) {
                sx += (x + 0.5) * d;
                sy += (y + 0.5) * d;
                mass += d;
            }
        }
    REQUIRE(mass > 0);
    return {sx / mass, sy / mass};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("gen_clip basics", "[synthdata]") {
    ClipSpec spec;
    spec.seed = 5;

    SECTION("zero speed freezes the clip") {
        spec.speed = 0;
        const Clip clip = gen_clip(spec);
        for (size_t i = 1; i < clip.frames.size(); ++i) {
            REQUIRE(std::memcmp(clip.frames[i].rgb.data(), clip.frames[0].rgb.data(),
                                clip.frames[0].rgb.size() * sizeof(float)) == 0);
            REQUIRE(clip.trajectory[i] == clip.trajectory[0]);
        }
    }
    SECTION("line path spacing") {
        spec.path = PathKind::Line;
        spec.speed = 2.0;
        const Clip clip = gen_clip(spec);
        for (size_t i = 1; i < clip.trajectory.size(); ++i) {
            const double d = std::hypot(clip.trajectory[i][0] - clip.trajectory[i - 1][0],
                                        clip.trajectory[i][1] - clip.trajectory[i - 1][1]);
            CHECK(d == Catch::Approx(2.0).margin(1e-9));
        }
    }
    SECTION("determinism") {
        const Clip a = gen_clip(spec);
        const Clip b = gen_clip(spec);
        for (size_t i = 0; i < a.frames.size(); ++i)
            REQUIRE(std::memcmp(a.frames[i].rgb.data(), b.frames[i].rgb.data(),
                                a.frames[i].rgb.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("rendered centroid tracks the trajectory", "[synthdata][property]") {
    const Image bg = clipdetail::global_texture(64, 64);
    int checked = 0;
    for (uint64_t seed : {1u, 2u, 3u, 4u}) {
        for (PathKind path : {PathKind::Line, PathKind::Arc, PathKind::Zigzag,
                              PathKind::RandomWalk}) {
            ClipSpec spec;
            spec.seed = seed;
            spec.path = path;
            spec.speed = 2.5;
            spec.shape = (seed % 2) ? ShapeKind::Disk : ShapeKind::Square;
            const Clip clip = gen_clip(spec);
            for (size_t i = 0; i < clip.frames.size(); ++i) {
                const auto c = centroid(clip.frames[i], bg);
                const double err = std::hypot(c[0] - clip.trajectory[i][0],
                                              c[1] - clip.trajectory[i][1]);
                REQUIRE(err <= 1.0);
                ++checked;
            }
        }
    }
    CHECK(checked == 4 * 4 * 8);
}

TEST_CASE("dataset planning stratifies speeds", "[synthdata]") {
    const auto entries = plan_dataset(100, 7, 0.5, 4.5);
    REQUIRE(entries.size() == 100);
    std::array<int, 10> per_stratum{};
    for (const auto& e : entries) {
        const int stratum =
            std::min(9, static_cast<int>((e.spec.speed - 0.5) / (4.0 / 10.0)));
        per_stratum[static_cast<size_t>(stratum)]++;
    }
    for (int c : per_stratum) CHECK(c == 10);

    CHECK_THROWS_AS(plan_dataset(5, 7, 0.5, 4.5), ConfigError);
    CHECK_THROWS_AS(plan_dataset(100, 7, 2.0, 1.0), ConfigError);
}

TEST_CASE("dataset regeneration is byte-identical", "[synthdata]") {
    const fs::path dir1 = fs::temp_directory_path() / "md_ds_a";
    const fs::path dir2 = fs::temp_directory_path() / "md_ds_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    build_dataset(dir1.string(), 10, 77, 0.5, 4.5, 4, 32, 32);
    build_dataset(dir2.string(), 10, 77, 0.5, 4.5, 4, 32, 32);
    CHECK(slurp(dir1 / "manifest.jsonl") == slurp(dir2 / "manifest.jsonl"));
    CHECK(slurp(dir1 / "clips/clip_0003/frame_0002.png") ==
          slurp(dir2 / "clips/clip_0003/frame_0002.png"));

    const LoadedClip clip = load_clip((dir1 / "clips/clip_0003").string());
    CHECK(clip.frames.size() == 4);
    CHECK(clip.caption.size() == 4);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("latent codec", "[synthdata]") {
    SECTION("constant image round trip") {
        std::vector<Image> frames(2, Image(16, 16));
        for (auto& f : frames)
            for (auto& v : f.rgb) v = 0.62f;
        auto latent = encode_video<double>(frames, 4);
        CHECK(latent.values.shape() == Shape{2, 3, 4, 4});
        auto back = decode_video(latent, 4);
        for (const auto& f : back)
            for (float v : f.rgb) CHECK(v == Catch::Approx(0.62).margin(1e-6));
    }
    SECTION("generated clip reaches 20 dB at factor 4") {
        ClipSpec spec;
        spec.seed = 11;
        spec.speed = 2.0;
        const Clip clip = gen_clip(spec);
        auto latent = encode_video<double>(clip.frames, 4);
        auto back = decode_video(latent, 4);
        double total = 0;
        for (size_t i = 0; i < clip.frames.size(); ++i) total += psnr(clip.frames[i], back[i]);
        CHECK(total / clip.frames.size() >= 20.0);
    }
    SECTION("indivisible extents rejected") {
        std::vector<Image> frames(1, Image(10, 10));
        CHECK_THROWS_AS(encode_video<double>(frames, 4), InputError);
    }
    SECTION("encode is affine-linear") {
        ClipSpec spec;
        spec.seed = 3;
        const Clip clip = gen_clip(spec);
        std::vector<Image> one = {clip.frames[0]};
        std::vector<Image> scaled = {clip.frames[0]};
        const double a = 0.5, b = 0.2;
        for (auto& v : scaled[0].rgb) v = static_cast<float>(a * v + b);
        auto ex = encode_video<double>(one, 4);
        auto es = encode_video<double>(scaled, 4);
        const double offset = a + 2 * b - 1;  // affine constant of the codec
        for (int64_t i = 0; i < ex.values.numel(); ++i)
            CHECK(es.values.data()[i] ==
                  Catch::Approx(a * ex.values.data()[i] + offset).margin(1e-5));
    }
}

TEST_CASE("tokenizer", "[synthdata]") {
    auto table = make_token_table<double>(16, 0);
    SECTION("basic lookup") {
        auto tok = tokenize({"red", "disk", "moves"}, table);
        REQUIRE(tok.ids.size() == 3);
        REQUIRE(tok.embeddings.shape() == Shape{3, 16});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 16; ++j)
                CHECK(tok.embeddings.data()[i * 16 + j] ==
                      table.embeddings.data()[static_cast<int64_t>(tok.ids[static_cast<size_t>(i)]) * 16 + j]);
    }
    SECTION("phrase positions") {
        auto idx = find_phrase({"red", "disk", "moves", "right"}, {"red", "disk"});
        CHECK(idx == std::vector<int>{0, 1});
        CHECK_THROWS_AS(find_phrase({"red", "disk"}, {"blue", "disk"}), InputError);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(tokenize<double>({}, table), InputError);
        try {
            tokenize<double>({"red", "wormhole"}, table);
            FAIL("expected InputError");
        } catch (const InputError& e) {
            CHECK(std::string(e.what()).find("wormhole") != std::string::npos);
        }
    }
    SECTION("reserved intensity ids") {
        for (int lvl = 1; lvl <= 10; ++lvl) CHECK(table.intensity_id(lvl) >= 0);
        CHECK_THROWS_AS(table.intensity_id(11), InputError);
    }
}
