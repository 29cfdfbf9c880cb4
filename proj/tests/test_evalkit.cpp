#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "motiondiff/clipgen.hpp"
#include "motiondiff/evalkit.hpp"

using namespace motiondiff;
namespace fs = std::filesystem;

TEST_CASE("detect_blob", "[evalkit]") {
    SECTION("red disk on black background") {
        ClipSpec spec;
        spec.seed = 4;
        spec.background = BackgroundKind::Flat;
        spec.shape = ShapeKind::Disk;
        spec.size_px = 6;
        spec.speed = 0;
        spec.frames = 1;
        Clip clip = gen_clip(spec);
        const auto [cx, cy] = clip.trajectory[0];
        auto det = detect_blob(clip.frames[0], spec.color, 0.3);
        REQUIRE(det.box.has_value());
        CHECK(std::abs(det.box->cx() - cx) <= 1.0);
        CHECK(std::abs(det.box->cy() - cy) <= 1.0);
    }
    SECTION("missing color is absent") {
        Image frame(16, 16);
        auto det = detect_blob(frame, {1.0f, 0.1f, 0.1f}, 0.3);
        CHECK_FALSE(det.box.has_value());
    }
    SECTION("largest component wins") {
        Image frame(32, 16);
        // 6x5 = 30 px blob and a 5 px strip
        for (int y = 2; y < 7; ++y)
            for (int x = 2; x < 8; ++x) frame.at(x, y, 0) = 1.0f;
        for (int x = 20; x < 25; ++x) frame.at(x, 10, 0) = 1.0f;
        auto det = detect_blob(frame, {1.0f, 0.0f, 0.0f}, 0.2);
        REQUIRE(det.box.has_value());
        CHECK(det.area == 30.0);
        CHECK(det.box->x0 == 2.0);
        CHECK(det.box->x1 == 8.0);
    }
    SECTION("bad threshold rejected") {
        Image frame(8, 8);
        CHECK_THROWS_AS(detect_blob(frame, {1, 0, 0}, 0.0), ConfigError);
    }
}

TEST_CASE("iou", "[evalkit]") {
    EvalBox a{0, 0, 2, 2};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, EvalBox{5, 5, 7, 7}) == 0.0);
    CHECK(iou(a, EvalBox{1, 0, 3, 2}) == Catch::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(iou(a, EvalBox{3, 3, 3, 3}), InputError);

    SECTION("symmetry and translation invariance") {
        EvalBox b{1, 0.5, 3, 2.5};
        CHECK(iou(a, b) == Catch::Approx(iou(b, a)));
        EvalBox at{10, 20, 12, 22};
        EvalBox bt{11, 20.5, 13, 22.5};
        CHECK(iou(at, bt) == Catch::Approx(iou(a, b)));
        CHECK(iou(a, b) < 1.0);
    }
}

TEST_CASE("evaluate_direction", "[evalkit]") {
    auto track = expand_to_boxes({{16, 16}, {24, 16}, {32, 16}}, 8, 8, 64, 64, 4);

    SECTION("perfect detections") {
        std::vector<DetectionResult> dets;
        for (const auto& b : track.boxes)
            dets.push_back({EvalBox{b.x0, b.y0, b.x1, b.y1}, 10});
        auto m = evaluate_direction(dets, track, 64, 64);
        CHECK(m.miou == 1.0);
        CHECK(m.ap50 == 1.0);
        CHECK(m.cd == 0.0);
    }
    SECTION("all absent") {
        std::vector<DetectionResult> dets(3);
        auto m = evaluate_direction(dets, track, 64, 64);
        CHECK(m.miou == 0.0);
        CHECK(m.ap50 == 0.0);
        CHECK(m.cd == 1.0);
    }
    SECTION("centroid offset normalization") {
        auto one = expand_to_boxes({{50, 50}}, 8, 8, 100, 100, 4);
        std::vector<DetectionResult> dets = {
            {EvalBox{45, 46, 61, 62}, 10}};  // centroid offset (3,4) from (50,50)
        auto m = evaluate_direction(dets, one, 100, 100);
        CHECK(m.cd == Catch::Approx(5.0 / std::sqrt(20000.0)));
    }
    SECTION("frame count mismatch") {
        std::vector<DetectionResult> dets(2);
        CHECK_THROWS_AS(evaluate_direction(dets, track, 64, 64), ContractError);
    }
    SECTION("frame permutation leaves aggregates unchanged") {
        std::vector<DetectionResult> dets = {
            {EvalBox{10, 10, 22, 22}, 10}, {EvalBox{22, 12, 30, 20}, 10}, {std::nullopt, 0}};
        auto m1 = evaluate_direction(dets, track, 64, 64);
        // reorder frames and targets together
        auto track2 = track;
        std::swap(track2.boxes[0], track2.boxes[2]);
        std::swap(track2.masks[0], track2.masks[2]);
        std::swap(dets[0], dets[2]);
        auto m2 = evaluate_direction(dets, track2, 64, 64);
        CHECK(m1.miou == Catch::Approx(m2.miou));
        CHECK(m1.ap50 == Catch::Approx(m2.ap50));
        CHECK(m1.cd == Catch::Approx(m2.cd));
    }
}

TEST_CASE("motion_alignment", "[evalkit]") {
    IntensityCalibration calib{0.0, 4.5};
    SECTION("exact match scores zero") {
        // raw that maps exactly onto level 4: 1 + 9 (raw - lo)/(hi - lo) = 4
        const double raw = calib.lo + 3.0 / 9.0 * (calib.hi - calib.lo);
        CHECK(std::abs(continuous_level(raw, calib) - 4.0) < 1e-12);
    }
    SECTION("normalized distance") {
        // measured continuous level 5 against target 8 -> 3/9
        const double raw5 = calib.lo + 4.0 / 9.0 * (calib.hi - calib.lo);
        std::vector<Image> frames;
        // synthesize a clip whose measured intensity is close to raw5 by
        // translating the texture at that speed
        const Image& tex = clipdetail::global_texture(64, 64);
        for (int f = 0; f < 3; ++f) {
            Image img(64, 64);
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    int sx = x - static_cast<int>(std::lround(raw5 * f));
                    sx = ((sx % 64) + 64) % 64;
                    for (int c = 0; c < 3; ++c) img.at(x, y, c) = tex.at(sx, y, c);
                }
            frames.push_back(std::move(img));
        }
        const double err = motion_alignment(frames, 8, calib);
        CHECK(err == Catch::Approx(3.0 / 9.0).margin(0.05));
    }
    SECTION("single frame rejected") {
        std::vector<Image> one(1, Image(16, 16));
        CHECK_THROWS_AS(motion_alignment(one, 5, calib), InputError);
        CHECK_THROWS_AS(motion_alignment(one, 0, calib), InputError);
    }
}

TEST_CASE("attention heatmap export", "[evalkit]") {
    const fs::path dir = fs::temp_directory_path() / "md_heatmaps";
    fs::remove_all(dir);

    SECTION("uniform map renders mid-gray, point mass renders one white pixel") {
        std::vector<AttentionRecord<double>> records;
        Tensor<double> uniform = Tensor<double>::full({16, 2}, 0.5);
        records.push_back({GuidanceLayer::Mid, 0, uniform});
        Tensor<double> point({16, 2});
        for (int u = 0; u < 16; ++u) {
            point.data()[u * 2 + 0] = (u == 5) ? 1.0 : 0.0;
            point.data()[u * 2 + 1] = (u == 5) ? 0.0 : 1.0;
        }
        records.push_back({GuidanceLayer::Mid, 1, point});
        auto files = attention_heatmap_export(records, 4, 4, {0}, 3, dir.string());
        REQUIRE(files.size() == 3);  // 2 maps + contact sheet

        Image uni = read_png(files[0]);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(uni.at(x, y, 0) == Catch::Approx(0.5).margin(0.01));
        Image pt = read_png(files[1]);
        int whites = 0, blacks = 0;
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                if (pt.at(x, y, 0) > 0.99f) ++whites;
                if (pt.at(x, y, 0) < 0.01f) ++blacks;
            }
        CHECK(whites == 1);
        CHECK(blacks == 15);
    }
    SECTION("file count follows layers x frames x tokens") {
        std::vector<AttentionRecord<double>> records;
        for (auto layer : {GuidanceLayer::Mid, GuidanceLayer::Up})
            for (int f = 0; f < 3; ++f) {
                Tensor<double> map = Tensor<double>::full({16, 4}, 0.25);
                map.data()[f * 4] = 0.5;
                records.push_back({layer, f, map});
            }
        auto files = attention_heatmap_export(records, 4, 4, {1, 3}, 0, dir.string());
        CHECK(files.size() == 2 * 3 * 2 + 1);
    }
    fs::remove_all(dir);
}
