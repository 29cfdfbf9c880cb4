#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "motiondiff/clipgen.hpp"
#include "motiondiff/flow.hpp"
#include "motiondiff/rng.hpp"

using namespace motiondiff;

namespace {

GrayImage test_texture() { return to_gray(clipdetail::global_texture(64, 64)); }

// Subpixel translation with wraparound; the entire field moves by (dx,dy).
GrayImage translate_wrap(const GrayImage& img, double dx, double dy) {
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double sx = x - dx;
            double sy = y - dy;
            sx -= std::floor(sx / img.width) * img.width;
            sy -= std::floor(sy / img.height) * img.height;
            const int x0 = static_cast<int>(sx) % img.width;
            const int y0 = static_cast<int>(sy) % img.height;
            const int x1 = (x0 + 1) % img.width;
            const int y1 = (y0 + 1) % img.height;
            const double fx = sx - std::floor(sx);
            const double fy = sy - std::floor(sy);
            out.at(x, y) = static_cast<float>(
                (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
                fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1)));
        }
    return out;
}

double endpoint_error(const FlowField& flow, double dx, double dy) {
    double acc = 0;
    for (size_t i = 0; i < flow.u.size(); ++i)
        acc += std::hypot(flow.u[i] - dx, flow.v[i] - dy);
    return acc / static_cast<double>(flow.u.size());
}

}  // namespace

TEST_CASE("static frames give near-zero flow", "[flow]") {
    const GrayImage tex = test_texture();
    const FlowField flow = farneback_flow(tex, tex);
    CHECK(flow.mean_magnitude() <= 0.05);
}

TEST_CASE("known translations are recovered", "[flow][oracle]") {
    const GrayImage tex = test_texture();
    SECTION("(3, 0)") {
        const FlowField flow = farneback_flow(tex, translate_wrap(tex, 3.0, 0.0));
        double mu = 0, mv = 0;
        for (size_t i = 0; i < flow.u.size(); ++i) {
            mu += flow.u[i];
            mv += flow.v[i];
        }
        mu /= static_cast<double>(flow.u.size());
        mv /= static_cast<double>(flow.v.size());
        CHECK(std::abs(mu - 3.0) <= 0.3);
        CHECK(std::abs(mv) <= 0.3);
        CHECK(endpoint_error(flow, 3.0, 0.0) <= 0.5);
    }
    SECTION("(0, -2)") {
        const FlowField flow = farneback_flow(tex, translate_wrap(tex, 0.0, -2.0));
        double mu = 0, mv = 0;
        for (size_t i = 0; i < flow.u.size(); ++i) {
            mu += flow.u[i];
            mv += flow.v[i];
        }
        mu /= static_cast<double>(flow.u.size());
        mv /= static_cast<double>(flow.v.size());
        CHECK(std::abs(mu) <= 0.2);
        CHECK(std::abs(mv + 2.0) <= 0.2);
        CHECK(endpoint_error(flow, 0.0, -2.0) <= 0.5);
    }
}

TEST_CASE("endpoint error stays under half a pixel for |d| <= 4", "[flow][property]") {
    const GrayImage tex = test_texture();
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const double mag = rng.uniform(0.5, 4.0);
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double dx = mag * std::cos(theta);
        const double dy = mag * std::sin(theta);
        const FlowField flow = farneback_flow(tex, translate_wrap(tex, dx, dy));
        INFO("d = (" << dx << ", " << dy << ")");
        CHECK(endpoint_error(flow, dx, dy) <= 0.5);
    }
}

TEST_CASE("frames below the polynomial neighborhood are rejected", "[flow]") {
    GrayImage tiny(3, 3);
    CHECK_THROWS_AS(farneback_flow(tiny, tiny), InputError);
    GrayImage a(16, 16), b(17, 16);
    CHECK_THROWS_AS(farneback_flow(a, b), InputError);
}

TEST_CASE("flow dump round trip", "[flow]") {
    const GrayImage tex = test_texture();
    const FlowField flow = farneback_flow(tex, translate_wrap(tex, 1.5, -0.5));
    const std::string path =
        (std::filesystem::temp_directory_path() / "md_flow_test.mflw").string();
    write_flow(path, flow);
    const FlowField back = read_flow(path);
    REQUIRE(back.width == flow.width);
    REQUIRE(back.height == flow.height);
    for (size_t i = 0; i < flow.u.size(); ++i) {
        REQUIRE(back.u[i] == flow.u[i]);
        REQUIRE(back.v[i] == flow.v[i]);
    }
    std::remove(path.c_str());
}
