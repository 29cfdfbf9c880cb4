#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "motiondiff/gif.hpp"
#include "motiondiff/image.hpp"
#include "motiondiff/rng.hpp"

using namespace motiondiff;
namespace fs = std::filesystem;

TEST_CASE("png rgb round trip", "[io]") {
    Rng rng(3);
    Image img(20, 13);
    for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
    const std::string path = (fs::temp_directory_path() / "md_io_rgb.png").string();
    write_png(path, img);
    const Image back = read_png(path);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    for (size_t i = 0; i < img.rgb.size(); ++i)
        CHECK(std::abs(back.rgb[i] - img.rgb[i]) <= 0.5f / 255.0f + 1e-6f);
    std::remove(path.c_str());
}

TEST_CASE("png grayscale round trip", "[io]") {
    Rng rng(5);
    std::vector<float> gray(16 * 9);
    for (auto& v : gray) v = static_cast<float>(rng.uniform());
    const std::string path = (fs::temp_directory_path() / "md_io_gray.png").string();
    write_png_gray(path, 16, 9, gray);
    const Image back = read_png(path);
    REQUIRE(back.width == 16);
    REQUIRE(back.height == 9);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 16; ++x) {
            const float want = gray[static_cast<size_t>(y) * 16 + x];
            CHECK(std::abs(back.at(x, y, 0) - want) <= 0.5f / 255.0f + 1e-6f);
            CHECK(back.at(x, y, 0) == back.at(x, y, 1));
        }
    std::remove(path.c_str());
}

TEST_CASE("png rejects garbage", "[io]") {
    const std::string path = (fs::temp_directory_path() / "md_io_bad.png").string();
    std::ofstream(path) << "definitely not a png";
    CHECK_THROWS_AS(read_png(path), FormatError);
    CHECK_THROWS_AS(read_png("/nonexistent/nope.png"), IoError);
    std::remove(path.c_str());
}

TEST_CASE("gif encoding is deterministic", "[io]") {
    Rng rng(9);
    std::vector<Image> frames;
    for (int f = 0; f < 4; ++f) {
        Image img(24, 16);
        for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
        frames.push_back(std::move(img));
    }
    const auto a = encode_gif(frames);
    const auto b = encode_gif(frames);
    REQUIRE(a == b);
    REQUIRE(a.size() > 6);
    CHECK(std::string(a.begin(), a.begin() + 6) == "GIF89a");
    CHECK(a.back() == 0x3B);

    CHECK_THROWS_AS(encode_gif({}), ContractError);
}
