#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sentinel/stain.hpp"
#include "test_support.hpp"

using namespace sentinel;

namespace {

RasterImage solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    RasterImage img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

// saturated random tile: every pixel qualifies for stain statistics
RasterImage saturated_tile(int w, int h, Rng& rng) {
    RasterImage img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = clamp_u8(190 + rng.gaussian() * 20);
            img.at(x, y, 1) = clamp_u8(110 + rng.gaussian() * 20);
            img.at(x, y, 2) = clamp_u8(160 + rng.gaussian() * 20);
        }
    return img;
}

} // namespace

TEST_CASE("perceptual space basics") {
    SECTION("neutral gray has zero chroma") {
        ImageF lab = rgb_to_perceptual(solid(1, 1, 128, 128, 128));
        CHECK(std::abs(lab.at(0, 0, 1)) < 1e-9);
        CHECK(std::abs(lab.at(0, 0, 2)) < 1e-9);
    }
    SECTION("black has zero lightness") {
        ImageF lab = rgb_to_perceptual(solid(1, 1, 0, 0, 0));
        CHECK(std::abs(lab.at(0, 0, 0)) < 1e-9);
    }
    SECTION("round trip of 1000 random pixels is within 1 intensity level") {
        Rng rng(201);
        RasterImage img = testsup::random_image(1000, 1, 3, rng);
        RasterImage back = perceptual_to_rgb(rgb_to_perceptual(img));
        for (std::size_t i = 0; i < img.samples.size(); ++i)
            REQUIRE(std::abs(int(img.samples[i]) - int(back.samples[i])) <= 1);
    }
}

TEST_CASE("compute_stain_stats") {
    SECTION("constant tile: mean is the color, stddev zero") {
        RasterImage tile = solid(8, 8, 190, 110, 160);
        StainStats stats = compute_stain_stats(std::span(&tile, 1));
        ImageF lab = rgb_to_perceptual(tile);
        for (int c = 0; c < 3; ++c) {
            CHECK(stats.mean[c] == Catch::Approx(lab.at(0, 0, c)).margin(1e-12));
            CHECK(stats.stddev[c] < 1e-9);
        }
    }
    SECTION("two equal-size constant tiles: mean is the midpoint") {
        RasterImage a = solid(8, 8, 200, 90, 150);
        RasterImage b = solid(8, 8, 150, 120, 190);
        std::vector<RasterImage> tiles{a, b};
        StainStats stats = compute_stain_stats(tiles);
        ImageF la = rgb_to_perceptual(a), lb = rgb_to_perceptual(b);
        for (int c = 0; c < 3; ++c)
            CHECK(stats.mean[c] ==
                  Catch::Approx((la.at(0, 0, c) + lb.at(0, 0, c)) / 2.0).margin(1e-12));
    }
    SECTION("all-background tile is an error") {
        RasterImage gray = solid(8, 8, 230, 230, 230);
        REQUIRE_THROWS_AS(compute_stain_stats(std::span(&gray, 1)), NumericError);
    }
}

TEST_CASE("normalize_tile identity and convergence") {
    Rng rng(202);
    RasterImage tile = saturated_tile(24, 24, rng);
    StainStats self = compute_stain_stats(std::span(&tile, 1));

    SECTION("source == target: output within 1 intensity level") {
        NormalizeResult result = normalize_tile(tile, self, self);
        REQUIRE_FALSE(result.degenerate_source);
        for (std::size_t i = 0; i < tile.samples.size(); ++i)
            REQUIRE(std::abs(int(tile.samples[i]) - int(result.image.samples[i])) <= 1);
    }
    SECTION("mapped stats equal the target pre-clamping") {
        StainStats target;
        target.mean = {55.0, 30.0, -12.0};
        target.stddev = {9.0, 7.0, 5.0};
        ImageF lab = rgb_to_perceptual(tile);
        BinaryMask qualifying = stain_qualifying_mask(tile);
        StainStats source = perceptual_stats(lab, &qualifying);
        ImageF mapped = map_perceptual(lab, source, target);
        StainStats achieved = perceptual_stats(mapped, &qualifying);
        for (int c = 0; c < 3; ++c) {
            REQUIRE(std::abs(achieved.mean[c] - target.mean[c]) < 1e-3);
            REQUIRE(std::abs(achieved.stddev[c] - target.stddev[c]) < 1e-3);
        }
    }
    SECTION("overstained source shifts to a lighter target mean") {
        Rng rng2(203);
        RasterImage dark = solid(16, 16, 120, 40, 90); // heavy stain
        for (auto& s : dark.samples)
            s = clamp_u8(s + rng2.gaussian() * 6);
        StainStats source = compute_stain_stats(std::span(&dark, 1));
        RasterImage light = saturated_tile(16, 16, rng2);
        StainStats target = compute_stain_stats(std::span(&light, 1));
        NormalizeResult result = normalize_tile(dark, source, target);
        StainStats out_stats = compute_stain_stats(std::span(&result.image, 1));
        // lightness mean moved to the target's
        REQUIRE(std::abs(out_stats.mean[0] - target.mean[0]) < 2.0);
        REQUIRE(out_stats.mean[0] > source.mean[0]);
    }
    SECTION("degenerate source stain flags and passes through") {
        RasterImage flat = solid(8, 8, 190, 110, 160);
        StainStats source = compute_stain_stats(std::span(&flat, 1)); // stddev 0
        NormalizeResult result = normalize_tile(flat, source, self);
        REQUIRE(result.degenerate_source);
        REQUIRE(result.image == flat);
    }
}

TEST_CASE("normalization is idempotent") {
    Rng rng(204);
    RasterImage tile = saturated_tile(20, 20, rng);
    StainStats target;
    target.mean = {60.0, 25.0, -8.0};
    target.stddev = {8.0, 6.0, 4.0};

    ImageF lab = rgb_to_perceptual(tile);
    StainStats src1 = perceptual_stats(lab);
    ImageF once = map_perceptual(lab, src1, target);
    StainStats src2 = perceptual_stats(once);
    ImageF twice = map_perceptual(once, src2, target);
    StainStats s_once = perceptual_stats(once);
    StainStats s_twice = perceptual_stats(twice);
    for (int c = 0; c < 3; ++c) {
        REQUIRE(std::abs(s_once.mean[c] - s_twice.mean[c]) < 1e-3);
        REQUIRE(std::abs(s_once.stddev[c] - s_twice.stddev[c]) < 1e-3);
    }
}

TEST_CASE("the perceptual mapping is affine per channel") {
    // three collinear lab pixels stay collinear pre-clamping
    ImageF lab(3, 1, 3);
    for (int c = 0; c < 3; ++c) {
        lab.at(0, 0, c) = 10.0 + c;
        lab.at(1, 0, c) = 20.0 + 2 * c;
        lab.at(2, 0, c) = 30.0 + 3 * c; // midpoint of 0 and 2 is pixel 1
    }
    StainStats src{{15.0, 0.0, 5.0}, {4.0, 3.0, 2.0}};
    StainStats tgt{{50.0, 10.0, -5.0}, {12.0, 1.5, 8.0}};
    ImageF mapped = map_perceptual(lab, src, tgt);
    for (int c = 0; c < 3; ++c) {
        double mid = (mapped.at(0, 0, c) + mapped.at(2, 0, c)) / 2.0;
        REQUIRE(mapped.at(1, 0, c) == Catch::Approx(mid).margin(1e-9));
    }
}

TEST_CASE("stain profile document round trips") {
    StainStats s;
    s.mean = {55.5, 20.25, -11.125};
    s.stddev = {9.5, 7.25, 5.0625};
    StainStats back = StainStats::from_json(s.to_json());
    for (int c = 0; c < 3; ++c) {
        REQUIRE(back.mean[c] == s.mean[c]);
        REQUIRE(back.stddev[c] == s.stddev[c]);
    }
}

TEST_CASE("optical density deconvolution") {
    SECTION("white pixel has zero concentrations") {
        RasterImage white = solid(1, 1, 255, 255, 255);
        ImageF conc = od_deconvolve(white, StainMatrix{});
        for (int c = 0; c < 3; ++c)
            CHECK(conc.at(0, 0, c) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("identity matrix: concentrations equal raw OD") {
        RasterImage px = solid(1, 1, 26, 255, 255);
        ImageF conc = od_deconvolve(px, StainMatrix{});
        CHECK(conc.at(0, 0, 0) == Catch::Approx(-std::log10(26.0 / 255.0)).epsilon(1e-9));
        CHECK(conc.at(0, 0, 0) == Catch::Approx(0.9914).margin(5e-4));
        CHECK(conc.at(0, 0, 1) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("near-singular matrix rejected") {
        StainMatrix m = StainMatrix::from_rows(
            {1, 0, 0, 0, 1, 0, 1, 1e-9, 0}); // third row nearly equals the first
        RasterImage px = solid(1, 1, 100, 100, 100);
        REQUIRE_THROWS_AS(od_deconvolve(px, m), NumericError);
    }
    SECTION("deconvolve then recompose reconstructs bright pixels") {
        Rng rng(205);
        StainMatrix hema_eosin = StainMatrix::from_rows(
            {0.65, 0.70, 0.29, 0.07, 0.99, 0.11, 0.27, 0.57, 0.78});
        RasterImage img(64, 1, 3);
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, 0, c) = static_cast<std::uint8_t>(10 + rng.uniform_u64(246));
        ImageF conc = od_deconvolve(img, hema_eosin);
        RasterImage back = od_recompose(conc, hema_eosin);
        for (std::size_t i = 0; i < img.samples.size(); ++i)
            REQUIRE(std::abs(int(img.samples[i]) - int(back.samples[i])) <= 1);
    }
}

TEST_CASE("stain matrix document round trips and normalizes rows") {
    StainMatrix m = StainMatrix::from_rows({2, 0, 0, 0, 3, 0, 0, 0, 4});
    for (int i : {0, 4, 8})
        REQUIRE(m.m[i] == 1.0);
    StainMatrix back = StainMatrix::from_json(m.to_json());
    REQUIRE(back.m == m.m);
}
