#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "sentinel/segmentation.hpp"
#include "sentinel/synthetic.hpp"
#include "test_support.hpp"

using namespace sentinel;
using testsup::TempDir;

namespace {

// Naive O(k^2 log k) median: copy the clamped window, sort, take the middle.
RasterImage median_blur_oracle(const RasterImage& img, int k) {
    int r = k / 2;
    RasterImage out(img.width, img.height, 1);
    std::vector<std::uint8_t> window;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            window.clear();
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int sx = std::clamp(x + dx, 0, img.width - 1);
                    int sy = std::clamp(y + dy, 0, img.height - 1);
                    window.push_back(img.at(sx, sy));
                }
            std::sort(window.begin(), window.end());
            out.at(x, y) = window[window.size() / 2];
        }
    return out;
}

// Exhaustive Otsu oracle: minimize weighted intra-class variance over all
// 255 cut points; smallest threshold wins ties.
int otsu_oracle(const RasterImage& channel) {
    std::array<std::int64_t, 256> hist{};
    for (auto v : channel.samples)
        ++hist[v];
    std::int64_t total = static_cast<std::int64_t>(channel.samples.size());
    int best_t = -1;
    double best_wcv = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 255; ++t) {
        std::int64_t n0 = 0, n1 = 0;
        double s0 = 0, s1 = 0;
        for (int v = 0; v <= t; ++v) {
            n0 += hist[v];
            s0 += static_cast<double>(v) * hist[v];
        }
        for (int v = t + 1; v < 256; ++v) {
            n1 += hist[v];
            s1 += static_cast<double>(v) * hist[v];
        }
        if (n0 == 0 || n1 == 0)
            continue;
        double m0 = s0 / n0, m1 = s1 / n1;
        double v0 = 0, v1 = 0;
        for (int v = 0; v <= t; ++v)
            v0 += hist[v] * (v - m0) * (v - m0);
        for (int v = t + 1; v < 256; ++v)
            v1 += hist[v] * (v - m1) * (v - m1);
        double wcv = (v0 + v1) / static_cast<double>(total);
        if (wcv < best_wcv) {
            best_wcv = wcv;
            best_t = t;
        }
    }
    return best_t;
}

// Flood-fill component counter, independent of the labeling code path.
int flood_fill_count(const BinaryMask& mask, int connectivity) {
    std::vector<char> seen(mask.bits.size(), 0);
    int count = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < mask.height; ++y0)
        for (int x0 = 0; x0 < mask.width; ++x0) {
            if (!mask.at(x0, y0) || seen[y0 * mask.width + x0])
                continue;
            ++count;
            stack.push_back({x0, y0});
            seen[y0 * mask.width + x0] = 1;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0)
                            continue;
                        if (connectivity == 4 && dx != 0 && dy != 0)
                            continue;
                        int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height)
                            continue;
                        if (mask.at(nx, ny) && !seen[ny * mask.width + nx]) {
                            seen[ny * mask.width + nx] = 1;
                            stack.push_back({nx, ny});
                        }
                    }
            }
        }
    return count;
}

RasterImage solid_color(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    RasterImage img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

} // namespace

TEST_CASE("rgb_to_hsv known values") {
    RasterImage px(1, 1, 3);

    px.at(0, 0, 0) = 255; // pure red
    px.at(0, 0, 1) = 0;
    px.at(0, 0, 2) = 0;
    RasterImage hsv = rgb_to_hsv(px);
    CHECK(hsv.at(0, 0, 0) == 0);
    CHECK(hsv.at(0, 0, 1) == 255);
    CHECK(hsv.at(0, 0, 2) == 255);

    px.at(0, 0, 0) = 128; // gray: zero saturation
    px.at(0, 0, 1) = 128;
    px.at(0, 0, 2) = 128;
    hsv = rgb_to_hsv(px);
    CHECK(hsv.at(0, 0, 1) == 0);
    CHECK(hsv.at(0, 0, 2) == 128);

    px.at(0, 0, 0) = 0; // cyan: H = 180 deg -> round(180/360*255) = 128
    px.at(0, 0, 1) = 255;
    px.at(0, 0, 2) = 255;
    hsv = rgb_to_hsv(px);
    CHECK(hsv.at(0, 0, 0) == 128);
    CHECK(hsv.at(0, 0, 1) == 255);
    CHECK(hsv.at(0, 0, 2) == 255);

    REQUIRE_THROWS_AS(rgb_to_hsv(RasterImage(2, 2, 1)), ConfigError);
}

TEST_CASE("median_blur basics") {
    SECTION("constant image unchanged") {
        RasterImage img = testsup::constant_image(16, 16, 1, 77);
        REQUIRE(median_blur(img, 5) == img);
    }
    SECTION("lone bright pixel removed with kernel 3") {
        RasterImage img(9, 9, 1, 0);
        img.at(4, 4) = 255;
        RasterImage blurred = median_blur(img, 3);
        for (auto v : blurred.samples)
            REQUIRE(v == 0);
    }
    SECTION("even kernel rejected") {
        REQUIRE_THROWS_AS(median_blur(RasterImage(4, 4, 1), 4), ConfigError);
    }
}

TEST_CASE("median_blur matches the sorted-window oracle") {
    Rng rng(101);
    for (int iter = 0; iter < 25; ++iter) {
        RasterImage img = testsup::random_image(16, 16, 1, rng);
        for (int k : {3, 5})
            REQUIRE(median_blur(img, k) == median_blur_oracle(img, k));
    }
}

TEST_CASE("median_blur output stays within input range") {
    Rng rng(102);
    for (int iter = 0; iter < 10; ++iter) {
        RasterImage img = testsup::random_image(20, 14, 1, rng);
        auto [mn, mx] = std::minmax_element(img.samples.begin(), img.samples.end());
        RasterImage blurred = median_blur(img, 5);
        for (auto v : blurred.samples) {
            REQUIRE(v >= *mn);
            REQUIRE(v <= *mx);
        }
    }
}

TEST_CASE("otsu_threshold splits a bimodal image exactly") {
    RasterImage img(16, 16, 1);
    for (int i = 0; i < 256; ++i)
        img.samples[i] = i < 128 ? 50 : 200;
    OtsuResult result = otsu_threshold(img);
    REQUIRE(result.threshold >= 50);
    REQUIRE(result.threshold <= 199);
    std::int64_t fg = result.mask.count();
    REQUIRE(fg == 128);
    for (int i = 0; i < 256; ++i)
        REQUIRE(result.mask.bits[i] == (img.samples[i] == 200 ? 1 : 0));
    REQUIRE(result.threshold == otsu_oracle(img));
}

TEST_CASE("otsu_threshold on a {0,255} image separates the two sets") {
    Rng rng(103);
    RasterImage img(32, 32, 1);
    for (auto& v : img.samples)
        v = rng.bernoulli(0.3) ? 255 : 0;
    img.samples[0] = 0;
    img.samples[1] = 255; // ensure both present
    OtsuResult result = otsu_threshold(img);
    for (std::size_t i = 0; i < img.samples.size(); ++i)
        REQUIRE(result.mask.bits[i] == (img.samples[i] == 255 ? 1 : 0));
}

TEST_CASE("otsu_threshold rejects constant images") {
    REQUIRE_THROWS_AS(otsu_threshold(testsup::constant_image(8, 8, 1, 42)), NumericError);
}

TEST_CASE("otsu_threshold equals exhaustive intra-class-variance minimization") {
    Rng rng(104);
    for (int iter = 0; iter < 200; ++iter) {
        // random bimodal-ish images; occasional sparse histograms exercise ties
        RasterImage img(24, 24, 1);
        int mode_a = static_cast<int>(rng.uniform_u64(200));
        int mode_b = mode_a + 20 + static_cast<int>(rng.uniform_u64(35));
        for (auto& v : img.samples) {
            double center = rng.bernoulli(0.5) ? mode_a : mode_b;
            v = clamp_u8(center + rng.gaussian() * (1 + rng.uniform_u64(12)));
        }
        auto [mn, mx] = std::minmax_element(img.samples.begin(), img.samples.end());
        if (*mn == *mx)
            continue;
        REQUIRE(otsu_threshold(img).threshold == otsu_oracle(img));
    }
}

TEST_CASE("find_tissue_contours on simple shapes") {
    SegmentationParams params;
    params.min_component_area = 1;

    SECTION("one filled 10x10 square") {
        BinaryMask mask(32, 32);
        for (int y = 4; y < 14; ++y)
            for (int x = 6; x < 16; ++x)
                mask.set(x, y);
        auto contours = find_tissue_contours(mask, params);
        REQUIRE(contours.size() == 1);
        CHECK(contours[0].pixel_count == 100);
        CHECK(contours[0].bbox == Rect{6, 4, 10, 10});
        CHECK(boundary_length(contours[0].boundary) == 36.0);
    }
    SECTION("area filter keeps only the larger of two squares") {
        BinaryMask mask(40, 40);
        for (int y = 2; y < 12; ++y) // 10x10 = 100 px
            for (int x = 2; x < 12; ++x)
                mask.set(x, y);
        for (int y = 20; y < 24; ++y) // 4x4 = 16 px
            for (int x = 20; x < 24; ++x)
                mask.set(x, y);
        params.min_component_area = 50;
        auto contours = find_tissue_contours(mask, params);
        REQUIRE(contours.size() == 1);
        CHECK(contours[0].pixel_count == 100);
    }
    SECTION("empty mask yields empty list") {
        REQUIRE(find_tissue_contours(BinaryMask(16, 16), params).empty());
    }
}

TEST_CASE("component count matches the flood-fill oracle on random blobs") {
    Rng rng(105);
    SegmentationParams params;
    params.min_component_area = 1;
    for (int iter = 0; iter < 20; ++iter) {
        BinaryMask mask(48, 48);
        for (int b = 0; b < 6; ++b) {
            int cx = static_cast<int>(rng.uniform_u64(48));
            int cy = static_cast<int>(rng.uniform_u64(48));
            int r = 2 + static_cast<int>(rng.uniform_u64(6));
            for (int y = std::max(0, cy - r); y < std::min(48, cy + r); ++y)
                for (int x = std::max(0, cx - r); x < std::min(48, cx + r); ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                        mask.set(x, y);
        }
        for (int connectivity : {4, 8}) {
            params.connectivity = connectivity;
            auto contours = find_tissue_contours(mask, params);
            REQUIRE(static_cast<int>(contours.size()) == flood_fill_count(mask, connectivity));
        }
    }
}

TEST_CASE("contour boundaries lie on the component edge") {
    Rng rng(106);
    SegmentationParams params;
    params.min_component_area = 1;
    BinaryMask mask(40, 40);
    for (int b = 0; b < 4; ++b) {
        int cx = 6 + static_cast<int>(rng.uniform_u64(28));
        int cy = 6 + static_cast<int>(rng.uniform_u64(28));
        int r = 3 + static_cast<int>(rng.uniform_u64(5));
        for (int y = std::max(0, cy - r); y < std::min(40, cy + r); ++y)
            for (int x = std::max(0, cx - r); x < std::min(40, cx + r); ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                    mask.set(x, y);
    }
    for (const Contour& contour : find_tissue_contours(mask, params)) {
        for (const Point& p : contour.boundary) {
            REQUIRE(mask.at(static_cast<int>(p.x), static_cast<int>(p.y)));
            bool touches_outside = false;
            for (int dy = -1; dy <= 1 && !touches_outside; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    std::int64_t nx = p.x + dx, ny = p.y + dy;
                    if (!mask.in_bounds(nx, ny) ||
                        !mask.at(static_cast<int>(nx), static_cast<int>(ny))) {
                        touches_outside = true;
                        break;
                    }
                }
            REQUIRE(touches_outside);
        }
        // closed trace: last point is 8-adjacent to the first
        const Point& first = contour.boundary.front();
        const Point& last = contour.boundary.back();
        REQUIRE(std::max(std::abs(first.x - last.x), std::abs(first.y - last.y)) <= 1);
    }
}

TEST_CASE("segment_tissue on a synthetic slide") {
    TempDir dir("segment");
    SyntheticSlideConfig cfg;
    cfg.slide_id = "seg";
    cfg.level0_width = 1024;
    cfg.level0_height = 1024;
    cfg.level_count = 3;
    cfg.tissue_blob_count = 3;
    cfg.tissue_radius_min = 130;
    cfg.tissue_radius_max = 160; // tissue ~ 25% of area
    cfg.tumor_blob_count = 0;
    cfg.seed = 9;
    auto report = generate_synthetic_slide(cfg, dir.path);
    PyramidalSlide slide = PyramidalSlide::open(report.manifest_path);

    SegmentationParams params;
    params.min_component_area = 64;
    SegmentationResult seg = segment_tissue(slide, params, 0);

    REQUIRE(seg.contours.size() == 3);
    REQUIRE(seg.reduction_ratio >= 0.70);
    REQUIRE(seg.tiling_level == 0);
    REQUIRE(seg.detection_level == 2);
    for (const Contour& c : seg.contours)
        REQUIRE(c.level == 0);
}

TEST_CASE("segment_tissue scaled bboxes contain their detection-level bboxes") {
    TempDir dir("segment_scale");
    SyntheticSlideConfig cfg;
    cfg.slide_id = "segscale";
    cfg.level0_width = 512;
    cfg.level0_height = 512;
    cfg.level_count = 3;
    cfg.tissue_blob_count = 2;
    cfg.tissue_radius_min = 60;
    cfg.tissue_radius_max = 100;
    cfg.seed = 10;
    auto report = generate_synthetic_slide(cfg, dir.path);
    PyramidalSlide slide = PyramidalSlide::open(report.manifest_path);

    SegmentationParams params;
    params.min_component_area = 16;
    SegmentationResult seg = segment_tissue(slide, params, 0);
    // recompute at detection level for comparison
    auto detection =
        detail::extract_contours(seg.detection_mask, params, seg.detection_level).contours;
    REQUIRE(detection.size() == seg.contours.size());
    for (std::size_t i = 0; i < detection.size(); ++i) {
        const Rect& orig = detection[i].bbox;
        const Rect& scaled = seg.contours[i].bbox;
        Point back_lo = slide.scale_point(0, seg.detection_level, {scaled.x, scaled.y});
        Point back_hi = slide.scale_point(0, seg.detection_level,
                                          {scaled.x + scaled.w, scaled.y + scaled.h});
        REQUIRE(back_lo.x <= orig.x);
        REQUIRE(back_lo.y <= orig.y);
        REQUIRE(back_hi.x >= orig.x + orig.w);
        REQUIRE(back_hi.y >= orig.y + orig.h);
    }
}

TEST_CASE("segment_tissue degenerate slides") {
    TempDir dir("segment_degen");

    SECTION("entirely background: empty contours, ratio 1") {
        SyntheticSlideConfig cfg;
        cfg.slide_id = "bg";
        cfg.level0_width = 256;
        cfg.level0_height = 256;
        cfg.level_count = 2;
        cfg.tissue_blob_count = 0;
        cfg.tumor_blob_count = 0;
        cfg.seed = 3;
        auto report = generate_synthetic_slide(cfg, dir.path / "bg");
        PyramidalSlide slide = PyramidalSlide::open(report.manifest_path);
        SegmentationResult seg = segment_tissue(slide, SegmentationParams{}, 0);
        REQUIRE(seg.contours.empty());
        REQUIRE(seg.reduction_ratio == 1.0);
    }
    SECTION("entirely tissue-colored: one full-frame contour, ratio ~ 0") {
        TempDir tissue_dir("segment_tissue_full");
        // build a slide whose every pixel is saturated tissue color
        SlideManifest manifest;
        manifest.slide_id = "full";
        RasterImage level0 = solid_color(128, 128, 206, 126, 168);
        RasterImage level1 = box_downsample(level0, 2);
        write_pnm(tissue_dir.path / "level_0.ppm", level0);
        write_pnm(tissue_dir.path / "level_1.ppm", level1);
        manifest.levels.push_back({0, 128, 128, 1.0, "level_0.ppm"});
        manifest.levels.push_back({1, 64, 64, 2.0, "level_1.ppm"});
        write_manifest(tissue_dir.path / "manifest.json", manifest);
        PyramidalSlide slide = PyramidalSlide::open(tissue_dir.path / "manifest.json");
        SegmentationResult seg = segment_tissue(slide, SegmentationParams{}, 0);
        REQUIRE(seg.contours.size() == 1);
        REQUIRE(seg.reduction_ratio <= 0.05);
    }
}

TEST_CASE("contour checkpoint document round trips") {
    TempDir dir("contour_json");
    SyntheticSlideConfig cfg;
    cfg.slide_id = "cj";
    cfg.level0_width = 256;
    cfg.level0_height = 256;
    cfg.level_count = 2;
    cfg.tissue_blob_count = 2;
    cfg.tissue_radius_min = 30;
    cfg.tissue_radius_max = 50;
    cfg.seed = 8;
    auto report = generate_synthetic_slide(cfg, dir.path);
    PyramidalSlide slide = PyramidalSlide::open(report.manifest_path);
    SegmentationParams params;
    params.min_component_area = 16;
    SegmentationResult seg = segment_tissue(slide, params, 0);

    nlohmann::json j = contours_to_json("cj", seg, "cj_mask.pgm");
    std::string slide_id, mask_path;
    SegmentationResult back = contours_from_json(j, &slide_id, &mask_path);
    REQUIRE(slide_id == "cj");
    REQUIRE(mask_path == "cj_mask.pgm");
    REQUIRE(back.contours.size() == seg.contours.size());
    REQUIRE(back.reduction_ratio == seg.reduction_ratio);
    for (std::size_t i = 0; i < seg.contours.size(); ++i) {
        REQUIRE(back.contours[i].bbox == seg.contours[i].bbox);
        REQUIRE(back.contours[i].boundary == seg.contours[i].boundary);
        REQUIRE(back.contours[i].pixel_count == seg.contours[i].pixel_count);
    }
}
