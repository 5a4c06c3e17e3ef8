#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/geometry.hpp"
#include "sentinel/image.hpp"
#include "sentinel/morphology.hpp"
#include "sentinel/slide.hpp"

namespace sentinel {

struct SegmentationParams {
    int blur_kernel = 7;           // odd; applied to the saturation channel
    int min_component_area = 256;  // thumbnail pixels; smaller components dropped
    int connectivity = 8;          // 4 or 8
    // Constant-saturation slides cannot be thresholded; they are classified
    // wholesale by comparing the constant against this floor.
    int constant_saturation_floor = 20;
};

/// A connected tissue region: labeled component plus traced outer boundary,
/// expressed in the coordinates of `level`.
struct Contour {
    int component_id = 0;
    std::int64_t pixel_count = 0; // area in pixels at the detection level
    std::vector<Point> boundary;  // closed outer-edge trace
    Rect bbox;
    int level = 0;
};

/// Converts 8-bit RGB to 8-bit HSV. Hue is scaled from [0, 360) to 0..255;
/// saturation and value use the standard definitions on 0..255.
inline RasterImage rgb_to_hsv(const RasterImage& img) {
    if (img.channels != 3)
        throw ConfigError("rgb_to_hsv: input must be 3-channel");
    RasterImage out(img.width, img.height, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
            double v = std::max({r, g, b});
            double m = std::min({r, g, b});
            double d = v - m;
            double s = v == 0.0 ? 0.0 : 255.0 * d / v;
            double h = 0.0;
            if (d > 0.0) {
                if (v == r)
                    h = 60.0 * (g - b) / d;
                else if (v == g)
                    h = 60.0 * ((b - r) / d + 2.0);
                else
                    h = 60.0 * ((r - g) / d + 4.0);
                if (h < 0.0)
                    h += 360.0;
            }
            out.at(x, y, 0) = static_cast<std::uint8_t>(std::llround(h * 255.0 / 360.0));
            out.at(x, y, 1) = static_cast<std::uint8_t>(std::llround(s));
            out.at(x, y, 2) = static_cast<std::uint8_t>(std::llround(v));
        }
    return out;
}

/// Median filter with edge replication, via a sliding 256-bin histogram per
/// row. Kernel must be odd.
inline RasterImage median_blur(const RasterImage& channel, int kernel) {
    if (channel.channels != 1)
        throw ConfigError("median_blur: input must be single-channel");
    if (kernel < 1 || kernel % 2 == 0)
        throw ConfigError("median_blur: kernel must be odd and >= 1");
    if (kernel == 1)
        return channel;
    const int r = kernel / 2;
    const int w = channel.width, h = channel.height;
    const int rank = (kernel * kernel + 1) / 2; // 1-based middle element
    RasterImage out(w, h, 1);

    auto clamp_x = [&](int x) { return std::clamp(x, 0, w - 1); };
    auto clamp_y = [&](int y) { return std::clamp(y, 0, h - 1); };

    std::array<int, 256> hist{};
    for (int y = 0; y < h; ++y) {
        hist.fill(0);
        for (int cx = -r; cx <= r; ++cx)
            for (int cy = -r; cy <= r; ++cy)
                ++hist[channel.at(clamp_x(cx), clamp_y(y + cy))];
        for (int x = 0; x < w; ++x) {
            int cum = 0;
            int median = 0;
            for (int v = 0; v < 256; ++v) {
                cum += hist[v];
                if (cum >= rank) {
                    median = v;
                    break;
                }
            }
            out.at(x, y) = static_cast<std::uint8_t>(median);
            if (x + 1 < w) {
                for (int cy = -r; cy <= r; ++cy) {
                    --hist[channel.at(clamp_x(x - r), clamp_y(y + cy))];
                    ++hist[channel.at(clamp_x(x + 1 + r), clamp_y(y + cy))];
                }
            }
        }
    }
    return out;
}

struct OtsuResult {
    int threshold = 0; // foreground = value > threshold
    BinaryMask mask;
};

/// Otsu's method: exhaustive scan of all 255 cut points maximizing
/// between-class variance; the smallest optimal threshold wins ties.
/// Foreground is the high-saturation side (value > threshold).
inline OtsuResult otsu_threshold(const RasterImage& channel) {
    if (channel.channels != 1)
        throw ConfigError("otsu_threshold: input must be single-channel");
    if (channel.empty())
        throw ConfigError("otsu_threshold: empty input");

    std::array<std::int64_t, 256> hist{};
    for (std::uint8_t v : channel.samples)
        ++hist[v];

    int distinct = 0;
    for (auto c : hist)
        distinct += (c > 0);
    if (distinct < 2)
        throw NumericError("otsu_threshold: constant image has no valid threshold");

    const std::int64_t total = static_cast<std::int64_t>(channel.samples.size());
    std::int64_t sum_all = 0;
    for (int v = 0; v < 256; ++v)
        sum_all += static_cast<std::int64_t>(v) * hist[v];

    int best_t = -1;
    double best_bcv = -1.0;
    std::int64_t w0 = 0, sum0 = 0;
    for (int t = 0; t < 255; ++t) {
        w0 += hist[t];
        sum0 += static_cast<std::int64_t>(t) * hist[t];
        std::int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0)
            continue;
        double mu0 = static_cast<double>(sum0) / static_cast<double>(w0);
        double mu1 = static_cast<double>(sum_all - sum0) / static_cast<double>(w1);
        double bcv = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
        if (bcv > best_bcv) {
            best_bcv = bcv;
            best_t = t;
        }
    }

    OtsuResult result;
    result.threshold = best_t;
    result.mask = BinaryMask(channel.width, channel.height);
    for (int y = 0; y < channel.height; ++y)
        for (int x = 0; x < channel.width; ++x)
            result.mask.set(x, y, channel.at(x, y) > best_t);
    return result;
}

namespace detail {

struct ContourExtraction {
    std::vector<Contour> contours;
    BinaryMask kept_mask; // only components that passed the area filter
};

inline ContourExtraction extract_contours(const BinaryMask& mask, const SegmentationParams& params,
                                          int level) {
    ContourExtraction out;
    out.kept_mask = BinaryMask(mask.width, mask.height);
    ComponentLabels cc = connected_components(mask, params.connectivity);
    for (const ComponentInfo& info : cc.components) {
        if (info.pixel_count < params.min_component_area)
            continue;
        Contour contour;
        contour.component_id = info.id;
        contour.pixel_count = info.pixel_count;
        contour.boundary = trace_boundary(cc, info);
        contour.bbox = info.bbox;
        contour.level = level;
        out.contours.push_back(std::move(contour));
    }
    if (!out.contours.empty()) {
        std::vector<char> kept(cc.components.size() + 1, 0);
        for (const Contour& c : out.contours)
            kept[c.component_id] = 1;
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x) {
                std::int32_t id = cc.label_at(x, y);
                if (id != 0 && kept[id])
                    out.kept_mask.set(x, y);
            }
    }
    return out;
}

} // namespace detail

/// Connected-component contouring of a binary tissue mask. Components below
/// min_component_area are dropped; an empty mask yields an empty list.
inline std::vector<Contour> find_tissue_contours(const BinaryMask& mask,
                                                 const SegmentationParams& params, int level = 0) {
    return detail::extract_contours(mask, params, level).contours;
}

struct SegmentationResult {
    std::vector<Contour> contours;  // at the tiling level
    BinaryMask detection_mask;      // kept components, at the detection level
    int detection_level = 0;
    int tiling_level = 0;
    double reduction_ratio = 0.0;   // 1 - sum(scaled bbox areas) / tiling-level area
};

/// Runs the full tissue-segmentation chain (HSV -> saturation -> median blur
/// -> Otsu -> contours) on the slide's lowest-resolution level and scales the
/// contours to the tiling level.
inline SegmentationResult segment_tissue(const PyramidalSlide& slide,
                                         const SegmentationParams& params, int tiling_level = 0) {
    if (slide.level_count() < 2)
        throw ConfigError("segment_tissue: slide must have at least 2 levels");
    slide.level(tiling_level);
    const int detection_level = slide.level_count() - 1;

    RasterImage hsv = rgb_to_hsv(slide.level_raster(detection_level));
    RasterImage saturation = extract_channel(hsv, 1);
    RasterImage blurred = median_blur(saturation, params.blur_kernel);

    auto minmax = std::minmax_element(blurred.samples.begin(), blurred.samples.end());
    BinaryMask mask(blurred.width, blurred.height);
    if (*minmax.first == *minmax.second) {
        // Degenerate constant-saturation slide: all tissue or all background.
        if (*minmax.first >= params.constant_saturation_floor)
            mask.bits.assign(mask.bits.size(), 1);
    } else {
        mask = otsu_threshold(blurred).mask;
    }

    detail::ContourExtraction extraction = detail::extract_contours(mask, params, detection_level);

    SegmentationResult result;
    result.detection_mask = std::move(extraction.kept_mask);
    result.detection_level = detection_level;
    result.tiling_level = tiling_level;

    const LevelDescriptor& tiling = slide.level(tiling_level);
    double scaled_bbox_area = 0.0;
    for (Contour& contour : extraction.contours) {
        Contour scaled;
        scaled.component_id = contour.component_id;
        scaled.pixel_count = contour.pixel_count;
        scaled.level = tiling_level;
        scaled.boundary.reserve(contour.boundary.size());
        for (const Point& p : contour.boundary)
            scaled.boundary.push_back(slide.scale_point(detection_level, tiling_level, p));
        Point lo = slide.scale_point(detection_level, tiling_level,
                                     Point{contour.bbox.x, contour.bbox.y});
        Point hi = slide.scale_point(
            detection_level, tiling_level,
            Point{contour.bbox.x + contour.bbox.w, contour.bbox.y + contour.bbox.h});
        scaled.bbox = Rect{lo.x, lo.y, hi.x - lo.x, hi.y - lo.y};
        scaled_bbox_area += static_cast<double>(scaled.bbox.area());
        result.contours.push_back(std::move(scaled));
    }
    result.reduction_ratio =
        1.0 - scaled_bbox_area / (static_cast<double>(tiling.width) * tiling.height);
    return result;
}

// ---------------------------------------------------------------------------
// Contour-set checkpoint document
// ---------------------------------------------------------------------------

inline nlohmann::json contours_to_json(const std::string& slide_id, const SegmentationResult& seg,
                                       const std::string& mask_path = "") {
    nlohmann::json contours = nlohmann::json::array();
    for (const Contour& c : seg.contours) {
        nlohmann::json boundary = nlohmann::json::array();
        for (const Point& p : c.boundary)
            boundary.push_back({p.x, p.y});
        contours.push_back({{"component_id", c.component_id},
                            {"pixel_count", c.pixel_count},
                            {"level", c.level},
                            {"bbox", {{"x", c.bbox.x}, {"y", c.bbox.y}, {"w", c.bbox.w}, {"h", c.bbox.h}}},
                            {"boundary", boundary}});
    }
    nlohmann::json j{{"format_version", 1},
                     {"slide_id", slide_id},
                     {"detection_level", seg.detection_level},
                     {"tiling_level", seg.tiling_level},
                     {"reduction_ratio", seg.reduction_ratio},
                     {"contours", contours}};
    if (!mask_path.empty())
        j["mask_path"] = mask_path;
    return j;
}

inline SegmentationResult contours_from_json(const nlohmann::json& j, std::string* slide_id = nullptr,
                                             std::string* mask_path = nullptr) {
    SegmentationResult seg;
    try {
        if (slide_id)
            *slide_id = j.at("slide_id").get<std::string>();
        if (mask_path)
            *mask_path = j.value("mask_path", std::string());
        seg.detection_level = j.at("detection_level").get<int>();
        seg.tiling_level = j.at("tiling_level").get<int>();
        seg.reduction_ratio = j.at("reduction_ratio").get<double>();
        for (const auto& cj : j.at("contours")) {
            Contour c;
            c.component_id = cj.at("component_id").get<int>();
            c.pixel_count = cj.at("pixel_count").get<std::int64_t>();
            c.level = cj.at("level").get<int>();
            const auto& bb = cj.at("bbox");
            c.bbox = Rect{bb.at("x").get<std::int64_t>(), bb.at("y").get<std::int64_t>(),
                          bb.at("w").get<std::int64_t>(), bb.at("h").get<std::int64_t>()};
            for (const auto& pj : cj.at("boundary"))
                c.boundary.push_back(Point{pj.at(0).get<std::int64_t>(), pj.at(1).get<std::int64_t>()});
            seg.contours.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("contour document: ") + e.what());
    }
    return seg;
}

} // namespace sentinel
