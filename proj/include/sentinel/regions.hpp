#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/geometry.hpp"
#include "sentinel/heatmap.hpp"
#include "sentinel/morphology.hpp"

namespace sentinel {

struct RegionGeometry {
    double area = 0.0;           // cell count
    double perimeter = 0.0;      // boundary walk, axial 1 / diagonal sqrt(2)
    double compactness = 0.0;    // 4*pi*area / perimeter^2, clipped to (0, 1]
    double rectangularity = 0.0; // area / min-area rotated bounding rectangle
    double solidity = 0.0;       // area / convex hull area, clipped to (0, 1]
};

namespace detail {

// Monotone-chain convex hull; returns the hull counter-clockwise without the
// closing point. Input points need not be unique.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3)
        return pts;
    auto cross = [](const Point& o, const Point& a, const Point& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (const Point& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0)
            --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        const Point& p = pts[i];
        while (k >= lower && cross(hull[k - 2], hull[k - 1], p) <= 0)
            --k;
        hull[k++] = p;
    }
    hull.resize(k - 1);
    return hull;
}

inline double polygon_area(const std::vector<Point>& poly) {
    // shoelace; integer cross products are exact in double at this scale
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point& a = poly[i];
        const Point& b = poly[(i + 1) % poly.size()];
        twice += static_cast<double>(a.x) * b.y - static_cast<double>(b.x) * a.y;
    }
    return std::abs(twice) / 2.0;
}

/// Minimum-area rotated bounding rectangle over the hull: for each hull edge,
/// the extent along the edge direction times the perpendicular extent.
inline double min_area_rect(const std::vector<Point>& hull) {
    if (hull.size() < 3)
        return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Point& a = hull[i];
        const Point& b = hull[(i + 1) % hull.size()];
        double ex = static_cast<double>(b.x - a.x), ey = static_cast<double>(b.y - a.y);
        double len2 = ex * ex + ey * ey;
        if (len2 == 0.0)
            continue;
        double min_along = std::numeric_limits<double>::infinity(), max_along = -min_along;
        double min_perp = min_along, max_perp = -min_along;
        for (const Point& p : hull) {
            double along = ex * p.x + ey * p.y;  // scaled by |e|
            double perp = -ey * p.x + ex * p.y;
            min_along = std::min(min_along, along);
            max_along = std::max(max_along, along);
            min_perp = std::min(min_perp, perp);
            max_perp = std::max(max_perp, perp);
        }
        best = std::min(best, (max_along - min_along) * (max_perp - min_perp) / len2);
    }
    return best;
}

} // namespace detail

/// Geometry of a raster region given its cell coordinates. Area counts cells;
/// the perimeter traces the outer boundary; rectangularity and solidity use
/// the hull of the cells' corner points, so convex axis-aligned shapes score
/// exactly 1.
inline RegionGeometry region_geometry(const std::vector<Point>& cells) {
    if (cells.empty())
        throw ConfigError("region_geometry: empty region");
    RegionGeometry g;
    g.area = static_cast<double>(cells.size());

    // rasterize into a local mask for boundary tracing
    std::int64_t min_x = cells[0].x, max_x = cells[0].x, min_y = cells[0].y, max_y = cells[0].y;
    for (const Point& p : cells) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    BinaryMask mask(static_cast<int>(max_x - min_x + 1), static_cast<int>(max_y - min_y + 1));
    for (const Point& p : cells)
        mask.set(static_cast<int>(p.x - min_x), static_cast<int>(p.y - min_y));
    ComponentLabels cc = connected_components(mask, 8);
    if (cc.components.size() != 1)
        throw ConfigError("region_geometry: cells do not form one 8-connected component");
    std::vector<Point> boundary = trace_boundary(cc, cc.components[0]);
    g.perimeter = boundary_length(boundary);

    // hull over the cell corner points
    std::vector<Point> corners;
    corners.reserve(cells.size() * 4);
    for (const Point& p : cells) {
        corners.push_back({p.x, p.y});
        corners.push_back({p.x + 1, p.y});
        corners.push_back({p.x, p.y + 1});
        corners.push_back({p.x + 1, p.y + 1});
    }
    std::vector<Point> hull = detail::convex_hull(std::move(corners));
    double hull_area = detail::polygon_area(hull);
    double rect_area = detail::min_area_rect(hull);

    g.compactness = g.perimeter == 0.0
                        ? 1.0
                        : std::min(1.0, 4.0 * 3.14159265358979323846 * g.area /
                                            (g.perimeter * g.perimeter));
    g.solidity = hull_area == 0.0 ? 1.0 : std::min(1.0, g.area / hull_area);
    g.rectangularity = rect_area == 0.0 ? 1.0 : std::min(1.0, g.area / rect_area);
    return g;
}

/// A connected component of the thresholded heatmap with its geometry and
/// mean tumor probability.
struct TumorRegion {
    int id = 0;
    std::vector<Point> cells;
    RegionGeometry geometry;
    double mean_probability = 0.0;
    Rect bbox;
};

/// Extracts 8-connected tumor regions from a thresholded heatmap mask,
/// computing geometry and the mean raw probability per region.
inline std::vector<TumorRegion> extract_regions(const BinaryMask& cell_mask, const Heatmap& raw) {
    if (cell_mask.width != raw.cells_w || cell_mask.height != raw.cells_h)
        throw ConfigError("extract_regions: mask and heatmap dimensions differ");
    ComponentLabels cc = connected_components(cell_mask, 8);
    std::vector<TumorRegion> regions;
    regions.reserve(cc.components.size());
    std::vector<std::vector<Point>> cells_by_id(cc.components.size() + 1);
    for (int y = 0; y < cell_mask.height; ++y)
        for (int x = 0; x < cell_mask.width; ++x) {
            std::int32_t id = cc.label_at(x, y);
            if (id != 0)
                cells_by_id[id].push_back({x, y});
        }
    for (const ComponentInfo& info : cc.components) {
        TumorRegion region;
        region.id = info.id;
        region.cells = std::move(cells_by_id[info.id]);
        region.bbox = info.bbox;
        double p_sum = 0.0;
        for (const Point& p : region.cells)
            p_sum += raw.at(static_cast<int>(p.x), static_cast<int>(p.y));
        region.mean_probability = p_sum / static_cast<double>(region.cells.size());
        region.geometry = region_geometry(region.cells);
        regions.push_back(std::move(region));
    }
    return regions;
}

} // namespace sentinel
