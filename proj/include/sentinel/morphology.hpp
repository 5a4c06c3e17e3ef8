#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/geometry.hpp"

namespace sentinel {

/// One bit per pixel (stored as bytes), foreground = tissue/region.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v = true) {
        bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    bool in_bounds(std::int64_t x, std::int64_t y) const {
        return x >= 0 && y >= 0 && x < width && y < height;
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto b : bits)
            n += (b != 0);
        return n;
    }

    bool operator==(const BinaryMask&) const = default;
};

struct ComponentInfo {
    std::int32_t id = 0; // 1-based; 0 is background in the label image
    std::int64_t pixel_count = 0;
    Rect bbox;
    Point first_pixel; // row-major first pixel, used as the trace anchor
};

struct ComponentLabels {
    int width = 0;
    int height = 0;
    std::vector<std::int32_t> labels; // 0 = background
    std::vector<ComponentInfo> components;

    std::int32_t label_at(int x, int y) const {
        return labels[static_cast<std::size_t>(y) * width + x];
    }
};

/// Labels connected foreground components with 4- or 8-connectivity using an
/// explicit-stack flood fill.
inline ComponentLabels connected_components(const BinaryMask& mask, int connectivity = 8) {
    if (connectivity != 4 && connectivity != 8)
        throw ConfigError("connected_components: connectivity must be 4 or 8");
    ComponentLabels out;
    out.width = mask.width;
    out.height = mask.height;
    out.labels.assign(static_cast<std::size_t>(mask.width) * mask.height, 0);

    static constexpr int dx8[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    static constexpr int dy8[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    static constexpr int dx4[4] = {1, 0, -1, 0};
    static constexpr int dy4[4] = {0, 1, 0, -1};
    const int* dx = connectivity == 8 ? dx8 : dx4;
    const int* dy = connectivity == 8 ? dy8 : dy4;
    const int ndirs = connectivity;

    std::vector<Point> stack;
    std::int32_t next_id = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y) || out.labels[static_cast<std::size_t>(y) * mask.width + x] != 0)
                continue;
            ComponentInfo info;
            info.id = ++next_id;
            info.first_pixel = {x, y};
            std::int64_t min_x = x, max_x = x, min_y = y, max_y = y;
            stack.push_back({x, y});
            out.labels[static_cast<std::size_t>(y) * mask.width + x] = info.id;
            while (!stack.empty()) {
                Point p = stack.back();
                stack.pop_back();
                ++info.pixel_count;
                min_x = std::min(min_x, p.x);
                max_x = std::max(max_x, p.x);
                min_y = std::min(min_y, p.y);
                max_y = std::max(max_y, p.y);
                for (int d = 0; d < ndirs; ++d) {
                    std::int64_t nx = p.x + dx[d], ny = p.y + dy[d];
                    if (!mask.in_bounds(nx, ny))
                        continue;
                    std::size_t idx = static_cast<std::size_t>(ny) * mask.width + nx;
                    if (mask.at(static_cast<int>(nx), static_cast<int>(ny)) &&
                        out.labels[idx] == 0) {
                        out.labels[idx] = info.id;
                        stack.push_back({nx, ny});
                    }
                }
            }
            info.bbox = Rect{min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
            out.components.push_back(info);
        }
    return out;
}

/// Moore-neighbor trace of one component's outer boundary, clockwise,
/// stopping by Jacob's criterion. Returns the ordered boundary pixels; a
/// single-pixel component yields a single point. Thin one-pixel necks are
/// visited once per side, so a pixel may appear more than once, but the walk
/// never crosses itself.
inline std::vector<Point> trace_boundary(const ComponentLabels& cc, const ComponentInfo& info) {
    // clockwise Moore neighborhood in screen coordinates (y down)
    static constexpr int mx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    static constexpr int my[8] = {0, 1, 1, 1, 0, -1, -1, -1};

    auto is_fg = [&](std::int64_t x, std::int64_t y) {
        return x >= 0 && y >= 0 && x < cc.width && y < cc.height &&
               cc.label_at(static_cast<int>(x), static_cast<int>(y)) == info.id;
    };

    std::vector<Point> boundary;
    Point start = info.first_pixel;
    boundary.push_back(start);
    if (info.pixel_count == 1)
        return boundary;

    // The pixel west of the row-major first pixel is guaranteed background.
    auto dir_index = [&](Point from, Point to) {
        for (int d = 0; d < 8; ++d)
            if (from.x + mx[d] == to.x && from.y + my[d] == to.y)
                return d;
        return -1;
    };

    Point cur = start;
    Point backtrack{start.x - 1, start.y};
    const Point init_backtrack = backtrack;
    const std::int64_t max_steps = 8 * info.pixel_count + 16;

    for (std::int64_t step = 0; step < max_steps; ++step) {
        int bdir = dir_index(cur, backtrack);
        Point next{-1, -1};
        Point next_backtrack = backtrack;
        for (int k = 1; k <= 8; ++k) {
            int d = (bdir + k) % 8;
            std::int64_t nx = cur.x + mx[d], ny = cur.y + my[d];
            if (is_fg(nx, ny)) {
                next = {nx, ny};
                break;
            }
            next_backtrack = {nx, ny};
        }
        if (next.x < 0)
            break; // isolated pixel (cannot happen for pixel_count > 1)
        cur = next;
        backtrack = next_backtrack;
        if (cur == start && backtrack == init_backtrack)
            break;
        boundary.push_back(cur);
    }
    return boundary;
}

/// Length of the closed boundary walk: axial steps count 1, diagonal steps
/// sqrt(2). Step counts are accumulated first so the result is independent of
/// traversal order. A single-pixel boundary has length 0.
inline double boundary_length(const std::vector<Point>& boundary) {
    if (boundary.size() < 2)
        return 0.0;
    std::int64_t axial = 0, diagonal = 0;
    for (std::size_t i = 0; i < boundary.size(); ++i) {
        const Point& a = boundary[i];
        const Point& b = boundary[(i + 1) % boundary.size()];
        std::int64_t dx = b.x - a.x, dy = b.y - a.y;
        if (dx == 0 && dy == 0)
            continue;
        if (dx != 0 && dy != 0)
            ++diagonal;
        else
            ++axial;
    }
    return static_cast<double>(axial) + static_cast<double>(diagonal) * 1.4142135623730951;
}

} // namespace sentinel
