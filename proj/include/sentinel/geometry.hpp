#pragma once

#include <cstdint>

namespace sentinel {

struct Point {
    std::int64_t x = 0;
    std::int64_t y = 0;

    bool operator==(const Point&) const = default;
};

/// Axis-aligned rectangle, half-open: pixels [x, x+w) x [y, y+h).
struct Rect {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t w = 0;
    std::int64_t h = 0;

    std::int64_t area() const { return w * h; }
    bool contains(const Rect& other) const {
        return other.x >= x && other.y >= y && other.x + other.w <= x + w &&
               other.y + other.h <= y + h;
    }
    bool contains(Point p) const {
        return p.x >= x && p.y >= y && p.x < x + w && p.y < y + h;
    }

    bool operator==(const Rect&) const = default;
};

} // namespace sentinel
