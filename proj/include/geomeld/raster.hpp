#pragma once

#include <cstdint>
#include <vector>

#include "geomeld/errors.hpp"

namespace geomeld {

// Dense multi-channel raster, [channel][row][col] in row-major order.
struct Raster {
    int64_t channels = 0;
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> values;

    static Raster zeros(int64_t c, int64_t h, int64_t w) {
        Raster r;
        r.channels = c;
        r.height = h;
        r.width = w;
        r.values.assign(static_cast<size_t>(c * h * w), 0.0);
        return r;
    }

    double& at(int64_t c, int64_t y, int64_t x) {
        return values[static_cast<size_t>((c * height + y) * width + x)];
    }
    double at(int64_t c, int64_t y, int64_t x) const {
        return values[static_cast<size_t>((c * height + y) * width + x)];
    }
    int64_t pixel_count() const { return height * width; }
    bool same_geometry(const Raster& o) const { return height == o.height && width == o.width; }
};

// Per-pixel class labels.
struct ClassMap {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> labels;

    static ClassMap zeros(int64_t h, int64_t w) {
        ClassMap m;
        m.height = h;
        m.width = w;
        m.labels.assign(static_cast<size_t>(h * w), 0);
        return m;
    }

    uint8_t& at(int64_t y, int64_t x) { return labels[static_cast<size_t>(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
    int64_t pixel_count() const { return height * width; }
};

}  // namespace geomeld
