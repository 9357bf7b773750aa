#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace fdev {

// Areal per-cell real values, row-major: index = j * nx + i.
struct Field2D {
    int nx = 0;
    int ny = 0;
    std::vector<double> values;

    Field2D() = default;
    Field2D(int nx_, int ny_, double fill = 0.0)
        : nx(nx_), ny(ny_), values(static_cast<size_t>(nx_) * ny_, fill) {
        if (nx_ <= 0 || ny_ <= 0) throw std::invalid_argument("Field2D: dims must be positive");
    }

    double& at(int i, int j) { return values[static_cast<size_t>(j) * nx + i]; }
    double at(int i, int j) const { return values[static_cast<size_t>(j) * nx + i]; }
    size_t size() const { return values.size(); }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace fdev
