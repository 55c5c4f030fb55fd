#pragma once

#include <cstddef>
#include <vector>

namespace dygen {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Just enough linear algebra for the
/// small feedforward models used here; nothing fancy.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool empty() const { return data.empty(); }
};

} // namespace dygen
