#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mamere {

using index_t = std::int64_t;

// Batched token tensor, row-major [b][l][k]. The first l_spec rows of every
// sample are special tokens (class tokens etc.) that merging never touches.
struct TokenMatrix {
    index_t batch = 0;
    index_t length = 0;
    index_t dim = 0;
    index_t l_spec = 0;
    std::vector<double> data;

    TokenMatrix() = default;
    TokenMatrix(index_t b, index_t l, index_t d, index_t spec)
        : batch(b), length(l), dim(d), l_spec(spec),
          data(static_cast<std::size_t>(b * l * d), 0.0) {}

    double& at(index_t b, index_t l, index_t k) {
        return data[static_cast<std::size_t>((b * length + l) * dim + k)];
    }
    double at(index_t b, index_t l, index_t k) const {
        return data[static_cast<std::size_t>((b * length + l) * dim + k)];
    }

    std::span<double> row(index_t b, index_t l) {
        return {data.data() + (b * length + l) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<const double> row(index_t b, index_t l) const {
        return {data.data() + (b * length + l) * dim, static_cast<std::size_t>(dim)};
    }

    index_t values() const { return batch * length * dim; }

    // Shape + finiteness + l_spec bounds; throws std::invalid_argument.
    void validate() const;
};

// Dense row-major matrix used for per-sample similarity / weight math.
struct Matrix {
    index_t rows = 0;
    index_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(index_t r, index_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {}

    double& operator()(index_t r, index_t c) { return v[static_cast<std::size_t>(r * cols + c)]; }
    double operator()(index_t r, index_t c) const { return v[static_cast<std::size_t>(r * cols + c)]; }

    std::span<double> row(index_t r) { return {v.data() + r * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(index_t r) const {
        return {v.data() + r * cols, static_cast<std::size_t>(cols)};
    }
};

// A batched slice of token rows (specials, destinations or sources). Unlike
// TokenMatrix it may legally be empty.
struct Slab {
    index_t batch = 0;
    index_t rows = 0;
    index_t dim = 0;
    std::vector<double> data;

    Slab() = default;
    Slab(index_t b, index_t r, index_t d)
        : batch(b), rows(r), dim(d), data(static_cast<std::size_t>(b * r * d), 0.0) {}

    double& at(index_t b, index_t r, index_t k) {
        return data[static_cast<std::size_t>((b * rows + r) * dim + k)];
    }
    double at(index_t b, index_t r, index_t k) const {
        return data[static_cast<std::size_t>((b * rows + r) * dim + k)];
    }
    std::span<const double> row(index_t b, index_t r) const {
        return {data.data() + (b * rows + r) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<double> row(index_t b, index_t r) {
        return {data.data() + (b * rows + r) * dim, static_cast<std::size_t>(dim)};
    }
};

}  // namespace mamere
