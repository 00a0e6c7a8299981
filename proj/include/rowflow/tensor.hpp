#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rowflow {

/* Channel-major, row-major dense activation/gradient tensor. */
struct DenseTensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data; // [c][y][x]

    DenseTensor3() = default;
    DenseTensor3(int c, int h, int w)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, 0.0) {}

    std::size_t size() const { return data.size(); }

    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }

    double& at(int c, int y, int x) { return data[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data[index(c, y, x)]; }

    std::span<double> row(int c, int y) {
        return {data.data() + index(c, y, 0), static_cast<std::size_t>(width)};
    }
    std::span<const double> row(int c, int y) const {
        return {data.data() + index(c, y, 0), static_cast<std::size_t>(width)};
    }
};

/* Filter-major kernel stack with one bias per filter. */
struct KernelTensor4 {
    int filters = 0;
    int channels = 0;
    int k = 0;
    std::vector<double> data; // [f][c][ky][kx]
    std::vector<double> bias; // [f]

    KernelTensor4() = default;
    KernelTensor4(int f, int c, int kk)
        : filters(f), channels(c), k(kk),
          data(static_cast<std::size_t>(f) * c * kk * kk, 0.0),
          bias(static_cast<std::size_t>(f), 0.0) {}

    std::size_t index(int f, int c, int ky, int kx) const {
        return ((static_cast<std::size_t>(f) * channels + c) * k + ky) * k + kx;
    }

    double& at(int f, int c, int ky, int kx) { return data[index(f, c, ky, kx)]; }
    double at(int f, int c, int ky, int kx) const { return data[index(f, c, ky, kx)]; }

    std::span<double> row(int f, int c, int ky) {
        return {data.data() + index(f, c, ky, 0), static_cast<std::size_t>(k)};
    }
    std::span<const double> row(int f, int c, int ky) const {
        return {data.data() + index(f, c, ky, 0), static_cast<std::size_t>(k)};
    }
};

/* Compressed row: strictly increasing offsets, parallel nonzero values.
 * logical_length is the dense extent the row decompresses to. */
struct SparseRowVector {
    int logical_length = 0;
    std::vector<int> offsets;
    std::vector<double> values;

    int nnz() const { return static_cast<int>(offsets.size()); }
};

/* One bit per position; backing storage is byte-per-bit for simplicity,
 * word counts for the event model use 64-bit granularity. */
struct BitMask {
    int length = 0;
    std::vector<std::uint8_t> bits;

    BitMask() = default;
    explicit BitMask(int n, bool value = false)
        : length(n), bits(static_cast<std::size_t>(n), value ? 1 : 0) {}

    bool get(int i) const { return bits[static_cast<std::size_t>(i)] != 0; }
    void set(int i, bool v) { bits[static_cast<std::size_t>(i)] = v ? 1 : 0; }

    bool any() const {
        for (auto b : bits)
            if (b) return true;
        return false;
    }

    int words() const { return (length + 63) / 64; }
};

/* Dense -> compressed. Negative zeros are normalized to +0 first, so they
 * never appear among stored values and round-tripping yields +0. */
SparseRowVector sparsify(std::span<const double> row);

/* Compressed -> dense. */
std::vector<double> densify(const SparseRowVector& row);

/* Nonzero pattern of a dense row (after -0 normalization). */
BitMask nonzero_mask(std::span<const double> row);

long long count_nonzero(std::span<const double> v);
long long count_nonzero(const DenseTensor3& t);

/* Throws RunError naming `what` if any element is NaN or infinite. Called at
 * module boundaries so numeric poison is caught where it enters. */
void check_finite(const DenseTensor3& t, const std::string& what);
void check_finite(std::span<const double> v, const std::string& what);

} // namespace rowflow
