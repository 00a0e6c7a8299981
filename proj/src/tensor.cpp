#include "rowflow/tensor.hpp"

#include <cmath>

#include "rowflow/errors.hpp"

namespace rowflow {

SparseRowVector sparsify(std::span<const double> row) {
    SparseRowVector out;
    out.logical_length = static_cast<int>(row.size());
    for (int i = 0; i < out.logical_length; ++i) {
        double v = row[static_cast<std::size_t>(i)];
        if (v == 0.0) continue; // catches -0.0 as well
        out.offsets.push_back(i);
        out.values.push_back(v);
    }
    return out;
}

std::vector<double> densify(const SparseRowVector& row) {
    std::vector<double> out(static_cast<std::size_t>(row.logical_length), 0.0);
    for (std::size_t i = 0; i < row.offsets.size(); ++i)
        out[static_cast<std::size_t>(row.offsets[i])] = row.values[i];
    return out;
}

BitMask nonzero_mask(std::span<const double> row) {
    BitMask m(static_cast<int>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i)
        m.set(static_cast<int>(i), row[i] != 0.0);
    return m;
}

long long count_nonzero(std::span<const double> v) {
    long long n = 0;
    for (double x : v)
        if (x != 0.0) ++n;
    return n;
}

long long count_nonzero(const DenseTensor3& t) {
    return count_nonzero(std::span<const double>(t.data.data(), t.data.size()));
}

void check_finite(std::span<const double> v, const std::string& what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]))
            throw RunError(what + ": non-finite value at flat index " + std::to_string(i));
    }
}

void check_finite(const DenseTensor3& t, const std::string& what) {
    check_finite(std::span<const double>(t.data.data(), t.data.size()), what);
}

} // namespace rowflow
