#include "rowflow/reference.hpp"

#include "rowflow/errors.hpp"

namespace rowflow {

int conv_out_dim(int in, int k, int stride, int pad) {
    int span = in + 2 * pad - k;
    if (span < 0)
        throw ConfigError("kernel " + std::to_string(k) + " exceeds padded extent " +
                          std::to_string(in + 2 * pad));
    return span / stride + 1;
}

DenseTensor3 conv2d_ref(const DenseTensor3& input, const KernelTensor4& w, int stride, int pad) {
    if (input.channels != w.channels)
        throw ConfigError("conv input has " + std::to_string(input.channels) +
                          " channels, kernels expect " + std::to_string(w.channels));
    const int h_out = conv_out_dim(input.height, w.k, stride, pad);
    const int w_out = conv_out_dim(input.width, w.k, stride, pad);

    DenseTensor3 out(w.filters, h_out, w_out);
    for (int i = 0; i < w.filters; ++i) {
        for (int y = 0; y < h_out; ++y) {
            for (int x = 0; x < w_out; ++x) {
                double acc = w.bias[static_cast<std::size_t>(i)];
                for (int j = 0; j < w.channels; ++j) {
                    for (int ky = 0; ky < w.k; ++ky) {
                        const int iy = stride * y + ky - pad;
                        if (iy < 0 || iy >= input.height) continue;
                        for (int kx = 0; kx < w.k; ++kx) {
                            const int ix = stride * x + kx - pad;
                            if (ix < 0 || ix >= input.width) continue;
                            acc += w.at(i, j, ky, kx) * input.at(j, iy, ix);
                        }
                    }
                }
                out.at(i, y, x) = acc;
            }
        }
    }
    return out;
}

DenseTensor3 conv2d_full_ref(const DenseTensor3& d_out, const KernelTensor4& w, int stride,
                             int pad, int in_h, int in_w) {
    if (d_out.channels != w.filters)
        throw ConfigError("gradient has " + std::to_string(d_out.channels) +
                          " channels, kernels produce " + std::to_string(w.filters));

    DenseTensor3 d_in(w.channels, in_h, in_w);
    for (int j = 0; j < w.channels; ++j) {
        for (int i = 0; i < w.filters; ++i) {
            for (int ky = 0; ky < w.k; ++ky) {
                for (int y = 0; y < d_out.height; ++y) {
                    const int u = stride * y + ky - pad;
                    if (u < 0 || u >= in_h) continue;
                    for (int x = 0; x < d_out.width; ++x) {
                        const double g = d_out.at(i, y, x);
                        for (int kx = 0; kx < w.k; ++kx) {
                            const int v = stride * x + kx - pad;
                            if (v < 0 || v >= in_w) continue;
                            d_in.at(j, u, v) += g * w.at(i, j, ky, kx);
                        }
                    }
                }
            }
        }
    }
    return d_in;
}

KernelTensor4 conv2d_gtw_ref(const DenseTensor3& d_out, const DenseTensor3& input, int k,
                             int stride, int pad) {
    KernelTensor4 dw(d_out.channels, input.channels, k);
    for (int i = 0; i < d_out.channels; ++i) {
        for (int j = 0; j < input.channels; ++j) {
            for (int ky = 0; ky < k; ++ky) {
                for (int y = 0; y < d_out.height; ++y) {
                    const int u = stride * y + ky - pad;
                    if (u < 0 || u >= input.height) continue;
                    for (int x = 0; x < d_out.width; ++x) {
                        const double g = d_out.at(i, y, x);
                        for (int kx = 0; kx < k; ++kx) {
                            const int q = stride * x + kx - pad;
                            if (q < 0 || q >= input.width) continue;
                            dw.at(i, j, ky, kx) += g * input.at(j, u, q);
                        }
                    }
                }
            }
        }
    }
    for (int i = 0; i < d_out.channels; ++i) {
        double acc = 0.0;
        for (int y = 0; y < d_out.height; ++y)
            for (int x = 0; x < d_out.width; ++x)
                acc += d_out.at(i, y, x);
        dw.bias[static_cast<std::size_t>(i)] = acc;
    }
    return dw;
}

} // namespace rowflow
