#pragma once

#include "rowflow/tensor.hpp"

namespace rowflow {

/* Output extent of a strided, padded convolution along one axis. */
int conv_out_dim(int in, int k, int stride, int pad);

/* Forward 2-D convolution (correlation orientation):
 *   O[i][y][x] = b[i] + sum_{j,ky,kx} W[i][j][ky][kx] * I[j][s*y+ky-p][s*x+kx-p]
 * Out-of-range input positions read as zero padding.
 *
 * Accumulation order is part of the contract: bias first, then (j, ky, kx)
 * ascending. The lowered instruction stream reproduces results bit for bit
 * because it accumulates in the same order.
 */
DenseTensor3 conv2d_ref(const DenseTensor3& input, const KernelTensor4& w, int stride, int pad);

/* Gradient w.r.t. the convolution input (full/transposed convolution):
 *   dI[j][u][v] = sum over (i,y,x,ky,kx) with u = s*y+ky-p, v = s*x+kx-p
 *                 of dOut[i][y][x] * W[i][j][ky][kx]
 *
 * Implemented as a scatter with loop order (j, i, ky, y, x, kx); for any
 * fixed element of dI the contributions land in ascending (i, ky, x), which
 * is the same order the instruction stream uses.
 */
DenseTensor3 conv2d_full_ref(const DenseTensor3& d_out, const KernelTensor4& w, int stride,
                             int pad, int in_h, int in_w);

/* Gradient w.r.t. the kernels plus per-filter bias gradient:
 *   dW[i][j][ky][kx] = sum_{y,x} dOut[i][y][x] * I[j][s*y+ky-p][s*x+kx-p]
 *   db[i]            = sum_{y,x} dOut[i][y][x]
 * Returned with db in the bias field. Contributions per element land in
 * ascending (y, x).
 */
KernelTensor4 conv2d_gtw_ref(const DenseTensor3& d_out, const DenseTensor3& input, int k,
                             int stride, int pad);

} // namespace rowflow
