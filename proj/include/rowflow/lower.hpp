#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rowflow/network.hpp"
#include "rowflow/tensor.hpp"

namespace rowflow {

/* Every convolution step is decomposed into row instructions, each a 1-D
 * convolution between one streamed row and a short tap register file:
 *
 *   SRC   gather:  dst[o]  += sum_t taps[t] * src[stride*o + t + align]
 *   MSRC  scatter: dst[stride*x + t + align] += src[x] * taps[t],
 *                  destinations outside the row or with a cleared mask bit
 *                  are dropped, and source operands contributing nothing
 *                  are skipped without cost
 *   OSRC  outer:   taps are cached source-B values x, the streamed row is
 *                  source A, and products land in a tap-indexed scratchpad
 *                  slot k = q - stride*x - align for streamed position q
 *
 * align is -pad for all three. The emission order is part of the contract:
 * executing a destination row's instructions in order, stream positions
 * ascending, reproduces the reference accumulation order bit for bit. */

enum class RowOp { Src, Msrc, Osrc };

struct RowRef {
    enum class Kind { None, In, Out, DOut, DIn, W, DW, Mask };
    Kind kind = Kind::None;
    int i0 = 0;
    int i1 = 0;
    int i2 = 0; // kernel row for W/DW, unused otherwise

    std::string format() const;
    bool operator==(const RowRef&) const = default;

    static RowRef in(int c, int r) { return {Kind::In, c, r, 0}; }
    static RowRef out(int c, int r) { return {Kind::Out, c, r, 0}; }
    static RowRef dout(int c, int r) { return {Kind::DOut, c, r, 0}; }
    static RowRef din(int c, int r) { return {Kind::DIn, c, r, 0}; }
    static RowRef w(int f, int c, int ky) { return {Kind::W, f, c, ky}; }
    static RowRef dw(int f, int c, int ky) { return {Kind::DW, f, c, ky}; }
    static RowRef mask(int c, int r) { return {Kind::Mask, c, r, 0}; }
};

struct RowInstruction {
    RowOp op = RowOp::Src;
    int layer = 0;
    RowRef dst;
    RowRef src;  // streamed row (port 1)
    RowRef taps; // tap register file (port 2); cached row for OSRC
    std::optional<RowRef> mask;
    int tap_count = 0;
    int align = 0;
    int stride = 1;
    bool add_bias = false; // initialize the destination row with bias[bias_channel]
    int bias_channel = -1;
};

/* Forward step of one conv layer: SRC per (filter row, input channel,
 * kernel row), filter rows outer, channel-major then kernel-row within a
 * destination. Input rows that fall entirely outside the tensor are not
 * emitted; a destination row left without any instruction keeps a single
 * bias carrier with no streamed source. */
std::vector<RowInstruction> lower_forward(int layer, const LayerSpec& l, Shape3 in, Shape3 out);

/* Gradient-to-activation step: MSRC per (input-gradient row, filter,
 * kernel row), ascending (filter, kernel row) within a destination.
 * dst_masks, when given, indexes [c * in.h + u]; rows with no set bit are
 * elided and each instruction carries the mask reference. */
std::vector<RowInstruction> lower_gta(int layer, const LayerSpec& l, Shape3 in, Shape3 out,
                                      const std::vector<BitMask>* dst_masks);

/* Gradient-to-weight step: OSRC per (filter, channel, kernel row, output
 * row), output rows ascending within a destination. The streamed row is
 * the forward activation, the cached taps are the output-gradient row. */
std::vector<RowInstruction> lower_gtw(int layer, const LayerSpec& l, Shape3 in, Shape3 out);

/* Work distribution across PE groups: destination rows are dealt
 * round-robin in order of first appearance, and every instruction of a
 * destination lands in the same group, keeping its emission order. */
struct Schedule {
    std::vector<std::vector<RowInstruction>> groups;
};

Schedule make_schedule(const std::vector<RowInstruction>& instrs, int n_groups);

/* One instruction per line: OP layer dst src taps align stride [mask] */
std::string format_instruction(const RowInstruction& ins);
void dump_instructions(std::ostream& os, const std::vector<RowInstruction>& instrs);

} // namespace rowflow
