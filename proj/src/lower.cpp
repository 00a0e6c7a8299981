#include "rowflow/lower.hpp"

#include <cstdio>
#include <map>
#include <tuple>

#include "rowflow/errors.hpp"

namespace rowflow {

std::string RowRef::format() const {
    const char* name = nullptr;
    bool three = false;
    switch (kind) {
        case Kind::None: return "-";
        case Kind::In: name = "I"; break;
        case Kind::Out: name = "O"; break;
        case Kind::DOut: name = "dO"; break;
        case Kind::DIn: name = "dI"; break;
        case Kind::W: name = "W"; three = true; break;
        case Kind::DW: name = "dW"; three = true; break;
        case Kind::Mask: name = "M"; break;
    }
    char buf[64];
    if (three)
        std::snprintf(buf, sizeof buf, "%s[%d][%d][%d]", name, i0, i1, i2);
    else
        std::snprintf(buf, sizeof buf, "%s[%d][%d]", name, i0, i1);
    return buf;
}

std::vector<RowInstruction> lower_forward(int layer, const LayerSpec& l, Shape3 in, Shape3 out) {
    std::vector<RowInstruction> instrs;
    const int k = l.kernel;
    for (int i = 0; i < out.c; ++i) {
        for (int y = 0; y < out.h; ++y) {
            bool emitted = false;
            for (int j = 0; j < in.c; ++j) {
                for (int ky = 0; ky < k; ++ky) {
                    const int u = l.stride * y + ky - l.pad;
                    if (u < 0 || u >= in.h) continue;
                    RowInstruction ins;
                    ins.op = RowOp::Src;
                    ins.layer = layer;
                    ins.dst = RowRef::out(i, y);
                    ins.src = RowRef::in(j, u);
                    ins.taps = RowRef::w(i, j, ky);
                    ins.tap_count = k;
                    ins.align = -l.pad;
                    ins.stride = l.stride;
                    if (!emitted) {
                        ins.add_bias = true;
                        ins.bias_channel = i;
                    }
                    instrs.push_back(ins);
                    emitted = true;
                }
            }
            if (!emitted) {
                RowInstruction ins;
                ins.op = RowOp::Src;
                ins.layer = layer;
                ins.dst = RowRef::out(i, y);
                ins.tap_count = k;
                ins.align = -l.pad;
                ins.stride = l.stride;
                ins.add_bias = true;
                ins.bias_channel = i;
                instrs.push_back(ins);
            }
        }
    }
    return instrs;
}

std::vector<RowInstruction> lower_gta(int layer, const LayerSpec& l, Shape3 in, Shape3 out,
                                      const std::vector<BitMask>* dst_masks) {
    std::vector<RowInstruction> instrs;
    const int k = l.kernel;
    for (int j = 0; j < in.c; ++j) {
        for (int u = 0; u < in.h; ++u) {
            if (dst_masks && !(*dst_masks)[static_cast<std::size_t>(j) * in.h + u].any())
                continue;
            for (int i = 0; i < out.c; ++i) {
                for (int ky = 0; ky < k; ++ky) {
                    const int num = u + l.pad - ky;
                    if (num < 0 || num % l.stride != 0) continue;
                    const int y = num / l.stride;
                    if (y >= out.h) continue;
                    RowInstruction ins;
                    ins.op = RowOp::Msrc;
                    ins.layer = layer;
                    ins.dst = RowRef::din(j, u);
                    ins.src = RowRef::dout(i, y);
                    ins.taps = RowRef::w(i, j, ky);
                    if (dst_masks) ins.mask = RowRef::mask(j, u);
                    ins.tap_count = k;
                    ins.align = -l.pad;
                    ins.stride = l.stride;
                    instrs.push_back(ins);
                }
            }
        }
    }
    return instrs;
}

std::vector<RowInstruction> lower_gtw(int layer, const LayerSpec& l, Shape3 in, Shape3 out) {
    std::vector<RowInstruction> instrs;
    const int k = l.kernel;
    for (int i = 0; i < out.c; ++i) {
        for (int j = 0; j < in.c; ++j) {
            for (int ky = 0; ky < k; ++ky) {
                for (int y = 0; y < out.h; ++y) {
                    const int u = l.stride * y + ky - l.pad;
                    if (u < 0 || u >= in.h) continue;
                    RowInstruction ins;
                    ins.op = RowOp::Osrc;
                    ins.layer = layer;
                    ins.dst = RowRef::dw(i, j, ky);
                    ins.src = RowRef::in(j, u);
                    ins.taps = RowRef::dout(i, y);
                    ins.tap_count = k;
                    ins.align = -l.pad;
                    ins.stride = l.stride;
                    instrs.push_back(ins);
                }
            }
        }
    }
    return instrs;
}

Schedule make_schedule(const std::vector<RowInstruction>& instrs, int n_groups) {
    if (n_groups <= 0) throw ConfigError("make_schedule: group count must be positive");
    Schedule s;
    s.groups.resize(static_cast<std::size_t>(n_groups));
    std::map<std::tuple<int, int, int, int>, int> group_of;
    int seen = 0;
    for (const auto& ins : instrs) {
        const auto key = std::make_tuple(static_cast<int>(ins.dst.kind), ins.dst.i0, ins.dst.i1,
                                         ins.dst.i2);
        auto it = group_of.find(key);
        int g;
        if (it == group_of.end()) {
            g = seen % n_groups;
            group_of.emplace(key, g);
            ++seen;
        } else {
            g = it->second;
        }
        s.groups[static_cast<std::size_t>(g)].push_back(ins);
    }
    return s;
}

std::string format_instruction(const RowInstruction& ins) {
    const char* op = ins.op == RowOp::Src ? "SRC" : ins.op == RowOp::Msrc ? "MSRC" : "OSRC";
    std::string line = op;
    char buf[32];
    std::snprintf(buf, sizeof buf, " %d ", ins.layer);
    line += buf;
    line += ins.dst.format();
    line += ' ';
    line += ins.src.format();
    line += ' ';
    line += ins.taps.format();
    std::snprintf(buf, sizeof buf, " %d %d", ins.align, ins.stride);
    line += buf;
    if (ins.mask) {
        line += ' ';
        line += ins.mask->format();
    }
    return line;
}

void dump_instructions(std::ostream& os, const std::vector<RowInstruction>& instrs) {
    for (const auto& ins : instrs) os << format_instruction(ins) << '\n';
}

} // namespace rowflow
