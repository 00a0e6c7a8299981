#include "rowflow/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <tuple>

#include "rowflow/errors.hpp"
#include "rowflow/prune.hpp"

namespace rowflow {

double energy_pj(const EventTally& t, const EnergyCosts& c) {
    return static_cast<double>(t.buffer_read) * c.buffer_read +
           static_cast<double>(t.buffer_write) * c.buffer_write +
           static_cast<double>(t.reg_access) * c.reg_access +
           static_cast<double>(t.mac) * c.mac + static_cast<double>(t.ppu_op) * c.ppu_op;
}

const char* step_name(StepKind k) {
    switch (k) {
        case StepKind::Forward: return "forward";
        case StepKind::Gta: return "gta";
        case StepKind::Gtw: return "gtw";
    }
    return "?";
}

const char* mode_name(SimMode m) { return m == SimMode::Sparse ? "sparse" : "dense"; }

namespace {

using DstKey = std::tuple<int, int, int, int>;

DstKey key_of(const RowRef& r) {
    return {static_cast<int>(r.kind), r.i0, r.i1, r.i2};
}

struct DstScratch {
    RowRef ref;
    std::vector<double> vals;
};

struct StreamEntry {
    int pos;
    double val;
};

void collect_stream(std::span<const double> row, SimMode mode, std::vector<StreamEntry>& out) {
    out.clear();
    for (int i = 0; i < static_cast<int>(row.size()); ++i) {
        const double v = row[static_cast<std::size_t>(i)];
        if (mode == SimMode::Sparse && v == 0.0) continue;
        out.push_back({i, v});
    }
}

class StepContext {
public:
    StepContext(const StepInput& in, SimMode mode) : in_(in), mode_(mode) {}

    std::span<const double> row(const RowRef& r) const {
        switch (r.kind) {
            case RowRef::Kind::In: return in_.input->row(r.i0, r.i1);
            case RowRef::Kind::DOut: return in_.d_out->row(r.i0, r.i1);
            case RowRef::Kind::W: return in_.weights->row(r.i0, r.i1, r.i2);
            default: throw RunError("simulate: unbound row reference");
        }
    }

    const BitMask& mask_row(const RowRef& r) const {
        return (*in_.gta_masks)[static_cast<std::size_t>(r.i0) * in_.in_shape.h + r.i1];
    }

    int dst_length(StepKind kind) const {
        switch (kind) {
            case StepKind::Forward: return in_.out_shape.w;
            case StepKind::Gta: return in_.in_shape.w;
            case StepKind::Gtw: return in_.spec->kernel;
        }
        return 0;
    }

    /* Executes one instruction, accumulating into dst in stream order.
     * Returns the cycles the owning PE spends on it. */
    long long exec(const RowInstruction& ins, std::vector<double>& dst, EventTally& ev,
                   long long& stream_nnz, long long& stream_total) {
        const int K = ins.tap_count;
        long long cycles = K;

        if (ins.op == RowOp::Src && ins.src.kind == RowRef::Kind::None) return cycles; // bias carrier

        const auto src = row(ins.src);
        stream_total += static_cast<long long>(src.size());
        stream_nnz += count_nonzero(src);

        switch (ins.op) {
            case RowOp::Src: {
                ev.reg_access += K;
                const auto taps = row(ins.taps);
                const int L = static_cast<int>(dst.size());
                collect_stream(src, mode_, stream_);
                for (const StreamEntry& e : stream_) {
                    ++cycles;
                    ++ev.buffer_read;
                    for (int t = 0; t < K; ++t) {
                        const int num = e.pos - t - ins.align;
                        if (num < 0 || num % ins.stride != 0) continue;
                        const int o = num / ins.stride;
                        if (o >= L) continue;
                        dst[static_cast<std::size_t>(o)] += e.val * taps[static_cast<std::size_t>(t)];
                        ++ev.mac;
                        ++ev.reg_access;
                    }
                }
                break;
            }

            case RowOp::Msrc: {
                ev.reg_access += K;
                const auto taps = row(ins.taps);
                const int L = static_cast<int>(dst.size());
                const BitMask* mask = nullptr;
                if (ins.mask) {
                    mask = &mask_row(*ins.mask);
                    ev.reg_access += static_cast<long long>((L + 63) / 64);
                }
                collect_stream(src, mode_, stream_);
                for (const StreamEntry& e : stream_) {
                    bool counted = mode_ == SimMode::Dense;
                    for (int t = 0; t < K; ++t) {
                        const int v = ins.stride * e.pos + t + ins.align;
                        if (v < 0 || v >= L) continue;
                        const bool open = !mask || mask->get(v);
                        if (mode_ == SimMode::Dense) {
                            // The baseline computes every in-range product and
                            // gates masked ones at the write port.
                            ++ev.mac;
                            ++ev.reg_access;
                            if (open) dst[static_cast<std::size_t>(v)] += e.val * taps[static_cast<std::size_t>(t)];
                        } else if (open) {
                            counted = true;
                            ++ev.mac;
                            ++ev.reg_access;
                            dst[static_cast<std::size_t>(v)] += e.val * taps[static_cast<std::size_t>(t)];
                        }
                    }
                    if (counted) {
                        ++cycles;
                        ++ev.buffer_read;
                    }
                }
                break;
            }

            case RowOp::Osrc: {
                cycles = 1; // issue; tap loads are charged per chunk below
                const auto taps = row(ins.taps);
                collect_stream(taps, mode_, cached_);
                const int L_src = static_cast<int>(src.size());
                std::size_t idx = 0;
                while (idx < cached_.size()) {
                    std::size_t end = idx + 1;
                    while (end < cached_.size() && end - idx < static_cast<std::size_t>(K)) {
                        const int prev_hi = ins.stride * cached_[end - 1].pos + ins.align + K - 1;
                        const int next_lo = ins.stride * cached_[end].pos + ins.align;
                        if (next_lo > prev_hi) break; // disjoint windows start a new chunk
                        ++end;
                    }
                    const long long n_cached = static_cast<long long>(end - idx);
                    cycles += n_cached;
                    ev.buffer_read += n_cached;
                    ev.reg_access += n_cached;
                    const int w_lo = std::max(ins.stride * cached_[idx].pos + ins.align, 0);
                    const int w_hi =
                        std::min(ins.stride * cached_[end - 1].pos + ins.align + K - 1, L_src - 1);
                    for (int q = w_lo; q <= w_hi; ++q) {
                        const double sv = src[static_cast<std::size_t>(q)];
                        if (mode_ == SimMode::Sparse && sv == 0.0) continue;
                        ++cycles;
                        ++ev.buffer_read;
                        for (std::size_t ci = idx; ci < end; ++ci) {
                            const int kx = q - ins.stride * cached_[ci].pos - ins.align;
                            if (kx < 0 || kx >= K) continue;
                            dst[static_cast<std::size_t>(kx)] += cached_[ci].val * sv;
                            ++ev.mac;
                            ++ev.reg_access;
                        }
                    }
                    idx = end;
                }
                break;
            }
        }
        return cycles;
    }

private:
    const StepInput& in_;
    SimMode mode_;
    std::vector<StreamEntry> stream_;
    std::vector<StreamEntry> cached_;
};

void capacity_check(const StepInput& in, const ArchConfig& arch) {
    const long long in_vol = static_cast<long long>(in.in_shape.volume());
    const long long out_vol = static_cast<long long>(in.out_shape.volume());
    const long long k = in.spec->kernel;
    const long long w_vol =
        static_cast<long long>(in.spec->out_channels) * in.spec->in_channels * k * k +
        in.spec->out_channels;
    long long values = 0;
    switch (in.kind) {
        case StepKind::Forward: values = in_vol + out_vol + w_vol; break;
        case StepKind::Gta: values = out_vol + in_vol + w_vol; break;
        case StepKind::Gtw: values = in_vol + out_vol + w_vol; break;
    }
    const long long bytes = values * arch.bytes_per_value;
    if (bytes > arch.buffer_bytes) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "layer %d: %s working set of %lld B exceeds the %lld B buffer", in.layer,
                      step_name(in.kind), bytes, arch.buffer_bytes);
        throw CapacityError(msg);
    }
}

} // namespace

LayerStepResult simulate_layer_step(const StepInput& in, const ArchConfig& arch, SimMode mode) {
    if (!in.spec) throw RunError("simulate: missing layer spec");
    if (in.kind != StepKind::Gta && !in.input) throw RunError("simulate: missing input tensor");
    if (in.kind != StepKind::Forward && !in.d_out) throw RunError("simulate: missing gradient tensor");
    if (in.kind != StepKind::Gtw && !in.weights) throw RunError("simulate: missing weights");
    capacity_check(in, arch);

    const int K = in.spec->kernel;
    std::vector<RowInstruction> instrs;
    switch (in.kind) {
        case StepKind::Forward:
            instrs = lower_forward(in.layer, *in.spec, in.in_shape, in.out_shape);
            break;
        case StepKind::Gta:
            instrs = lower_gta(in.layer, *in.spec, in.in_shape, in.out_shape, in.gta_masks);
            break;
        case StepKind::Gtw:
            instrs = lower_gtw(in.layer, *in.spec, in.in_shape, in.out_shape);
            break;
    }
    const Schedule sched = make_schedule(instrs, arch.n_groups);

    LayerStepResult res;
    std::vector<double> row_sums, row_abs_sums;
    switch (in.kind) {
        case StepKind::Forward:
            res.produced = DenseTensor3(in.out_shape.c, in.out_shape.h, in.out_shape.w);
            if (in.relu_after)
                res.out_masks.assign(
                    static_cast<std::size_t>(in.out_shape.c) * in.out_shape.h,
                    BitMask(in.out_shape.w));
            break;
        case StepKind::Gta:
            res.produced = DenseTensor3(in.in_shape.c, in.in_shape.h, in.in_shape.w);
            res.channel_sums.assign(static_cast<std::size_t>(in.in_shape.c), 0.0);
            res.channel_abs_sums.assign(static_cast<std::size_t>(in.in_shape.c), 0.0);
            row_sums.assign(static_cast<std::size_t>(in.in_shape.c) * in.in_shape.h, 0.0);
            row_abs_sums.assign(row_sums.size(), 0.0);
            break;
        case StepKind::Gtw:
            res.d_weights = KernelTensor4(in.out_shape.c, in.in_shape.c, K);
            break;
    }

    StepContext ctx(in, mode);
    long long worst_group = 0;

    for (const auto& queue : sched.groups) {
        std::map<DstKey, std::size_t> dst_index;
        std::vector<DstScratch> rows;
        std::vector<long long> pe_cycles(static_cast<std::size_t>(arch.pes_per_group), 0);

        for (std::size_t qi = 0; qi < queue.size(); ++qi) {
            const RowInstruction& ins = queue[qi];
            const DstKey key = key_of(ins.dst);
            auto it = dst_index.find(key);
            if (it == dst_index.end()) {
                it = dst_index.emplace(key, rows.size()).first;
                DstScratch sc;
                sc.ref = ins.dst;
                const double init =
                    ins.add_bias ? in.weights->bias[static_cast<std::size_t>(ins.bias_channel)]
                                 : 0.0;
                sc.vals.assign(static_cast<std::size_t>(ctx.dst_length(in.kind)), init);
                rows.push_back(std::move(sc));
            }
            const long long c = ctx.exec(ins, rows[it->second].vals, res.events,
                                         res.stream_nnz, res.stream_total);
            pe_cycles[qi % static_cast<std::size_t>(arch.pes_per_group)] += c;
        }

        long long makespan = 0;
        for (long long c : pe_cycles) makespan = std::max(makespan, c);

        long long ppu_cycles = 0;
        for (DstScratch& sc : rows) {
            if (in.kind == StepKind::Gtw) {
                auto out = res.d_weights.row(sc.ref.i0, sc.ref.i1, sc.ref.i2);
                std::copy(sc.vals.begin(), sc.vals.end(), out.begin());
                res.events.buffer_write += K;
                continue;
            }
            const int len = static_cast<int>(sc.vals.size());
            ppu_cycles += len;
            res.events.ppu_op += len;

            if (in.kind == StepKind::Forward) {
                const int c = sc.ref.i0, y = sc.ref.i1;
                if (in.relu_after) {
                    BitMask& mask =
                        res.out_masks[static_cast<std::size_t>(c) * in.out_shape.h + y];
                    for (int x = 0; x < len; ++x) {
                        const bool on = sc.vals[static_cast<std::size_t>(x)] > 0.0;
                        mask.set(x, on);
                        if (!on) sc.vals[static_cast<std::size_t>(x)] = 0.0;
                    }
                }
                auto out = res.produced.row(c, y);
                std::copy(sc.vals.begin(), sc.vals.end(), out.begin());
                const long long nnz = count_nonzero(sc.vals);
                res.events.buffer_write += mode == SimMode::Sparse ? nnz : len;
            } else {
                const int c = sc.ref.i0, u = sc.ref.i1;
                res.events.reg_access += 2LL * len; // running sum and |sum| registers
                double s = 0.0, a = 0.0;
                for (double v : sc.vals) {
                    s += v;
                    a += std::abs(v);
                }
                row_sums[static_cast<std::size_t>(c) * in.in_shape.h + u] = s;
                row_abs_sums[static_cast<std::size_t>(c) * in.in_shape.h + u] = a;

                if (in.prune_tau > 0.0 && in.pruner) {
                    Rng rng = in.pruner->row_rng_at(in.prune_batch, in.layer, in.prune_sample,
                                                    c * in.in_shape.h + u);
                    for (double& v : sc.vals) v = stochastic_prune_value(v, in.prune_tau, rng);
                }
                auto out = res.produced.row(c, u);
                std::copy(sc.vals.begin(), sc.vals.end(), out.begin());
                const long long nnz = count_nonzero(sc.vals);
                res.events.buffer_write += mode == SimMode::Sparse ? nnz : len;
            }
        }
        worst_group = std::max(worst_group, makespan + ppu_cycles);
    }

    if (in.kind == StepKind::Gta) {
        // Register merge in row order, independent of group layout.
        for (int c = 0; c < in.in_shape.c; ++c)
            for (int u = 0; u < in.in_shape.h; ++u) {
                res.channel_sums[static_cast<std::size_t>(c)] +=
                    row_sums[static_cast<std::size_t>(c) * in.in_shape.h + u];
                res.channel_abs_sums[static_cast<std::size_t>(c)] +=
                    row_abs_sums[static_cast<std::size_t>(c) * in.in_shape.h + u];
            }
    }

    if (in.kind == StepKind::Gtw) {
        res.produced_nnz = count_nonzero(res.d_weights.data);
        res.produced_total = static_cast<long long>(res.d_weights.data.size());
    } else {
        res.produced_nnz = count_nonzero(res.produced.data);
        res.produced_total = static_cast<long long>(res.produced.data.size());
    }

    const long long bw = arch.bandwidth_bytes_per_cycle;
    const long long bytes =
        (res.events.buffer_read + res.events.buffer_write) * arch.bytes_per_value;
    res.cycles = worst_group + (bytes + bw - 1) / bw;
    return res;
}

} // namespace rowflow
