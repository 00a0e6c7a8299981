#include "rowflow/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "rowflow/reference.hpp"

namespace rowflow {

namespace {

constexpr double kBnEps = 1e-5;

DenseTensor3 reshape(const DenseTensor3& t, int c, int h, int w) {
    DenseTensor3 out(c, h, w);
    out.data = t.data;
    return out;
}

} // namespace

void Model::build(std::uint64_t init_seed) {
    shapes = spec.validate();
    params.conv.assign(spec.layers.size(), {});
    params.bn.assign(spec.layers.size(), {});
    params.fc.assign(spec.layers.size(), {});

    Rng rng(init_seed);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                KernelTensor4 w(l.out_channels, l.in_channels, l.kernel);
                const double scale =
                    std::sqrt(2.0 / (static_cast<double>(l.in_channels) * l.kernel * l.kernel));
                for (auto& v : w.data) v = scale * rng.next_normal();
                params.conv[i] = std::move(w);
                break;
            }
            case LayerKind::BatchNorm:
                params.bn[i].gamma.assign(static_cast<std::size_t>(l.bn_channels), 1.0);
                params.bn[i].beta.assign(static_cast<std::size_t>(l.bn_channels), 0.0);
                break;
            case LayerKind::Fc: {
                FcParams fc;
                fc.in = l.fc_in;
                fc.out = l.fc_out;
                fc.w.assign(static_cast<std::size_t>(fc.in) * fc.out, 0.0);
                fc.b.assign(static_cast<std::size_t>(fc.out), 0.0);
                const double scale = std::sqrt(2.0 / static_cast<double>(fc.in));
                for (auto& v : fc.w) v = scale * rng.next_normal();
                params.fc[i] = std::move(fc);
                break;
            }
            default: break;
        }
    }
}

ForwardPass forward(const Model& m, const std::vector<DenseTensor3>& batch) {
    const int B = static_cast<int>(batch.size());
    if (B == 0) throw RunError("forward: empty batch");
    for (const auto& img : batch) {
        if (img.channels != m.spec.input.c || img.height != m.spec.input.h ||
            img.width != m.spec.input.w)
            throw ConfigError("forward: sample shape does not match the network input");
        check_finite(img.data, "forward input");
    }

    const std::size_t L = m.spec.layers.size();
    ForwardPass fp;
    fp.batch = B;
    fp.acts.assign(L + 1, {});
    fp.relu_masks.assign(L, {});
    fp.pool_argmax.assign(L, {});
    fp.bn_stats.assign(L, {});
    fp.acts[0] = batch;

    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& l = m.spec.layers[i];
        const auto& in = fp.acts[i];
        auto& out = fp.acts[i + 1];
        out.reserve(static_cast<std::size_t>(B));

        switch (l.kind) {
            case LayerKind::Conv:
                for (int s = 0; s < B; ++s)
                    out.push_back(conv2d_ref(in[static_cast<std::size_t>(s)], m.params.conv[i],
                                             l.stride, l.pad));
                break;

            case LayerKind::Relu: {
                fp.relu_masks[i].resize(static_cast<std::size_t>(B));
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in[static_cast<std::size_t>(s)];
                    DenseTensor3 y(x.channels, x.height, x.width);
                    auto& masks = fp.relu_masks[i][static_cast<std::size_t>(s)];
                    masks.reserve(static_cast<std::size_t>(x.channels) * x.height);
                    for (int c = 0; c < x.channels; ++c) {
                        for (int row = 0; row < x.height; ++row) {
                            BitMask mask(x.width);
                            for (int col = 0; col < x.width; ++col) {
                                const double v = x.at(c, row, col);
                                const bool on = v > 0.0;
                                mask.set(col, on);
                                y.at(c, row, col) = on ? v : 0.0;
                            }
                            masks.push_back(std::move(mask));
                        }
                    }
                    out.push_back(std::move(y));
                }
                break;
            }

            case LayerKind::MaxPool: {
                fp.pool_argmax[i].resize(static_cast<std::size_t>(B));
                const Shape3 os = m.shapes[i];
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in[static_cast<std::size_t>(s)];
                    DenseTensor3 y(os.c, os.h, os.w);
                    auto& arg = fp.pool_argmax[i][static_cast<std::size_t>(s)];
                    arg.resize(y.size());
                    for (int c = 0; c < os.c; ++c) {
                        for (int oy = 0; oy < os.h; ++oy) {
                            for (int ox = 0; ox < os.w; ++ox) {
                                // First maximum in row-major window order wins.
                                int best = -1;
                                double best_v = 0.0;
                                for (int py = 0; py < l.pool; ++py) {
                                    for (int px = 0; px < l.pool; ++px) {
                                        const int iy = oy * l.pool_stride + py;
                                        const int ix = ox * l.pool_stride + px;
                                        const double v = x.at(c, iy, ix);
                                        if (best < 0 || v > best_v) {
                                            best_v = v;
                                            best = static_cast<int>(x.index(c, iy, ix));
                                        }
                                    }
                                }
                                y.at(c, oy, ox) = best_v;
                                arg[y.index(c, oy, ox)] = best;
                            }
                        }
                    }
                    out.push_back(std::move(y));
                }
                break;
            }

            case LayerKind::BatchNorm: {
                const DenseTensor3& first = in[0];
                const int C = first.channels;
                const long long per_ch = static_cast<long long>(B) * first.height * first.width;
                BnBatchStats st;
                st.mean.assign(static_cast<std::size_t>(C), 0.0);
                st.var.assign(static_cast<std::size_t>(C), 0.0);
                st.inv_std.assign(static_cast<std::size_t>(C), 0.0);
                for (int c = 0; c < C; ++c) {
                    double sum = 0.0;
                    for (int s = 0; s < B; ++s)
                        for (int y = 0; y < first.height; ++y)
                            for (int x = 0; x < first.width; ++x)
                                sum += in[static_cast<std::size_t>(s)].at(c, y, x);
                    const double mean = sum / static_cast<double>(per_ch);
                    double varsum = 0.0;
                    for (int s = 0; s < B; ++s)
                        for (int y = 0; y < first.height; ++y)
                            for (int x = 0; x < first.width; ++x) {
                                const double d = in[static_cast<std::size_t>(s)].at(c, y, x) - mean;
                                varsum += d * d;
                            }
                    st.mean[static_cast<std::size_t>(c)] = mean;
                    st.var[static_cast<std::size_t>(c)] = varsum / static_cast<double>(per_ch);
                    st.inv_std[static_cast<std::size_t>(c)] =
                        1.0 / std::sqrt(st.var[static_cast<std::size_t>(c)] + kBnEps);
                }
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in[static_cast<std::size_t>(s)];
                    DenseTensor3 y(x.channels, x.height, x.width);
                    for (int c = 0; c < C; ++c) {
                        const double g = m.params.bn[i].gamma[static_cast<std::size_t>(c)];
                        const double b = m.params.bn[i].beta[static_cast<std::size_t>(c)];
                        for (int yy = 0; yy < x.height; ++yy)
                            for (int xx = 0; xx < x.width; ++xx)
                                y.at(c, yy, xx) =
                                    g * (x.at(c, yy, xx) - st.mean[static_cast<std::size_t>(c)]) *
                                        st.inv_std[static_cast<std::size_t>(c)] +
                                    b;
                    }
                    out.push_back(std::move(y));
                }
                fp.bn_stats[i] = std::move(st);
                break;
            }

            case LayerKind::Flatten:
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in[static_cast<std::size_t>(s)];
                    out.push_back(reshape(x, static_cast<int>(x.size()), 1, 1));
                }
                break;

            case LayerKind::Fc: {
                const FcParams& fc = m.params.fc[i];
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in[static_cast<std::size_t>(s)];
                    DenseTensor3 y(fc.out, 1, 1);
                    for (int o = 0; o < fc.out; ++o) {
                        double acc = fc.b[static_cast<std::size_t>(o)];
                        const double* wr = fc.w.data() + static_cast<std::size_t>(o) * fc.in;
                        for (int k = 0; k < fc.in; ++k) acc += wr[k] * x.data[static_cast<std::size_t>(k)];
                        y.data[static_cast<std::size_t>(o)] = acc;
                    }
                    out.push_back(std::move(y));
                }
                break;
            }
        }
    }
    return fp;
}

LossGrad softmax_ce(const DenseTensor3& logits, int label) {
    const int n = static_cast<int>(logits.size());
    if (label < 0 || label >= n) throw RunError("softmax_ce: label out of range");
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double denom = 0.0;
    std::vector<double> e(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        e[static_cast<std::size_t>(i)] = std::exp(logits.data[static_cast<std::size_t>(i)] - mx);
        denom += e[static_cast<std::size_t>(i)];
    }
    LossGrad lg;
    lg.d_logits.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double p = e[static_cast<std::size_t>(i)] / denom;
        lg.d_logits[static_cast<std::size_t>(i)] = p - (i == label ? 1.0 : 0.0);
        if (i == label) lg.loss = -std::log(std::max(p, 1e-300));
    }
    return lg;
}

Grads Grads::zeros_like(const Model& m) {
    Grads g;
    g.conv.assign(m.spec.layers.size(), {});
    g.bn.assign(m.spec.layers.size(), {});
    g.fc.assign(m.spec.layers.size(), {});
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        const LayerSpec& l = m.spec.layers[i];
        if (l.kind == LayerKind::Conv)
            g.conv[i] = KernelTensor4(l.out_channels, l.in_channels, l.kernel);
        else if (l.kind == LayerKind::BatchNorm) {
            g.bn[i].gamma.assign(static_cast<std::size_t>(l.bn_channels), 0.0);
            g.bn[i].beta.assign(static_cast<std::size_t>(l.bn_channels), 0.0);
        } else if (l.kind == LayerKind::Fc) {
            g.fc[i].in = l.fc_in;
            g.fc[i].out = l.fc_out;
            g.fc[i].w.assign(static_cast<std::size_t>(l.fc_in) * l.fc_out, 0.0);
            g.fc[i].b.assign(static_cast<std::size_t>(l.fc_out), 0.0);
        }
    }
    return g;
}

Pruner::Pruner(const Model& m, PruneConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    pred_.assign(m.spec.layers.size(), std::nullopt);
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        const LayerSpec& l = m.spec.layers[i];
        if (l.kind != LayerKind::Conv) continue;
        // A ConvRelu structure prunes the stream it produces; the first layer
        // produces a gradient nobody consumes, so no predictor is kept there.
        if (l.structure == ConvStructure::ConvBnRelu ||
            (l.structure == ConvStructure::ConvRelu && i > 0))
            pred_[i].emplace(cfg_.fifo_depth);
    }
}

Rng Pruner::row_rng(int layer, int sample, int row_key) const {
    return row_rng_at(batch_, layer, sample, row_key);
}

Rng Pruner::row_rng_at(long long batch, int layer, int sample, int row_key) const {
    const std::uint64_t base = Rng::derive(seed_, "prune-rows");
    return Rng(Rng::derive(base, static_cast<std::uint64_t>(layer),
                           static_cast<std::uint64_t>(batch),
                           (static_cast<std::uint64_t>(sample) << 32) |
                               static_cast<std::uint64_t>(row_key)));
}

void Pruner::process_row(int layer, int sample, int row_key, std::span<double> row) {
    ThresholdPredictor& pred = *pred_[static_cast<std::size_t>(layer)];
    Rng rng = row_rng(layer, sample, row_key);
    for (auto& v : row) v = pred.process(v, rng);
}

void Pruner::end_batch() {
    for (auto& p : pred_)
        if (p) p->end_batch(cfg_.p);
    ++batch_;
}

namespace {

void accumulate_conv_stats(ConvLayerStats& st, const DenseTensor3& consumed,
                           const DenseTensor3& produced) {
    st.consumed_nnz += count_nonzero(consumed);
    st.consumed_total += static_cast<long long>(consumed.size());
    st.produced_nnz += count_nonzero(produced);
    st.produced_total += static_cast<long long>(produced.size());
}

} // namespace

BackwardResult backward(const Model& m, const ForwardPass& fwd,
                        const std::vector<std::vector<double>>& d_logits, Pruner* pruner,
                        BackwardCapture* capture) {
    const int B = fwd.batch;
    if (static_cast<int>(d_logits.size()) != B)
        throw RunError("backward: gradient count does not match the batch");

    const std::size_t L = m.spec.layers.size();
    BackwardResult res;
    res.grads = Grads::zeros_like(m);
    res.conv_stats.assign(L, {});
    if (capture) capture->conv.assign(L, {});

    // Working gradient per sample, flowing backward through the stack.
    std::vector<DenseTensor3> g(static_cast<std::size_t>(B));
    for (int s = 0; s < B; ++s) {
        DenseTensor3 t(m.spec.classes, 1, 1);
        t.data = d_logits[static_cast<std::size_t>(s)];
        check_finite(t.data, "backward loss gradient");
        g[static_cast<std::size_t>(s)] = std::move(t);
    }

    for (int i = static_cast<int>(L) - 1; i >= 0; --i) {
        const LayerSpec& l = m.spec.layers[static_cast<std::size_t>(i)];
        const auto& in_acts = fwd.acts[static_cast<std::size_t>(i)];

        switch (l.kind) {
            case LayerKind::Fc: {
                const FcParams& fc = m.params.fc[static_cast<std::size_t>(i)];
                FcParams& gfc = res.grads.fc[static_cast<std::size_t>(i)];
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in_acts[static_cast<std::size_t>(s)];
                    const DenseTensor3& gy = g[static_cast<std::size_t>(s)];
                    for (int o = 0; o < fc.out; ++o) {
                        const double go = gy.data[static_cast<std::size_t>(o)];
                        gfc.b[static_cast<std::size_t>(o)] += go;
                        double* dwr = gfc.w.data() + static_cast<std::size_t>(o) * fc.in;
                        for (int k = 0; k < fc.in; ++k)
                            dwr[k] += go * x.data[static_cast<std::size_t>(k)];
                    }
                    DenseTensor3 gx(fc.in, 1, 1);
                    for (int k = 0; k < fc.in; ++k) {
                        double acc = 0.0;
                        for (int o = 0; o < fc.out; ++o)
                            acc += fc.w[static_cast<std::size_t>(o) * fc.in + k] *
                                   gy.data[static_cast<std::size_t>(o)];
                        gx.data[static_cast<std::size_t>(k)] = acc;
                    }
                    g[static_cast<std::size_t>(s)] = std::move(gx);
                }
                break;
            }

            case LayerKind::Flatten:
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in_acts[static_cast<std::size_t>(s)];
                    g[static_cast<std::size_t>(s)] =
                        reshape(g[static_cast<std::size_t>(s)], x.channels, x.height, x.width);
                }
                break;

            case LayerKind::BatchNorm: {
                const BnBatchStats& st = fwd.bn_stats[static_cast<std::size_t>(i)];
                const BnParams& bp = m.params.bn[static_cast<std::size_t>(i)];
                BnParams& gb = res.grads.bn[static_cast<std::size_t>(i)];
                const DenseTensor3& x0 = in_acts[0];
                const double mcount = static_cast<double>(B) * x0.height * x0.width;
                for (int c = 0; c < x0.channels; ++c) {
                    const double mean = st.mean[static_cast<std::size_t>(c)];
                    const double inv_std = st.inv_std[static_cast<std::size_t>(c)];
                    double dbeta = 0.0, dgamma = 0.0;
                    for (int s = 0; s < B; ++s) {
                        const DenseTensor3& x = in_acts[static_cast<std::size_t>(s)];
                        const DenseTensor3& gy = g[static_cast<std::size_t>(s)];
                        for (int y = 0; y < x.height; ++y)
                            for (int xx = 0; xx < x.width; ++xx) {
                                const double dy = gy.at(c, y, xx);
                                dbeta += dy;
                                dgamma += dy * (x.at(c, y, xx) - mean) * inv_std;
                            }
                    }
                    gb.beta[static_cast<std::size_t>(c)] += dbeta;
                    gb.gamma[static_cast<std::size_t>(c)] += dgamma;
                    const double gamma = bp.gamma[static_cast<std::size_t>(c)];
                    for (int s = 0; s < B; ++s) {
                        const DenseTensor3& x = in_acts[static_cast<std::size_t>(s)];
                        DenseTensor3& gy = g[static_cast<std::size_t>(s)];
                        for (int y = 0; y < x.height; ++y)
                            for (int xx = 0; xx < x.width; ++xx) {
                                const double dy = gy.at(c, y, xx);
                                const double xhat = (x.at(c, y, xx) - mean) * inv_std;
                                gy.at(c, y, xx) = gamma * inv_std / mcount *
                                                  (mcount * dy - dbeta - xhat * dgamma);
                            }
                    }
                }
                break;
            }

            case LayerKind::Relu: {
                const auto& masks = fwd.relu_masks[static_cast<std::size_t>(i)];
                for (int s = 0; s < B; ++s) {
                    DenseTensor3& gy = g[static_cast<std::size_t>(s)];
                    const auto& rows = masks[static_cast<std::size_t>(s)];
                    for (int c = 0; c < gy.channels; ++c)
                        for (int y = 0; y < gy.height; ++y) {
                            const BitMask& mask = rows[static_cast<std::size_t>(c) * gy.height + y];
                            auto row = gy.row(c, y);
                            for (int x = 0; x < gy.width; ++x)
                                if (!mask.get(x)) row[static_cast<std::size_t>(x)] = 0.0;
                        }
                }
                break;
            }

            case LayerKind::MaxPool: {
                const auto& argmax = fwd.pool_argmax[static_cast<std::size_t>(i)];
                for (int s = 0; s < B; ++s) {
                    const DenseTensor3& x = in_acts[static_cast<std::size_t>(s)];
                    const DenseTensor3& gy = g[static_cast<std::size_t>(s)];
                    DenseTensor3 gx(x.channels, x.height, x.width);
                    const auto& arg = argmax[static_cast<std::size_t>(s)];
                    for (std::size_t o = 0; o < gy.size(); ++o)
                        gx.data[static_cast<std::size_t>(arg[o])] += gy.data[o];
                    g[static_cast<std::size_t>(s)] = std::move(gx);
                }
                break;
            }

            case LayerKind::Conv: {
                const KernelTensor4& w = m.params.conv[static_cast<std::size_t>(i)];
                KernelTensor4& gw = res.grads.conv[static_cast<std::size_t>(i)];
                ConvLayerStats& st = res.conv_stats[static_cast<std::size_t>(i)];
                const bool prune_here = pruner && pruner->active_for(i);
                const double tau_now =
                    prune_here ? pruner->tau(i).value_or(0.0) : 0.0;
                if (capture)
                    capture->conv[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(B));

                const bool preceded_by_relu =
                    i > 0 && m.spec.layers[static_cast<std::size_t>(i) - 1].kind == LayerKind::Relu;

                for (int s = 0; s < B; ++s) {
                    DenseTensor3 arrived = g[static_cast<std::size_t>(s)];
                    DenseTensor3 consumed = arrived;

                    // Bias gradient always reads the arriving stream.
                    for (int c = 0; c < arrived.channels; ++c) {
                        double acc = 0.0;
                        for (int y = 0; y < arrived.height; ++y)
                            for (int x = 0; x < arrived.width; ++x) acc += arrived.at(c, y, x);
                        gw.bias[static_cast<std::size_t>(c)] += acc;
                    }

                    if (prune_here && l.structure == ConvStructure::ConvBnRelu) {
                        for (int c = 0; c < consumed.channels; ++c)
                            for (int y = 0; y < consumed.height; ++y)
                                pruner->process_row(i, s, c * consumed.height + y,
                                                    consumed.row(c, y));
                    }

                    const DenseTensor3& input = in_acts[static_cast<std::size_t>(s)];
                    KernelTensor4 dw = conv2d_gtw_ref(consumed, input, l.kernel, l.stride, l.pad);
                    for (std::size_t k = 0; k < dw.data.size(); ++k) gw.data[k] += dw.data[k];

                    DenseTensor3 d_in =
                        conv2d_full_ref(consumed, w, l.stride, l.pad, input.height, input.width);

                    // When the layer below is a ReLU the scatter skips masked
                    // destinations, so the produced stream is masked here too;
                    // the ReLU's own backward pass is then a no-op.
                    if (preceded_by_relu) {
                        const auto& rows =
                            fwd.relu_masks[static_cast<std::size_t>(i) - 1][static_cast<std::size_t>(s)];
                        for (int c = 0; c < d_in.channels; ++c)
                            for (int y = 0; y < d_in.height; ++y) {
                                const BitMask& mask =
                                    rows[static_cast<std::size_t>(c) * d_in.height + y];
                                auto row = d_in.row(c, y);
                                for (int x = 0; x < d_in.width; ++x)
                                    if (!mask.get(x)) row[static_cast<std::size_t>(x)] = 0.0;
                            }
                    }

                    if (prune_here && l.structure == ConvStructure::ConvRelu) {
                        // Post-processing stage prunes the produced stream as
                        // it leaves the array, after mask skipping. Rows whose
                        // mask has no set bit are never produced at all, so
                        // they bypass the pruner and its statistics.
                        const std::vector<BitMask>* rows = nullptr;
                        if (preceded_by_relu)
                            rows = &fwd.relu_masks[static_cast<std::size_t>(i) - 1]
                                                  [static_cast<std::size_t>(s)];
                        for (int c = 0; c < d_in.channels; ++c)
                            for (int y = 0; y < d_in.height; ++y) {
                                if (rows &&
                                    !(*rows)[static_cast<std::size_t>(c) * d_in.height + y].any())
                                    continue;
                                pruner->process_row(i, s, c * d_in.height + y, d_in.row(c, y));
                            }
                    }

                    accumulate_conv_stats(st, consumed, d_in);
                    if (capture) {
                        StepCapture& cap =
                            capture->conv[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
                        cap.d_out_arrived = std::move(arrived);
                        cap.d_out_consumed = consumed;
                        cap.d_in_produced = d_in;
                        cap.tau = tau_now;
                    }
                    g[static_cast<std::size_t>(s)] = std::move(d_in);
                }
                break;
            }
        }
    }
    return res;
}

void sgd_step(Model& m, const Grads& g, double lr, int batch_size) {
    if (batch_size <= 0) throw RunError("sgd_step: batch size must be positive");
    const double scale = lr / static_cast<double>(batch_size);
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        switch (m.spec.layers[i].kind) {
            case LayerKind::Conv: {
                auto& w = m.params.conv[i];
                const auto& gw = g.conv[i];
                for (std::size_t k = 0; k < w.data.size(); ++k) w.data[k] -= scale * gw.data[k];
                for (std::size_t k = 0; k < w.bias.size(); ++k) w.bias[k] -= scale * gw.bias[k];
                break;
            }
            case LayerKind::BatchNorm: {
                auto& b = m.params.bn[i];
                const auto& gb = g.bn[i];
                for (std::size_t k = 0; k < b.gamma.size(); ++k) {
                    b.gamma[k] -= scale * gb.gamma[k];
                    b.beta[k] -= scale * gb.beta[k];
                }
                break;
            }
            case LayerKind::Fc: {
                auto& f = m.params.fc[i];
                const auto& gf = g.fc[i];
                for (std::size_t k = 0; k < f.w.size(); ++k) f.w[k] -= scale * gf.w[k];
                for (std::size_t k = 0; k < f.b.size(); ++k) f.b[k] -= scale * gf.b[k];
                break;
            }
            default: break;
        }
    }
}

Trainer::Trainer(Model& m, const TrainSettings& s)
    : model_(m), settings_(s), shuffle_rng_(Rng::derive(s.seed, "shuffle")) {
    if (s.prune) {
        s.prune->validate(0);
        pruner_.emplace(m, *s.prune, s.seed);
    }
}

BatchStats Trainer::train_batch(const std::vector<DenseTensor3>& images,
                                const std::vector<int>& labels, BackwardCapture* capture) {
    if (images.size() != labels.size() || images.empty())
        throw RunError("train_batch: images and labels disagree");
    ForwardPass fwd = forward(model_, images);
    BatchStats st;
    std::vector<std::vector<double>> dl(images.size());
    for (std::size_t s = 0; s < images.size(); ++s) {
        LossGrad lg = softmax_ce(fwd.logits(static_cast<int>(s)), labels[s]);
        st.loss_sum += lg.loss;
        const DenseTensor3& lo = fwd.logits(static_cast<int>(s));
        int best = 0;
        for (int k = 1; k < static_cast<int>(lo.size()); ++k)
            if (lo.data[static_cast<std::size_t>(k)] > lo.data[static_cast<std::size_t>(best)])
                best = k;
        if (best == labels[s]) ++st.correct;
        dl[s] = std::move(lg.d_logits);
    }
    BackwardResult bwd = backward(model_, fwd, dl, pruner(), capture);
    st.conv_stats = std::move(bwd.conv_stats);
    if (capture) {
        capture->fwd = std::move(fwd);
        capture->params = model_.params;
        capture->batch = pruner_ ? pruner_->batch_index() : 0;
    }
    sgd_step(model_, bwd.grads, settings_.lr, static_cast<int>(images.size()));
    if (pruner_) pruner_->end_batch();
    return st;
}

std::vector<int> Trainer::next_epoch_order(int n) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffle_rng_.next_u64() %
                                       static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    ++epoch_;
    return order;
}

EpochResult Trainer::run_epoch(const Dataset& data) {
    const int n = static_cast<int>(data.images.size());
    if (n == 0) throw RunError("run_epoch: empty dataset");
    const std::vector<int> order = next_epoch_order(n);

    EpochResult er;
    std::vector<ConvLayerStats> agg(model_.spec.layers.size());
    double loss_sum = 0.0;
    int correct = 0;

    for (int start = 0; start < n; start += settings_.batch_size) {
        const int end = std::min(n, start + settings_.batch_size);
        std::vector<DenseTensor3> images;
        std::vector<int> labels;
        images.reserve(static_cast<std::size_t>(end - start));
        for (int k = start; k < end; ++k) {
            images.push_back(data.images[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
            labels.push_back(data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
        }
        BatchStats bs = train_batch(images, labels);
        loss_sum += bs.loss_sum;
        correct += bs.correct;
        for (std::size_t i = 0; i < agg.size(); ++i) {
            agg[i].consumed_nnz += bs.conv_stats[i].consumed_nnz;
            agg[i].consumed_total += bs.conv_stats[i].consumed_total;
            agg[i].produced_nnz += bs.conv_stats[i].produced_nnz;
            agg[i].produced_total += bs.conv_stats[i].produced_total;
        }
    }

    er.mean_loss = loss_sum / static_cast<double>(n);
    er.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    er.per_layer.assign(model_.spec.layers.size(), {});
    for (std::size_t i = 0; i < agg.size(); ++i) {
        if (agg[i].consumed_total > 0)
            er.per_layer[i].rho = static_cast<double>(agg[i].consumed_nnz) /
                                  static_cast<double>(agg[i].consumed_total);
        if (pruner_ && pruner_->active_for(static_cast<int>(i))) {
            er.per_layer[i].prunable = true;
            const auto fifo = pruner_->predictor(static_cast<int>(i)).fifo();
            if (!fifo.empty()) er.per_layer[i].tau = fifo.back();
        }
    }
    return er;
}

} // namespace rowflow
