#include "rowflow/network.hpp"

#include "rowflow/reference.hpp"

namespace rowflow {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Fc: return "fc";
    }
    return "?";
}

std::vector<Shape3> NetworkSpec::validate() {
    if (input.c <= 0 || input.h <= 0 || input.w <= 0)
        throw ConfigError("input shape must be positive in every dimension");
    if (classes < 2) throw ConfigError("need at least two classes");
    if (layers.empty()) throw ConfigError("network has no layers");

    std::vector<Shape3> shapes;
    Shape3 cur = input;
    bool flattened = false;

    for (std::size_t i = 0; i < layers.size(); ++i) {
        LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" +
                                  layer_kind_name(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Conv: {
                if (flattened) throw ConfigError(where + ": conv after flatten");
                if (l.out_channels <= 0 || l.kernel <= 0)
                    throw ConfigError(where + ": needs positive out_channels and kernel");
                if (l.stride <= 0 || l.pad < 0)
                    throw ConfigError(where + ": bad stride or pad");
                l.in_channels = cur.c;
                cur = {l.out_channels, conv_out_dim(cur.h, l.kernel, l.stride, l.pad),
                       conv_out_dim(cur.w, l.kernel, l.stride, l.pad)};
                break;
            }
            case LayerKind::Relu:
                if (flattened) throw ConfigError(where + ": relu after flatten unsupported");
                break;
            case LayerKind::MaxPool: {
                if (flattened) throw ConfigError(where + ": pool after flatten");
                if (l.pool <= 0) throw ConfigError(where + ": needs positive window");
                if (l.pool_stride <= 0) l.pool_stride = l.pool;
                if (cur.h < l.pool || cur.w < l.pool)
                    throw ConfigError(where + ": window exceeds input extent");
                cur = {cur.c, (cur.h - l.pool) / l.pool_stride + 1,
                       (cur.w - l.pool) / l.pool_stride + 1};
                break;
            }
            case LayerKind::BatchNorm:
                if (flattened) throw ConfigError(where + ": batchnorm after flatten");
                l.bn_channels = cur.c;
                break;
            case LayerKind::Flatten:
                if (flattened) throw ConfigError(where + ": duplicate flatten");
                flattened = true;
                break;
            case LayerKind::Fc: {
                if (!flattened)
                    throw ConfigError(where + ": fc requires a preceding flatten");
                if (l.fc_out <= 0) throw ConfigError(where + ": needs positive out");
                l.fc_in = static_cast<int>(cur.volume());
                cur = {l.fc_out, 1, 1};
                break;
            }
        }
        shapes.push_back(cur);
    }

    if (layers.back().kind != LayerKind::Fc)
        throw ConfigError("network must end in an fc layer");
    if (layers.back().fc_out != classes)
        throw ConfigError("final fc emits " + std::to_string(layers.back().fc_out) +
                          " values but the head expects " + std::to_string(classes) +
                          " classes");

    // Resolve pruning structures from the layers that follow each conv.
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind != LayerKind::Conv) continue;
        layers[i].structure = ConvStructure::None;
        if (i + 1 < layers.size() && layers[i + 1].kind == LayerKind::Relu)
            layers[i].structure = ConvStructure::ConvRelu;
        else if (i + 2 < layers.size() && layers[i + 1].kind == LayerKind::BatchNorm &&
                 layers[i + 2].kind == LayerKind::Relu)
            layers[i].structure = ConvStructure::ConvBnRelu;
    }
    return shapes;
}

} // namespace rowflow
