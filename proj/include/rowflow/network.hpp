#pragma once

#include <string>
#include <vector>

#include "rowflow/errors.hpp"

namespace rowflow {

enum class LayerKind { Conv, Relu, MaxPool, BatchNorm, Flatten, Fc };

/* How a conv layer's backward gradient gets pruned, resolved from the layers
 * that follow it: Conv-Relu prunes the input gradient leaving the layer,
 * Conv-Bn-Relu prunes the output gradient entering it, anything else is not
 * a pruning site. */
enum class ConvStructure { None, ConvRelu, ConvBnRelu };

struct Shape3 {
    int c = 0, h = 0, w = 0;
    long long volume() const { return static_cast<long long>(c) * h * w; }
    bool operator==(const Shape3&) const = default;
};

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;

    // conv
    int in_channels = 0; // filled in by validate()
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    ConvStructure structure = ConvStructure::None; // resolved by validate()

    // maxpool
    int pool = 0;
    int pool_stride = 0;

    // fc
    int fc_in = 0; // filled in by validate()
    int fc_out = 0;

    // batchnorm
    int bn_channels = 0; // filled in by validate()
};

const char* layer_kind_name(LayerKind k);

struct NetworkSpec {
    Shape3 input;
    int classes = 0;
    std::vector<LayerSpec> layers;

    /* Propagates shapes through the stack, fills the inferred fields,
     * resolves conv structures and rejects nets that do not compose or do
     * not end in an FC of `classes` outputs. Returns the output shape of
     * every layer (shapes[i] = output of layers[i]). */
    std::vector<Shape3> validate();

    /* Shape entering layer i (shapes()[i-1], or the input for i = 0). */
    static Shape3 shape_before(const std::vector<Shape3>& shapes, const Shape3& input, int i) {
        return i == 0 ? input : shapes[static_cast<std::size_t>(i) - 1];
    }
};

} // namespace rowflow
