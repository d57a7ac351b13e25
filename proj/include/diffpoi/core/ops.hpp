#pragma once

// Name-dispatched access to the operation catalog, used by generic tests and
// tools that enumerate every operation.

#include <array>
#include <string_view>
#include <vector>

#include "diffpoi/core/tensor.hpp"

namespace diffpoi::core {

enum class OpKind {
    matmul,
    add,
    subtract,
    elementwise_multiply,
    scale,
    concat,
    row_gather,
    softmax_lastdim,
    log_softmax_lastdim,
    mean_lastaxis,
    sum,
    relu,
    gelu,
    exponential,
    l2_norm_squared,
    transpose,
    broadcast_add,
    reshape,
    segment_softmax,
    scatter_add_rows,
    scale_rows,
};

inline constexpr std::array<OpKind, 21> kAllOps = {
    OpKind::matmul,          OpKind::add,           OpKind::subtract,        OpKind::elementwise_multiply,
    OpKind::scale,           OpKind::concat,        OpKind::row_gather,      OpKind::softmax_lastdim,
    OpKind::log_softmax_lastdim, OpKind::mean_lastaxis, OpKind::sum,      OpKind::relu,
    OpKind::gelu,            OpKind::exponential,   OpKind::l2_norm_squared, OpKind::transpose,
    OpKind::broadcast_add,   OpKind::reshape,       OpKind::segment_softmax, OpKind::scatter_add_rows,
    OpKind::scale_rows,
};

inline std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::subtract: return "subtract";
        case OpKind::elementwise_multiply: return "elementwise_multiply";
        case OpKind::scale: return "scale";
        case OpKind::concat: return "concat";
        case OpKind::row_gather: return "row_gather";
        case OpKind::softmax_lastdim: return "softmax_lastdim";
        case OpKind::log_softmax_lastdim: return "log_softmax_lastdim";
        case OpKind::mean_lastaxis: return "mean_lastaxis";
        case OpKind::sum: return "sum";
        case OpKind::relu: return "relu";
        case OpKind::gelu: return "gelu";
        case OpKind::exponential: return "exponential";
        case OpKind::l2_norm_squared: return "l2_norm_squared";
        case OpKind::transpose: return "transpose";
        case OpKind::broadcast_add: return "broadcast_add";
        case OpKind::reshape: return "reshape";
        case OpKind::segment_softmax: return "segment_softmax";
        case OpKind::scatter_add_rows: return "scatter_add_rows";
        case OpKind::scale_rows: return "scale_rows";
    }
    return "unknown";
}

// Non-tensor arguments some kinds need.
struct OpArgs {
    double factor = 1.0;                 // scale
    std::vector<std::size_t> indices;    // row_gather, segment_softmax, scatter_add_rows
    std::size_t count = 0;               // segment count / scatter rows
    Shape shape;                         // reshape
};

inline Tensor forward_op(OpKind kind, const std::vector<Tensor>& in, const OpArgs& args = {}) {
    auto need = [&](std::size_t n) {
        if (in.size() != n) {
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(in.size()));
        }
    };
    switch (kind) {
        case OpKind::matmul: need(2); return matmul(in[0], in[1]);
        case OpKind::add: need(2); return add(in[0], in[1]);
        case OpKind::subtract: need(2); return subtract(in[0], in[1]);
        case OpKind::elementwise_multiply: need(2); return multiply(in[0], in[1]);
        case OpKind::scale: need(1); return scale(in[0], args.factor);
        case OpKind::concat: return concat(in);
        case OpKind::row_gather: need(1); return row_gather(in[0], args.indices);
        case OpKind::softmax_lastdim: need(1); return softmax_lastdim(in[0]);
        case OpKind::log_softmax_lastdim: need(1); return log_softmax_lastdim(in[0]);
        case OpKind::mean_lastaxis: need(1); return mean_lastaxis(in[0]);
        case OpKind::sum: need(1); return sum(in[0]);
        case OpKind::relu: need(1); return relu(in[0]);
        case OpKind::gelu: need(1); return gelu(in[0]);
        case OpKind::exponential: need(1); return exponential(in[0]);
        case OpKind::l2_norm_squared: need(1); return l2_norm_squared(in[0]);
        case OpKind::transpose: need(1); return transpose(in[0]);
        case OpKind::broadcast_add: need(2); return broadcast_add(in[0], in[1]);
        case OpKind::reshape: need(1); return reshape(in[0], args.shape);
        case OpKind::segment_softmax: need(1); return segment_softmax(in[0], args.indices, args.count);
        case OpKind::scatter_add_rows: need(1); return scatter_add_rows(in[0], args.indices, args.count);
        case OpKind::scale_rows: need(2); return scale_rows(in[0], in[1]);
    }
    throw ShapeError("forward_op: unknown kind");
}

}  // namespace diffpoi::core
