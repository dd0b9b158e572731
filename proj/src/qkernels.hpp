#pragma once

#include "tensorstore.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Quantized linear-algebra kernels: the reference f32 matmul, the fused
// dequantize-matmul, and the integer-arithmetic variant that requantizes
// activations and keeps products in the integer domain.
//
// Accumulation order is fixed: each output element sums over the inner
// dimension sequentially in ascending k, with double accumulators. Any
// parallelism must split across output elements only, so results are
// bit-stable regardless of worker count.

namespace estm::kernels {

// Intra-op worker count. Defaults to the ESTM_THREADS environment variable
// (1 when unset). Each output row is computed whole by a single worker, so
// results are bit-identical for every worker count.
void set_worker_count(int n);
int  worker_count();

// Runs body(lo, hi) over contiguous row shards, on the pool when it pays.
void parallel_rows(int64_t rows, const std::function<void(int64_t, int64_t)> & body);

struct Matrix {
    int64_t            rows = 0;
    int64_t            cols = 0;
    std::vector<float> data; // row-major

    float &       at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    const float & at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }

    static Matrix zeros(int64_t rows, int64_t cols);
    bool          operator==(const Matrix &) const = default;
};

// x: [rows x k], w: [k x cols] row-major.
Matrix matmul_f32(const Matrix & x, const TensorF32 & w);

// Equal to matmul_f32(x, dequantize_tensor(qw)) without ever materializing
// the dequantized matrix: blocks are decoded on the fly.
Matrix matmul_nbits(const Matrix & x, const QuantizedTensor & qw);

// Activations quantized per-tensor to act_bits with asymmetric RTN, products
// formed from the integer codes, scales applied on the way out. Approximates
// matmul_f32 with no tolerance contract; composing it layer over layer
// accumulates the activation rounding error.
Matrix matmul_integer(const Matrix & x, const QuantizedTensor & qw, int act_bits = 8);

} // namespace estm::kernels
