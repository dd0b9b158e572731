#pragma once

#include "tensorstore.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

// Block-wise weight-only quantization: single-pass RTN and the k-quant
// scheme that searches candidate scales and refits the per-block affine map
// by importance-weighted least squares.

namespace estm::quant {

enum class Scheme { rtn, kquant };

struct QuantConfig {
    int    bits            = 4;  // 4 or 8
    int    block_size      = 32;
    Scheme scheme          = Scheme::kquant;
    int    candidate_count = 20;
    double span_lo         = 0.85; // candidate span, as fractions of the RTN scale
    double span_hi         = 1.15;

    void validate() const;
};

struct QuantBlock {
    std::vector<uint8_t> q;           // codes in [0, 2^bits - 1]
    float                scale  = 0.0f;
    float                offset = 0.0f; // dequant: w_hat = scale * q + offset
    int                  zero_point = 0; // RTN z, informational only
};

struct KQuantFit {
    double s_star         = 0.0;
    double m_star         = 0.0;
    double weighted_error = 0.0;
    bool   degenerate     = false; // all codes identical (or zero total weight)
};

// s = (max - min) / (2^n - 1), z = round(-min / s), codes clamped to range.
// A constant block takes the s = 0 path: all codes 0, offset = w_min.
QuantBlock rtn_quantize_block(std::span<const float> w, int bits);

// alpha_j = block RMS + |w_j|.
std::vector<double> kquant_importance(std::span<const float> w);

// argmin over (s, m) of sum_j alpha_j * (s*q_j + m - w_j)^2, in closed form
// from the weighted normal equations. All q identical degenerates to s = 0,
// m = weighted mean.
KQuantFit kquant_affine_fit(std::span<const uint8_t> q, std::span<const float> w,
                            std::span<const double> alpha);

// Candidate scale factors: candidate_count values uniformly spaced over
// [span_lo, span_hi] * s_rtn (endpoints inclusive), with s_rtn appended when
// the grid misses it, so the RTN scale is always a candidate.
std::vector<double> kquant_candidate_scales(double s_rtn, const QuantConfig & cfg);

// Re-rounds at every candidate scale, refits (s*, m*) under the importance
// weights, keeps the lowest weighted error. Ties go to the candidate scale
// closest to s_rtn, then to the earlier candidate.
QuantBlock kquant_quantize_block(std::span<const float> w, const QuantConfig & cfg);

// Same search, also reporting which candidate won and its double-precision
// refit.
struct KQuantChoice {
    QuantBlock block;
    KQuantFit  fit;
    int        candidate_index = -1; // index into kquant_candidate_scales(...)
    double     candidate_scale = 0.0;
};

KQuantChoice kquant_quantize_block_detailed(std::span<const float> w, const QuantConfig & cfg);

// Weighted reconstruction error of an arbitrary affine map, used by the
// dominance checks.
double weighted_affine_error(std::span<const uint8_t> q, std::span<const float> w,
                             std::span<const double> alpha, double s, double m);

QuantizedTensor quantize_tensor(const TensorF32 & t, const QuantConfig & cfg);
TensorF32       dequantize_tensor(const QuantizedTensor & qt);

struct MixedPolicy {
    struct Rule {
        std::string pattern; // glob: '*' and '?' wildcards
        int         bits = 8;
    };
    std::vector<Rule> rules; // first match wins
    int               default_bits = 4;
};

bool glob_match(std::string_view pattern, std::string_view name);

// Policy file: one "<pattern> <bits>" per line; '#' comments; an optional
// "default <bits>" line.
MixedPolicy parse_policy(std::string_view text);
MixedPolicy load_policy(const std::string & path);

std::map<std::string, int> plan_mixed_precision(std::span<const std::string> names,
                                                const MixedPolicy & policy);

using ScopePredicate = std::function<bool(const std::string &)>;

// Replaces scope-selected f32 tensors with quantized ones at the policy's
// per-tensor bit width; everything else is copied verbatim. Metadata records
// scheme, bits histogram and payload sizes before/after.
ModelContainer quantize_model(const ModelContainer & in, const QuantConfig & cfg,
                              const MixedPolicy & policy, const ScopePredicate & scope);

} // namespace estm::quant
