#include "quantcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace estm::quant {

void QuantConfig::validate() const {
    if (bits != 4 && bits != 8) {
        fail(errc::invalid_arg, "quant bits must be 4 or 8");
    }
    if (block_size < 2) {
        fail(errc::invalid_arg, "block size must be >= 2");
    }
    if (candidate_count < 1) {
        fail(errc::invalid_arg, "candidate count must be >= 1");
    }
    if (!(span_lo < span_hi) || span_lo <= 0.0) {
        fail(errc::invalid_arg, "candidate span must satisfy 0 < lo < hi");
    }
}

static void require_finite(std::span<const float> w) {
    for (float v : w) {
        if (!std::isfinite(v)) {
            fail(errc::invalid_arg, "non-finite value in weight block");
        }
    }
}

static int code_max(int bits) {
    return (1 << bits) - 1;
}

// RTN rounding at an explicit scale; shared by the plain RTN path and the
// candidate sweep.
static std::vector<uint8_t> round_codes(std::span<const float> w, double scale, double w_min,
                                        int bits, int * zero_point) {
    const int     qmax = code_max(bits);
    const int64_t z    = std::llround(-w_min / scale);
    if (zero_point) {
        *zero_point = static_cast<int>(z);
    }
    std::vector<uint8_t> q(w.size());
    for (size_t j = 0; j < w.size(); ++j) {
        const int64_t v = std::llround(w[j] / scale) + z;
        q[j] = static_cast<uint8_t>(std::clamp<int64_t>(v, 0, qmax));
    }
    return q;
}

QuantBlock rtn_quantize_block(std::span<const float> w, int bits) {
    if (bits != 4 && bits != 8) {
        fail(errc::invalid_arg, "quant bits must be 4 or 8");
    }
    if (w.empty()) {
        fail(errc::invalid_arg, "empty weight block");
    }
    require_finite(w);

    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    const double w_min = *lo, w_max = *hi;

    QuantBlock out;
    if (w_max == w_min) {
        out.q.assign(w.size(), 0);
        out.scale  = 0.0f;
        out.offset = static_cast<float>(w_min);
        return out;
    }

    const double s = (w_max - w_min) / code_max(bits);
    out.q          = round_codes(w, s, w_min, bits, &out.zero_point);
    out.scale      = static_cast<float>(s);
    out.offset     = static_cast<float>(-s * out.zero_point);
    return out;
}

std::vector<double> kquant_importance(std::span<const float> w) {
    if (w.empty()) {
        fail(errc::invalid_arg, "empty weight block");
    }
    require_finite(w);
    double sumsq = 0.0;
    for (float v : w) {
        sumsq += static_cast<double>(v) * v;
    }
    const double rms = std::sqrt(sumsq / static_cast<double>(w.size()));
    std::vector<double> alpha(w.size());
    for (size_t j = 0; j < w.size(); ++j) {
        alpha[j] = rms + std::abs(static_cast<double>(w[j]));
    }
    return alpha;
}

double weighted_affine_error(std::span<const uint8_t> q, std::span<const float> w,
                             std::span<const double> alpha, double s, double m) {
    double err = 0.0;
    for (size_t j = 0; j < q.size(); ++j) {
        const double d = s * q[j] + m - w[j];
        err += alpha[j] * d * d;
    }
    return err;
}

KQuantFit kquant_affine_fit(std::span<const uint8_t> q, std::span<const float> w,
                            std::span<const double> alpha) {
    if (q.size() != w.size() || q.size() != alpha.size() || q.empty()) {
        fail(errc::invalid_arg, "affine fit: mismatched lengths");
    }

    KQuantFit fit;
    double sw = 0.0;
    for (double a : alpha) {
        sw += a;
    }
    const bool constant_codes = std::all_of(q.begin(), q.end(), [&](uint8_t v) { return v == q[0]; });

    if (sw <= 0.0) {
        fit.degenerate = true; // all-zero block: nothing to preserve
        return fit;
    }
    if (constant_codes) {
        double sx = 0.0;
        for (size_t j = 0; j < w.size(); ++j) {
            sx += alpha[j] * w[j];
        }
        fit.s_star         = 0.0;
        fit.m_star         = sx / sw;
        fit.degenerate     = true;
        fit.weighted_error = weighted_affine_error(q, w, alpha, fit.s_star, fit.m_star);
        return fit;
    }

    double sq = 0.0, sqq = 0.0, sx = 0.0, sqx = 0.0;
    for (size_t j = 0; j < q.size(); ++j) {
        const double a = alpha[j], qi = q[j], wi = w[j];
        sq += a * qi;
        sqq += a * qi * qi;
        sx += a * wi;
        sqx += a * qi * wi;
    }
    const double det = sw * sqq - sq * sq;
    fit.s_star       = (sw * sqx - sq * sx) / det;
    fit.m_star       = (sqq * sx - sq * sqx) / det;
    fit.weighted_error = weighted_affine_error(q, w, alpha, fit.s_star, fit.m_star);
    return fit;
}

std::vector<double> kquant_candidate_scales(double s_rtn, const QuantConfig & cfg) {
    std::vector<double> scales;
    scales.reserve(static_cast<size_t>(cfg.candidate_count) + 1);
    if (cfg.candidate_count == 1) {
        scales.push_back(0.5 * (cfg.span_lo + cfg.span_hi) * s_rtn);
    } else {
        for (int i = 0; i < cfg.candidate_count; ++i) {
            const double f = cfg.span_lo + (cfg.span_hi - cfg.span_lo) * i / (cfg.candidate_count - 1);
            scales.push_back(f * s_rtn);
        }
    }
    const bool has_rtn = std::any_of(scales.begin(), scales.end(), [&](double s) {
        return std::abs(s - s_rtn) <= 1e-12 * std::abs(s_rtn);
    });
    if (!has_rtn) {
        scales.push_back(s_rtn);
    }
    return scales;
}

KQuantChoice kquant_quantize_block_detailed(std::span<const float> w, const QuantConfig & cfg) {
    cfg.validate();
    if (w.empty()) {
        fail(errc::invalid_arg, "empty weight block");
    }
    require_finite(w);

    KQuantChoice out;
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    const double w_min = *lo, w_max = *hi;
    if (w_max == w_min) {
        out.block          = rtn_quantize_block(w, cfg.bits); // exact s = 0 path
        out.fit.s_star     = 0.0;
        out.fit.m_star     = w_min;
        out.fit.degenerate = true;
        return out;
    }

    const double s_rtn  = (w_max - w_min) / code_max(cfg.bits);
    const auto   alpha  = kquant_importance(w);
    const auto   scales = kquant_candidate_scales(s_rtn, cfg);

    double best_dist = 0.0;
    for (size_t ci = 0; ci < scales.size(); ++ci) {
        const double s_c   = scales[ci];
        int          z     = 0;
        auto         codes = round_codes(w, s_c, w_min, cfg.bits, &z);
        const KQuantFit fit  = kquant_affine_fit(codes, w, alpha);
        const double    dist = std::abs(s_c - s_rtn);
        const bool better = out.candidate_index < 0 || fit.weighted_error < out.fit.weighted_error ||
                            (fit.weighted_error == out.fit.weighted_error && dist < best_dist);
        if (better) {
            out.block.q          = std::move(codes);
            out.block.scale      = static_cast<float>(fit.s_star);
            out.block.offset     = static_cast<float>(fit.m_star);
            out.block.zero_point = z;
            out.fit              = fit;
            out.candidate_index  = static_cast<int>(ci);
            out.candidate_scale  = s_c;
            best_dist            = dist;
        }
    }
    return out;
}

QuantBlock kquant_quantize_block(std::span<const float> w, const QuantConfig & cfg) {
    return kquant_quantize_block_detailed(w, cfg).block;
}

QuantizedTensor quantize_tensor(const TensorF32 & t, const QuantConfig & cfg) {
    cfg.validate();
    if (static_cast<int64_t>(t.data.size()) != t.numel()) {
        fail(errc::shape, "tensor '" + t.name + "': data length does not match shape");
    }

    QuantizedTensor out;
    out.name       = t.name;
    out.shape      = t.shape;
    out.bits       = cfg.bits;
    out.block_size = cfg.block_size;
    out.packed.reserve(static_cast<size_t>(quant_payload_bytes(t.numel(), cfg.bits, cfg.block_size)));

    const int64_t n = t.numel();
    for (int64_t from = 0; from < n; from += cfg.block_size) {
        const int64_t len = std::min<int64_t>(cfg.block_size, n - from);
        std::span<const float> w(t.data.data() + from, static_cast<size_t>(len));
        const QuantBlock blk = cfg.scheme == Scheme::rtn ? rtn_quantize_block(w, cfg.bits)
                                                         : kquant_quantize_block(w, cfg);
        pack_block(blk.q, blk.scale, blk.offset, cfg.bits, out.packed);
    }
    return out;
}

TensorF32 dequantize_tensor(const QuantizedTensor & qt) {
    TensorF32 out;
    out.name  = qt.name;
    out.shape = qt.shape;
    out.data.resize(static_cast<size_t>(qt.numel()));

    std::vector<uint8_t> codes(static_cast<size_t>(qt.block_size));
    const int64_t nblk = qt.block_count();
    for (int64_t b = 0; b < nblk; ++b) {
        float s = 0.0f, m = 0.0f;
        unpack_block(qt, b, s, m, codes.data());
        const int64_t from = b * qt.block_size;
        const int64_t len  = qt.block_len(b);
        for (int64_t j = 0; j < len; ++j) {
            out.data[static_cast<size_t>(from + j)] = s * static_cast<float>(codes[static_cast<size_t>(j)]) + m;
        }
    }
    return out;
}

// ── mixed precision policy ──────────────────────────────────────────────────

bool glob_match(std::string_view pattern, std::string_view name) {
    size_t p = 0, n = 0;
    size_t star = std::string_view::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') {
        ++p;
    }
    return p == pattern.size();
}

MixedPolicy parse_policy(std::string_view text) {
    MixedPolicy policy;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const size_t hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream ls(line);
        std::string pattern, bits_str, extra;
        if (!(ls >> pattern)) {
            continue; // blank
        }
        if (!(ls >> bits_str) || (ls >> extra)) {
            fail(errc::format, "policy line " + std::to_string(lineno) +
                                   ": expected '<pattern> <bits>'");
        }
        int bits = 0;
        try {
            bits = std::stoi(bits_str);
        } catch (...) {
            fail(errc::format, "policy line " + std::to_string(lineno) + ": bad bit width");
        }
        if (bits != 4 && bits != 8) {
            fail(errc::format, "policy line " + std::to_string(lineno) + ": bits must be 4 or 8");
        }
        if (pattern == "default") {
            policy.default_bits = bits;
        } else {
            policy.rules.push_back({pattern, bits});
        }
    }
    return policy;
}

MixedPolicy load_policy(const std::string & path) {
    std::ifstream f(path);
    if (!f) {
        fail(errc::io, "cannot open policy file '" + path + "'");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_policy(ss.str());
}

std::map<std::string, int> plan_mixed_precision(std::span<const std::string> names,
                                                const MixedPolicy & policy) {
    for (const auto & rule : policy.rules) {
        if (rule.pattern.empty()) {
            fail(errc::invalid_arg, "empty glob pattern in policy");
        }
    }
    std::map<std::string, int> plan;
    for (const auto & name : names) {
        int bits = policy.default_bits;
        for (const auto & rule : policy.rules) {
            if (glob_match(rule.pattern, name)) {
                bits = rule.bits;
                break;
            }
        }
        plan[name] = bits;
    }
    return plan;
}

ModelContainer quantize_model(const ModelContainer & in, const QuantConfig & cfg,
                              const MixedPolicy & policy, const ScopePredicate & scope) {
    cfg.validate();

    std::vector<std::string> scoped;
    for (const auto & t : in.tensors) {
        if (std::holds_alternative<TensorF32>(t) && scope(tensor_name(t))) {
            scoped.push_back(tensor_name(t));
        }
    }
    const auto plan = plan_mixed_precision(scoped, policy);

    ModelContainer out;
    out.version  = in.version;
    out.metadata = in.metadata;

    int64_t n4 = 0, n8 = 0;
    for (const auto & t : in.tensors) {
        const std::string & name = tensor_name(t);
        const auto it = plan.find(name);
        if (it == plan.end() || !std::holds_alternative<TensorF32>(t)) {
            out.tensors.push_back(t);
            continue;
        }
        QuantConfig tc = cfg;
        tc.bits        = it->second;
        (tc.bits == 4 ? n4 : n8) += 1;
        out.tensors.emplace_back(quantize_tensor(std::get<TensorF32>(t), tc));
    }

    if (n4 + n8 > 0) { // an empty scope is a verbatim copy, metadata included
        out.metadata["quant.scheme"]          = cfg.scheme == Scheme::rtn ? "rtn" : "kquant";
        out.metadata["quant.block_size"]      = std::to_string(cfg.block_size);
        out.metadata["quant.candidate_count"] = std::to_string(cfg.candidate_count);
        out.metadata["quant.span"] =
            std::to_string(cfg.span_lo) + "," + std::to_string(cfg.span_hi);
        out.metadata["quant.bits_histogram"] =
            "4:" + std::to_string(n4) + ",8:" + std::to_string(n8);
        out.metadata["quant.payload_bytes_before"] = std::to_string(container_size_bytes(in));
        out.metadata["quant.payload_bytes_after"]  = std::to_string(container_size_bytes(out));
    }
    return out;
}

} // namespace estm::quant
