#include <doctest.h>

#include "quantcore.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace estm;
using namespace estm::quant;

namespace {

// Mixed-scale random blocks: uniform, gaussian-ish and heavy-tailed draws.
std::vector<float> random_block(std::mt19937 & rng, size_t n) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double scale = std::pow(10.0, -3.0 + 5.0 * u01(rng));
    const int    kind  = static_cast<int>(rng() % 3);
    std::vector<float> w(n);
    for (auto & v : w) {
        double x = 0.0;
        if (kind == 0) {
            x = 2.0 * u01(rng) - 1.0;
        } else if (kind == 1) {
            double s = 0.0; // sum of uniforms, roughly gaussian
            for (int i = 0; i < 6; ++i) {
                s += u01(rng);
            }
            x = (s - 3.0) / 1.5;
        } else {
            const double t = std::max(u01(rng), 1e-12); // heavy-tailed
            x = (u01(rng) < 0.5 ? -1.0 : 1.0) * (-std::log(t));
        }
        v = static_cast<float>(x * scale);
    }
    return w;
}

double rtn_affine_error(std::span<const float> w, int bits, std::span<const double> alpha) {
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    if (*hi == *lo) {
        return 0.0;
    }
    const double s = (static_cast<double>(*hi) - *lo) / ((1 << bits) - 1);
    const int64_t z = std::llround(-static_cast<double>(*lo) / s);
    const double m  = -s * static_cast<double>(z);
    const auto rtn = rtn_quantize_block(w, bits);
    return weighted_affine_error(rtn.q, w, alpha, s, m);
}

} // namespace

TEST_SUITE_BEGIN("quantcore");

TEST_CASE("rtn: constant block takes the exact s = 0 path") {
    std::vector<float> w(32, 0.7f);
    const auto blk = rtn_quantize_block(w, 4);
    CHECK(blk.scale == 0.0f);
    CHECK(blk.offset == 0.7f);
    for (auto q : blk.q) {
        CHECK(q == 0);
    }
    // exact reconstruction
    for (size_t j = 0; j < w.size(); ++j) {
        CHECK(blk.scale * blk.q[j] + blk.offset == 0.7f);
    }
}

TEST_CASE("rtn: hand evaluation on a [-1, 2] span at n=4") {
    // 16 values uniformly spanning [-1, 2]
    std::vector<float> w(16);
    for (int i = 0; i < 16; ++i) {
        w[static_cast<size_t>(i)] = -1.0f + 3.0f * static_cast<float>(i) / 15.0f;
    }
    const auto blk = rtn_quantize_block(w, 4);
    CHECK(blk.scale == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(blk.zero_point == 5);
    // w = 0 maps to code 5 and dequantizes to ~0
    const size_t zero_idx = 5; // -1 + 3*5/15 == 0
    CHECK(w[zero_idx] == 0.0f);
    CHECK(blk.q[zero_idx] == 5);
    CHECK(blk.scale * blk.q[zero_idx] + blk.offset == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("rtn: per-element error bound |w_hat - w| <= s") {
    std::mt19937 rng(123);
    for (int bits : {4, 8}) {
        for (int trial = 0; trial < 200; ++trial) {
            const auto w   = random_block(rng, 32);
            const auto blk = rtn_quantize_block(w, bits);
            for (size_t j = 0; j < w.size(); ++j) {
                const float w_hat = blk.scale * blk.q[j] + blk.offset;
                CHECK(std::abs(w_hat - w[j]) <= blk.scale + 1e-30f);
            }
        }
    }
}

TEST_CASE("rtn: non-finite input rejected") {
    std::vector<float> w(8, 1.0f);
    w[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(rtn_quantize_block(w, 4), error);
    w[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS((void)kquant_importance(w), error);
}

TEST_CASE("importance: zero block, hand case, permutation symmetry") {
    std::vector<float> zeros(16, 0.0f);
    for (double a : kquant_importance(zeros)) {
        CHECK(a == 0.0);
    }

    const std::vector<float> w{3.0f, 4.0f};
    const auto alpha = kquant_importance(w);
    const double rms = std::sqrt(12.5);
    CHECK(alpha[0] == doctest::Approx(rms + 3.0).epsilon(1e-12));
    CHECK(alpha[1] == doctest::Approx(rms + 4.0).epsilon(1e-12));

    std::mt19937 rng(5);
    auto block = random_block(rng, 16);
    auto a1    = kquant_importance(block);
    std::vector<size_t> perm(block.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        perm[i] = i;
    }
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> permuted(block.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        permuted[i] = block[perm[i]];
    }
    const auto a2 = kquant_importance(permuted);
    for (size_t i = 0; i < perm.size(); ++i) {
        CHECK(a2[i] == doctest::Approx(a1[perm[i]]).epsilon(1e-12));
    }
}

TEST_CASE("affine fit: recovers an exact affine relation") {
    std::vector<uint8_t> q{0, 3, 7, 11, 15, 2, 9, 14};
    std::vector<float>   w(q.size());
    for (size_t j = 0; j < q.size(); ++j) {
        w[j] = 0.125f * q[j] + 0.5f; // exactly representable
    }
    std::vector<double> alpha(q.size(), 1.0);
    const auto fit = kquant_affine_fit(q, w, alpha);
    CHECK(fit.s_star == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(fit.m_star == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.weighted_error == doctest::Approx(0.0).epsilon(1e-18));
    CHECK_FALSE(fit.degenerate);
}

TEST_CASE("affine fit: matches a dense grid-search oracle") {
    std::mt19937 rng(77);
    std::uniform_int_distribution<int> qd(0, 15);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t n = 16;
        std::vector<uint8_t> q(n);
        for (auto & v : q) {
            v = static_cast<uint8_t>(qd(rng));
        }
        if (std::all_of(q.begin(), q.end(), [&](uint8_t v) { return v == q[0]; })) {
            q[0] = static_cast<uint8_t>((q[0] + 1) % 16);
        }
        const auto w = random_block(rng, n);
        auto alpha   = kquant_importance(w);
        for (auto & a : alpha) {
            a += 1e-9; // keep weights positive even for near-zero draws
        }
        const auto fit = kquant_affine_fit(q, w, alpha);

        // Independent oracle: exhaustive grid over (s, m') with m' = m + s*qbar,
        // where qbar is the weighted code mean. In these coordinates the error
        // is axis-aligned, so "within grid resolution" is meaningful.
        double sw = 0.0, qbar = 0.0, wbar = 0.0;
        for (size_t j = 0; j < n; ++j) {
            sw += alpha[j];
            qbar += alpha[j] * q[j];
            wbar += alpha[j] * w[j];
        }
        qbar /= sw;
        wbar /= sw;
        double var_q = 0.0, var_w = 0.0;
        for (size_t j = 0; j < n; ++j) {
            var_q += alpha[j] * (q[j] - qbar) * (q[j] - qbar);
            var_w += alpha[j] * (w[j] - wbar) * (w[j] - wbar);
        }
        // |optimal slope| <= sqrt(var_w / var_q) by Cauchy-Schwarz
        const double span_s = 1.25 * std::sqrt(var_w / var_q) + 1e-9;
        const double span_m = 1.25 * std::sqrt(var_w / sw) + 1e-9;
        double best_err = 1e300, best_s = 0.0, best_mp = 0.0;
        const int    steps  = 200;
        const double step_s = 2.0 * span_s / steps, step_m = 2.0 * span_m / steps;
        for (int si = 0; si <= steps; ++si) {
            for (int mi = 0; mi <= steps; ++mi) {
                const double s  = -span_s + step_s * si;
                const double mp = wbar - span_m + step_m * mi;
                const double e  = weighted_affine_error(q, w, alpha, s, mp - s * qbar);
                if (e < best_err) {
                    best_err = e;
                    best_s   = s;
                    best_mp  = mp;
                }
            }
        }
        CHECK(fit.weighted_error <= best_err * (1.0 + 1e-12) + 1e-300);
        CHECK(std::abs(fit.s_star - best_s) <= step_s);
        CHECK(std::abs((fit.m_star + fit.s_star * qbar) - best_mp) <= step_m);
    }
}

TEST_CASE("affine fit: uniform weights reduce to ordinary least squares") {
    std::mt19937 rng(31);
    std::uniform_int_distribution<int> qd(0, 255);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n = 32;
        std::vector<uint8_t> q(n);
        for (auto & v : q) {
            v = static_cast<uint8_t>(qd(rng));
        }
        if (std::all_of(q.begin(), q.end(), [&](uint8_t v) { return v == q[0]; })) {
            continue;
        }
        const auto w = random_block(rng, n);
        std::vector<double> alpha(n, 1.0);
        const auto fit = kquant_affine_fit(q, w, alpha);

        // independent OLS closed form: s = cov(q, w)/var(q), m = mean(w) - s mean(q)
        double mq = 0.0, mw = 0.0;
        for (size_t j = 0; j < n; ++j) {
            mq += q[j];
            mw += w[j];
        }
        mq /= static_cast<double>(n);
        mw /= static_cast<double>(n);
        double cov = 0.0, var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            cov += (q[j] - mq) * (w[j] - mw);
            var += (q[j] - mq) * (q[j] - mq);
        }
        const double s_ols = cov / var;
        const double m_ols = mw - s_ols * mq;
        CHECK(fit.s_star == doctest::Approx(s_ols).epsilon(1e-9));
        CHECK(fit.m_star == doctest::Approx(m_ols).epsilon(1e-9));
    }
}

TEST_CASE("affine fit: identical codes degenerate to the weighted mean") {
    std::vector<uint8_t> q(8, 7);
    std::vector<float>   w{1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f, 8.0f};
    std::vector<double>  alpha(8, 2.0);
    const auto fit = kquant_affine_fit(q, w, alpha);
    CHECK(fit.degenerate);
    CHECK(fit.s_star == 0.0);
    CHECK(fit.m_star == doctest::Approx(4.5).epsilon(1e-12));
}

TEST_CASE("affine fit: first-order optimality") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const auto w   = random_block(rng, 32);
        const auto blk = rtn_quantize_block(w, 4);
        if (blk.scale == 0.0f) {
            continue;
        }
        const auto alpha = kquant_importance(w);
        const auto fit   = kquant_affine_fit(blk.q, w, alpha);
        if (fit.degenerate) {
            continue;
        }
        const double eps_s = 1e-6 * std::max(1.0, std::abs(fit.s_star));
        const double eps_m = 1e-6 * std::max(1.0, std::abs(fit.m_star));
        const double base  = fit.weighted_error;
        const double slack = 1e-9 * std::max(base, 1e-30);
        CHECK(weighted_affine_error(blk.q, w, alpha, fit.s_star + eps_s, fit.m_star) >= base - slack);
        CHECK(weighted_affine_error(blk.q, w, alpha, fit.s_star - eps_s, fit.m_star) >= base - slack);
        CHECK(weighted_affine_error(blk.q, w, alpha, fit.s_star, fit.m_star + eps_m) >= base - slack);
        CHECK(weighted_affine_error(blk.q, w, alpha, fit.s_star, fit.m_star - eps_m) >= base - slack);
    }
}

TEST_CASE("kquant: candidate scales include the RTN scale") {
    QuantConfig cfg;
    const auto scales = kquant_candidate_scales(0.5, cfg);
    CHECK(scales.size() == 21); // 20-point grid misses 1.0 exactly, so it is appended
    CHECK(scales.front() == doctest::Approx(0.85 * 0.5));
    CHECK(scales[19] == doctest::Approx(1.15 * 0.5));
    CHECK(scales.back() == 0.5);

    QuantConfig c2;
    c2.candidate_count = 21; // odd grid hits the center exactly
    const auto s2 = kquant_candidate_scales(0.5, c2);
    CHECK(s2.size() == 21);
}

TEST_CASE("kquant: constant block reconstructs exactly") {
    std::vector<float> w(32, -1.25f);
    QuantConfig cfg;
    const auto res = kquant_quantize_block_detailed(w, cfg);
    CHECK(res.block.scale == 0.0f);
    CHECK(res.block.offset == -1.25f);
    CHECK(res.fit.weighted_error == 0.0);
}

TEST_CASE("kquant: dominance over the RTN affine map is exact") {
    std::mt19937 rng(2024);
    QuantConfig  cfg;
    int strictly_better = 0;
    const int trials = 500;
    for (int trial = 0; trial < trials; ++trial) {
        const auto w = random_block(rng, 32);
        const auto alpha = kquant_importance(w);
        const auto res = kquant_quantize_block_detailed(w, cfg);
        const double err_rtn = rtn_affine_error(w, cfg.bits, alpha);
        CHECK(res.fit.weighted_error <= err_rtn);
        if (res.fit.weighted_error < err_rtn) {
            ++strictly_better;
        }
    }
    CHECK(strictly_better > trials / 2);
}

TEST_CASE("kquant: single candidate collapsed to the RTN scale equals RTN codes") {
    std::mt19937 rng(17);
    QuantConfig  cfg;
    cfg.candidate_count = 1;
    cfg.span_lo         = 1.0;
    cfg.span_hi         = 1.0 + 1e-15; // collapsed span; midpoint is s_rtn
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_block(rng, 32);
        const auto rtn = rtn_quantize_block(w, cfg.bits);
        const auto kq  = kquant_quantize_block(w, cfg);
        CHECK(kq.q == rtn.q);
        // affine map is the refit, not the raw RTN map
        const auto alpha = kquant_importance(w);
        const auto fit   = kquant_affine_fit(rtn.q, w, alpha);
        CHECK(kq.scale == doctest::Approx(fit.s_star).epsilon(1e-6));
        CHECK(kq.offset == doctest::Approx(fit.m_star).epsilon(1e-5));
    }
}

TEST_CASE("kquant: deterministic") {
    std::mt19937 rng(404);
    const auto w = random_block(rng, 32);
    QuantConfig cfg;
    const auto a = kquant_quantize_block(w, cfg);
    const auto b = kquant_quantize_block(w, cfg);
    CHECK(a.q == b.q);
    CHECK(a.scale == b.scale);
    CHECK(a.offset == b.offset);
}

TEST_CASE("scale equivariance under dyadic factors") {
    std::mt19937 rng(55);
    QuantConfig  cfg;
    for (float c : {0.25f, 0.5f, 2.0f, 8.0f}) {
        for (int trial = 0; trial < 20; ++trial) {
            const auto w = random_block(rng, 32);
            std::vector<float> cw(w.size());
            for (size_t j = 0; j < w.size(); ++j) {
                cw[j] = c * w[j];
            }
            for (auto scheme : {Scheme::rtn, Scheme::kquant}) {
                cfg.scheme    = scheme;
                const auto b1 = scheme == Scheme::rtn ? rtn_quantize_block(w, cfg.bits)
                                                      : kquant_quantize_block(w, cfg);
                const auto b2 = scheme == Scheme::rtn ? rtn_quantize_block(cw, cfg.bits)
                                                      : kquant_quantize_block(cw, cfg);
                CHECK(b1.q == b2.q);
                CHECK(b2.scale == doctest::Approx(c * b1.scale).epsilon(1e-6));
                CHECK(b2.offset == doctest::Approx(c * b1.offset).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("tensor quantization partitions blocks and preserves shape") {
    std::mt19937 rng(8);
    QuantConfig  cfg;

    TensorF32 t64;
    t64.name  = "t64";
    t64.shape = {8, 8};
    t64.data  = random_block(rng, 64);
    const auto q64 = quantize_tensor(t64, cfg);
    CHECK(q64.block_count() == 2);

    TensorF32 t40;
    t40.name  = "t40";
    t40.shape = {40};
    t40.data  = random_block(rng, 40);
    const auto q40 = quantize_tensor(t40, cfg);
    CHECK(q40.block_count() == 2);
    CHECK(q40.block_len(0) == 32);
    CHECK(q40.block_len(1) == 8);

    // the short block is quantized with its own statistics
    const auto head = kquant_quantize_block(std::span(t40.data).subspan(0, 32), cfg);
    const auto tail = kquant_quantize_block(std::span(t40.data).subspan(32, 8), cfg);
    const auto deq  = dequantize_tensor(q40);
    for (size_t j = 0; j < 32; ++j) {
        CHECK(deq.data[j] == head.scale * head.q[j] + head.offset);
    }
    for (size_t j = 0; j < 8; ++j) {
        CHECK(deq.data[32 + j] == tail.scale * tail.q[j] + tail.offset);
    }

    // partition completeness: every element reconstructed, none skipped
    CHECK(deq.shape == t40.shape);
    CHECK(deq.data.size() == 40);
}

TEST_CASE("dequantize is pure and exact on constant tensors") {
    TensorF32 t;
    t.name  = "const";
    t.shape = {48};
    t.data.assign(48, 0.7f);
    QuantConfig cfg;
    const auto qt = quantize_tensor(t, cfg);
    const auto a  = dequantize_tensor(qt);
    const auto b  = dequantize_tensor(qt);
    CHECK(a == b);      // deterministic
    CHECK(a.data == t.data); // s = 0 path reconstructs exactly
}

TEST_CASE("int8 round-trip error bounded by the max block scale") {
    std::mt19937 rng(62);
    QuantConfig  cfg;
    cfg.bits = 8;
    TensorF32 t;
    t.name  = "m";
    t.shape = {16, 16};
    t.data  = random_block(rng, 256);
    const auto qt  = quantize_tensor(t, cfg);
    const auto deq = dequantize_tensor(qt);

    float max_scale = 0.0f;
    std::vector<uint8_t> codes(32);
    for (int64_t b = 0; b < qt.block_count(); ++b) {
        float s = 0.0f, m = 0.0f;
        unpack_block(qt, b, s, m, codes.data());
        max_scale = std::max(max_scale, std::abs(s));
    }
    for (size_t j = 0; j < t.data.size(); ++j) {
        CHECK(std::abs(deq.data[j] - t.data[j]) <= max_scale + 1e-30f);
    }
}

TEST_CASE("int8 kquant round-trip beats int4 kquant per block") {
    std::mt19937 rng(91);
    QuantConfig  c4, c8;
    c8.bits = 8;
    for (int trial = 0; trial < 300; ++trial) {
        const auto w  = random_block(rng, 32);
        const auto r4 = kquant_quantize_block_detailed(w, c4);
        const auto r8 = kquant_quantize_block_detailed(w, c8);
        CHECK(r8.fit.weighted_error <= r4.fit.weighted_error * (1.0 + 1e-12) + 1e-300);
    }
}

TEST_CASE("glob matching and mixed-precision planning") {
    CHECK(glob_match("*attn.qkv*", "enc.3.attn.qkv.w"));
    CHECK(glob_match("enc.?.ff1.w", "enc.3.ff1.w"));
    CHECK_FALSE(glob_match("enc.?.ff1.w", "enc.31.ff1.w"));
    CHECK(glob_match("*", "anything"));
    CHECK_FALSE(glob_match("enc.*", "dec.embed"));

    MixedPolicy policy;
    policy.rules.push_back({"*attn.qkv*", 8});
    policy.default_bits = 4;
    const std::vector<std::string> names{"enc.3.attn.qkv.w", "enc.3.ff1.w"};
    auto plan = plan_mixed_precision(names, policy);
    CHECK(plan["enc.3.attn.qkv.w"] == 8);
    CHECK(plan["enc.3.ff1.w"] == 4);

    // no rules: default everywhere
    MixedPolicy empty;
    empty.default_bits = 4;
    plan = plan_mixed_precision(names, empty);
    CHECK(plan["enc.3.attn.qkv.w"] == 4);

    // paper-style policy: attention projections and boundary layers stay int8
    const auto paper = parse_policy("# int4-mixed\n"
                                    "enc.*.attn.*.w 8\n"
                                    "enc.0.* 8\n"
                                    "enc.3.* 8\n"
                                    "default 4\n");
    CHECK(paper.default_bits == 4);
    const std::vector<std::string> toy{"enc.0.ff1.w", "enc.1.attn.q.w", "enc.1.ff1.w",
                                       "enc.2.conv.w", "enc.3.ff2.w"};
    plan = plan_mixed_precision(toy, paper);
    CHECK(plan["enc.0.ff1.w"] == 8);
    CHECK(plan["enc.1.attn.q.w"] == 8);
    CHECK(plan["enc.1.ff1.w"] == 4);
    CHECK(plan["enc.2.conv.w"] == 4);
    CHECK(plan["enc.3.ff2.w"] == 8);

    CHECK_THROWS_AS(parse_policy("enc.* 5\n"), error);
    CHECK_THROWS_AS(parse_policy("enc.*\n"), error);
}

TEST_CASE("quantize_model: scope, sizes and metadata") {
    std::mt19937 rng(3);
    ModelContainer c;
    for (const char * name : {"enc.0.ff1.w", "enc.1.ff1.w", "dec.embed"}) {
        TensorF32 t;
        t.name  = name;
        t.shape = {4, 32};
        t.data  = random_block(rng, 128);
        c.tensors.emplace_back(std::move(t));
    }

    QuantConfig cfg; // int4 kquant
    MixedPolicy pol;
    pol.default_bits = 4;

    SUBCASE("empty scope leaves the container unchanged") {
        const auto out = quantize_model(c, cfg, pol, [](const std::string &) { return false; });
        CHECK(out.tensors == c.tensors);
    }

    SUBCASE("encoder scope quantizes at the 24/128 ratio") {
        const auto out = quantize_model(c, cfg, pol, [](const std::string & n) {
            return glob_match("enc.*", n);
        });
        const auto * q = out.find("enc.0.ff1.w");
        REQUIRE(q != nullptr);
        REQUIRE(std::holds_alternative<QuantizedTensor>(*q));
        CHECK(tensor_payload_bytes(*q) * 128 == 24 * 4 * 128); // 24 bytes per 32-value block
        const auto * f = out.find("dec.embed");
        REQUIRE(f != nullptr);
        CHECK(std::holds_alternative<TensorF32>(*f));
        CHECK(out.metadata.at("quant.scheme") == "kquant");
        CHECK(out.metadata.at("quant.bits_histogram") == "4:2,8:0");
    }

    SUBCASE("mixed policy bits match the plan") {
        MixedPolicy mixed;
        mixed.rules.push_back({"enc.0.*", 8});
        mixed.default_bits = 4;
        const auto out = quantize_model(c, cfg, mixed, [](const std::string & n) {
            return glob_match("enc.*", n);
        });
        CHECK(std::get<QuantizedTensor>(*out.find("enc.0.ff1.w")).bits == 8);
        CHECK(std::get<QuantizedTensor>(*out.find("enc.1.ff1.w")).bits == 4);
        CHECK(out.metadata.at("quant.bits_histogram") == "4:1,8:1");
    }
}

TEST_SUITE_END();
