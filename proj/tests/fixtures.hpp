#pragma once

// Shared test helpers: random block/matrix generators and the hand-built
// decoder/joiner lookup model used by the greedy state-machine checks.

#include "transducer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace estm::testfix {

// Mixed-scale random blocks: uniform, gaussian-ish and heavy-tailed draws
// spread over five decades.
inline std::vector<float> random_block(std::mt19937 & rng, size_t n) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double scale = std::pow(10.0, -3.0 + 5.0 * u01(rng));
    const int    kind  = static_cast<int>(rng() % 3);
    std::vector<float> w(n);
    for (auto & v : w) {
        double x = 0.0;
        if (kind == 0) {
            x = 2.0 * u01(rng) - 1.0;
        } else if (kind == 1) {
            double s = 0.0;
            for (int i = 0; i < 6; ++i) {
                s += u01(rng);
            }
            x = (s - 3.0) / 1.5;
        } else {
            const double t = std::max(u01(rng), 1e-12);
            x = (u01(rng) < 0.5 ? -1.0 : 1.0) * (-std::log(t));
        }
        v = static_cast<float>(x * scale);
    }
    return w;
}

inline kernels::Matrix random_matrix(std::mt19937 & rng, int64_t rows, int64_t cols,
                                     float scale = 1.0f) {
    std::uniform_real_distribution<float> dist(-scale, scale);
    kernels::Matrix m = kernels::Matrix::zeros(rows, cols);
    for (auto & v : m.data) {
        v = dist(rng);
    }
    return m;
}

inline void set_tensor(ModelContainer & c, const std::string & name, std::vector<float> data) {
    for (auto & t : c.tensors) {
        if (tensor_name(t) == name) {
            std::get<TensorF32>(t).data = std::move(data);
            return;
        }
    }
    throw std::runtime_error("fixture: no tensor " + name);
}

inline ModelContainer zero_container(const tx::ToyModelSpec & spec) {
    ModelContainer c = tx::make_toy_container(spec, 0);
    for (auto & t : c.tensors) {
        auto & f = std::get<TensorF32>(t);
        std::fill(f.data.begin(), f.data.end(), 0.0f);
    }
    return c;
}

inline tx::ToyModelSpec lookup_spec() {
    tx::ToyModelSpec spec;
    spec.n_layers    = 1;
    spec.d_model     = 8;
    spec.n_heads     = 1;
    spec.conv_kernel = 3;
    spec.vocab_size  = 2;
    spec.d_dec       = 4;
    return spec;
}

// Decoder/joiner lookup model: tokens embed as strong one-hots, the LSTM
// g-gate copies them (i,o saturated on, f off), so dec_out is ~0.7616 times
// the token one-hot. The joiner maps frame one-hots to joint dims 0..2 and
// the decoder pattern to joint dim 3 around a +2 bias:
//   dim3 = 2.0 (no emission yet) | 3.523 (last=0) | 0.477 (last=1)
// join.out encodes per-frame rules over dim3; expected greedy output over
// frames e0,e1,e2 is [1, 0, 1].
inline ModelContainer lookup_fixture() {
    ModelContainer c = zero_container(lookup_spec());

    set_tensor(c, "dec.embed", {10, 0, 0, 0, /**/ 0, 10, 0, 0});
    std::vector<float> wih(4 * 16, 0.0f);
    for (int j = 0; j < 4; ++j) {
        wih[static_cast<size_t>(j * 16 + 8 + j)] = 1.0f; // g gate copies the embedding
    }
    set_tensor(c, "dec.lstm.wih", std::move(wih));
    std::vector<float> bih(16, 0.0f);
    for (int j = 0; j < 4; ++j) {
        bih[static_cast<size_t>(j)]      = 20.0f;  // i on
        bih[static_cast<size_t>(4 + j)]  = -20.0f; // f off
        bih[static_cast<size_t>(12 + j)] = 20.0f;  // o on
    }
    set_tensor(c, "dec.lstm.bih", std::move(bih));

    std::vector<float> jenc(8 * 4, 0.0f);
    for (int i = 0; i < 3; ++i) {
        jenc[static_cast<size_t>(i * 4 + i)] = 1.0f; // frame one-hot -> joint dims 0..2
    }
    set_tensor(c, "join.enc.w", std::move(jenc));
    set_tensor(c, "join.enc.b", {0, 0, 0, 2});
    std::vector<float> jdec(4 * 4, 0.0f);
    jdec[3]     = 2.0f;  // token 0 -> +2 on dim3
    jdec[4 + 3] = -2.0f; // token 1 -> -2 on dim3
    set_tensor(c, "join.dec.w", std::move(jdec));

    // rows = joint dims, cols = (tok0, tok1, blank)
    set_tensor(c, "join.out.w", {-100, 0,    10,  // frame 0 rules
                                 15,   -100, 5,   // frame 1 rules
                                 -100, -25,  5,   // frame 2 rules
                                 -10,  10,   0}); // dim3 slope
    set_tensor(c, "join.out.b", {0, 0, 0});
    return c;
}

inline kernels::Matrix frame_onehots(int n_frames, int d_model) {
    kernels::Matrix m = kernels::Matrix::zeros(n_frames, d_model);
    for (int i = 0; i < n_frames; ++i) {
        m.at(i, i) = 1.0f;
    }
    return m;
}

} // namespace estm::testfix
