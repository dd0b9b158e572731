#include <doctest.h>

#include "qkernels.hpp"
#include "quantcore.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace estm;
using namespace estm::kernels;

namespace {

Matrix random_matrix(std::mt19937 & rng, int64_t rows, int64_t cols, float scale = 1.0f) {
    std::uniform_real_distribution<float> dist(-scale, scale);
    Matrix m = Matrix::zeros(rows, cols);
    for (auto & v : m.data) {
        v = dist(rng);
    }
    return m;
}

TensorF32 random_weight(std::mt19937 & rng, int64_t rows, int64_t cols, float scale = 1.0f) {
    TensorF32 t;
    t.name  = "w";
    t.shape = {rows, cols};
    const Matrix m = random_matrix(rng, rows, cols, scale);
    t.data         = m.data;
    return t;
}

double rel_err(const Matrix & got, const Matrix & want) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < got.data.size(); ++i) {
        const double d = static_cast<double>(got.data[i]) - want.data[i];
        num += d * d;
        den += static_cast<double>(want.data[i]) * want.data[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

} // namespace

TEST_SUITE_BEGIN("qkernels");

TEST_CASE("matmul_f32: identity, scalar, naive oracle") {
    std::mt19937 rng(1);

    TensorF32 eye;
    eye.name  = "I";
    eye.shape = {4, 4};
    eye.data.assign(16, 0.0f);
    for (int i = 0; i < 4; ++i) {
        eye.data[static_cast<size_t>(i * 4 + i)] = 1.0f;
    }
    const Matrix x = random_matrix(rng, 3, 4);
    CHECK(matmul_f32(x, eye) == x);

    Matrix one = Matrix::zeros(1, 1);
    one.data[0] = 2.0f;
    TensorF32 w1;
    w1.name  = "w1";
    w1.shape = {1, 1};
    w1.data  = {3.0f};
    CHECK(matmul_f32(one, w1).data[0] == 6.0f);

    // naive triple-loop oracle
    const Matrix    a   = random_matrix(rng, 7, 5);
    const TensorF32 b   = random_weight(rng, 5, 3);
    const Matrix    got = matmul_f32(a, b);
    for (int64_t i = 0; i < 7; ++i) {
        for (int64_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < 5; ++k) {
                acc += static_cast<double>(a.at(i, k)) * b.data[static_cast<size_t>(k * 3 + j)];
            }
            CHECK(got.at(i, j) == doctest::Approx(acc).epsilon(1e-6));
        }
    }

    TensorF32 bad = random_weight(rng, 6, 3);
    CHECK_THROWS_AS(matmul_f32(a, bad), error);
}

TEST_CASE("matmul_nbits: equals dequantize-then-multiply") {
    std::mt19937       rng(2);
    quant::QuantConfig cfg;
    std::uniform_int_distribution<int> dim(1, 48);
    for (int trial = 0; trial < 60; ++trial) {
        const int64_t r = dim(rng) % 8 + 1, k = dim(rng), c = dim(rng);
        cfg.bits   = (trial % 2 == 0) ? 4 : 8;
        cfg.scheme = (trial % 3 == 0) ? quant::Scheme::rtn : quant::Scheme::kquant;
        const Matrix    x = random_matrix(rng, r, k);
        const TensorF32 w = random_weight(rng, k, c);
        const auto      qw = quant::quantize_tensor(w, cfg);

        const Matrix got  = matmul_nbits(x, qw);
        const Matrix want = matmul_f32(x, quant::dequantize_tensor(qw));
        REQUIRE(got.rows == want.rows);
        REQUIRE(got.cols == want.cols);
        CHECK(rel_err(got, want) <= 1e-5);
    }
}

TEST_CASE("matmul_nbits: identity weights pass activations through") {
    TensorF32 w;
    w.name  = "eye";
    w.shape = {32, 32};
    w.data.assign(32 * 32, 0.0f);
    for (int i = 0; i < 32; ++i) {
        w.data[static_cast<size_t>(i * 32 + i)] = 1.0f;
    }
    quant::QuantConfig cfg;
    cfg.bits = 8;
    const auto qw = quant::quantize_tensor(w, cfg);

    std::mt19937 rng(3);
    const Matrix x   = random_matrix(rng, 4, 32);
    const Matrix got = matmul_nbits(x, qw);
    for (size_t i = 0; i < x.data.size(); ++i) {
        CHECK(got.data[i] == doctest::Approx(x.data[i]).epsilon(2e-2));
    }
}

TEST_CASE("matmul_nbits: empty batch") {
    std::mt19937       rng(4);
    quant::QuantConfig cfg;
    const auto qw = quant::quantize_tensor(random_weight(rng, 8, 8), cfg);
    Matrix x = Matrix::zeros(0, 8);
    const Matrix out = matmul_nbits(x, qw);
    CHECK(out.rows == 0);
    CHECK(out.cols == 8);
}

TEST_CASE("matmul_nbits: linear in activations") {
    std::mt19937       rng(5);
    quant::QuantConfig cfg;
    const auto qw = quant::quantize_tensor(random_weight(rng, 24, 16), cfg);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x1 = random_matrix(rng, 5, 24);
        const Matrix x2 = random_matrix(rng, 5, 24);
        const float  a  = 2.5f;
        Matrix mix = Matrix::zeros(5, 24);
        for (size_t i = 0; i < mix.data.size(); ++i) {
            mix.data[i] = a * x1.data[i] + x2.data[i];
        }
        const Matrix lhs = matmul_nbits(mix, qw);
        const Matrix y1  = matmul_nbits(x1, qw);
        const Matrix y2  = matmul_nbits(x2, qw);
        for (size_t i = 0; i < lhs.data.size(); ++i) {
            const double want = a * static_cast<double>(y1.data[i]) + y2.data[i];
            CHECK(lhs.data[i] == doctest::Approx(want).epsilon(1e-5));
        }
    }
}

TEST_CASE("matmul_integer: zero activations give zero output") {
    std::mt19937       rng(6);
    quant::QuantConfig cfg;
    const auto qw = quant::quantize_tensor(random_weight(rng, 16, 12), cfg);
    const Matrix x = Matrix::zeros(3, 16);
    for (float v : matmul_integer(x, qw).data) {
        CHECK(v == 0.0f);
    }
}

TEST_CASE("matmul_integer: noisier than matmul_nbits on single layers") {
    std::mt19937       rng(7);
    quant::QuantConfig cfg;
    std::vector<double> err_int, err_nbits;
    for (int trial = 0; trial < 40; ++trial) {
        const Matrix    x = random_matrix(rng, 8, 32);
        const TensorF32 w = random_weight(rng, 32, 32);
        const auto   qw  = quant::quantize_tensor(w, cfg);
        const Matrix ref = matmul_f32(x, w);
        err_nbits.push_back(rel_err(matmul_nbits(x, qw), ref));
        err_int.push_back(rel_err(matmul_integer(x, qw), ref));
    }
    std::sort(err_int.begin(), err_int.end());
    std::sort(err_nbits.begin(), err_nbits.end());
    const double med_int   = err_int[err_int.size() / 2];
    const double med_nbits = err_nbits[err_nbits.size() / 2];
    MESSAGE("single-layer median rel err: integer=", med_int, " nbits=", med_nbits);
    CHECK(med_int > med_nbits);
    CHECK(med_int < 0.2); // still small on well-conditioned inputs
}

TEST_CASE("worker count never changes kernel results") {
    std::mt19937       rng(9);
    quant::QuantConfig cfg;
    const Matrix    x = random_matrix(rng, 13, 40);
    const TensorF32 w = random_weight(rng, 40, 21);
    const auto      qw = quant::quantize_tensor(w, cfg);

    const Matrix f1 = matmul_f32(x, w);
    const Matrix n1 = matmul_nbits(x, qw);
    const Matrix i1 = matmul_integer(x, qw);
    for (int workers : {2, 3, 5}) {
        set_worker_count(workers);
        CHECK(worker_count() == workers);
        CHECK(matmul_f32(x, w) == f1);
        CHECK(matmul_nbits(x, qw) == n1);
        CHECK(matmul_integer(x, qw) == i1);
    }
    set_worker_count(1);
}

TEST_CASE("error accumulation through a 24-layer stack") {
    // The integer path requantizes activations at every layer; its end-to-end
    // error must exceed the fused-dequant path's on the same stack.
    std::mt19937       rng(8);
    quant::QuantConfig cfg;
    std::vector<double> err_int, err_nbits;
    const int layers = 24, width = 32;
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<TensorF32>       ws;
        std::vector<QuantizedTensor> qws;
        for (int l = 0; l < layers; ++l) {
            TensorF32 w = random_weight(rng, width, width,
                                        static_cast<float>(std::sqrt(3.0 / width)));
            qws.push_back(quant::quantize_tensor(w, cfg));
            ws.push_back(std::move(w));
        }
        const Matrix x0 = random_matrix(rng, 4, width);
        Matrix ref = x0, nb = x0, iq = x0;
        for (int l = 0; l < layers; ++l) {
            ref = matmul_f32(ref, ws[static_cast<size_t>(l)]);
            nb  = matmul_nbits(nb, qws[static_cast<size_t>(l)]);
            iq  = matmul_integer(iq, qws[static_cast<size_t>(l)]);
        }
        err_nbits.push_back(rel_err(nb, ref));
        err_int.push_back(rel_err(iq, ref));
    }
    std::sort(err_int.begin(), err_int.end());
    std::sort(err_nbits.begin(), err_nbits.end());
    MESSAGE("24-layer median rel err: integer=", err_int[err_int.size() / 2],
            " nbits=", err_nbits[err_nbits.size() / 2]);
    CHECK(err_int[err_int.size() / 2] > err_nbits[err_nbits.size() / 2]);
}

TEST_SUITE_END();
