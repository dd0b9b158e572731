#include "melfront.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace estm::mel {

using kernels::Matrix;

void MelConfig::validate() const {
    if (sample_rate <= 0 || window <= 0 || hop <= 0 || n_mels < 1) {
        fail(errc::invalid_arg, "mel config: non-positive field");
    }
    if (hop > window) {
        fail(errc::invalid_arg, "mel config: hop must not exceed window");
    }
    if (!(log_floor > 0.0f)) {
        fail(errc::invalid_arg, "mel config: log floor must be positive");
    }
    if ((sample_rate * 80) % 1000 != 0 || samples_per_80ms() % hop != 0) {
        fail(errc::invalid_arg, "mel config: 80 ms must be an integer number of hops");
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
static double hz_to_mel(double hz) {
    constexpr double lin_scale = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0, min_log_mel = 15.0;
    const double log_step = std::log(6.4) / 27.0;
    if (hz < min_log_hz) {
        return hz / lin_scale;
    }
    return min_log_mel + std::log(hz / min_log_hz) / log_step;
}

static double mel_to_hz(double mel) {
    constexpr double lin_scale = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0, min_log_mel = 15.0;
    const double log_step = std::log(6.4) / 27.0;
    if (mel < min_log_mel) {
        return mel * lin_scale;
    }
    return min_log_hz * std::exp((mel - min_log_mel) * log_step);
}

// In-place iterative radix-2 FFT; n_fft is always a power of two here.
static void fft_radix2(std::vector<std::complex<float>> & a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(a[i], a[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<float> wl(static_cast<float>(std::cos(ang)), static_cast<float>(std::sin(ang)));
        for (size_t i = 0; i < n; i += len) {
            std::complex<float> w(1.0f, 0.0f);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j]           = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

MelExtractor::MelExtractor(MelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    n_fft_ = 1;
    while (n_fft_ < cfg_.window) {
        n_fft_ <<= 1;
    }

    hann_.resize(static_cast<size_t>(cfg_.window));
    for (int i = 0; i < cfg_.window; ++i) {
        hann_[static_cast<size_t>(i)] = 0.5f - 0.5f * static_cast<float>(std::cos(
            2.0 * std::numbers::pi * i / (cfg_.window - 1)));
    }

    // Triangular filterbank with Slaney area normalization.
    const int bins = n_fft_ / 2 + 1;
    const int nm   = cfg_.n_mels;
    std::vector<double> mel_f(static_cast<size_t>(nm) + 2);
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(cfg_.sample_rate / 2.0);
    for (int i = 0; i < nm + 2; ++i) {
        mel_f[static_cast<size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (nm + 1));
    }
    filters_.assign(static_cast<size_t>(nm) * bins, 0.0f);
    for (int m = 0; m < nm; ++m) {
        const double f0 = mel_f[static_cast<size_t>(m)];
        const double f1 = mel_f[static_cast<size_t>(m) + 1];
        const double f2 = mel_f[static_cast<size_t>(m) + 2];
        const double enorm = 2.0 / (f2 - f0);
        for (int b = 0; b < bins; ++b) {
            const double freq  = static_cast<double>(b) * cfg_.sample_rate / n_fft_;
            const double lower = (freq - f0) / (f1 - f0);
            const double upper = (f2 - freq) / (f2 - f1);
            const double v     = std::max(0.0, std::min(lower, upper));
            filters_[static_cast<size_t>(m) * bins + b] = static_cast<float>(v * enorm);
        }
    }
}

void MelExtractor::frame_to_mel(const float * frame, float * out) const {
    std::vector<std::complex<float>> buf(static_cast<size_t>(n_fft_), {0.0f, 0.0f});
    for (int i = 0; i < cfg_.window; ++i) {
        buf[static_cast<size_t>(i)] = frame[i] * hann_[static_cast<size_t>(i)];
    }
    fft_radix2(buf);

    const int bins = n_fft_ / 2 + 1;
    std::vector<float> power(static_cast<size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        power[static_cast<size_t>(b)] = std::norm(buf[static_cast<size_t>(b)]);
    }
    for (int m = 0; m < cfg_.n_mels; ++m) {
        const float * filt = filters_.data() + static_cast<size_t>(m) * bins;
        double acc = 0.0;
        for (int b = 0; b < bins; ++b) {
            acc += static_cast<double>(filt[b]) * power[static_cast<size_t>(b)];
        }
        out[m] = std::log(static_cast<float>(acc) + cfg_.log_floor);
    }
}

static void preemphasize(std::span<const float> in, float prev, float coeff,
                         std::vector<float> & out) {
    out.resize(in.size());
    for (size_t i = 0; i < in.size(); ++i) {
        out[i] = in[i] - coeff * prev;
        prev   = in[i];
    }
}

Matrix MelExtractor::batch(std::span<const float> audio) const {
    if (static_cast<int>(audio.size()) < cfg_.window) {
        fail(errc::invalid_arg, "audio shorter than one analysis window");
    }
    std::vector<float> pre;
    preemphasize(audio, 0.0f, cfg_.preemphasis, pre);

    const int64_t frames = 1 + (static_cast<int64_t>(audio.size()) - cfg_.window) / cfg_.hop;
    Matrix out = Matrix::zeros(frames, cfg_.n_mels);
    for (int64_t t = 0; t < frames; ++t) {
        frame_to_mel(pre.data() + t * cfg_.hop, out.data.data() + t * cfg_.n_mels);
    }
    return out;
}

Matrix MelExtractor::push_chunk(std::span<const float> chunk, MelRingState & state) const {
    if (chunk.empty() || chunk.size() % static_cast<size_t>(cfg_.hop) != 0) {
        fail(errc::invalid_arg, "chunk length must be a positive multiple of the hop");
    }

    std::vector<float> pre;
    preemphasize(chunk, state.preemph_mem, cfg_.preemphasis, pre);
    state.preemph_mem = chunk.back();
    state.carry.insert(state.carry.end(), pre.begin(), pre.end());

    const int64_t have = static_cast<int64_t>(state.carry.size());
    const int64_t frames = have >= cfg_.window ? 1 + (have - cfg_.window) / cfg_.hop : 0;
    Matrix out = Matrix::zeros(frames, cfg_.n_mels);
    for (int64_t t = 0; t < frames; ++t) {
        frame_to_mel(state.carry.data() + t * cfg_.hop, out.data.data() + t * cfg_.n_mels);
    }
    state.carry.erase(state.carry.begin(), state.carry.begin() + frames * cfg_.hop);
    state.frames_emitted += frames;
    return out;
}

} // namespace estm::mel
