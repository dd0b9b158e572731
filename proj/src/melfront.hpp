#pragma once

#include "error.hpp"
#include "qkernels.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Streaming log-mel feature extraction. A ring state carries the window
// overlap and the preemphasis memory across chunks so that hop-aligned
// streaming reproduces the batch features exactly.

namespace estm::mel {

struct MelConfig {
    int   sample_rate = 16000;
    int   window      = 400; // 25 ms
    int   hop         = 160; // 10 ms
    int   n_mels      = 80;
    float preemphasis = 0.97f;
    float log_floor   = 5.9604645e-8f; // 2^-24

    void validate() const;
    int  samples_per_80ms() const { return sample_rate * 80 / 1000; }
    int  frames_per_80ms() const { return samples_per_80ms() / hop; }
};

struct MelRingState {
    std::vector<float> carry;            // preemphasized samples not yet framed
    float              preemph_mem = 0.0f; // last raw input sample
    int64_t            frames_emitted = 0;
};

class MelExtractor {
  public:
    explicit MelExtractor(MelConfig cfg);

    const MelConfig & config() const { return cfg_; }

    // frames = 1 + floor((len - window) / hop); audio shorter than one window
    // is an error.
    kernels::Matrix batch(std::span<const float> audio) const;

    // Chunk length must be a positive multiple of hop. Emits every frame that
    // becomes complete; concatenated streaming output equals batch() on the
    // concatenated audio.
    kernels::Matrix push_chunk(std::span<const float> chunk, MelRingState & state) const;

  private:
    void frame_to_mel(const float * frame, float * out) const;

    MelConfig          cfg_;
    int                n_fft_ = 0;
    std::vector<float> hann_;
    std::vector<float> filters_; // [n_mels x (n_fft/2 + 1)]
};

} // namespace estm::mel
