#pragma once

#include "melfront.hpp"
#include "qkernels.hpp"
#include "tensorstore.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

// Desk-scale cache-aware streaming transducer: chunked-attention encoder with
// rolling conv/attention caches, an LSTM prediction network, a joiner, and
// the greedy decoding state machine. Linear layers dispatch on tensor dtype,
// so quantized encoders run through the fused n-bit kernel.

namespace estm::tx {

using kernels::Matrix;

// (chunk_size, left_context, shift_size) in units of 80 ms.
struct StreamingConfig {
    int chunk_size   = 7;
    int left_context = 10;
    int shift_size   = 7;

    void   validate() const; // chunk_size == shift_size, all positive
    double delay_s() const { return chunk_size * 0.08; }
    double history_window_s() const { return left_context * chunk_size * 0.08; }
    int    frames_per_chunk(int frames_per_unit = 8) const { return chunk_size * frames_per_unit; }

    static StreamingConfig parse(std::string_view text); // "c,l,s"
    std::string            str() const;
};

struct ToyModelSpec {
    int n_layers    = 4;
    int d_model     = 64;
    int n_heads     = 4;
    int conv_kernel = 9;
    int vocab_size  = 32;
    int d_dec       = 64;

    int blank_id() const { return vocab_size; }
    int d_ff() const { return 2 * d_model; }
    int d_joint() const { return d_dec; }
    int head_dim() const { return d_model / n_heads; }

    void validate() const;

    static ToyModelSpec from_metadata(const ModelContainer & c);
};

// Seeded toy weights; the generator id, seed and architecture are recorded in
// the container metadata so downstream comparisons are reproducible.
ModelContainer make_toy_container(const ToyModelSpec & spec, uint64_t seed,
                                  float blank_bias = 1.5f);

struct Linear {
    Tensor             w;
    std::vector<float> bias;
};

struct LayerWeights {
    std::vector<float> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    std::vector<float> conv_w; // [d_model x conv_kernel], dequantized on load
    std::vector<float> conv_b;
    Linear             attn_q, attn_k, attn_v, attn_o;
    Linear             ff1, ff2;
};

// Immutable bound weights; shared by any number of sessions.
class Model {
  public:
    explicit Model(const ModelContainer & c);
    Model(const ModelContainer & c, const ToyModelSpec & spec);

    const ToyModelSpec &             spec() const { return spec_; }
    const std::vector<std::string> & vocab() const { return vocab_; }
    int                              default_max_symbols() const { return max_symbols_; }

    Linear                    input_proj;
    std::vector<LayerWeights> layers;
    std::vector<float>        final_ln_g, final_ln_b;

    std::vector<float> dec_embed; // [vocab_size x d_dec]
    std::vector<float> lstm_wih, lstm_whh, lstm_bih, lstm_bhh;

    Linear join_enc, join_dec, join_out;

  private:
    void bind(const ModelContainer & c);

    ToyModelSpec             spec_;
    std::vector<std::string> vocab_;
    int                      max_symbols_ = 10;
};

// Rolling per-layer caches. Buffers are allocated once and updated in place;
// `valid` counts the populated history positions (shared by all layers).
struct EncoderCache {
    int     frames_per_chunk = 0;
    int     capacity         = 0; // left_context * frames_per_chunk
    int64_t valid            = 0;

    struct Layer {
        std::vector<float> conv_tail; // [(conv_kernel - 1) x d_model]
        std::vector<float> keys;      // [capacity x d_model]
        std::vector<float> vals;      // [capacity x d_model]
    };
    std::vector<Layer> layers;
};

EncoderCache make_encoder_cache(const ToyModelSpec & spec, const StreamingConfig & cfg);

struct DecoderState {
    std::vector<float> h, c;
    int                last_token = -1; // -1 until the first non-blank emission
};

// Decoder state plus the cached prediction-network output fed to the joiner.
// Before any emission the joiner sees a zero decoder feature.
struct DecodeRunner {
    DecoderState       state;
    std::vector<float> dec_out;

    static DecodeRunner fresh(const ToyModelSpec & spec);
};

// One encoder chunk: causal depthwise conv consuming the cached tail, then
// attention with keys/values = [cached left context || current chunk], then
// the frame-local feedforward. Caches are updated in place.
Matrix encoder_chunk(const Model & m, const Matrix & features, EncoderCache & cache,
                     bool integer_matmul = false);

// Offline equivalent: position p in chunk c attends to chunks [c - L, c].
// T must be a multiple of frames_per_chunk.
Matrix encoder_batch(const Model & m, const Matrix & features, const StreamingConfig & cfg,
                     bool integer_matmul = false);

// One LSTM step over the embedded token; the state is only committed by the
// caller on a non-blank emission.
std::pair<std::vector<float>, DecoderState> decoder_step(const Model & m, int token,
                                                         const DecoderState & state);

// Joint network: project both inputs to a shared width, add, relu, project to
// vocab_size + 1 logits (blank last).
std::vector<float> joiner_logits(const Model & m, std::span<const float> enc_frame,
                                 std::span<const float> dec_out);

// Greedy RNNT over encoder frames: blank advances the frame, a non-blank
// token re-queries the same frame, at most max_symbols non-blank emissions
// per frame.
std::vector<int> greedy_decode_frames(const Model & m, const Matrix & encoded,
                                      DecodeRunner & runner, int max_symbols);

struct SessionOptions {
    bool integer_matmul       = false;
    int  max_symbols_per_step = 0; // 0: take the model default
};

// All mutable per-stream state: mel ring, frame FIFO, encoder caches, decode
// runner, transcript, per-chunk timings.
class Session {
  public:
    Session(std::shared_ptr<const Model> model, StreamingConfig cfg, SessionOptions opt = {});

    void push_audio(std::span<const float> samples);
    void finish(); // pad the tail chunk and flush remaining frames
    void reset();

    const std::vector<int> &    transcript() const { return transcript_; }
    std::string                 transcript_text() const;
    const std::vector<double> & chunk_seconds() const { return chunk_seconds_; }
    double                      audio_seconds() const;
    double                      chunk_audio_seconds() const { return cfg_.delay_s(); }
    const StreamingConfig &     config() const { return cfg_; }
    const EncoderCache &        cache() const { return cache_; }
    const Model &               model() const { return *model_; }
    int64_t                     chunks_processed() const { return static_cast<int64_t>(chunk_seconds_.size()); }

  private:
    void process_pending_chunk(); // consumes chunk_samples_ from pending_
    void consume_frames(bool flush_padded);

    std::shared_ptr<const Model> model_;
    StreamingConfig              cfg_;
    SessionOptions               opt_;
    mel::MelExtractor            mel_;
    mel::MelRingState            mel_state_;
    int64_t                      chunk_samples_ = 0;
    std::vector<float>           pending_;
    std::vector<float>           frame_fifo_; // row-major [n x n_mels]
    EncoderCache                 cache_;
    DecodeRunner                 runner_;
    std::vector<int>             transcript_;
    std::vector<double>          chunk_seconds_;
    int64_t                      samples_seen_ = 0;
    bool                         finished_     = false;
};

// Full-pipeline convenience: push, finish, return the transcript.
std::vector<int> stream_audio(Session & session, std::span<const float> audio);

} // namespace estm::tx
