/* estm — on-device streaming transducer runtime with block-quantized weights.
 *
 * C API over the core library: opaque handles, integer status codes, and a
 * thread-local last-error message. All functions returning estm_status set
 * the error message on failure; out-parameters are untouched unless ESTM_OK
 * is returned.
 */
#ifndef ESTM_H
#define ESTM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ESTM_API __declspec(dllexport)
#else
#define ESTM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum estm_status {
    ESTM_OK              = 0,
    ESTM_ERR_INVALID_ARG = 1,
    ESTM_ERR_IO          = 2,
    ESTM_ERR_FORMAT      = 3,
    ESTM_ERR_SHAPE       = 4,
    ESTM_ERR_RUNTIME     = 5,
} estm_status;

ESTM_API const char * estm_version(void);
/* Message for the most recent failure on this thread; never NULL. */
ESTM_API const char * estm_last_error(void);

/* Intra-op worker count for the compute kernels. Initialized from the
 * ESTM_THREADS environment variable (1 when unset). Results are bit-identical
 * for every worker count. */
ESTM_API void estm_set_threads(int32_t n);
ESTM_API int32_t estm_get_threads(void);

/* ── model containers ─────────────────────────────────────────────────── */

typedef struct estm_container estm_container;

ESTM_API estm_status estm_container_read(const char * path, estm_container ** out);
ESTM_API estm_status estm_container_write(const estm_container * c, const char * path);
ESTM_API void        estm_container_free(estm_container * c);

ESTM_API estm_status estm_container_payload_bytes(const estm_container * c, uint64_t * out);
ESTM_API estm_status estm_container_tensor_count(const estm_container * c, int64_t * out);
/* Copies the value for `key` into buf (NUL-terminated). `*len` receives the
 * full value length; truncates when buf is too small. Missing key: FORMAT. */
ESTM_API estm_status estm_container_metadata(const estm_container * c, const char * key,
                                             char * buf, size_t cap, size_t * len);
/* Per-tensor info: name (NUL-terminated, truncating), bit width (0 for f32)
 * and exact payload byte count. Any out-pointer may be NULL. */
ESTM_API estm_status estm_container_tensor_info(const estm_container * c, int64_t index,
                                                char * name_buf, size_t name_cap,
                                                int32_t * bits, int64_t * payload_bytes);

typedef struct estm_toy_spec {
    int32_t n_layers;
    int32_t d_model;
    int32_t n_heads;
    int32_t conv_kernel;
    int32_t vocab_size;
    int32_t d_dec;
} estm_toy_spec;

/* Seeded toy transducer weights; spec and vocabulary land in the metadata. */
ESTM_API estm_status estm_toy_model_create(const estm_toy_spec * spec, uint64_t seed,
                                           float blank_bias, estm_container ** out);

/* ── quantization ─────────────────────────────────────────────────────── */

typedef enum estm_quant_scheme {
    ESTM_QUANT_RTN    = 0,
    ESTM_QUANT_KQUANT = 1,
} estm_quant_scheme;

typedef struct estm_quant_options {
    int32_t bits;            /* 4 or 8 */
    int32_t block_size;      /* 0: default 32 */
    int32_t scheme;          /* estm_quant_scheme */
    int32_t candidate_count; /* 0: default 20 */
    float   span_lo;         /* 0: default 0.85 */
    float   span_hi;         /* 0: default 1.15 */
    /* Glob selecting which tensors to quantize; NULL: "enc.*.w".
     * "none" leaves the container untouched. */
    const char * scope_glob;
} estm_quant_options;

typedef struct estm_policy estm_policy;

/* Policy text: one "<pattern> <bits>" per line, '#' comments, optional
 * "default <bits>" line. First matching rule wins. */
ESTM_API estm_status estm_policy_parse(const char * text, estm_policy ** out);
ESTM_API void        estm_policy_free(estm_policy * p);

/* policy may be NULL: every scoped tensor gets opts->bits. */
ESTM_API estm_status estm_quantize_model(const estm_container * in,
                                         const estm_quant_options * opts,
                                         const estm_policy * policy, estm_container ** out);

/* ── streaming sessions ───────────────────────────────────────────────── */

typedef struct estm_stream_config {
    int32_t chunk_size;   /* 80 ms units */
    int32_t left_context; /* chunks of cached history */
    int32_t shift_size;   /* must equal chunk_size */
} estm_stream_config;

ESTM_API estm_status estm_stream_config_parse(const char * text, estm_stream_config * out);
ESTM_API estm_status estm_stream_config_derive(const estm_stream_config * cfg, double * delay_s,
                                               double * history_s, int32_t * frames_per_chunk);

typedef struct estm_session estm_session;

typedef struct estm_session_options {
    int32_t use_integer_matmul;  /* 0/1 */
    int32_t max_symbols_per_step; /* 0: model default */
} estm_session_options;

/* opts may be NULL for defaults. The session copies what it needs; the
 * container may be freed afterwards. */
ESTM_API estm_status estm_session_create(const estm_container * model,
                                         const estm_stream_config * cfg,
                                         const estm_session_options * opts,
                                         estm_session ** out);
ESTM_API void        estm_session_free(estm_session * s);

ESTM_API estm_status estm_session_push(estm_session * s, const float * samples, int64_t count);
/* Pads the tail chunk and flushes buffered frames. Idempotent. */
ESTM_API estm_status estm_session_finish(estm_session * s);
ESTM_API estm_status estm_session_reset(estm_session * s);

ESTM_API estm_status estm_session_token_count(const estm_session * s, int64_t * out);
ESTM_API estm_status estm_session_tokens(const estm_session * s, int32_t * buf, int64_t cap);
ESTM_API estm_status estm_session_text(const estm_session * s, char * buf, size_t cap,
                                       size_t * len);
ESTM_API estm_status estm_session_chunk_count(const estm_session * s, int64_t * out);
/* Wall-clock seconds per processed chunk. */
ESTM_API estm_status estm_session_chunk_seconds(const estm_session * s, double * buf, int64_t cap);
ESTM_API estm_status estm_session_audio_seconds(const estm_session * s, double * out);
ESTM_API estm_status estm_session_chunk_audio_seconds(const estm_session * s, double * out);

/* ── audio ────────────────────────────────────────────────────────────── */

/* 16-bit PCM mono WAV. Caller frees *samples with estm_buffer_free. */
ESTM_API estm_status estm_wav_read(const char * path, float ** samples, int64_t * count,
                                   int32_t * sample_rate);
/* Raw little-endian f32 sample file. */
ESTM_API estm_status estm_raw_f32_read(const char * path, float ** samples, int64_t * count);
ESTM_API estm_status estm_wav_write(const char * path, const float * samples, int64_t count,
                                    int32_t sample_rate);
ESTM_API void        estm_buffer_free(float * buf);

/* ── metrics ──────────────────────────────────────────────────────────── */

typedef struct estm_wer_breakdown {
    int64_t substitutions;
    int64_t insertions;
    int64_t deletions;
    int64_t ref_words;
    double  wer;
} estm_wer_breakdown;

/* Normalizes both texts (lowercase, punctuation stripped, intra-word
 * apostrophes kept) before alignment. */
ESTM_API estm_status estm_wer(const char * ref_text, const char * hyp_text,
                              estm_wer_breakdown * out);
ESTM_API estm_status estm_rtfx(double audio_s, double processing_s, double * out);
ESTM_API estm_status estm_bsf(double streaming_wer, double batch_wer, double * out);
ESTM_API estm_status estm_effective_latency(double delay_s, double rtfx, double * out);

typedef struct estm_dataset_wer {
    const char *       name;
    estm_wer_breakdown wer;
} estm_dataset_wer;

typedef struct estm_latency_metrics {
    double rtfx;
    double delay_s;
    double effective_latency_s;
} estm_latency_metrics;

/* Unweighted mean of the per-dataset WER fractions. */
ESTM_API estm_status estm_report_average(const estm_dataset_wer * rows, int32_t count,
                                         double * out);
/* Renders the evaluation report (as_csv = 0: text, 1: plot CSV). latency,
 * batch_baseline and config_echo may be NULL. Two-call buffer pattern. */
ESTM_API estm_status estm_report_render(const estm_dataset_wer * rows, int32_t count,
                                        const estm_latency_metrics * latency,
                                        const double * batch_baseline,
                                        uint64_t model_size_bytes, const char * config_echo,
                                        int32_t as_csv, char * buf, size_t cap, size_t * len);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ESTM_H */
