#include "estm.h"

#include "evalkit.hpp"
#include "qkernels.hpp"
#include "quantcore.hpp"
#include "tensorstore.hpp"
#include "transducer.hpp"
#include "wav.hpp"

#include <cstring>
#include <memory>
#include <string>

namespace {

thread_local std::string g_last_error = "no error";

estm_status to_status(const estm::error & e) {
    switch (e.code()) {
        case estm::errc::invalid_arg: return ESTM_ERR_INVALID_ARG;
        case estm::errc::io:          return ESTM_ERR_IO;
        case estm::errc::format:      return ESTM_ERR_FORMAT;
        case estm::errc::shape:       return ESTM_ERR_SHAPE;
        case estm::errc::runtime:     return ESTM_ERR_RUNTIME;
    }
    return ESTM_ERR_RUNTIME;
}

template <typename Fn>
estm_status guarded(Fn && fn) {
    try {
        fn();
        return ESTM_OK;
    } catch (const estm::error & e) {
        g_last_error = e.what();
        return to_status(e);
    } catch (const std::exception & e) {
        g_last_error = e.what();
        return ESTM_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return ESTM_ERR_RUNTIME;
    }
}

estm_status bad_arg(const char * msg) {
    g_last_error = msg;
    return ESTM_ERR_INVALID_ARG;
}

estm_status copy_string(const std::string & s, char * buf, size_t cap, size_t * len) {
    if (len) {
        *len = s.size();
    }
    if (buf && cap > 0) {
        const size_t n = std::min(cap - 1, s.size());
        std::memcpy(buf, s.data(), n);
        buf[n] = '\0';
    }
    return ESTM_OK;
}

} // namespace

struct estm_container {
    estm::ModelContainer c;
};

struct estm_policy {
    estm::quant::MixedPolicy p;
};

struct estm_session {
    std::shared_ptr<const estm::tx::Model> model;
    std::unique_ptr<estm::tx::Session>     session;
};

extern "C" {

const char * estm_version(void) {
    return "0.1.0";
}

const char * estm_last_error(void) {
    return g_last_error.c_str();
}

void estm_set_threads(int32_t n) {
    estm::kernels::set_worker_count(n);
}

int32_t estm_get_threads(void) {
    return estm::kernels::worker_count();
}

estm_status estm_container_read(const char * path, estm_container ** out) {
    if (!path || !out) {
        return bad_arg("estm_container_read: NULL argument");
    }
    return guarded([&] {
        auto h = std::make_unique<estm_container>();
        h->c   = estm::read_container(path);
        *out   = h.release();
    });
}

estm_status estm_container_write(const estm_container * c, const char * path) {
    if (!c || !path) {
        return bad_arg("estm_container_write: NULL argument");
    }
    return guarded([&] { estm::write_container(c->c, path); });
}

void estm_container_free(estm_container * c) {
    delete c;
}

estm_status estm_container_payload_bytes(const estm_container * c, uint64_t * out) {
    if (!c || !out) {
        return bad_arg("estm_container_payload_bytes: NULL argument");
    }
    return guarded([&] { *out = static_cast<uint64_t>(estm::container_size_bytes(c->c)); });
}

estm_status estm_container_tensor_count(const estm_container * c, int64_t * out) {
    if (!c || !out) {
        return bad_arg("estm_container_tensor_count: NULL argument");
    }
    *out = static_cast<int64_t>(c->c.tensors.size());
    return ESTM_OK;
}

estm_status estm_container_metadata(const estm_container * c, const char * key, char * buf,
                                    size_t cap, size_t * len) {
    if (!c || !key) {
        return bad_arg("estm_container_metadata: NULL argument");
    }
    const auto it = c->c.metadata.find(key);
    if (it == c->c.metadata.end()) {
        g_last_error = std::string("metadata key not found: ") + key;
        return ESTM_ERR_FORMAT;
    }
    return copy_string(it->second, buf, cap, len);
}

estm_status estm_container_tensor_info(const estm_container * c, int64_t index, char * name_buf,
                                       size_t name_cap, int32_t * bits, int64_t * payload_bytes) {
    if (!c) {
        return bad_arg("estm_container_tensor_info: NULL container");
    }
    if (index < 0 || index >= static_cast<int64_t>(c->c.tensors.size())) {
        return bad_arg("estm_container_tensor_info: index out of range");
    }
    const estm::Tensor & t = c->c.tensors[static_cast<size_t>(index)];
    if (name_buf && name_cap > 0) {
        copy_string(estm::tensor_name(t), name_buf, name_cap, nullptr);
    }
    if (bits) {
        const auto * q = std::get_if<estm::QuantizedTensor>(&t);
        *bits          = q ? q->bits : 0;
    }
    if (payload_bytes) {
        *payload_bytes = estm::tensor_payload_bytes(t);
    }
    return ESTM_OK;
}

estm_status estm_toy_model_create(const estm_toy_spec * spec, uint64_t seed, float blank_bias,
                                  estm_container ** out) {
    if (!spec || !out) {
        return bad_arg("estm_toy_model_create: NULL argument");
    }
    return guarded([&] {
        estm::tx::ToyModelSpec s;
        s.n_layers    = spec->n_layers;
        s.d_model     = spec->d_model;
        s.n_heads     = spec->n_heads;
        s.conv_kernel = spec->conv_kernel;
        s.vocab_size  = spec->vocab_size;
        s.d_dec       = spec->d_dec;
        auto h = std::make_unique<estm_container>();
        h->c   = estm::tx::make_toy_container(s, seed, blank_bias);
        *out   = h.release();
    });
}

estm_status estm_policy_parse(const char * text, estm_policy ** out) {
    if (!text || !out) {
        return bad_arg("estm_policy_parse: NULL argument");
    }
    return guarded([&] {
        auto h = std::make_unique<estm_policy>();
        h->p   = estm::quant::parse_policy(text);
        *out   = h.release();
    });
}

void estm_policy_free(estm_policy * p) {
    delete p;
}

estm_status estm_quantize_model(const estm_container * in, const estm_quant_options * opts,
                                const estm_policy * policy, estm_container ** out) {
    if (!in || !opts || !out) {
        return bad_arg("estm_quantize_model: NULL argument");
    }
    return guarded([&] {
        estm::quant::QuantConfig cfg;
        cfg.bits   = opts->bits;
        cfg.scheme = opts->scheme == ESTM_QUANT_RTN ? estm::quant::Scheme::rtn
                                                    : estm::quant::Scheme::kquant;
        if (opts->block_size > 0) {
            cfg.block_size = opts->block_size;
        }
        if (opts->candidate_count > 0) {
            cfg.candidate_count = opts->candidate_count;
        }
        if (opts->span_lo > 0.0f) {
            cfg.span_lo = opts->span_lo;
        }
        if (opts->span_hi > 0.0f) {
            cfg.span_hi = opts->span_hi;
        }
        const std::string scope = opts->scope_glob ? opts->scope_glob : "enc.*.w";

        estm::quant::MixedPolicy pol;
        pol.default_bits = cfg.bits;
        if (policy) {
            pol = policy->p;
        }
        auto pred = [&](const std::string & name) {
            return scope != "none" && estm::quant::glob_match(scope, name);
        };
        auto h = std::make_unique<estm_container>();
        h->c   = estm::quant::quantize_model(in->c, cfg, pol, pred);
        *out   = h.release();
    });
}

estm_status estm_stream_config_parse(const char * text, estm_stream_config * out) {
    if (!text || !out) {
        return bad_arg("estm_stream_config_parse: NULL argument");
    }
    return guarded([&] {
        const auto cfg    = estm::tx::StreamingConfig::parse(text);
        out->chunk_size   = cfg.chunk_size;
        out->left_context = cfg.left_context;
        out->shift_size   = cfg.shift_size;
    });
}

estm_status estm_stream_config_derive(const estm_stream_config * cfg, double * delay_s,
                                      double * history_s, int32_t * frames_per_chunk) {
    if (!cfg) {
        return bad_arg("estm_stream_config_derive: NULL argument");
    }
    return guarded([&] {
        estm::tx::StreamingConfig c{cfg->chunk_size, cfg->left_context, cfg->shift_size};
        c.validate();
        if (delay_s) {
            *delay_s = c.delay_s();
        }
        if (history_s) {
            *history_s = c.history_window_s();
        }
        if (frames_per_chunk) {
            *frames_per_chunk = c.frames_per_chunk();
        }
    });
}

estm_status estm_session_create(const estm_container * model, const estm_stream_config * cfg,
                                const estm_session_options * opts, estm_session ** out) {
    if (!model || !cfg || !out) {
        return bad_arg("estm_session_create: NULL argument");
    }
    return guarded([&] {
        estm::tx::StreamingConfig c{cfg->chunk_size, cfg->left_context, cfg->shift_size};
        c.validate();
        estm::tx::SessionOptions so;
        if (opts) {
            so.integer_matmul       = opts->use_integer_matmul != 0;
            so.max_symbols_per_step = opts->max_symbols_per_step;
        }
        auto h     = std::make_unique<estm_session>();
        h->model   = std::make_shared<const estm::tx::Model>(model->c);
        h->session = std::make_unique<estm::tx::Session>(h->model, c, so);
        *out       = h.release();
    });
}

void estm_session_free(estm_session * s) {
    delete s;
}

estm_status estm_session_push(estm_session * s, const float * samples, int64_t count) {
    if (!s || (!samples && count > 0) || count < 0) {
        return bad_arg("estm_session_push: bad arguments");
    }
    return guarded([&] { s->session->push_audio({samples, static_cast<size_t>(count)}); });
}

estm_status estm_session_finish(estm_session * s) {
    if (!s) {
        return bad_arg("estm_session_finish: NULL session");
    }
    return guarded([&] { s->session->finish(); });
}

estm_status estm_session_reset(estm_session * s) {
    if (!s) {
        return bad_arg("estm_session_reset: NULL session");
    }
    return guarded([&] { s->session->reset(); });
}

estm_status estm_session_token_count(const estm_session * s, int64_t * out) {
    if (!s || !out) {
        return bad_arg("estm_session_token_count: NULL argument");
    }
    *out = static_cast<int64_t>(s->session->transcript().size());
    return ESTM_OK;
}

estm_status estm_session_tokens(const estm_session * s, int32_t * buf, int64_t cap) {
    if (!s || (!buf && cap > 0)) {
        return bad_arg("estm_session_tokens: NULL argument");
    }
    const auto &  toks = s->session->transcript();
    const int64_t n    = std::min<int64_t>(cap, static_cast<int64_t>(toks.size()));
    for (int64_t i = 0; i < n; ++i) {
        buf[i] = toks[static_cast<size_t>(i)];
    }
    return ESTM_OK;
}

estm_status estm_session_text(const estm_session * s, char * buf, size_t cap, size_t * len) {
    if (!s) {
        return bad_arg("estm_session_text: NULL session");
    }
    return copy_string(s->session->transcript_text(), buf, cap, len);
}

estm_status estm_session_chunk_count(const estm_session * s, int64_t * out) {
    if (!s || !out) {
        return bad_arg("estm_session_chunk_count: NULL argument");
    }
    *out = s->session->chunks_processed();
    return ESTM_OK;
}

estm_status estm_session_chunk_seconds(const estm_session * s, double * buf, int64_t cap) {
    if (!s || (!buf && cap > 0)) {
        return bad_arg("estm_session_chunk_seconds: NULL argument");
    }
    const auto &  secs = s->session->chunk_seconds();
    const int64_t n    = std::min<int64_t>(cap, static_cast<int64_t>(secs.size()));
    for (int64_t i = 0; i < n; ++i) {
        buf[i] = secs[static_cast<size_t>(i)];
    }
    return ESTM_OK;
}

estm_status estm_session_audio_seconds(const estm_session * s, double * out) {
    if (!s || !out) {
        return bad_arg("estm_session_audio_seconds: NULL argument");
    }
    *out = s->session->audio_seconds();
    return ESTM_OK;
}

estm_status estm_session_chunk_audio_seconds(const estm_session * s, double * out) {
    if (!s || !out) {
        return bad_arg("estm_session_chunk_audio_seconds: NULL argument");
    }
    *out = s->session->chunk_audio_seconds();
    return ESTM_OK;
}

estm_status estm_wav_read(const char * path, float ** samples, int64_t * count,
                          int32_t * sample_rate) {
    if (!path || !samples || !count) {
        return bad_arg("estm_wav_read: NULL argument");
    }
    return guarded([&] {
        auto audio = estm::wav::read_wav(path);
        auto * buf = static_cast<float *>(::malloc(audio.samples.size() * sizeof(float)));
        if (!buf) {
            estm::fail(estm::errc::runtime, "out of memory");
        }
        std::memcpy(buf, audio.samples.data(), audio.samples.size() * sizeof(float));
        *samples = buf;
        *count   = static_cast<int64_t>(audio.samples.size());
        if (sample_rate) {
            *sample_rate = audio.sample_rate;
        }
    });
}

estm_status estm_raw_f32_read(const char * path, float ** samples, int64_t * count) {
    if (!path || !samples || !count) {
        return bad_arg("estm_raw_f32_read: NULL argument");
    }
    return guarded([&] {
        auto data  = estm::wav::read_raw_f32(path);
        auto * buf = static_cast<float *>(::malloc(data.size() * sizeof(float)));
        if (!buf) {
            estm::fail(estm::errc::runtime, "out of memory");
        }
        std::memcpy(buf, data.data(), data.size() * sizeof(float));
        *samples = buf;
        *count   = static_cast<int64_t>(data.size());
    });
}

estm_status estm_wav_write(const char * path, const float * samples, int64_t count,
                           int32_t sample_rate) {
    if (!path || (!samples && count > 0) || count < 0) {
        return bad_arg("estm_wav_write: bad arguments");
    }
    return guarded([&] {
        estm::wav::write_wav(path, {samples, static_cast<size_t>(count)}, sample_rate);
    });
}

void estm_buffer_free(float * buf) {
    ::free(buf);
}

estm_status estm_wer(const char * ref_text, const char * hyp_text, estm_wer_breakdown * out) {
    if (!ref_text || !hyp_text || !out) {
        return bad_arg("estm_wer: NULL argument");
    }
    return guarded([&] {
        const auto ref = estm::evalkit::normalize_text(ref_text);
        const auto hyp = estm::evalkit::normalize_text(hyp_text);
        const auto b   = estm::evalkit::wer(ref, hyp);
        out->substitutions = b.substitutions;
        out->insertions    = b.insertions;
        out->deletions     = b.deletions;
        out->ref_words     = b.ref_words;
        out->wer           = b.wer();
    });
}

estm_status estm_rtfx(double audio_s, double processing_s, double * out) {
    if (!out) {
        return bad_arg("estm_rtfx: NULL out");
    }
    return guarded([&] { *out = estm::evalkit::rtfx(audio_s, processing_s); });
}

estm_status estm_bsf(double streaming_wer, double batch_wer, double * out) {
    if (!out) {
        return bad_arg("estm_bsf: NULL out");
    }
    return guarded([&] { *out = estm::evalkit::bsf(streaming_wer, batch_wer); });
}

estm_status estm_effective_latency(double delay_s, double rtfx, double * out) {
    if (!out) {
        return bad_arg("estm_effective_latency: NULL out");
    }
    return guarded([&] { *out = estm::evalkit::effective_latency(delay_s, rtfx); });
}

static estm::evalkit::EvalReport build_report(const estm_dataset_wer * rows, int32_t count,
                                              const estm_latency_metrics * latency,
                                              const double * batch_baseline,
                                              uint64_t model_size_bytes,
                                              const char * config_echo) {
    std::vector<std::pair<std::string, estm::evalkit::WerBreakdown>> ds;
    for (int32_t i = 0; i < count; ++i) {
        estm::evalkit::WerBreakdown b;
        b.substitutions = rows[i].wer.substitutions;
        b.insertions    = rows[i].wer.insertions;
        b.deletions     = rows[i].wer.deletions;
        b.ref_words     = rows[i].wer.ref_words;
        ds.emplace_back(rows[i].name ? rows[i].name : "", b);
    }
    estm::evalkit::LatencyMetrics lat;
    if (latency) {
        lat.rtfx_value          = latency->rtfx;
        lat.delay_s             = latency->delay_s;
        lat.effective_latency_s = latency->effective_latency_s;
    }
    auto report = estm::evalkit::aggregate_report(
        ds, lat, batch_baseline ? std::optional<double>(*batch_baseline) : std::nullopt);
    report.model_size_bytes = model_size_bytes;
    if (config_echo) {
        report.config_echo = config_echo;
    }
    return report;
}

estm_status estm_report_average(const estm_dataset_wer * rows, int32_t count, double * out) {
    if (!rows || count < 1 || !out) {
        return bad_arg("estm_report_average: bad arguments");
    }
    return guarded([&] { *out = build_report(rows, count, nullptr, nullptr, 0, nullptr).average_wer; });
}

estm_status estm_report_render(const estm_dataset_wer * rows, int32_t count,
                               const estm_latency_metrics * latency, const double * batch_baseline,
                               uint64_t model_size_bytes, const char * config_echo, int32_t as_csv,
                               char * buf, size_t cap, size_t * len) {
    if (!rows || count < 1) {
        return bad_arg("estm_report_render: bad arguments");
    }
    return guarded([&] {
        const auto report =
            build_report(rows, count, latency, batch_baseline, model_size_bytes, config_echo);
        const std::string text = as_csv ? estm::evalkit::report_plot_csv(report)
                                        : estm::evalkit::format_report(report);
        copy_string(text, buf, cap, len);
    });
}

} // extern "C"
