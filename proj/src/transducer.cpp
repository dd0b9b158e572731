#include "transducer.hpp"

#include "quantcore.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

namespace estm::tx {

using json = nlohmann::json;

// ── streaming config ────────────────────────────────────────────────────────

void StreamingConfig::validate() const {
    if (chunk_size < 1 || shift_size < 1 || left_context < 0) {
        fail(errc::invalid_arg, "streaming config fields must be positive");
    }
    if (chunk_size != shift_size) {
        fail(errc::invalid_arg, "streaming config requires chunk_size == shift_size");
    }
}

StreamingConfig StreamingConfig::parse(std::string_view text) {
    int  vals[3] = {0, 0, 0};
    int  idx     = 0;
    long cur     = -1;
    for (char ch : text) {
        if (ch >= '0' && ch <= '9') {
            cur = (cur < 0 ? 0 : cur) * 10 + (ch - '0');
            if (cur > 1000000) {
                fail(errc::invalid_arg, "streaming config value out of range");
            }
        } else if (ch == ',') {
            if (cur < 0 || idx >= 2) {
                fail(errc::invalid_arg, "streaming config must be 'chunk,left,shift'");
            }
            vals[idx++] = static_cast<int>(cur);
            cur         = -1;
        } else {
            fail(errc::invalid_arg, "streaming config must be three comma-separated integers");
        }
    }
    if (cur < 0 || idx != 2) {
        fail(errc::invalid_arg, "streaming config must be 'chunk,left,shift'");
    }
    vals[2] = static_cast<int>(cur);
    StreamingConfig cfg{vals[0], vals[1], vals[2]};
    cfg.validate();
    return cfg;
}

std::string StreamingConfig::str() const {
    return std::to_string(chunk_size) + "," + std::to_string(left_context) + "," +
           std::to_string(shift_size);
}

// ── toy model spec ──────────────────────────────────────────────────────────

void ToyModelSpec::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || conv_kernel < 1 || vocab_size < 1 ||
        d_dec < 1) {
        fail(errc::invalid_arg, "model spec fields must be positive");
    }
    if (d_model % n_heads != 0) {
        fail(errc::invalid_arg, "d_model must be divisible by n_heads");
    }
}

static int meta_int(const ModelContainer & c, const std::string & key) {
    const auto it = c.metadata.find(key);
    if (it == c.metadata.end()) {
        fail(errc::format, "container metadata missing '" + key + "'");
    }
    try {
        return std::stoi(it->second);
    } catch (...) {
        fail(errc::format, "container metadata '" + key + "' is not an integer");
    }
}

ToyModelSpec ToyModelSpec::from_metadata(const ModelContainer & c) {
    ToyModelSpec s;
    s.n_layers    = meta_int(c, "arch.n_layers");
    s.d_model     = meta_int(c, "arch.d_model");
    s.n_heads     = meta_int(c, "arch.n_heads");
    s.conv_kernel = meta_int(c, "arch.conv_kernel");
    s.vocab_size  = meta_int(c, "arch.vocab_size");
    s.d_dec       = meta_int(c, "arch.d_dec");
    s.validate();
    return s;
}

// ── toy weight generation ───────────────────────────────────────────────────

static uint64_t splitmix64(uint64_t & s) {
    s += 0x9e3779b97f4a7c15ull;
    uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : s) {
        h = (h ^ static_cast<uint8_t>(ch)) * 0x100000001b3ull;
    }
    return h;
}

// Uniform in [-a, a] from explicit integer arithmetic; bit-stable across
// platforms for a given seed.
static std::vector<float> uniform_tensor(uint64_t seed, std::string_view name, size_t n, double a) {
    uint64_t s = seed ^ fnv1a(name);
    std::vector<float> v(n);
    for (size_t i = 0; i < n; ++i) {
        const double u = static_cast<double>(splitmix64(s) >> 40) / static_cast<double>(1 << 24);
        v[i] = static_cast<float>((2.0 * u - 1.0) * a);
    }
    return v;
}

static void add_f32(ModelContainer & c, const std::string & name, std::vector<int64_t> shape,
                    std::vector<float> data) {
    TensorF32 t;
    t.name  = name;
    t.shape = std::move(shape);
    t.data  = std::move(data);
    c.tensors.emplace_back(std::move(t));
}

static void add_matrix(ModelContainer & c, uint64_t seed, const std::string & name, int64_t rows,
                       int64_t cols) {
    const double a = std::sqrt(3.0 / static_cast<double>(rows));
    add_f32(c, name, {rows, cols},
            uniform_tensor(seed, name, static_cast<size_t>(rows * cols), a));
}

ModelContainer make_toy_container(const ToyModelSpec & spec, uint64_t seed, float blank_bias) {
    spec.validate();
    ModelContainer c;

    const int d = spec.d_model, dd = spec.d_dec;
    const mel::MelConfig mel_cfg; // recorded below; n_mels fixes the input width

    add_matrix(c, seed, "enc.input.w", mel_cfg.n_mels, d);
    add_f32(c, "enc.input.b", {d}, std::vector<float>(static_cast<size_t>(d), 0.0f));
    for (int l = 0; l < spec.n_layers; ++l) {
        const std::string base = "enc." + std::to_string(l) + ".";
        for (const char * ln : {"ln1", "ln2", "ln3"}) {
            add_f32(c, base + ln + ".g", {d}, std::vector<float>(static_cast<size_t>(d), 1.0f));
            add_f32(c, base + ln + ".b", {d}, std::vector<float>(static_cast<size_t>(d), 0.0f));
        }
        const double ca = std::sqrt(3.0 / spec.conv_kernel);
        add_f32(c, base + "conv.w", {d, spec.conv_kernel},
                uniform_tensor(seed, base + "conv.w",
                               static_cast<size_t>(d) * spec.conv_kernel, ca));
        add_f32(c, base + "conv.b", {d}, std::vector<float>(static_cast<size_t>(d), 0.0f));
        for (const char * p : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
            add_matrix(c, seed, base + p + ".w", d, d);
            add_f32(c, base + p + ".b", {d}, std::vector<float>(static_cast<size_t>(d), 0.0f));
        }
        add_matrix(c, seed, base + "ff1.w", d, spec.d_ff());
        add_f32(c, base + "ff1.b", {spec.d_ff()},
                std::vector<float>(static_cast<size_t>(spec.d_ff()), 0.0f));
        add_matrix(c, seed, base + "ff2.w", spec.d_ff(), d);
        add_f32(c, base + "ff2.b", {d}, std::vector<float>(static_cast<size_t>(d), 0.0f));
    }
    add_f32(c, "enc.final_ln.g", {d}, std::vector<float>(static_cast<size_t>(d), 1.0f));
    add_f32(c, "enc.final_ln.b", {d}, std::vector<float>(static_cast<size_t>(d), 0.0f));

    add_matrix(c, seed, "dec.embed", spec.vocab_size, dd);
    add_matrix(c, seed, "dec.lstm.wih", dd, 4 * dd);
    add_matrix(c, seed, "dec.lstm.whh", dd, 4 * dd);
    add_f32(c, "dec.lstm.bih", {4 * dd}, std::vector<float>(static_cast<size_t>(4 * dd), 0.0f));
    add_f32(c, "dec.lstm.bhh", {4 * dd}, std::vector<float>(static_cast<size_t>(4 * dd), 0.0f));

    add_matrix(c, seed, "join.enc.w", d, spec.d_joint());
    add_f32(c, "join.enc.b", {spec.d_joint()},
            std::vector<float>(static_cast<size_t>(spec.d_joint()), 0.0f));
    add_matrix(c, seed, "join.dec.w", dd, spec.d_joint());
    add_f32(c, "join.dec.b", {spec.d_joint()},
            std::vector<float>(static_cast<size_t>(spec.d_joint()), 0.0f));
    add_matrix(c, seed, "join.out.w", spec.d_joint(), spec.vocab_size + 1);
    std::vector<float> ob(static_cast<size_t>(spec.vocab_size) + 1, 0.0f);
    ob.back() = blank_bias; // blank prior keeps random-weight transcripts sparse
    add_f32(c, "join.out.b", {spec.vocab_size + 1}, std::move(ob));

    json vocab = json::array();
    for (int i = 0; i < spec.vocab_size; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "w%02d", i);
        vocab.push_back(std::string(buf));
    }

    c.metadata["arch.n_layers"]    = std::to_string(spec.n_layers);
    c.metadata["arch.d_model"]     = std::to_string(spec.d_model);
    c.metadata["arch.n_heads"]     = std::to_string(spec.n_heads);
    c.metadata["arch.conv_kernel"] = std::to_string(spec.conv_kernel);
    c.metadata["arch.vocab_size"]  = std::to_string(spec.vocab_size);
    c.metadata["arch.d_dec"]       = std::to_string(spec.d_dec);
    c.metadata["vocab"]            = vocab.dump();
    c.metadata["gen.seed"]         = std::to_string(seed);
    c.metadata["gen.rng"]          = "splitmix64-uniform";
    c.metadata["gen.blank_bias"]   = std::to_string(blank_bias);
    c.metadata["decode.max_symbols_per_step"] = "10";
    c.metadata["mel.sample_rate"]  = std::to_string(mel_cfg.sample_rate);
    c.metadata["mel.window"]       = std::to_string(mel_cfg.window);
    c.metadata["mel.hop"]          = std::to_string(mel_cfg.hop);
    c.metadata["mel.n_mels"]       = std::to_string(mel_cfg.n_mels);
    c.metadata["mel.preemphasis"]  = "0.97";
    c.metadata["mel.log_floor"]    = "2^-24";
    c.metadata["mel.dither"]       = "0";
    return c;
}

// ── model binding ───────────────────────────────────────────────────────────

static const Tensor & need_tensor(const ModelContainer & c, const std::string & name) {
    const Tensor * t = c.find(name);
    if (!t) {
        fail(errc::format, "container missing tensor '" + name + "'");
    }
    return *t;
}

static void check_shape(const Tensor & t, std::initializer_list<int64_t> want) {
    const auto & got = tensor_shape(t);
    if (!std::equal(got.begin(), got.end(), want.begin(), want.end())) {
        std::string msg = "tensor '" + tensor_name(t) + "' shape mismatch: got [";
        for (auto d : got) {
            msg += std::to_string(d) + " ";
        }
        msg += "]";
        fail(errc::shape, msg);
    }
}

static std::vector<float> need_f32(const ModelContainer & c, const std::string & name,
                                   std::initializer_list<int64_t> shape) {
    const Tensor & t = need_tensor(c, name);
    check_shape(t, shape);
    if (const auto * f = std::get_if<TensorF32>(&t)) {
        return f->data;
    }
    return quant::dequantize_tensor(std::get<QuantizedTensor>(t)).data;
}

static Linear need_linear(const ModelContainer & c, const std::string & base, int64_t in,
                          int64_t out) {
    Linear lin;
    const Tensor & w = need_tensor(c, base + ".w");
    check_shape(w, {in, out});
    lin.w    = w;
    lin.bias = need_f32(c, base + ".b", {out});
    return lin;
}

Model::Model(const ModelContainer & c) : Model(c, ToyModelSpec::from_metadata(c)) {}

Model::Model(const ModelContainer & c, const ToyModelSpec & spec) : spec_(spec) {
    spec_.validate();
    if (const auto it = c.metadata.find("decode.max_symbols_per_step"); it != c.metadata.end()) {
        max_symbols_ = std::max(1, std::stoi(it->second));
    }
    if (const auto it = c.metadata.find("vocab"); it != c.metadata.end()) {
        const json v = json::parse(it->second);
        for (const auto & tok : v) {
            vocab_.push_back(tok.get<std::string>());
        }
    }
    bind(c);
}

void Model::bind(const ModelContainer & c) {
    const int d = spec_.d_model, dd = spec_.d_dec, k = spec_.conv_kernel;
    const int n_mels = static_cast<int>(tensor_shape(need_tensor(c, "enc.input.w"))[0]);

    input_proj = need_linear(c, "enc.input", n_mels, d);
    layers.resize(static_cast<size_t>(spec_.n_layers));
    for (int l = 0; l < spec_.n_layers; ++l) {
        const std::string base = "enc." + std::to_string(l) + ".";
        LayerWeights &    lw   = layers[static_cast<size_t>(l)];
        lw.ln1_g  = need_f32(c, base + "ln1.g", {d});
        lw.ln1_b  = need_f32(c, base + "ln1.b", {d});
        lw.ln2_g  = need_f32(c, base + "ln2.g", {d});
        lw.ln2_b  = need_f32(c, base + "ln2.b", {d});
        lw.ln3_g  = need_f32(c, base + "ln3.g", {d});
        lw.ln3_b  = need_f32(c, base + "ln3.b", {d});
        lw.conv_w = need_f32(c, base + "conv.w", {d, k});
        lw.conv_b = need_f32(c, base + "conv.b", {d});
        lw.attn_q = need_linear(c, base + "attn.q", d, d);
        lw.attn_k = need_linear(c, base + "attn.k", d, d);
        lw.attn_v = need_linear(c, base + "attn.v", d, d);
        lw.attn_o = need_linear(c, base + "attn.o", d, d);
        lw.ff1    = need_linear(c, base + "ff1", d, spec_.d_ff());
        lw.ff2    = need_linear(c, base + "ff2", spec_.d_ff(), d);
    }
    final_ln_g = need_f32(c, "enc.final_ln.g", {d});
    final_ln_b = need_f32(c, "enc.final_ln.b", {d});

    dec_embed = need_f32(c, "dec.embed", {spec_.vocab_size, dd});
    lstm_wih  = need_f32(c, "dec.lstm.wih", {dd, 4 * dd});
    lstm_whh  = need_f32(c, "dec.lstm.whh", {dd, 4 * dd});
    lstm_bih  = need_f32(c, "dec.lstm.bih", {4 * dd});
    lstm_bhh  = need_f32(c, "dec.lstm.bhh", {4 * dd});

    join_enc = need_linear(c, "join.enc", d, spec_.d_joint());
    join_dec = need_linear(c, "join.dec", dd, spec_.d_joint());
    join_out = need_linear(c, "join.out", spec_.d_joint(), spec_.vocab_size + 1);
}

// ── shared math ─────────────────────────────────────────────────────────────

static Matrix linear_apply(const Linear & lin, const Matrix & x, bool integer_path) {
    Matrix y;
    if (const auto * f = std::get_if<TensorF32>(&lin.w)) {
        y = kernels::matmul_f32(x, *f);
    } else {
        const auto & q = std::get<QuantizedTensor>(lin.w);
        y = integer_path ? kernels::matmul_integer(x, q) : kernels::matmul_nbits(x, q);
    }
    for (int64_t i = 0; i < y.rows; ++i) {
        for (int64_t j = 0; j < y.cols; ++j) {
            y.at(i, j) += lin.bias[static_cast<size_t>(j)];
        }
    }
    return y;
}

static Matrix layer_norm_copy(const Matrix & x, std::span<const float> g,
                              std::span<const float> b) {
    constexpr double eps = 1e-5;
    Matrix out = Matrix::zeros(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
        const float * row = x.data.data() + i * x.cols;
        double mean = 0.0;
        for (int64_t j = 0; j < x.cols; ++j) {
            mean += row[j];
        }
        mean /= static_cast<double>(x.cols);
        double var = 0.0;
        for (int64_t j = 0; j < x.cols; ++j) {
            const double dvi = row[j] - mean;
            var += dvi * dvi;
        }
        var /= static_cast<double>(x.cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < x.cols; ++j) {
            out.at(i, j) = static_cast<float>((row[j] - mean) * inv * g[static_cast<size_t>(j)] +
                                              b[static_cast<size_t>(j)]);
        }
    }
    return out;
}

static float silu(float v) {
    return v / (1.0f + std::exp(-v));
}

// Causal depthwise conv over [history || u]; history shorter than
// conv_kernel - 1 is implicitly zero-padded on the left.
static Matrix causal_conv(const Matrix & u, std::span<const float> history, int64_t hist_rows,
                          const std::vector<float> & w, const std::vector<float> & b, int kernel) {
    const int64_t d = u.cols;
    Matrix out = Matrix::zeros(u.rows, d);
    for (int64_t t = 0; t < u.rows; ++t) {
        for (int64_t ch = 0; ch < d; ++ch) {
            double acc = 0.0;
            for (int j = 0; j < kernel; ++j) {
                const int64_t src = t - (kernel - 1) + j; // position in u; negative reads history
                float v = 0.0f;
                if (src >= 0) {
                    v = u.at(src, ch);
                } else if (src + hist_rows >= 0) {
                    v = history[static_cast<size_t>((src + hist_rows) * d + ch)];
                }
                acc += static_cast<double>(w[static_cast<size_t>(ch * kernel + j)]) * v;
            }
            out.at(t, ch) = static_cast<float>(acc + b[static_cast<size_t>(ch)]);
        }
    }
    return out;
}

// Scaled dot-product attention for queries [nq x d] over key/value rows
// [j0, j1); scores and the context sum run in ascending key order.
static void attend_range(const float * q, int64_t nq, const float * keys, const float * vals,
                         int64_t j0, int64_t j1, int n_heads, int d_model, float * out) {
    const int    dh    = d_model / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    kernels::parallel_rows(nq, [&](int64_t lo, int64_t hi) {
        std::vector<double> scores(static_cast<size_t>(j1 - j0));
        for (int64_t i = lo; i < hi; ++i) {
            for (int h = 0; h < n_heads; ++h) {
                const float * qi = q + i * d_model + h * dh;
                double mx = -1e300;
                for (int64_t j = j0; j < j1; ++j) {
                    const float * kj = keys + j * d_model + h * dh;
                    double dot = 0.0;
                    for (int t = 0; t < dh; ++t) {
                        dot += static_cast<double>(qi[t]) * kj[t];
                    }
                    const double sc = dot * scale;
                    scores[static_cast<size_t>(j - j0)] = sc;
                    mx = std::max(mx, sc);
                }
                double denom = 0.0;
                for (auto & sc : scores) {
                    sc = std::exp(sc - mx);
                    denom += sc;
                }
                for (int t = 0; t < dh; ++t) {
                    double acc = 0.0;
                    for (int64_t j = j0; j < j1; ++j) {
                        acc += scores[static_cast<size_t>(j - j0)] *
                               vals[j * d_model + h * dh + t];
                    }
                    out[i * d_model + h * dh + t] = static_cast<float>(acc / denom);
                }
            }
        }
    });
}

static void add_inplace(Matrix & x, const Matrix & y) {
    for (size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] += y.data[i];
    }
}

// Keep the newest rows: shift survivors left in place, then append.
static void roll_append(std::vector<float> & buf, int64_t cap, int64_t valid, const float * rows,
                        int64_t n, int64_t d) {
    if (cap == 0) {
        return;
    }
    if (n >= cap) {
        std::memcpy(buf.data(), rows + (n - cap) * d, static_cast<size_t>(cap * d) * 4);
        return;
    }
    const int64_t drop = std::max<int64_t>(0, valid + n - cap);
    if (drop > 0) {
        std::memmove(buf.data(), buf.data() + drop * d,
                     static_cast<size_t>((valid - drop) * d) * 4);
    }
    std::memcpy(buf.data() + (valid - drop) * d, rows, static_cast<size_t>(n * d) * 4);
}

EncoderCache make_encoder_cache(const ToyModelSpec & spec, const StreamingConfig & cfg) {
    cfg.validate();
    EncoderCache cache;
    cache.frames_per_chunk = cfg.frames_per_chunk();
    cache.capacity         = cfg.left_context * cache.frames_per_chunk;
    cache.valid            = 0;
    cache.layers.resize(static_cast<size_t>(spec.n_layers));
    for (auto & l : cache.layers) {
        l.conv_tail.assign(static_cast<size_t>((spec.conv_kernel - 1) * spec.d_model), 0.0f);
        l.keys.assign(static_cast<size_t>(cache.capacity * spec.d_model), 0.0f);
        l.vals.assign(static_cast<size_t>(cache.capacity * spec.d_model), 0.0f);
    }
    return cache;
}

Matrix encoder_chunk(const Model & m, const Matrix & features, EncoderCache & cache,
                     bool integer_matmul) {
    const ToyModelSpec & spec = m.spec();
    if (features.rows != cache.frames_per_chunk) {
        fail(errc::shape, "encoder chunk expects exactly " +
                              std::to_string(cache.frames_per_chunk) + " frames, got " +
                              std::to_string(features.rows));
    }
    const int64_t fpc = cache.frames_per_chunk;
    const int64_t d   = spec.d_model;
    const int     K   = spec.conv_kernel;

    Matrix x = linear_apply(m.input_proj, features, integer_matmul);
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const LayerWeights &  lw = m.layers[l];
        EncoderCache::Layer & cl = cache.layers[l];

        // conv sublayer
        Matrix u = layer_norm_copy(x, lw.ln1_g, lw.ln1_b);
        Matrix cv = causal_conv(u, cl.conv_tail, K - 1, lw.conv_w, lw.conv_b, K);
        for (auto & v : cv.data) {
            v = silu(v);
        }
        add_inplace(x, cv);
        if (K > 1) {
            // tail <- last K-1 rows of [tail || u]
            const int64_t take_u = std::min<int64_t>(K - 1, fpc);
            const int64_t keep   = (K - 1) - take_u;
            if (keep > 0) {
                std::memmove(cl.conv_tail.data(), cl.conv_tail.data() + take_u * d,
                             static_cast<size_t>(keep * d) * 4);
            }
            std::memcpy(cl.conv_tail.data() + keep * d, u.data.data() + (fpc - take_u) * d,
                        static_cast<size_t>(take_u * d) * 4);
        }

        // attention sublayer: keys/values are [cached history || current chunk]
        Matrix a_in = layer_norm_copy(x, lw.ln2_g, lw.ln2_b);
        Matrix q = linear_apply(lw.attn_q, a_in, integer_matmul);
        Matrix k = linear_apply(lw.attn_k, a_in, integer_matmul);
        Matrix v = linear_apply(lw.attn_v, a_in, integer_matmul);

        const int64_t total = cache.valid + fpc;
        std::vector<float> kc(static_cast<size_t>(total * d));
        std::vector<float> vc(static_cast<size_t>(total * d));
        std::memcpy(kc.data(), cl.keys.data(), static_cast<size_t>(cache.valid * d) * 4);
        std::memcpy(kc.data() + cache.valid * d, k.data.data(), static_cast<size_t>(fpc * d) * 4);
        std::memcpy(vc.data(), cl.vals.data(), static_cast<size_t>(cache.valid * d) * 4);
        std::memcpy(vc.data() + cache.valid * d, v.data.data(), static_cast<size_t>(fpc * d) * 4);

        Matrix ctx = Matrix::zeros(fpc, d);
        attend_range(q.data.data(), fpc, kc.data(), vc.data(), 0, total, spec.n_heads,
                     static_cast<int>(d), ctx.data.data());
        Matrix attn_out = linear_apply(lw.attn_o, ctx, integer_matmul);
        add_inplace(x, attn_out);

        roll_append(cl.keys, cache.capacity, cache.valid, k.data.data(), fpc, d);
        roll_append(cl.vals, cache.capacity, cache.valid, v.data.data(), fpc, d);

        // feedforward sublayer
        Matrix f_in = layer_norm_copy(x, lw.ln3_g, lw.ln3_b);
        Matrix h = linear_apply(lw.ff1, f_in, integer_matmul);
        for (auto & hv : h.data) {
            hv = std::max(hv, 0.0f);
        }
        Matrix f_out = linear_apply(lw.ff2, h, integer_matmul);
        add_inplace(x, f_out);
    }
    cache.valid = std::min<int64_t>(cache.valid + fpc, cache.capacity);
    return layer_norm_copy(x, m.final_ln_g, m.final_ln_b);
}

Matrix encoder_batch(const Model & m, const Matrix & features, const StreamingConfig & cfg,
                     bool integer_matmul) {
    cfg.validate();
    const ToyModelSpec & spec = m.spec();
    const int64_t fpc = cfg.frames_per_chunk();
    if (features.rows == 0 || features.rows % fpc != 0) {
        fail(errc::shape, "batch encoder input must be a positive multiple of frames_per_chunk");
    }
    const int64_t T = features.rows, d = spec.d_model;
    const int64_t n_chunks = T / fpc;
    const int     K        = spec.conv_kernel;

    Matrix x = linear_apply(m.input_proj, features, integer_matmul);
    const std::vector<float> no_history;
    for (const LayerWeights & lw : m.layers) {
        Matrix u  = layer_norm_copy(x, lw.ln1_g, lw.ln1_b);
        Matrix cv = causal_conv(u, no_history, 0, lw.conv_w, lw.conv_b, K);
        for (auto & v : cv.data) {
            v = silu(v);
        }
        add_inplace(x, cv);

        Matrix a_in = layer_norm_copy(x, lw.ln2_g, lw.ln2_b);
        Matrix q = linear_apply(lw.attn_q, a_in, integer_matmul);
        Matrix k = linear_apply(lw.attn_k, a_in, integer_matmul);
        Matrix v = linear_apply(lw.attn_v, a_in, integer_matmul);

        Matrix ctx = Matrix::zeros(T, d);
        for (int64_t c = 0; c < n_chunks; ++c) {
            const int64_t j0 = std::max<int64_t>(0, c - cfg.left_context) * fpc;
            const int64_t j1 = (c + 1) * fpc;
            attend_range(q.data.data() + c * fpc * d, fpc, k.data.data(), v.data.data(), j0, j1,
                         spec.n_heads, static_cast<int>(d), ctx.data.data() + c * fpc * d);
        }
        Matrix attn_out = linear_apply(lw.attn_o, ctx, integer_matmul);
        add_inplace(x, attn_out);

        Matrix f_in = layer_norm_copy(x, lw.ln3_g, lw.ln3_b);
        Matrix h = linear_apply(lw.ff1, f_in, integer_matmul);
        for (auto & hv : h.data) {
            hv = std::max(hv, 0.0f);
        }
        Matrix f_out = linear_apply(lw.ff2, h, integer_matmul);
        add_inplace(x, f_out);
    }
    return layer_norm_copy(x, m.final_ln_g, m.final_ln_b);
}

// ── decoder / joiner / greedy ───────────────────────────────────────────────

DecodeRunner DecodeRunner::fresh(const ToyModelSpec & spec) {
    DecodeRunner r;
    r.state.h.assign(static_cast<size_t>(spec.d_dec), 0.0f);
    r.state.c.assign(static_cast<size_t>(spec.d_dec), 0.0f);
    r.dec_out.assign(static_cast<size_t>(spec.d_dec), 0.0f);
    return r;
}

static float sigmoidf(float v) {
    return 1.0f / (1.0f + std::exp(-v));
}

std::pair<std::vector<float>, DecoderState> decoder_step(const Model & m, int token,
                                                         const DecoderState & state) {
    const ToyModelSpec & spec = m.spec();
    if (token < 0 || token >= spec.vocab_size) {
        fail(errc::invalid_arg, "decoder token out of range");
    }
    const int     dd = spec.d_dec;
    const float * x  = m.dec_embed.data() + static_cast<size_t>(token) * dd;

    std::vector<float> gates(static_cast<size_t>(4 * dd));
    for (int gi = 0; gi < 4 * dd; ++gi) {
        double acc = m.lstm_bih[static_cast<size_t>(gi)] + m.lstm_bhh[static_cast<size_t>(gi)];
        for (int kk = 0; kk < dd; ++kk) {
            acc += static_cast<double>(x[kk]) * m.lstm_wih[static_cast<size_t>(kk * 4 * dd + gi)];
            acc += static_cast<double>(state.h[static_cast<size_t>(kk)]) *
                   m.lstm_whh[static_cast<size_t>(kk * 4 * dd + gi)];
        }
        gates[static_cast<size_t>(gi)] = static_cast<float>(acc);
    }

    DecoderState next;
    next.h.resize(static_cast<size_t>(dd));
    next.c.resize(static_cast<size_t>(dd));
    next.last_token = token;
    for (int j = 0; j < dd; ++j) {
        const float gi = sigmoidf(gates[static_cast<size_t>(j)]);
        const float gf = sigmoidf(gates[static_cast<size_t>(dd + j)]);
        const float gg = std::tanh(gates[static_cast<size_t>(2 * dd + j)]);
        const float go = sigmoidf(gates[static_cast<size_t>(3 * dd + j)]);
        const float cc = gf * state.c[static_cast<size_t>(j)] + gi * gg;
        next.c[static_cast<size_t>(j)] = cc;
        next.h[static_cast<size_t>(j)] = go * std::tanh(cc);
    }
    return {next.h, std::move(next)};
}

static std::vector<float> project_vec(const Linear & lin, std::span<const float> v) {
    Matrix x;
    x.rows = 1;
    x.cols = static_cast<int64_t>(v.size());
    x.data.assign(v.begin(), v.end());
    return linear_apply(lin, x, false).data;
}

std::vector<float> joiner_logits(const Model & m, std::span<const float> enc_frame,
                                 std::span<const float> dec_out) {
    const auto pe = project_vec(m.join_enc, enc_frame);
    const auto pd = project_vec(m.join_dec, dec_out);
    std::vector<float> h(pe.size());
    for (size_t i = 0; i < h.size(); ++i) {
        h[i] = std::max(pe[i] + pd[i], 0.0f);
    }
    return project_vec(m.join_out, h);
}

std::vector<int> greedy_decode_frames(const Model & m, const Matrix & encoded,
                                      DecodeRunner & runner, int max_symbols) {
    const ToyModelSpec & spec = m.spec();
    if (encoded.cols != spec.d_model) {
        fail(errc::shape, "encoded frame width mismatch");
    }
    const int blank = spec.blank_id();
    std::vector<int> emitted;
    for (int64_t t = 0; t < encoded.rows; ++t) {
        std::span<const float> enc_t(encoded.data.data() + t * encoded.cols,
                                     static_cast<size_t>(encoded.cols));
        for (int sym = 0; sym < max_symbols; ++sym) {
            const auto logits = joiner_logits(m, enc_t, runner.dec_out);
            int   best   = 0;
            float best_v = logits[0];
            for (size_t i = 1; i < logits.size(); ++i) {
                if (logits[i] > best_v) {
                    best_v = logits[i];
                    best   = static_cast<int>(i);
                }
            }
            if (best == blank) {
                break;
            }
            emitted.push_back(best);
            auto [dec_out, next] = decoder_step(m, best, runner.state);
            runner.dec_out       = std::move(dec_out);
            runner.state         = std::move(next);
        }
    }
    return emitted;
}

// ── session ─────────────────────────────────────────────────────────────────

static mel::MelConfig mel_config_for(const Model & m) {
    mel::MelConfig cfg;
    // n_mels follows the bound input projection; other constants are the
    // recorded defaults.
    if (const auto * f = std::get_if<TensorF32>(&m.input_proj.w)) {
        cfg.n_mels = static_cast<int>(f->shape[0]);
    } else {
        cfg.n_mels = static_cast<int>(std::get<QuantizedTensor>(m.input_proj.w).shape[0]);
    }
    return cfg;
}

Session::Session(std::shared_ptr<const Model> model, StreamingConfig cfg, SessionOptions opt)
    : model_(std::move(model)),
      cfg_(cfg),
      opt_(opt),
      mel_(mel_config_for(*model_)),
      cache_(make_encoder_cache(model_->spec(), cfg)),
      runner_(DecodeRunner::fresh(model_->spec())) {
    cfg_.validate();
    if (opt_.max_symbols_per_step <= 0) {
        opt_.max_symbols_per_step = model_->default_max_symbols();
    }
    chunk_samples_ = static_cast<int64_t>(cfg_.chunk_size) * mel_.config().samples_per_80ms();
}

void Session::reset() {
    mel_state_ = mel::MelRingState{};
    pending_.clear();
    frame_fifo_.clear();
    cache_   = make_encoder_cache(model_->spec(), cfg_);
    runner_  = DecodeRunner::fresh(model_->spec());
    transcript_.clear();
    chunk_seconds_.clear();
    samples_seen_ = 0;
    finished_     = false;
}

void Session::consume_frames(bool flush_padded) {
    const int64_t n_mels = mel_.config().n_mels;
    const int64_t fpc    = cache_.frames_per_chunk;
    auto rows = [&] { return static_cast<int64_t>(frame_fifo_.size()) / n_mels; };

    while (rows() >= fpc) {
        Matrix feats;
        feats.rows = fpc;
        feats.cols = n_mels;
        feats.data.assign(frame_fifo_.begin(), frame_fifo_.begin() + fpc * n_mels);
        frame_fifo_.erase(frame_fifo_.begin(), frame_fifo_.begin() + fpc * n_mels);
        const Matrix enc = encoder_chunk(*model_, feats, cache_, opt_.integer_matmul);
        const auto toks = greedy_decode_frames(*model_, enc, runner_, opt_.max_symbols_per_step);
        transcript_.insert(transcript_.end(), toks.begin(), toks.end());
    }
    if (flush_padded && rows() > 0) {
        Matrix feats = Matrix::zeros(fpc, n_mels);
        std::copy(frame_fifo_.begin(), frame_fifo_.end(), feats.data.begin());
        frame_fifo_.clear();
        const Matrix enc = encoder_chunk(*model_, feats, cache_, opt_.integer_matmul);
        const auto toks = greedy_decode_frames(*model_, enc, runner_, opt_.max_symbols_per_step);
        transcript_.insert(transcript_.end(), toks.begin(), toks.end());
    }
}

void Session::process_pending_chunk() {
    const auto t0 = std::chrono::steady_clock::now();
    const Matrix feats = mel_.push_chunk({pending_.data(), static_cast<size_t>(chunk_samples_)},
                                         mel_state_);
    pending_.erase(pending_.begin(), pending_.begin() + chunk_samples_);
    frame_fifo_.insert(frame_fifo_.end(), feats.data.begin(), feats.data.end());
    consume_frames(false);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    chunk_seconds_.push_back(dt.count());
}

void Session::push_audio(std::span<const float> samples) {
    if (finished_) {
        fail(errc::runtime, "session already finished; reset() before reuse");
    }
    pending_.insert(pending_.end(), samples.begin(), samples.end());
    samples_seen_ += static_cast<int64_t>(samples.size());
    while (static_cast<int64_t>(pending_.size()) >= chunk_samples_) {
        process_pending_chunk();
    }
}

void Session::finish() {
    if (finished_) {
        return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const bool had_tail = !pending_.empty();
    if (had_tail) {
        pending_.resize(static_cast<size_t>(chunk_samples_), 0.0f); // zero-pad final chunk
        const Matrix feats = mel_.push_chunk(pending_, mel_state_);
        frame_fifo_.insert(frame_fifo_.end(), feats.data.begin(), feats.data.end());
        pending_.clear();
    }
    consume_frames(true);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    if (had_tail) {
        chunk_seconds_.push_back(dt.count());
    } else if (!chunk_seconds_.empty()) {
        chunk_seconds_.back() += dt.count(); // flush charged to the last chunk
    }
    finished_ = true;
}

std::string Session::transcript_text() const {
    const auto & vocab = model_->vocab();
    std::string  text;
    for (int tok : transcript_) {
        text += ' ';
        if (tok >= 0 && tok < static_cast<int>(vocab.size())) {
            text += vocab[static_cast<size_t>(tok)];
        } else {
            text += "<" + std::to_string(tok) + ">";
        }
    }
    return text;
}

double Session::audio_seconds() const {
    return static_cast<double>(samples_seen_) / mel_.config().sample_rate;
}

std::vector<int> stream_audio(Session & session, std::span<const float> audio) {
    session.push_audio(audio);
    session.finish();
    return session.transcript();
}

} // namespace estm::tx
