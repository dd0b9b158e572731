// Command-line front end for the estm runtime. Talks to the core strictly
// through the shared library's C API.

#include <estm.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json   = nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData  = 2;

struct cli_error {
    int         code;
    std::string message;
};

[[noreturn]] void die(int code, const std::string & message) {
    throw cli_error{code, message};
}

// Non-OK C API statuses map onto the exit-code contract: bad arguments are
// usage errors, everything else is a data error.
void check(estm_status st, const std::string & what) {
    if (st == ESTM_OK) {
        return;
    }
    die(st == ESTM_ERR_INVALID_ARG ? kExitUsage : kExitData,
        what + ": " + estm_last_error());
}

uint64_t fnv1a64(const void * data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto * p = static_cast<const uint8_t *>(data);
    for (size_t i = 0; i < n; ++i) {
        h = (h ^ p[i]) * 0x100000001b3ull;
    }
    return h;
}

uint64_t file_hash(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        die(kExitData, "cannot hash '" + path + "'");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const std::string & path, const std::string & text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        die(kExitData, "cannot write '" + path + "'");
    }
    f << text;
}

std::string read_text(const std::string & path) {
    std::ifstream f(path);
    if (!f) {
        die(kExitData, "cannot read '" + path + "'");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Manifest {
    json doc;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    Manifest(const std::string & command, int argc, char ** argv) {
        doc["command"] = command;
        json args      = json::array();
        std::string joined;
        for (int i = 0; i < argc; ++i) {
            args.push_back(argv[i]);
            joined += argv[i];
            joined += ' ';
        }
        doc["argv"]        = args;
        doc["config_hash"] = hex64(fnv1a64(joined.data(), joined.size()));
        doc["version"]     = estm_version();
        if (const char * threads = std::getenv("ESTM_THREADS")) {
            doc["env"]["ESTM_THREADS"] = threads;
        }
    }

    void input(const std::string & key, const std::string & path) {
        doc["inputs"][key] = {{"path", path}, {"hash", hex64(file_hash(path))}};
    }
    void output(const std::string & key, const std::string & path) {
        doc["outputs"][key] = {{"path", path}, {"hash", hex64(file_hash(path))}};
    }
    void save(const std::string & out_dir) {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        doc["wall_clock_s"]                    = dt.count();
        const std::string path = (fs::path(out_dir) / ("manifest_" +
                                  doc["command"].get<std::string>() + ".json")).string();
        write_text(path, doc.dump(2) + "\n");
    }
};

std::string ensure_out_dir(const std::string & out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        die(kExitData, "cannot create output directory '" + out + "'");
    }
    return out;
}

using ContainerPtr = std::unique_ptr<estm_container, decltype(&estm_container_free)>;

ContainerPtr load_container(const std::string & path) {
    estm_container * raw = nullptr;
    check(estm_container_read(path.c_str(), &raw), "reading '" + path + "'");
    return {raw, &estm_container_free};
}

std::string container_meta(const estm_container * c, const std::string & key,
                           const std::string & fallback = "") {
    size_t len = 0;
    if (estm_container_metadata(c, key.c_str(), nullptr, 0, &len) != ESTM_OK) {
        return fallback;
    }
    std::string value(len, '\0');
    estm_container_metadata(c, key.c_str(), value.data(), len + 1, &len);
    return value;
}

// ── genmodel ────────────────────────────────────────────────────────────────

struct GenArgs {
    int         layers = 4, d_model = 64, heads = 4, conv_kernel = 9, vocab = 32, d_dec = 64;
    uint64_t    seed       = 42;
    float       blank_bias = 1.5f;
    std::string out        = "out";
    std::string model_file = "model.estm";
};

int cmd_genmodel(const GenArgs & a, Manifest & manifest) {
    ensure_out_dir(a.out);
    estm_toy_spec spec{a.layers, a.d_model, a.heads, a.conv_kernel, a.vocab, a.d_dec};
    estm_container * raw = nullptr;
    check(estm_toy_model_create(&spec, a.seed, a.blank_bias, &raw), "generating model");
    ContainerPtr model(raw, &estm_container_free);

    const std::string path = (fs::path(a.out) / a.model_file).string();
    check(estm_container_write(model.get(), path.c_str()), "writing model");

    uint64_t payload = 0;
    check(estm_container_payload_bytes(model.get(), &payload), "sizing model");
    manifest.doc["seed"]          = a.seed;
    manifest.doc["payload_bytes"] = payload;
    manifest.output("model", path);
    std::cout << "model " << path << " payload_bytes " << payload << " hash "
              << hex64(file_hash(path)) << "\n";
    return 0;
}

// ── quantize ────────────────────────────────────────────────────────────────

struct QuantArgs {
    std::string in;
    std::string out      = "out";
    std::string out_file = "model_quant.estm";
    int         bits     = 4;
    std::string scheme   = "kquant";
    int         block_size = 32;
    std::string policy_path;
    std::string scope = "enc.*.w";
};

int cmd_quantize(const QuantArgs & a, Manifest & manifest) {
    ensure_out_dir(a.out);
    manifest.input("model", a.in);
    auto in = load_container(a.in);

    if (a.scheme != "rtn" && a.scheme != "kquant") {
        die(kExitUsage, "--scheme must be rtn or kquant");
    }
    estm_quant_options opts{};
    opts.bits       = a.bits;
    opts.block_size = a.block_size;
    opts.scheme     = a.scheme == "rtn" ? ESTM_QUANT_RTN : ESTM_QUANT_KQUANT;
    opts.scope_glob = a.scope.c_str();

    estm_policy * policy = nullptr;
    if (!a.policy_path.empty()) {
        const std::string text = read_text(a.policy_path);
        check(estm_policy_parse(text.c_str(), &policy), "parsing policy");
        manifest.input("policy", a.policy_path);
    }
    estm_container * raw = nullptr;
    const estm_status st = estm_quantize_model(in.get(), &opts, policy, &raw);
    estm_policy_free(policy);
    check(st, "quantizing");
    ContainerPtr out(raw, &estm_container_free);

    const std::string path = (fs::path(a.out) / a.out_file).string();
    check(estm_container_write(out.get(), path.c_str()), "writing output");

    uint64_t before = 0, after = 0;
    check(estm_container_payload_bytes(in.get(), &before), "sizing input");
    check(estm_container_payload_bytes(out.get(), &after), "sizing output");

    json tensor_bits = json::object();
    int64_t count    = 0;
    check(estm_container_tensor_count(out.get(), &count), "counting tensors");
    for (int64_t i = 0; i < count; ++i) {
        char    name[256];
        int32_t bits = 0;
        check(estm_container_tensor_info(out.get(), i, name, sizeof(name), &bits, nullptr),
              "tensor info");
        tensor_bits[name] = bits == 0 ? json("f32") : json(bits);
    }
    manifest.doc["payload_bytes_before"] = before;
    manifest.doc["payload_bytes_after"]  = after;
    manifest.doc["tensor_bits"]          = tensor_bits;
    manifest.doc["bits_histogram"] = container_meta(out.get(), "quant.bits_histogram");
    manifest.output("model", path);
    std::cout << "quantized " << path << " payload_bytes " << before << " -> " << after << "\n";
    return 0;
}

// ── stream ──────────────────────────────────────────────────────────────────

struct StreamArgs {
    std::string model;
    std::string wav;
    std::string raw;
    std::string config     = "7,10,7";
    bool        int_matmul = false;
    int         max_symbols = 0;
    std::string out        = "out";
};

std::vector<float> load_audio(const StreamArgs & a) {
    float * samples = nullptr;
    int64_t count   = 0;
    if (!a.wav.empty()) {
        int32_t rate = 0;
        check(estm_wav_read(a.wav.c_str(), &samples, &count, &rate), "reading wav");
        if (rate != 16000) {
            estm_buffer_free(samples);
            die(kExitData, "expected 16 kHz audio, got " + std::to_string(rate));
        }
    } else {
        check(estm_raw_f32_read(a.raw.c_str(), &samples, &count), "reading raw audio");
    }
    std::vector<float> out(samples, samples + count);
    estm_buffer_free(samples);
    return out;
}

struct SessionRun {
    std::string          text;
    std::vector<int32_t> tokens;
    std::vector<double>  chunk_seconds;
    double               audio_s = 0.0, rtfx = 0.0, delay_s = 0.0, history_s = 0.0;
    double               effective_latency_s = 0.0, min_chunk_rtfx = 0.0;
};

SessionRun run_session(const estm_container * model, const estm_stream_config & cfg,
                       bool int_matmul, int max_symbols, const std::vector<float> & audio) {
    estm_session_options opts{};
    opts.use_integer_matmul   = int_matmul ? 1 : 0;
    opts.max_symbols_per_step = max_symbols;
    estm_session * raw        = nullptr;
    check(estm_session_create(model, &cfg, &opts, &raw), "creating session");
    std::unique_ptr<estm_session, decltype(&estm_session_free)> session(raw, &estm_session_free);

    check(estm_session_push(session.get(), audio.data(), static_cast<int64_t>(audio.size())),
          "streaming audio");
    check(estm_session_finish(session.get()), "finishing stream");

    SessionRun run;
    size_t text_len = 0;
    check(estm_session_text(session.get(), nullptr, 0, &text_len), "reading transcript");
    run.text.resize(text_len);
    check(estm_session_text(session.get(), run.text.data(), text_len + 1, &text_len),
          "reading transcript");

    int64_t n_tokens = 0;
    check(estm_session_token_count(session.get(), &n_tokens), "token count");
    run.tokens.resize(static_cast<size_t>(n_tokens));
    check(estm_session_tokens(session.get(), run.tokens.data(), n_tokens), "tokens");

    int64_t n_chunks = 0;
    check(estm_session_chunk_count(session.get(), &n_chunks), "chunk count");
    run.chunk_seconds.resize(static_cast<size_t>(n_chunks));
    check(estm_session_chunk_seconds(session.get(), run.chunk_seconds.data(), n_chunks),
          "chunk timings");
    check(estm_session_audio_seconds(session.get(), &run.audio_s), "audio length");

    double chunk_audio = 0.0;
    check(estm_session_chunk_audio_seconds(session.get(), &chunk_audio), "chunk audio");
    check(estm_stream_config_derive(&cfg, &run.delay_s, &run.history_s, nullptr), "config");

    double total = 0.0;
    run.min_chunk_rtfx = 1e300;
    for (double s : run.chunk_seconds) {
        total += s;
        if (s > 0.0) {
            run.min_chunk_rtfx = std::min(run.min_chunk_rtfx, chunk_audio / s);
        }
    }
    if (run.audio_s > 0.0 && total > 0.0) {
        check(estm_rtfx(run.audio_s, total, &run.rtfx), "rtfx");
        check(estm_effective_latency(run.delay_s, run.rtfx, &run.effective_latency_s),
              "effective latency");
    }
    return run;
}

int cmd_stream(const StreamArgs & a, Manifest & manifest) {
    ensure_out_dir(a.out);
    if (a.wav.empty() == a.raw.empty()) {
        die(kExitUsage, "provide exactly one of --wav or --raw");
    }
    estm_stream_config cfg{};
    check(estm_stream_config_parse(a.config.c_str(), &cfg), "parsing --config");

    manifest.input("model", a.model);
    manifest.input("audio", a.wav.empty() ? a.raw : a.wav);
    auto model = load_container(a.model);
    const auto audio = load_audio(a);

    const auto run = run_session(model.get(), cfg, a.int_matmul, a.max_symbols, audio);

    const std::string transcript_path = (fs::path(a.out) / "transcript.txt").string();
    write_text(transcript_path, run.text + "\n");

    std::ostringstream timings;
    timings << "chunk,seconds,rtfx\n";
    const double chunk_audio = run.delay_s;
    for (size_t i = 0; i < run.chunk_seconds.size(); ++i) {
        const double s = run.chunk_seconds[i];
        timings << i << ',' << s << ',' << (s > 0.0 ? chunk_audio / s : 0.0) << "\n";
    }
    const std::string timings_path = (fs::path(a.out) / "timings.csv").string();
    write_text(timings_path, timings.str());

    json metrics;
    metrics["audio_s"]             = run.audio_s;
    metrics["rtfx"]                = run.rtfx;
    metrics["delay_s"]             = run.delay_s;
    metrics["history_s"]           = run.history_s;
    metrics["effective_latency_s"] = run.effective_latency_s;
    metrics["min_chunk_rtfx"]      = run.min_chunk_rtfx;
    metrics["chunks"]              = run.chunk_seconds.size();
    metrics["tokens"]              = run.tokens.size();
    const std::string metrics_path = (fs::path(a.out) / "metrics.json").string();
    write_text(metrics_path, metrics.dump(2) + "\n");

    manifest.doc["config"] = a.config;
    manifest.output("transcript", transcript_path);
    manifest.output("timings", timings_path);
    manifest.output("metrics", metrics_path);
    std::cout << "delay_s " << run.delay_s << " history_s " << run.history_s << " rtfx "
              << run.rtfx << " effective_latency_s " << run.effective_latency_s << "\n";
    std::cout << "transcript" << run.text << "\n";
    return 0;
}

// ── eval ────────────────────────────────────────────────────────────────────

struct EvalArgs {
    std::string refs, hyps;
    std::vector<std::string> pairs; // name=refs.tsv,hyps.tsv
    std::string wer_table;          // csv: name,wer_percent
    double      batch_baseline = 0.0;
    bool        have_baseline  = false;
    double      rtfx = 0.0, delay_s = 0.0;
    uint64_t    size_bytes = 0;
    std::string config_echo;
    std::string out = "out";
};

std::map<std::string, std::string> parse_tsv(const std::string & path) {
    std::map<std::string, std::string> rows;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            die(kExitData, "'" + path + "': expected ID<TAB>text lines");
        }
        rows[line.substr(0, tab)] = line.substr(tab + 1);
    }
    if (rows.empty()) {
        die(kExitData, "'" + path + "': no utterances");
    }
    return rows;
}

estm_wer_breakdown score_dataset(const std::string & refs_path, const std::string & hyps_path) {
    const auto refs = parse_tsv(refs_path);
    const auto hyps = parse_tsv(hyps_path);
    estm_wer_breakdown total{};
    for (const auto & [id, ref_text] : refs) {
        const auto it = hyps.find(id);
        if (it == hyps.end()) {
            die(kExitData, "utterance '" + id + "' missing from '" + hyps_path + "'");
        }
        estm_wer_breakdown b{};
        check(estm_wer(ref_text.c_str(), it->second.c_str(), &b), "wer for '" + id + "'");
        total.substitutions += b.substitutions;
        total.insertions += b.insertions;
        total.deletions += b.deletions;
        total.ref_words += b.ref_words;
    }
    for (const auto & [id, text] : hyps) {
        if (!refs.count(id)) {
            die(kExitData, "utterance '" + id + "' missing from '" + refs_path + "'");
        }
    }
    total.wer = static_cast<double>(total.substitutions + total.insertions + total.deletions) /
                static_cast<double>(total.ref_words);
    return total;
}

int cmd_eval(const EvalArgs & a, Manifest & manifest) {
    ensure_out_dir(a.out);

    std::vector<std::pair<std::string, estm_wer_breakdown>> datasets;
    if (!a.wer_table.empty()) {
        // aggregation mode: rows of "name,wer_percent"
        manifest.input("wer_table", a.wer_table);
        std::istringstream in(read_text(a.wer_table));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') {
                continue;
            }
            const size_t comma = line.find(',');
            if (comma == std::string::npos) {
                die(kExitData, "'" + a.wer_table + "': expected name,wer_percent rows");
            }
            estm_wer_breakdown b{};
            b.ref_words = 10000;
            try {
                b.substitutions =
                    static_cast<int64_t>(std::llround(std::stod(line.substr(comma + 1)) * 100.0));
            } catch (...) {
                die(kExitData, "'" + a.wer_table + "': bad wer value in '" + line + "'");
            }
            b.wer = static_cast<double>(b.substitutions) / static_cast<double>(b.ref_words);
            datasets.emplace_back(line.substr(0, comma), b);
        }
        if (datasets.empty()) {
            die(kExitData, "'" + a.wer_table + "': no rows");
        }
    } else if (!a.pairs.empty()) {
        for (const auto & pair : a.pairs) {
            const size_t eq = pair.find('=');
            const size_t comma = pair.find(',', eq == std::string::npos ? 0 : eq);
            if (eq == std::string::npos || comma == std::string::npos) {
                die(kExitUsage, "--pair must be name=refs.tsv,hyps.tsv");
            }
            const std::string name = pair.substr(0, eq);
            const std::string refs = pair.substr(eq + 1, comma - eq - 1);
            const std::string hyps = pair.substr(comma + 1);
            manifest.input(name + ".refs", refs);
            manifest.input(name + ".hyps", hyps);
            datasets.emplace_back(name, score_dataset(refs, hyps));
        }
    } else if (!a.refs.empty() && !a.hyps.empty()) {
        manifest.input("refs", a.refs);
        manifest.input("hyps", a.hyps);
        datasets.emplace_back("default", score_dataset(a.refs, a.hyps));
    } else {
        die(kExitUsage, "provide --refs/--hyps, --pair entries, or --wer-table");
    }

    std::vector<estm_dataset_wer> rows;
    rows.reserve(datasets.size());
    for (const auto & [name, b] : datasets) {
        rows.push_back({name.c_str(), b});
    }

    estm_latency_metrics   lat{};
    estm_latency_metrics * lat_ptr = nullptr;
    if (a.rtfx > 0.0 && a.delay_s > 0.0) {
        lat.rtfx    = a.rtfx;
        lat.delay_s = a.delay_s;
        check(estm_effective_latency(a.delay_s, a.rtfx, &lat.effective_latency_s),
              "effective latency");
        lat_ptr = &lat;
    }
    // percent and fraction inputs both accepted: values above 1 are percent
    const double   baseline_frac = a.batch_baseline > 1.0 ? a.batch_baseline / 100.0
                                                          : a.batch_baseline;
    const double * baseline = a.have_baseline ? &baseline_frac : nullptr;

    auto render = [&](int as_csv) {
        const char * echo = a.config_echo.empty() ? nullptr : a.config_echo.c_str();
        size_t len = 0;
        check(estm_report_render(rows.data(), static_cast<int32_t>(rows.size()), lat_ptr,
                                 baseline, a.size_bytes, echo, as_csv, nullptr, 0, &len),
              "rendering report");
        std::string text(len, '\0');
        check(estm_report_render(rows.data(), static_cast<int32_t>(rows.size()), lat_ptr,
                                 baseline, a.size_bytes, echo, as_csv, text.data(), len + 1,
                                 &len),
              "rendering report");
        return text;
    };

    const std::string report_path = (fs::path(a.out) / "report.txt").string();
    const std::string csv_path    = (fs::path(a.out) / "plot.csv").string();
    write_text(report_path, render(0));
    write_text(csv_path, render(1));

    double average = 0.0;
    check(estm_report_average(rows.data(), static_cast<int32_t>(rows.size()), &average),
          "averaging");
    manifest.doc["average_wer"] = average;
    manifest.output("report", report_path);
    manifest.output("plot", csv_path);
    std::cout << "average_wer_pct " << average * 100.0;
    if (baseline) {
        double bsf_val = 0.0;
        check(estm_bsf(average, baseline_frac, &bsf_val), "bsf");
        std::cout << " bsf " << bsf_val;
    }
    std::cout << "\n";
    return 0;
}

// ── bench ───────────────────────────────────────────────────────────────────

struct BenchArgs {
    std::string model;
    std::string configs = "1,70,1;2,35,2;7,10,7;14,5,14";
    int         repeat  = 3;
    double      seconds = 4.0;
    uint64_t    seed    = 1;
    bool        int_matmul = false;
    int         threads = 0; // 0: keep ESTM_THREADS / current setting
    std::string out     = "out";
};

// Seeded noise plus a slow tone sweep; self-contained stand-in for speech.
std::vector<float> synth_audio(uint64_t seed, double seconds, int sample_rate = 16000) {
    std::vector<float> audio(static_cast<size_t>(seconds * sample_rate));
    uint64_t state = seed * 0x9e3779b97f4a7c15ull + 1;
    auto next = [&state] {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        return state;
    };
    for (size_t i = 0; i < audio.size(); ++i) {
        const double t    = static_cast<double>(i) / sample_rate;
        const double tone = 0.3 * std::sin(2.0 * 3.14159265358979 * (220.0 + 60.0 * t) * t);
        const double hiss =
            0.1 * (static_cast<double>(next() >> 40) / static_cast<double>(1 << 24) - 0.5);
        audio[i] = static_cast<float>(tone + hiss);
    }
    return audio;
}

int cmd_bench(const BenchArgs & a, Manifest & manifest) {
    ensure_out_dir(a.out);
    manifest.input("model", a.model);
    auto model = load_container(a.model);

    std::vector<std::string> configs;
    std::stringstream        cs(a.configs);
    std::string              item;
    while (std::getline(cs, item, ';')) {
        if (!item.empty()) {
            configs.push_back(item);
        }
    }
    if (configs.empty() || a.repeat < 1) {
        die(kExitUsage, "need at least one config and --repeat >= 1");
    }

    if (a.threads > 0) {
        estm_set_threads(a.threads);
    }
    const auto audio = synth_audio(a.seed, a.seconds);

    std::ostringstream csv;
    csv << "config,delay_s,history_s,rtfx_mean,rtfx_min,chunk_rtfx_min,dropout,"
           "effective_latency_s\n";

    for (const auto & cfg_str : configs) {
        estm_stream_config cfg{};
        check(estm_stream_config_parse(cfg_str.c_str(), &cfg), "parsing config '" + cfg_str + "'");

        std::vector<SessionRun> runs(static_cast<size_t>(a.repeat));
        for (int r = 0; r < a.repeat; ++r) {
            runs[static_cast<size_t>(r)] = run_session(model.get(), cfg, a.int_matmul, 0, audio);
        }

        double rtfx_sum = 0.0, rtfx_min = 1e300, chunk_min = 1e300;
        for (const auto & run : runs) {
            rtfx_sum += run.rtfx;
            rtfx_min  = std::min(rtfx_min, run.rtfx);
            chunk_min = std::min(chunk_min, run.min_chunk_rtfx);
        }
        const double rtfx_mean = rtfx_sum / a.repeat;
        double       eff       = 0.0;
        check(estm_effective_latency(runs[0].delay_s, rtfx_mean, &eff), "effective latency");
        csv << '"' << cfg_str << '"' << ',' << runs[0].delay_s << ',' << runs[0].history_s
            << ',' << rtfx_mean
            << ',' << rtfx_min << ',' << chunk_min << ',' << (chunk_min < 1.0 ? 1 : 0) << ','
            << eff << "\n";
    }

    const std::string csv_path = (fs::path(a.out) / "bench.csv").string();
    write_text(csv_path, csv.str());
    manifest.doc["repeat"]  = a.repeat;
    manifest.doc["seconds"] = a.seconds;
    manifest.doc["threads"] = estm_get_threads();
    manifest.output("bench", csv_path);
    std::cout << csv.str();
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"estm: streaming transducer runtime with block-quantized weights"};
    app.require_subcommand(1);

    GenArgs gen;
    auto * genmodel = app.add_subcommand("genmodel", "generate a seeded toy model container");
    genmodel->add_option("--layers", gen.layers, "encoder layers");
    genmodel->add_option("--d-model", gen.d_model, "encoder width");
    genmodel->add_option("--heads", gen.heads, "attention heads");
    genmodel->add_option("--conv-kernel", gen.conv_kernel, "depthwise conv kernel");
    genmodel->add_option("--vocab", gen.vocab, "vocabulary size (blank excluded)");
    genmodel->add_option("--d-dec", gen.d_dec, "prediction network width");
    genmodel->add_option("--seed", gen.seed, "rng seed");
    genmodel->add_option("--blank-bias", gen.blank_bias, "joiner blank logit bias");
    genmodel->add_option("--out", gen.out, "output directory")->required();
    genmodel->add_option("--model-file", gen.model_file, "container file name");

    QuantArgs q;
    auto * quantize = app.add_subcommand("quantize", "block-quantize a model container");
    quantize->add_option("--in", q.in, "input container")->required();
    quantize->add_option("--out", q.out, "output directory")->required();
    quantize->add_option("--out-file", q.out_file, "output container file name");
    quantize->add_option("--bits", q.bits, "4 or 8");
    quantize->add_option("--scheme", q.scheme, "rtn or kquant");
    quantize->add_option("--block-size", q.block_size, "elements per block");
    quantize->add_option("--policy", q.policy_path, "mixed-precision policy file");
    quantize->add_option("--scope", q.scope, "tensor-name glob; 'none' copies verbatim");

    StreamArgs s;
    auto * stream = app.add_subcommand("stream", "stream audio through a model");
    stream->add_option("--model", s.model, "model container")->required();
    stream->add_option("--wav", s.wav, "16-bit PCM mono wav");
    stream->add_option("--raw", s.raw, "raw f32 samples at 16 kHz");
    stream->add_option("--config", s.config, "chunk,left,shift in 80 ms units");
    stream->add_flag("--int-matmul", s.int_matmul, "integer-arithmetic matmul path");
    stream->add_option("--max-symbols", s.max_symbols, "per-frame symbol cap (0: model default)");
    stream->add_option("--out", s.out, "output directory")->required();

    EvalArgs e;
    auto * eval = app.add_subcommand("eval", "score hypotheses and emit reports");
    eval->add_option("--refs", e.refs, "reference TSV (id<TAB>text)");
    eval->add_option("--hyps", e.hyps, "hypothesis TSV (id<TAB>text)");
    eval->add_option("--pair", e.pairs, "dataset as name=refs.tsv,hyps.tsv (repeatable)");
    eval->add_option("--wer-table", e.wer_table, "aggregate a name,wer_percent CSV");
    eval->add_option("--batch-baseline", e.batch_baseline,
                     "batch WER for BSF (percent when above 1, else fraction)")
        ->each([&e](const std::string &) { e.have_baseline = true; });
    eval->add_option("--rtfx", e.rtfx, "measured RTFx for the report");
    eval->add_option("--delay", e.delay_s, "algorithmic delay seconds");
    eval->add_option("--size-bytes", e.size_bytes, "model payload bytes");
    eval->add_option("--config-echo", e.config_echo, "streaming config echoed into the report");
    eval->add_option("--out", e.out, "output directory")->required();

    BenchArgs b;
    auto * bench = app.add_subcommand("bench", "RTFx benchmark over streaming configs");
    bench->add_option("--model", b.model, "model container")->required();
    bench->add_option("--configs", b.configs, "semicolon-separated config tuples");
    bench->add_option("--repeat", b.repeat, "runs per config");
    bench->add_option("--seconds", b.seconds, "synthetic audio length");
    bench->add_option("--seed", b.seed, "audio seed");
    bench->add_option("--threads", b.threads, "intra-op workers (default: ESTM_THREADS)");
    bench->add_flag("--int-matmul", b.int_matmul, "integer-arithmetic matmul path");
    bench->add_option("--out", b.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & err) {
        app.exit(err);
        return kExitUsage;
    }

    try {
        Manifest manifest(app.get_subcommands().front()->get_name(), argc, argv);
        int rc = 0;
        if (*genmodel) {
            rc = cmd_genmodel(gen, manifest);
            manifest.save(gen.out);
        } else if (*quantize) {
            rc = cmd_quantize(q, manifest);
            manifest.save(q.out);
        } else if (*stream) {
            rc = cmd_stream(s, manifest);
            manifest.save(s.out);
        } else if (*eval) {
            rc = cmd_eval(e, manifest);
            manifest.save(e.out);
        } else if (*bench) {
            rc = cmd_bench(b, manifest);
            manifest.save(b.out);
        }
        return rc;
    } catch (const cli_error & err) {
        std::cerr << "error: " << err.message << "\n";
        return err.code;
    } catch (const std::exception & err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitData;
    }
}
