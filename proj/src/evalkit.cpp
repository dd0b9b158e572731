#include "evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace estm::evalkit {

std::vector<std::string> normalize_text(std::string_view raw) {
    std::string cleaned;
    cleaned.reserve(raw.size());
    for (char ch : raw) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cleaned.push_back(static_cast<char>(std::tolower(u)));
        } else if (ch == '\'') {
            cleaned.push_back(ch);
        } else {
            cleaned.push_back(' ');
        }
    }
    std::vector<std::string> words;
    std::istringstream in(cleaned);
    std::string w;
    while (in >> w) {
        // apostrophes survive only between word characters
        size_t from = 0, to = w.size();
        while (from < to && w[from] == '\'') {
            ++from;
        }
        while (to > from && w[to - 1] == '\'') {
            --to;
        }
        if (to > from) {
            words.push_back(w.substr(from, to - from));
        }
    }
    return words;
}

WerBreakdown wer(const std::vector<std::string> & ref, const std::vector<std::string> & hyp) {
    if (ref.empty()) {
        fail(errc::invalid_arg, "WER requires a non-empty reference");
    }
    const size_t R = ref.size(), H = hyp.size();
    std::vector<int64_t> d((R + 1) * (H + 1), 0);
    auto at = [&](size_t i, size_t j) -> int64_t & { return d[i * (H + 1) + j]; };
    for (size_t i = 0; i <= R; ++i) {
        at(i, 0) = static_cast<int64_t>(i);
    }
    for (size_t j = 0; j <= H; ++j) {
        at(0, j) = static_cast<int64_t>(j);
    }
    for (size_t i = 1; i <= R; ++i) {
        for (size_t j = 1; j <= H; ++j) {
            const int64_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            const int64_t ins = at(i, j - 1) + 1;
            const int64_t del = at(i - 1, j) + 1;
            at(i, j) = std::min({sub, ins, del});
        }
    }

    WerBreakdown b;
    b.ref_words = static_cast<int64_t>(R);
    size_t i = R, j = H;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool  match = ref[i - 1] == hyp[j - 1];
            const int64_t sub = at(i - 1, j - 1) + (match ? 0 : 1);
            if (at(i, j) == sub) { // substitution/match preferred
                if (!match) {
                    ++b.substitutions;
                }
                --i;
                --j;
                continue;
            }
            if (at(i, j) == at(i, j - 1) + 1) { // then insertion
                ++b.insertions;
                --j;
                continue;
            }
            ++b.deletions;
            --i;
            continue;
        }
        if (j > 0) {
            ++b.insertions;
            --j;
        } else {
            ++b.deletions;
            --i;
        }
    }
    return b;
}

WerBreakdown streaming_wer(const std::vector<std::string> & ref,
                           const std::vector<std::string> & chunk_outputs) {
    std::string joined;
    for (const auto & part : chunk_outputs) {
        joined += part;
    }
    return wer(ref, normalize_text(joined));
}

double rtfx(double audio_duration_s, double processing_time_s) {
    if (audio_duration_s <= 0.0 || processing_time_s <= 0.0) {
        fail(errc::invalid_arg, "RTFx requires positive durations");
    }
    return audio_duration_s / processing_time_s;
}

double bsf(double streaming_wer_value, double batch_wer_value) {
    if (batch_wer_value <= 0.0) {
        fail(errc::invalid_arg, "BSF requires a positive batch WER");
    }
    return streaming_wer_value / batch_wer_value;
}

double effective_latency(double delay_s, double rtfx_value) {
    if (delay_s <= 0.0 || rtfx_value <= 0.0) {
        fail(errc::invalid_arg, "effective latency requires positive inputs");
    }
    return delay_s * (1.0 + 1.0 / rtfx_value);
}

EvalReport aggregate_report(const std::vector<std::pair<std::string, WerBreakdown>> & per_dataset,
                            const LatencyMetrics & latency,
                            std::optional<double>  batch_baseline_wer) {
    if (per_dataset.empty()) {
        fail(errc::invalid_arg, "report requires at least one dataset");
    }
    EvalReport r;
    r.per_dataset = per_dataset;
    r.latency     = latency;
    double sum = 0.0;
    for (const auto & [name, b] : per_dataset) {
        sum += b.wer();
    }
    r.average_wer = sum / static_cast<double>(per_dataset.size());
    if (batch_baseline_wer) {
        r.bsf_value = bsf(r.average_wer, *batch_baseline_wer);
    }
    return r;
}

static std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return buf;
}

std::string format_report(const EvalReport & report) {
    std::ostringstream out;
    out << "dataset            wer%     S      I      D      ref\n";
    for (const auto & [name, b] : report.per_dataset) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-18s %-8s %-6lld %-6lld %-6lld %lld\n", name.c_str(),
                      pct(b.wer()).c_str(), static_cast<long long>(b.substitutions),
                      static_cast<long long>(b.insertions), static_cast<long long>(b.deletions),
                      static_cast<long long>(b.ref_words));
        out << line;
    }
    out << "\naverage_wer% " << pct(report.average_wer) << "\n";
    if (report.bsf_value) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", *report.bsf_value);
        out << "bsf " << buf << "\n";
    }
    if (report.latency.rtfx_value > 0.0) {
        out << "rtfx " << report.latency.rtfx_value << "\n";
        out << "delay_s " << report.latency.delay_s << "\n";
        out << "effective_latency_s " << report.latency.effective_latency_s << "\n";
    }
    if (report.model_size_bytes > 0) {
        out << "model_size_bytes " << report.model_size_bytes << "\n";
    }
    if (!report.config_echo.empty()) {
        out << "config " << report.config_echo << "\n";
    }
    return out.str();
}

std::string report_plot_csv(const EvalReport & report) {
    std::ostringstream out;
    out << "dataset,wer,delay_s,rtfx,effective_latency_s,model_size_bytes\n";
    auto row = [&](const std::string & name, double wer_v) {
        out << name << ',' << wer_v << ',' << report.latency.delay_s << ','
            << report.latency.rtfx_value << ',' << report.latency.effective_latency_s << ','
            << report.model_size_bytes << "\n";
    };
    for (const auto & [name, b] : report.per_dataset) {
        row(name, b.wer());
    }
    row("aggregate", report.average_wer);
    return out.str();
}

} // namespace estm::evalkit
