#pragma once

#include "error.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// WER with a deterministic edit breakdown, streaming WER, RTFx, BSF,
// algorithmic delay / effective latency, and report aggregation.

namespace estm::evalkit {

struct WerBreakdown {
    int64_t substitutions = 0;
    int64_t insertions    = 0;
    int64_t deletions     = 0;
    int64_t ref_words     = 0;

    int64_t edits() const { return substitutions + insertions + deletions; }
    double  wer() const { return static_cast<double>(edits()) / static_cast<double>(ref_words); }
};

// Lowercase, strip punctuation except intra-word apostrophes, split on
// whitespace.
std::vector<std::string> normalize_text(std::string_view raw);

// Minimal-edit alignment, unit costs. Backtrace prefers substitution over
// insertion over deletion when costs tie, so the breakdown is deterministic.
WerBreakdown wer(const std::vector<std::string> & ref, const std::vector<std::string> & hyp);

// Concatenate the chunk outputs in order (no separators), normalize, score.
WerBreakdown streaming_wer(const std::vector<std::string> & ref,
                           const std::vector<std::string> & chunk_outputs);

double rtfx(double audio_duration_s, double processing_time_s);
double bsf(double streaming_wer_value, double batch_wer_value);
double effective_latency(double delay_s, double rtfx_value);

struct LatencyMetrics {
    double              rtfx_value          = 0.0;
    double              delay_s             = 0.0;
    double              effective_latency_s = 0.0;
    std::vector<double> per_chunk_rtfx;
};

struct EvalReport {
    std::vector<std::pair<std::string, WerBreakdown>> per_dataset;
    double                                            average_wer = 0.0; // unweighted
    LatencyMetrics                                    latency;
    std::optional<double>                             bsf_value;
    uint64_t                                          model_size_bytes = 0;
    std::string                                       config_echo;
};

EvalReport aggregate_report(const std::vector<std::pair<std::string, WerBreakdown>> & per_dataset,
                            const LatencyMetrics & latency,
                            std::optional<double>  batch_baseline_wer);

// Plain-text report with per-dataset rows and an aggregate block.
std::string format_report(const EvalReport & report);

// Plot-ready CSV: one row per dataset plus an aggregate row with the
// delay/size/RTFx axes.
std::string report_plot_csv(const EvalReport & report);

} // namespace estm::evalkit
