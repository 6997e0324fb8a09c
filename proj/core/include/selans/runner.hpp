#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selans/dataset.hpp"
#include "selans/errors.hpp"
#include "selans/metrics.hpp"
#include "selans/modelgw.hpp"
#include "selans/protocol.hpp"

namespace selans::runner {

class RunnerError : public DataError {
public:
    using DataError::DataError;
};

class UnknownQuestion : public RunnerError {
public:
    explicit UnknownQuestion(const std::string& id)
        : RunnerError("run record references unknown question: " + id) {}
};

/// One end-to-end experiment: dataset, scheme, and exactly one of a live
/// endpoint or a synthetic agent.
struct RunConfig {
    std::string dataset_path;
    dataset::DatasetFormat dataset_format = dataset::DatasetFormat::Jsonl;
    protocol::RewardConfig scheme;
    std::optional<modelgw::ModelEndpointConfig> live_model;
    std::optional<modelgw::SyntheticAgentConfig> synthetic;
    std::string output_path;
    std::optional<std::string> cache_path; // live runs only
    std::uint64_t seed = 0;
    std::optional<std::int64_t> limit;
    bool fail_fast = false;

    void validate() const;
};

/// One persisted interaction. Records with status "error" are retried on
/// resume; "ok" records are terminal.
struct RunRecord {
    std::string question_id;
    std::string prompt_sha256;
    std::string raw;
    std::optional<std::vector<modelgw::TokenLogprob>> token_logprobs;
    protocol::ParsedResponse parsed;
    std::string status = "ok";
    std::string error;
    std::string timestamp;
    int attempts = 1;
};

struct RunFile {
    protocol::RewardConfig scheme;
    std::uint64_t seed = 0;
    std::int64_t n_questions = 0; // dataset size after the limit
    std::string dataset_source;
    std::vector<RunRecord> records;
};

struct RunSummary {
    std::int64_t completed = 0; // new ok records this invocation
    std::int64_t skipped = 0;   // already present on resume
    std::int64_t errors = 0;
};

/// Renders, completes, parses, and persists each pending question; questions
/// already answered in the output file are skipped, so interrupted runs
/// resume where they left off.
RunSummary run_experiment(const RunConfig& cfg, modelgw::HttpTransport* transport = nullptr,
                          bool progress = false);

RunFile load_run_file(const std::string& path);

/// Per-popularity-cell view of a scored run.
struct TercileSlice {
    metrics::OutcomeCounts counts;
    std::optional<double> far_answered;
    std::optional<double> far_overall;
    std::optional<double> coverage;
    std::optional<double> aer;
};

struct TercileBreakdown {
    TercileSlice common;
    TercileSlice middle;
    TercileSlice rare;
};

struct ScoredRun {
    protocol::RewardConfig scheme;
    std::vector<metrics::ScoredTrial> trials; // dataset order
    metrics::OutcomeCounts counts;
    metrics::MetricReport report;
    std::optional<TercileBreakdown> terciles;
    bool incomplete = false;
};

/// Labels correctness per evaluated channel, builds the outcome counts, and
/// computes the full metric report. Duplicate question ids keep the last
/// terminal record.
ScoredRun score_run(const RunFile& run, const dataset::QuestionSet& questions);

std::string serialize_scored_run(const ScoredRun& scored);
ScoredRun deserialize_scored_run(const std::string& text);
ScoredRun load_scored_run(const std::string& path);

enum class ReportFormat { Csv, Json, Table };

ReportFormat report_format_from_name(const std::string& name);

/// One row per run with the frozen column schema; the table variant aligns
/// for terminal reading.
std::string render_report(const std::vector<ScoredRun>& runs, ReportFormat format);

} // namespace selans::runner
