#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stagerl {

/// P x N pass/fail outcomes, row-major.
struct OutcomeMatrix {
    std::vector<std::string> problems;
    std::size_t samples_per_problem = 0;
    std::vector<std::uint8_t> outcomes;
    std::string provenance;

    OutcomeMatrix() = default;
    OutcomeMatrix(std::vector<std::string> problem_ids, std::size_t n, std::string source = {});

    std::size_t num_problems() const noexcept { return problems.size(); }
    bool at(std::size_t p, std::size_t s) const { return outcomes[p * samples_per_problem + s] != 0; }
    void set(std::size_t p, std::size_t s, bool v) { outcomes[p * samples_per_problem + s] = v ? 1 : 0; }
    std::size_t successes(std::size_t p) const;
    double accuracy() const;

    /// Throws RaggedMatrix when not rectangular or N == 0.
    void validate() const;
    bool operator==(const OutcomeMatrix&) const = default;
};

struct AvgAtN {
    double mean = 0.0;
    /// Population std of the per-repetition benchmark means.
    double std = 0.0;
    int n = 0;
    int repetitions = 0;
    std::uint64_t seed = 0;
};

/// Each repetition draws n columns without replacement, shared by every
/// problem, and records the mean over problems and drawn columns.
AvgAtN avg_at_n(const OutcomeMatrix& m, int n, int repetitions = 100, std::uint64_t seed = 0);

/// 1 - C(N-c, K) / C(N, K) as a running product.
double pass_at_k_exact(std::int64_t c, std::int64_t N, std::int64_t K);

struct PassAtKEstimate {
    int K = 0;
    int repetitions = 0;
    std::uint64_t seed = 0;
    double estimate = 0.0;
    std::vector<double> per_repetition;
    double closed_form = 0.0;
};

/// Per repetition and problem, K columns are the first K of a seeded
/// permutation, so estimates for every K share draws and never decrease in K.
PassAtKEstimate pass_at_k(const OutcomeMatrix& m, int K, int repetitions = 100, std::uint64_t seed = 0);

struct SolveRateHistogram {
    std::vector<double> rates;
    std::vector<double> edges;
    /// counts[b] covers [edges[b], edges[b+1]); the last bucket is closed.
    std::vector<std::size_t> counts;
    std::size_t zero_rate = 0;
};

/// Edges must be strictly increasing from 0 to 1 (BadEdges otherwise).
SolveRateHistogram solve_rate_histogram(const OutcomeMatrix& m, const std::vector<double>& edges);

struct ScalingPoint {
    double x = 0.0;  // unique prompts
    double y = 0.0;  // responses per prompt
    double z = 0.0;  // accuracy
};

/// z = a * std(log2 x) + b * std(log2 y) + c, with population standardization.
struct ScalingFit {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double r_squared = 0.0;
    double mean_log2_x = 0.0;
    double std_log2_x = 0.0;
    double mean_log2_y = 0.0;
    double std_log2_y = 0.0;

    std::string summary() const;
    std::string to_json() const;
};

/// Throws Degenerate for fewer than 3 points, constant or collinear
/// log2 axes, or constant z.
ScalingFit fit_scaling(std::span<const ScalingPoint> points);

/// CSV with header x,y,z.
std::vector<ScalingPoint> load_points(const std::string& path);

enum class OutcomeFormat : std::uint8_t { Auto, Csv, Jsonl };

/// CSV rows `problem_id,sample_index,pass` (header optional) or JSON lines
/// {"problem_id", "sample_index", "pass"}. Problems keep first-seen order.
OutcomeMatrix ingest_outcomes(const std::string& path, OutcomeFormat format = OutcomeFormat::Auto);
OutcomeMatrix parse_outcomes(const std::string& text, OutcomeFormat format, const std::string& source = "<outcomes>");
std::string export_outcomes_csv(const OutcomeMatrix& m);
std::string export_outcomes_jsonl(const OutcomeMatrix& m);

}  // namespace stagerl
