#include "stagerl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "stagerl/errors.hpp"
#include "stagerl/io.hpp"
#include "stagerl/rng.hpp"

namespace stagerl {

OutcomeMatrix::OutcomeMatrix(std::vector<std::string> problem_ids, std::size_t n, std::string source)
    : problems(std::move(problem_ids)),
      samples_per_problem(n),
      outcomes(problems.size() * n, 0),
      provenance(std::move(source)) {}

std::size_t OutcomeMatrix::successes(std::size_t p) const {
    std::size_t c = 0;
    for (std::size_t s = 0; s < samples_per_problem; ++s) c += at(p, s) ? 1 : 0;
    return c;
}

double OutcomeMatrix::accuracy() const {
    if (outcomes.empty()) return 0.0;
    std::size_t c = 0;
    for (auto v : outcomes) c += v;
    return static_cast<double>(c) / static_cast<double>(outcomes.size());
}

void OutcomeMatrix::validate() const {
    if (samples_per_problem == 0) throw RaggedMatrix("outcome matrix has no samples");
    if (outcomes.size() != problems.size() * samples_per_problem) throw RaggedMatrix("outcome matrix is not rectangular");
}

namespace {

/// First k entries of a seeded permutation of [0, n).
std::vector<std::size_t> draw_columns(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + rng.below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

AvgAtN avg_at_n(const OutcomeMatrix& m, int n, int repetitions, std::uint64_t seed) {
    m.validate();
    if (n < 1 || static_cast<std::size_t>(n) > m.samples_per_problem)
        throw BadN("n=" + std::to_string(n) + " outside [1, " + std::to_string(m.samples_per_problem) + "]");
    if (repetitions < 1) throw BadArgs("repetitions must be at least 1");
    AvgAtN out;
    out.n = n;
    out.repetitions = repetitions;
    out.seed = seed;
    const auto N = m.samples_per_problem;
    const auto un = static_cast<std::size_t>(n);
    if (un == N || m.problems.empty()) {
        out.mean = m.accuracy();
        return out;
    }
    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(repetitions));
    for (int r = 0; r < repetitions; ++r) {
        const auto cols = draw_columns(N, un, derive_seed({seed, static_cast<std::uint64_t>(r)}));
        std::size_t hits = 0;
        for (std::size_t p = 0; p < m.problems.size(); ++p)
            for (auto c : cols) hits += m.at(p, c) ? 1 : 0;
        means.push_back(static_cast<double>(hits) / static_cast<double>(un * m.problems.size()));
    }
    out.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
    out.std = population_std(means);
    return out;
}

double pass_at_k_exact(std::int64_t c, std::int64_t N, std::int64_t K) {
    if (N < 1 || c < 0 || c > N || K < 1 || K > N)
        throw BadArgs("pass_at_k_exact needs 0 <= c <= N and 1 <= K <= N");
    if (N - c < K) return 1.0;
    double miss = 1.0;
    for (std::int64_t i = 0; i < K; ++i)
        miss *= static_cast<double>(N - c - i) / static_cast<double>(N - i);
    return 1.0 - miss;
}

PassAtKEstimate pass_at_k(const OutcomeMatrix& m, int K, int repetitions, std::uint64_t seed) {
    m.validate();
    const auto N = m.samples_per_problem;
    if (K < 1 || static_cast<std::size_t>(K) > N)
        throw BadArgs("K=" + std::to_string(K) + " outside [1, " + std::to_string(N) + "]");
    if (repetitions < 1) throw BadArgs("repetitions must be at least 1");
    if (m.problems.empty()) throw BadArgs("outcome matrix has no problems");
    PassAtKEstimate out;
    out.K = K;
    out.repetitions = repetitions;
    out.seed = seed;
    const auto uk = static_cast<std::size_t>(K);
    const auto P = m.problems.size();
    for (int r = 0; r < repetitions; ++r) {
        std::size_t solved = 0;
        for (std::size_t p = 0; p < P; ++p) {
            const auto cols =
                draw_columns(N, uk, derive_seed({seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(p)}));
            for (auto c : cols)
                if (m.at(p, c)) {
                    ++solved;
                    break;
                }
        }
        out.per_repetition.push_back(static_cast<double>(solved) / static_cast<double>(P));
    }
    out.estimate = std::accumulate(out.per_repetition.begin(), out.per_repetition.end(), 0.0) /
                   static_cast<double>(repetitions);
    double cf = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        cf += pass_at_k_exact(static_cast<std::int64_t>(m.successes(p)), static_cast<std::int64_t>(N), K);
    out.closed_form = cf / static_cast<double>(P);
    return out;
}

SolveRateHistogram solve_rate_histogram(const OutcomeMatrix& m, const std::vector<double>& edges) {
    m.validate();
    if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0)
        throw BadEdges("edges must start at 0 and end at 1");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw BadEdges("edges must be strictly increasing");
    SolveRateHistogram h;
    h.edges = edges;
    h.counts.assign(edges.size() - 1, 0);
    for (std::size_t p = 0; p < m.problems.size(); ++p) {
        const std::size_t c = m.successes(p);
        const double rate = static_cast<double>(c) / static_cast<double>(m.samples_per_problem);
        h.rates.push_back(rate);
        if (c == 0) ++h.zero_rate;
        std::size_t b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), rate) - edges.begin());
        b = std::min(b == 0 ? 0 : b - 1, h.counts.size() - 1);
        ++h.counts[b];
    }
    return h;
}

std::string ScalingFit::summary() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "a=%.6g, b=%.6g, R²=%.6g", a, b, r_squared);
    return buf;
}

std::string ScalingFit::to_json() const {
    nlohmann::ordered_json j;
    j["a"] = a;
    j["b"] = b;
    j["c"] = c;
    j["r_squared"] = r_squared;
    j["standardization"] = {{"log2_x", {{"mean", mean_log2_x}, {"std", std_log2_x}}},
                            {"log2_y", {{"mean", mean_log2_y}, {"std", std_log2_y}}}};
    return j.dump(2);
}

ScalingFit fit_scaling(std::span<const ScalingPoint> points) {
    const std::size_t n = points.size();
    if (n < 3) throw Degenerate("need at least 3 points, got " + std::to_string(n));
    std::vector<double> lx, ly, z;
    for (const auto& p : points) {
        if (!(p.x > 0.0) || !(p.y > 0.0)) throw BadArgs("x and y must be positive");
        lx.push_back(std::log2(p.x));
        ly.push_back(std::log2(p.y));
        z.push_back(p.z);
    }
    const auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    ScalingFit f;
    f.mean_log2_x = mean(lx);
    f.mean_log2_y = mean(ly);
    f.std_log2_x = population_std(lx);
    f.std_log2_y = population_std(ly);
    if (f.std_log2_x == 0.0 || f.std_log2_y == 0.0) throw Degenerate("log2 x or log2 y is constant");

    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), 3);
    Eigen::VectorXd Z(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        X(r, 0) = (lx[i] - f.mean_log2_x) / f.std_log2_x;
        X(r, 1) = (ly[i] - f.mean_log2_y) / f.std_log2_y;
        X(r, 2) = 1.0;
        Z(r) = z[i];
    }
    const double corr = X.col(0).dot(X.col(1)) / static_cast<double>(n);
    if (1.0 - corr * corr < 1e-12) throw Degenerate("log2 x and log2 y are collinear");
    const double zmean = mean(z);
    double tss = 0.0;
    for (double v : z) tss += (v - zmean) * (v - zmean);
    if (tss == 0.0) throw Degenerate("z is constant");

    const Eigen::Matrix3d xtx = X.transpose() * X;
    const Eigen::Vector3d beta = xtx.ldlt().solve(X.transpose() * Z);
    f.a = beta(0);
    f.b = beta(1);
    f.c = beta(2);
    const double rss = (Z - X * beta).squaredNorm();
    f.r_squared = std::clamp(1.0 - rss / tss, 0.0, 1.0);
    return f;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, const std::string& source, std::size_t lineno) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::logic_error&) {
        throw ParseError(source, lineno, "'" + s + "' is not a number");
    }
    if (used != s.size()) throw ParseError(source, lineno, "'" + s + "' is not a number");
    return v;
}

bool parse_pass(const std::string& s, const std::string& source, std::size_t lineno) {
    if (s == "1" || s == "true" || s == "True") return true;
    if (s == "0" || s == "false" || s == "False") return false;
    throw ParseError(source, lineno, "pass must be 0/1/true/false, got '" + s + "'");
}

std::vector<std::pair<std::size_t, std::string>> text_lines(const std::string& text) {
    std::vector<std::pair<std::size_t, std::string>> out;
    std::istringstream in(text);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) out.emplace_back(n, line);
    }
    return out;
}

}  // namespace

std::vector<ScalingPoint> load_points(const std::string& path) {
    std::vector<ScalingPoint> pts;
    for (const auto& [lineno, line] : io::read_nonempty_lines(path)) {
        const auto cells = split_csv(line);
        if (lineno == 1 && !cells.empty() && cells[0] == "x") continue;
        if (cells.size() != 3) throw ParseError(path, lineno, "expected 3 columns x,y,z");
        pts.push_back({parse_number(cells[0], path, lineno), parse_number(cells[1], path, lineno),
                       parse_number(cells[2], path, lineno)});
    }
    return pts;
}

OutcomeMatrix parse_outcomes(const std::string& text, OutcomeFormat format, const std::string& source) {
    const auto lines = text_lines(text);
    if (format == OutcomeFormat::Auto)
        format = !lines.empty() && lines.front().second.front() == '{' ? OutcomeFormat::Jsonl : OutcomeFormat::Csv;

    std::vector<std::string> order;
    std::unordered_map<std::string, std::map<std::int64_t, bool>> cells;
    for (const auto& [lineno, line] : lines) {
        std::string pid;
        std::int64_t idx = 0;
        bool pass = false;
        if (format == OutcomeFormat::Csv) {
            const auto c = split_csv(line);
            if (&line == &lines.front().second && !c.empty() && c[0] == "problem_id") continue;
            if (c.size() != 3) throw ParseError(source, lineno, "expected problem_id,sample_index,pass");
            pid = c[0];
            const double d = parse_number(c[1], source, lineno);
            if (d < 0 || d != std::floor(d)) throw ParseError(source, lineno, "sample_index must be a non-negative integer");
            idx = static_cast<std::int64_t>(d);
            pass = parse_pass(c[2], source, lineno);
        } else {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(source, lineno, e.what());
            }
            if (!j.is_object() || !j.contains("problem_id") || !j.contains("sample_index") || !j.contains("pass"))
                throw ParseError(source, lineno, "expected problem_id, sample_index and pass");
            const auto& jp = j["problem_id"];
            pid = jp.is_string() ? jp.get<std::string>() : jp.dump();
            if (!j["sample_index"].is_number_integer() || j["sample_index"].get<std::int64_t>() < 0)
                throw ParseError(source, lineno, "sample_index must be a non-negative integer");
            idx = j["sample_index"].get<std::int64_t>();
            const auto& v = j["pass"];
            if (v.is_boolean()) pass = v.get<bool>();
            else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) pass = v.get<int>() == 1;
            else throw ParseError(source, lineno, "pass must be boolean or 0/1");
        }
        auto [it, fresh] = cells.try_emplace(pid);
        if (fresh) order.push_back(pid);
        if (!it->second.emplace(idx, pass).second)
            throw ParseError(source, lineno, "duplicate cell " + pid + "#" + std::to_string(idx));
    }
    if (order.empty()) throw RaggedMatrix("no outcomes in " + source);
    const std::size_t N = cells[order.front()].size();
    OutcomeMatrix m(order, N, source);
    for (std::size_t p = 0; p < order.size(); ++p) {
        const auto& row = cells[order[p]];
        if (row.size() != N || row.rbegin()->first != static_cast<std::int64_t>(N) - 1)
            throw RaggedMatrix("problem '" + order[p] + "' does not have samples 0.." + std::to_string(N - 1));
        for (const auto& [s, v] : row) m.set(p, static_cast<std::size_t>(s), v);
    }
    return m;
}

OutcomeMatrix ingest_outcomes(const std::string& path, OutcomeFormat format) {
    if (format == OutcomeFormat::Auto) {
        if (path.ends_with(".csv")) format = OutcomeFormat::Csv;
        else if (path.ends_with(".jsonl")) format = OutcomeFormat::Jsonl;
    }
    return parse_outcomes(io::read_file(path), format, path);
}

std::string export_outcomes_csv(const OutcomeMatrix& m) {
    std::string out = "problem_id,sample_index,pass\n";
    for (std::size_t p = 0; p < m.problems.size(); ++p)
        for (std::size_t s = 0; s < m.samples_per_problem; ++s)
            out += m.problems[p] + ',' + std::to_string(s) + ',' + (m.at(p, s) ? "1" : "0") + '\n';
    return out;
}

std::string export_outcomes_jsonl(const OutcomeMatrix& m) {
    std::string out;
    for (std::size_t p = 0; p < m.problems.size(); ++p)
        for (std::size_t s = 0; s < m.samples_per_problem; ++s) {
            nlohmann::ordered_json j;
            j["problem_id"] = m.problems[p];
            j["sample_index"] = s;
            j["pass"] = m.at(p, s);
            out += j.dump() + '\n';
        }
    return out;
}

}  // namespace stagerl
