// harness.hpp — experiment runner: loads a regime config, runs theory and
// Monte-Carlo trials, matches predicted spikes to detected clusters, and
// writes machine-readable reports (report.json, predictions.json, CSVs).

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ckspike/empirics.hpp"
#include "ckspike/theory.hpp"

namespace ckspike {

struct Tolerances {
    double location_rel = 0.05;   // relative error on matched locations
    double alignment_abs = 0.1;   // absolute error on alignment values
    double label_max = 0.05;      // per_n label mass allowed on non-label channels
    double ks_max = 0.05;         // ESD KS bound (null / bulk checks)
};

struct ExperimentConfig {
    Regime regime = Regime::finite_snr;
    int n = 0, d = 0, N = 0;
    double gamma = 0.0;           // quadratic regime: n = round(gamma * d(d+1)/2)
    double phi = 0.0;             // quadratic regime: N = round(n / phi)
    double r = 0.0;               // r (finite/pretrained/quadratic/kernel) or r0 (large_snr)
    double theta0 = 0.0;
    std::string activation = "gelu";
    std::string kernel = "";      // e.g. "exp_half" for f(x) = exp(-x/2)
    std::uint64_t seed = 1;
    int trials = 1;
    double margin = 0.04;
    double eta = 0.0;             // 0 = auto (1e-7 * bulk width)
    double match_window_rel = 0.25;
    int threads = 0;              // 0 = auto
    Tolerances tol;
    std::string out_dir = "";
    std::string weights_file = "";  // pretrained regime: external N x d matrix
                                    // standing in for the generated W1

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json() const;
};

struct Aggregate {
    double mean = 0.0, se = 0.0;
    int count = 0;
};

struct MatchedRow {
    SpikePrediction pred;                       // location instantiated via n/N
    double predicted_location = 0.0;
    Aggregate measured_location;
    std::map<std::string, double> predicted_alignments;
    std::map<std::string, Aggregate> measured_alignments;
    double location_rel_error = 0.0;
    bool matched = false;
    bool pass_location = true;
    bool pass_alignments = true;
};

struct ComparisonReport {
    std::vector<MatchedRow> rows;
    std::vector<double> unmatched_clusters;     // trial-0 unmatched cluster means
    std::map<std::string, double> metrics;      // esd_ks_mean, readout_accuracy, ...
    bool pass = true;
    std::string config_json;

    std::string to_json() const;
};

ComparisonReport run_regime(const ExperimentConfig& cfg);

// density.csv artifact: (x, density) over the law's support with support-edge
// annotation rows.
void emit_density(const BulkLaw& law, double x_lo, double x_hi, int points, double eta,
                  const std::string& path);

// Kernel presets for the distance kernel f and its derivatives at 2.
KernelFunction kernel_by_name(const std::string& name);
std::function<double(double)> kernel_evaluator(const std::string& name);

// Aggregate helpers (mean and standard error of the mean).
Aggregate aggregate(const std::vector<double>& xs);

} // namespace ckspike
