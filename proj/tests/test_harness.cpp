#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ckspike/harness.hpp"

using namespace ckspike;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_finite_snr() {
    ExperimentConfig cfg;
    cfg.regime = Regime::finite_snr;
    cfg.n = 400;
    cfg.d = 1200;
    cfg.N = 1200;
    cfg.r = 6.0;
    cfg.activation = "soft_relu";
    cfg.seed = 11;
    cfg.trials = 2;
    return cfg;
}

} // namespace

TEST_CASE("config JSON round trip and quadratic size derivation") {
    const std::string text = R"({
      "regime": "quadratic", "d": 40, "gamma": 1.0, "phi": 1.0,
      "r": 2.0, "activation": "soft_relu", "seed": 7, "trials": 3,
      "tolerances": {"location_rel": 0.1}
    })";
    const ExperimentConfig cfg = ExperimentConfig::from_json_text(text);
    CHECK(cfg.n == 820);
    CHECK(cfg.N == 820);
    CHECK(cfg.tol.location_rel == doctest::Approx(0.1));
    const ExperimentConfig back = ExperimentConfig::from_json_text(cfg.to_json());
    CHECK(back.n == cfg.n);
    CHECK(back.seed == cfg.seed);
    CHECK(back.activation == cfg.activation);

    CHECK_THROWS(ExperimentConfig::from_json_text(R"({"regime": "bogus", "n": 4, "d": 2})"));
    CHECK_THROWS(ExperimentConfig::from_json_text(R"({"regime": "finite_snr"})"));
}

TEST_CASE("finite-SNR run matches the linear pair at desk scale") {
    ExperimentConfig cfg = small_finite_snr();
    cfg.tol.location_rel = 0.15;  // n = 400 fluctuates more than the acceptance scale
    cfg.tol.alignment_abs = 0.25;
    const ComparisonReport rep = run_regime(cfg);
    REQUIRE(!rep.rows.empty());
    bool found_linear = false;
    for (const auto& row : rep.rows) {
        if (row.pred.channel != Channel::linear) continue;
        found_linear = true;
        CHECK(row.pred.admissible);
        CHECK(row.matched);
        CHECK(row.measured_location.count == 2);
        CHECK(std::fabs(row.location_rel_error) < 0.15);
        CHECK(row.measured_alignments.at("label_y").mean < 0.1);
    }
    CHECK(found_linear);
    CHECK(rep.metrics.at("esd_ks") < 0.2);
}

TEST_CASE("re-running the same config reproduces the report byte for byte") {
    ExperimentConfig cfg = small_finite_snr();
    const std::string a = run_regime(cfg).to_json();
    const std::string b = run_regime(cfg).to_json();
    CHECK(a == b);
}

TEST_CASE("the report never passes a row whose error exceeds the tolerance") {
    ExperimentConfig cfg = small_finite_snr();
    cfg.tol.location_rel = 1e-9;  // unattainable at desk scale
    const ComparisonReport rep = run_regime(cfg);
    for (const auto& row : rep.rows) {
        if (!row.pred.admissible || !row.matched) continue;
        if (std::fabs(row.location_rel_error) > cfg.tol.location_rel) CHECK_FALSE(row.pass_location);
    }
    CHECK_FALSE(rep.pass);
}

TEST_CASE("standard error shrinks with the trial count") {
    ExperimentConfig cfg = small_finite_snr();
    cfg.n = 200;
    cfg.d = 600;
    cfg.N = 600;
    cfg.trials = 4;
    const ComparisonReport r4 = run_regime(cfg);
    cfg.trials = 16;
    const ComparisonReport r16 = run_regime(cfg);
    double se4 = 0.0, se16 = 0.0;
    for (const auto& row : r4.rows)
        if (row.pred.channel == Channel::linear && row.matched)
            se4 = row.measured_alignments.at("v1v2_span").se;
    for (const auto& row : r16.rows)
        if (row.pred.channel == Channel::linear && row.matched)
            se16 = row.measured_alignments.at("v1v2_span").se;
    REQUIRE(se4 > 0.0);
    REQUIRE(se16 > 0.0);
    CHECK(se16 < se4);
    // Aggregate formula itself scales exactly as 1/sqrt(k).
    std::vector<double> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(i % 2 ? 1.0 : -1.0);
    const Aggregate a4 = aggregate(xs);
    for (int i = 0; i < 12; ++i) xs.push_back(i % 2 ? 1.0 : -1.0);
    const Aggregate a16 = aggregate(xs);
    CHECK(a16.se == doctest::Approx(a4.se / 2.0).epsilon(0.05));
}

TEST_CASE("artifact files are written") {
    ExperimentConfig cfg = small_finite_snr();
    cfg.out_dir = "/tmp/ckspike_harness_artifacts";
    fs::remove_all(cfg.out_dir);
    (void)run_regime(cfg);
    for (const char* name : {"report.json", "predictions.json", "eigenvalues.csv", "histogram.csv",
                             "alignments.csv", "embedding.csv", "density.csv"}) {
        CHECK(fs::exists(fs::path(cfg.out_dir) / name));
    }
    // density.csv integrates to ~1 over the support (trapezoid on the grid).
    std::ifstream in(fs::path(cfg.out_dir) / "density.csv");
    std::string line;
    std::vector<std::pair<double, double>> pts;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 'x') continue;
        const auto comma = line.find(',');
        pts.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    }
    double mass = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
        mass += 0.5 * (pts[i].second + pts[i - 1].second) * (pts[i].first - pts[i - 1].first);
    CHECK(mass == doctest::Approx(1.0).epsilon(2e-3));
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("emit_density: zero off the support, atom mass carried by the CDF") {
    const BulkLaw law(1.0, 0.0, 1.0, 0.25);  // mu = MP(0.25), support [0.25, 2.25]
    const std::string path = "/tmp/ckspike_density_offsupport.csv";
    emit_density(law, 3.0, 5.0, 64, 0.0, path);
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 'x') continue;
        const auto comma = line.find(',');
        CHECK(std::stod(line.substr(comma + 1)) < 1e-6);
    }
    std::remove(path.c_str());

    // phi > 1: the CDF between the zero atom and the bulk equals the atom mass.
    const BulkLaw atom_law(1.0, 0.0, 1.0, 4.0);  // MP(4): atom 3/4, bulk [1, 9]
    const SupportIntervals sup = mu_support(atom_law);
    const DensityCurve curve = mu_cdf_curve(atom_law, sup);
    CHECK(curve.cdf_at(-1.0) == 0.0);
    CHECK(curve.cdf_at(0.5) == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(curve.cdf_at(20.0) == 1.0);
}

TEST_CASE("kernel regime: trivial eigenvalue recorded, informative pair matched") {
    ExperimentConfig cfg;
    cfg.regime = Regime::kernel_cluster;
    cfg.n = 600;
    cfg.d = 200;
    cfg.r = 2.0;
    cfg.kernel = "exp_half";
    cfg.seed = 3;
    cfg.trials = 2;
    cfg.tol.location_rel = 0.10;
    const ComparisonReport rep = run_regime(cfg);
    CHECK(rep.metrics.at("trivial_eig") == doctest::Approx(600.0).epsilon(1e-6));
    bool found = false;
    for (const auto& row : rep.rows)
        if (row.pred.channel == Channel::laplacian_informative) {
            found = true;
            CHECK(row.matched);
            CHECK(std::fabs(row.location_rel_error) < 0.10);
            CHECK(row.measured_alignments.at("label_y").mean < 0.1);
        }
    CHECK(found);
}

TEST_CASE("null model with GELU: no admissible prediction, no detected outlier") {
    ExperimentConfig cfg;
    cfg.regime = Regime::finite_snr;
    cfg.n = 200;
    cfg.d = 600;
    cfg.N = 600;
    cfg.r = 0.0;
    cfg.activation = "gelu";
    cfg.seed = 77;
    cfg.trials = 2;
    const ComparisonReport rep = run_regime(cfg);
    for (const auto& row : rep.rows) {
        CHECK_FALSE(row.pred.admissible);
        CHECK_FALSE(row.matched);
    }
    CHECK(rep.metrics.at("outlier_count_max") == 0.0);
    CHECK(rep.unmatched_clusters.empty());
    CHECK(rep.pass);
}

TEST_CASE("pretrained regime accepts an external weight matrix") {
    ExperimentConfig cfg;
    cfg.regime = Regime::pretrained;
    cfg.n = 200;
    cfg.d = 100;
    cfg.N = 200;
    cfg.r = 6.0;
    cfg.theta0 = 1.0;
    cfg.activation = "soft_relu";
    cfg.seed = 42;
    cfg.trials = 1;
    // Stand-in file: exactly the matrix the generator would produce.
    const WeightMatrix w = gen_weights(cfg.N, cfg.d, Stream(cfg.seed, "trial").bits(0), cfg.theta0);
    const std::string path = "/tmp/ckspike_test_weights.bin";
    save_matrix(w.W, path);
    cfg.weights_file = path;
    const ComparisonReport rep = run_regime(cfg);
    ExperimentConfig gen_cfg = cfg;
    gen_cfg.weights_file = "";
    const ComparisonReport ref = run_regime(gen_cfg);
    REQUIRE(rep.rows.size() == ref.rows.size());
    for (size_t i = 0; i < rep.rows.size(); ++i) {
        CHECK(rep.rows[i].matched == ref.rows[i].matched);
        if (rep.rows[i].matched)
            CHECK(rep.rows[i].measured_location.mean ==
                  doctest::Approx(ref.rows[i].measured_location.mean).epsilon(1e-12));
    }
    std::remove(path.c_str());
}

TEST_CASE("trial failures surface the trial seed") {
    ExperimentConfig cfg = small_finite_snr();
    cfg.n = 402;  // not divisible by 4 -> gen_xor throws inside the trial
    try {
        (void)run_regime(cfg);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("seed") != std::string::npos);
    }
}
