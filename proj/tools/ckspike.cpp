// ckspike — command-line front end: theory predictions, Monte-Carlo regime
// simulations, density curves, parameter sweeps, and the quadratic-equivalent
// error check.
//
// Exit codes: 0 pass, 2 tolerance failure, 1 error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "ckspike/harness.hpp"

using namespace ckspike;
namespace fs = std::filesystem;

namespace {

ExperimentConfig load_config(const std::string& path, int trials_override, long long seed_override,
                             int threads_override, const std::string& out_override) {
    ExperimentConfig cfg = ExperimentConfig::from_json_file(path);
    if (trials_override > 0) cfg.trials = trials_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (threads_override > 0) cfg.threads = threads_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    return cfg;
}

int cmd_predict(const ExperimentConfig& cfg) {
    RegimeParams rp;
    rp.regime = cfg.regime;
    rp.act = make_activation(cfg.activation);
    rp.r = cfg.r;
    rp.theta0 = cfg.theta0;
    rp.psi = static_cast<double>(cfg.n) / cfg.d;
    rp.phi = cfg.N > 0 ? static_cast<double>(cfg.n) / cfg.N : 1.0;
    if (cfg.regime == Regime::quadratic)
        rp.gamma = static_cast<double>(cfg.n) / (static_cast<double>(cfg.d) * (cfg.d + 1) / 2.0);
    if (cfg.regime == Regime::kernel_cluster) rp.kernel_f = kernel_by_name(cfg.kernel);
    rp.n_hint = static_cast<double>(cfg.n);

    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : predict(rp)) {
        nlohmann::json jp;
        jp["channel"] = channel_name(p.channel);
        if (p.has_s) jp["s"] = p.s;
        jp["location"] = p.diverging()
                             ? p.value_at(p.growth_base == 'N' ? double(cfg.N) : double(cfg.n))
                             : p.location;
        if (p.diverging()) {
            jp["growth_coefficient"] = p.location;
            jp["growth_exponent"] = p.growth_exponent;
            jp["growth_base"] = std::string(1, p.growth_base);
        }
        jp["alignments"] = p.alignments;
        jp["admissible"] = p.admissible;
        jp["multiplicity"] = p.multiplicity;
        if (!p.note.empty()) jp["note"] = p.note;
        out.push_back(std::move(jp));
    }
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        std::ofstream f(fs::path(cfg.out_dir) / "predictions.json");
        f << out.dump(2) << "\n";
    }
    std::cout << out.dump(2) << std::endl;
    return 0;
}

int cmd_simulate(const ExperimentConfig& cfg) {
    const ComparisonReport rep = run_regime(cfg);
    std::cout << rep.to_json() << std::endl;
    return rep.pass ? 0 : 2;
}

int cmd_density(const ExperimentConfig& cfg) {
    const ActivationSpec act = make_activation(cfg.activation);
    const double psi = static_cast<double>(cfg.n) / cfg.d;
    const double phi = cfg.N > 0 ? static_cast<double>(cfg.n) / cfg.N : 1.0;
    const BulkLaw law = cfg.regime == Regime::quadratic
                            ? quadratic_law(act, static_cast<double>(cfg.n) /
                                                     (static_cast<double>(cfg.d) * (cfg.d + 1) / 2.0),
                                            phi)
                            : proportional_law(act, psi, phi);
    const SupportIntervals sup = mu_support(law);
    const std::string dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
    fs::create_directories(dir);
    const std::string path = (fs::path(dir) / "density.csv").string();
    emit_density(law, std::max(0.0, sup.lower() - 0.1 * sup.width()),
                 sup.upper() + 0.1 * sup.width(), 1024, cfg.eta, path);
    std::cout << "wrote " << path << std::endl;
    return 0;
}

int cmd_sweep(const ExperimentConfig& base, const std::string& param,
              const std::vector<double>& values) {
    bool all_pass = true;
    const std::string root = base.out_dir.empty() ? "sweep_out" : base.out_dir;
    for (size_t i = 0; i < values.size(); ++i) {
        ExperimentConfig cfg = base;
        if (param == "r")
            cfg.r = values[i];
        else if (param == "theta0")
            cfg.theta0 = values[i];
        else if (param == "alpha")
            cfg.activation = "cos:" + std::to_string(values[i]);
        else
            throw std::invalid_argument("sweep: unsupported parameter '" + param + "'");
        cfg.out_dir = (fs::path(root) / (param + "_" + std::to_string(values[i]))).string();
        const ComparisonReport rep = run_regime(cfg);
        all_pass = all_pass && rep.pass;
        std::cout << param << "=" << values[i] << " pass=" << (rep.pass ? "yes" : "no") << "\n";
    }
    return all_pass ? 0 : 2;
}

int cmd_qe_check(const ExperimentConfig& base, const std::vector<int>& sizes) {
    const ActivationSpec act = make_activation(base.activation);
    std::cout << "n,qe_error\n";
    std::vector<double> errs;
    for (int nn : sizes) {
        const XorDataset ds = gen_xor(nn, nn, base.r, base.seed);
        const WeightMatrix w = gen_weights(nn, nn, base.seed);
        const QePair qe = build_qe(w, ds.X, act, ds);
        errs.push_back(qe.qe_error);
        std::cout << nn << "," << qe.qe_error << "\n";
    }
    for (size_t i = 1; i < errs.size(); ++i)
        if (errs[i] >= errs[i - 1]) {
            std::cerr << "qe-check: error did not decrease between sizes\n";
            return 2;
        }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ckspike — spectral predictions and Monte-Carlo checks for conjugate kernels"};
    app.require_subcommand(1);

    std::string config_path, out_dir, sweep_param = "r";
    int trials = 0, threads = 0;
    long long seed = -1;
    std::vector<double> sweep_values;
    std::vector<int> qe_sizes{800, 1600, 3200};

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--trials", trials, "override trial count");
        sub->add_option("--seed", seed, "override seed");
        sub->add_option("--threads", threads, "worker threads (env CKSPIKE_THREADS overrides)");
    };

    CLI::App* predict_cmd = app.add_subcommand("predict", "theory predictions only");
    add_common(predict_cmd);
    CLI::App* simulate_cmd = app.add_subcommand("simulate", "one regime end-to-end");
    add_common(simulate_cmd);
    CLI::App* density_cmd = app.add_subcommand("density", "bulk density curve CSV");
    add_common(density_cmd);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid over r / theta0 / alpha");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--param", sweep_param, "r | theta0 | alpha");
    sweep_cmd->add_option("--values", sweep_values, "sweep values")->required();
    CLI::App* qe_cmd = app.add_subcommand("qe-check", "quadratic-equivalent error curve");
    add_common(qe_cmd);
    qe_cmd->add_option("--sizes", qe_sizes, "square sizes n = d = N");

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = load_config(config_path, trials, seed, threads, out_dir);
        if (app.got_subcommand(predict_cmd)) return cmd_predict(cfg);
        if (app.got_subcommand(simulate_cmd)) return cmd_simulate(cfg);
        if (app.got_subcommand(density_cmd)) return cmd_density(cfg);
        if (app.got_subcommand(sweep_cmd)) return cmd_sweep(cfg, sweep_param, sweep_values);
        if (app.got_subcommand(qe_cmd)) return cmd_qe_check(cfg, qe_sizes);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}
