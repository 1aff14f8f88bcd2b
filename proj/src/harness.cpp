#include "ckspike/harness.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <thread>

#if defined(_OPENMP)
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace ckspike {

using nlohmann::json;

namespace {

json tolerances_to_json(const Tolerances& t) {
    return json{{"location_rel", t.location_rel},
                {"alignment_abs", t.alignment_abs},
                {"label_max", t.label_max},
                {"ks_max", t.ks_max}};
}

Tolerances tolerances_from_json(const json& j, Tolerances t) {
    if (j.contains("location_rel")) t.location_rel = j["location_rel"];
    if (j.contains("alignment_abs")) t.alignment_abs = j["alignment_abs"];
    if (j.contains("label_max")) t.label_max = j["label_max"];
    if (j.contains("ks_max")) t.ks_max = j["ks_max"];
    return t;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig c;
    c.regime = parse_regime(j.at("regime").get<std::string>());
    c.n = j.value("n", 0);
    c.d = j.value("d", 0);
    c.N = j.value("N", 0);
    c.gamma = j.value("gamma", 0.0);
    c.phi = j.value("phi", 0.0);
    c.r = j.value("r", j.value("r0", 0.0));
    c.theta0 = j.value("theta0", 0.0);
    c.activation = j.value("activation", std::string("gelu"));
    c.kernel = j.value("kernel", std::string(""));
    c.seed = j.value("seed", 1ull);
    c.trials = j.value("trials", 1);
    c.margin = j.value("margin", 0.04);
    c.eta = j.value("eta", 0.0);
    c.match_window_rel = j.value("match_window_rel", 0.25);
    c.threads = j.value("threads", 0);
    c.out_dir = j.value("out_dir", std::string(""));
    c.weights_file = j.value("weights_file", std::string(""));
    if (j.contains("tolerances")) c.tol = tolerances_from_json(j["tolerances"], c.tol);

    // Quadratic regime sizes may be given via (d, gamma, phi).
    if (c.regime == Regime::quadratic && c.n == 0 && c.gamma > 0.0) {
        const long p = static_cast<long>(c.d) * (c.d + 1) / 2;
        c.n = static_cast<int>(std::lround(c.gamma * static_cast<double>(p) / 4.0)) * 4;
        if (c.phi > 0.0 && c.N == 0) c.N = static_cast<int>(std::lround(c.n / c.phi));
    }
    if (c.trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (c.n <= 0 || c.d <= 0) throw std::invalid_argument("config: n and d must be positive");
    if (c.regime != Regime::kernel_cluster && c.N <= 0)
        throw std::invalid_argument("config: N must be positive for CK regimes");
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string ExperimentConfig::to_json() const {
    json j{{"regime", regime_name(regime)},
           {"n", n},
           {"d", d},
           {"N", N},
           {"gamma", gamma},
           {"phi", phi},
           {"r", r},
           {"theta0", theta0},
           {"activation", activation},
           {"kernel", kernel},
           {"seed", seed},
           {"trials", trials},
           {"margin", margin},
           {"eta", eta},
           {"match_window_rel", match_window_rel},
           {"threads", threads},
           {"out_dir", out_dir},
           {"weights_file", weights_file},
           {"tolerances", tolerances_to_json(tol)}};
    return j.dump(2);
}

KernelFunction kernel_by_name(const std::string& name) {
    if (name == "exp_half") {
        const double f2 = std::exp(-1.0);
        return KernelFunction{1.0, f2, -0.5 * f2, 0.25 * f2};
    }
    if (name == "gaussian") {
        const double f2 = std::exp(-2.0);
        return KernelFunction{1.0, f2, -f2, f2};
    }
    throw std::invalid_argument("kernel_by_name: unknown kernel '" + name + "'");
}

std::function<double(double)> kernel_evaluator(const std::string& name) {
    if (name == "exp_half") return [](double x) { return std::exp(-0.5 * x); };
    if (name == "gaussian") return [](double x) { return std::exp(-x); };
    throw std::invalid_argument("kernel_evaluator: unknown kernel '" + name + "'");
}

Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    a.count = static_cast<int>(xs.size());
    if (xs.empty()) return a;
    double m = 0.0;
    for (double v : xs) m += v;
    m /= xs.size();
    double s2 = 0.0;
    for (double v : xs) s2 += (v - m) * (v - m);
    a.mean = m;
    a.se = xs.size() > 1 ? std::sqrt(s2 / (xs.size() - 1.0) / xs.size()) : 0.0;
    return a;
}

namespace {

struct TrialMatch {
    bool found = false;
    double location = 0.0;
    std::map<std::string, double> aligns;
};

struct TrialData {
    std::vector<TrialMatch> matches;  // one per prediction
    std::vector<double> unmatched;    // leftover detected cluster means
    std::map<std::string, double> metrics;
};

// Greedy eigenvalue-level matcher: predictions claim their `multiplicity`
// nearest unclaimed outlier eigenvalues within the relative window.
std::vector<std::vector<int>> claim_outliers(const std::vector<const SpikePrediction*>& preds,
                                             const std::vector<double>& values,
                                             const std::vector<int>& indices, double window_rel,
                                             double abs_floor) {
    std::vector<std::vector<int>> claimed(preds.size());
    std::vector<bool> used(values.size(), false);
    // Most separated (largest |location|) predictions claim first.
    std::vector<size_t> order(preds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return std::fabs(preds[a]->location) > std::fabs(preds[b]->location);
    });
    for (size_t oi : order) {
        const double target = preds[oi]->location;
        const double window = std::max(window_rel * std::fabs(target), abs_floor);
        for (int m = 0; m < preds[oi]->multiplicity; ++m) {
            int best = -1;
            double best_d = window;
            for (size_t k = 0; k < values.size(); ++k) {
                if (used[k]) continue;
                const double dist = std::fabs(values[k] - target);
                if (dist <= best_d) {
                    best_d = dist;
                    best = static_cast<int>(k);
                }
            }
            if (best < 0) break;
            used[static_cast<size_t>(best)] = true;
            claimed[oi].push_back(indices[static_cast<size_t>(best)]);
        }
    }
    return claimed;
}

double per_n_overlap(const Matrix& vecs, const std::vector<int>& members, const Vector& y) {
    double acc = 0.0;
    for (int idx : members) {
        const double ip = vecs.col(idx).dot(y);
        acc += ip * ip;
    }
    return acc / static_cast<double>(y.size());
}

double unit_overlap(const Matrix& vecs, const std::vector<int>& members, const Vector& dir) {
    double acc = 0.0;
    const double nrm2 = dir.squaredNorm();
    for (int idx : members) {
        const double ip = vecs.col(idx).dot(dir);
        acc += ip * ip;
    }
    return acc / nrm2;
}

struct RegimeContext {
    ExperimentConfig cfg;
    ActivationSpec act;
    std::vector<SpikePrediction> preds;             // locations instantiated
    std::optional<BulkLaw> law;                     // detection law (CK regimes)
    double size_hint_n = 0.0, size_hint_N = 0.0;
};

std::uint64_t trial_seed(const ExperimentConfig& cfg, int t) {
    return Stream(cfg.seed, "trial").bits(static_cast<std::uint64_t>(t));
}

// ---------------------------------------------------------------- finite SNR
TrialData run_trial_finite_snr(const RegimeContext& ctx, int t) {
    const auto& cfg = ctx.cfg;
    const XorDataset ds = gen_xor(cfg.n, cfg.d, cfg.r, trial_seed(cfg, t));
    const WeightMatrix w = gen_weights(cfg.N, cfg.d, trial_seed(cfg, t), std::nullopt);
    const CkPair ck = build_ck(w, ds.X, ctx.act);
    const EigenSystem es = eigh(ck.K);
    const SpectrumReport rep = spectrum(es, *ctx.law, cfg.margin);

    std::vector<const SpikePrediction*> adm;
    for (const auto& p : ctx.preds)
        if (p.admissible) adm.push_back(&p);
    std::vector<double> ovals;
    std::vector<int> oidx;
    for (int idx : rep.outlier_indices) {
        ovals.push_back(es.values(idx));
        oidx.push_back(idx);
    }
    const auto claimed =
        claim_outliers(adm, ovals, oidx, cfg.match_window_rel, cfg.margin * rep.bulk_width);

    const Vector u = Vector::Constant(cfg.n, 1.0 / std::sqrt(static_cast<double>(cfg.n)));
    const Vector mhat = mean_direction(ds.X, ctx.act);

    TrialData td;
    td.matches.resize(ctx.preds.size());
    size_t ai = 0;
    for (size_t pi = 0; pi < ctx.preds.size(); ++pi) {
        if (!ctx.preds[pi].admissible) continue;
        const auto& members = claimed[ai++];
        if (members.empty()) continue;
        auto& m = td.matches[pi];
        m.found = true;
        double loc = 0.0;
        for (int idx : members) loc += es.values(idx);
        m.location = loc / static_cast<double>(members.size());
        for (const auto& [tag, v] : ctx.preds[pi].alignments) {
            (void)v;
            if (tag == "ones_u") m.aligns[tag] = unit_overlap(es.vectors, members, u);
            else if (tag == "mean_m") m.aligns[tag] = unit_overlap(es.vectors, members, mhat);
            else if (tag == "v1v2_span")
                m.aligns[tag] = unit_overlap(es.vectors, members, ds.v1) +
                                unit_overlap(es.vectors, members, ds.v2);
            else if (tag == "label_y") m.aligns[tag] = per_n_overlap(es.vectors, members, ds.y);
        }
    }
    // Label mass over all detected outliers.
    if (!rep.outlier_indices.empty())
        td.metrics["outlier_label_per_n"] = per_n_overlap(es.vectors, rep.outlier_indices, ds.y);
    else
        td.metrics["outlier_label_per_n"] = 0.0;
    td.metrics["esd_ks"] = rep.esd_ks;
    td.metrics["outlier_count"] = static_cast<double>(rep.outlier_indices.size());
    std::vector<bool> used(es.values.size(), false);
    for (const auto& cm : claimed)
        for (int idx : cm) used[static_cast<size_t>(idx)] = true;
    for (const auto& cl : rep.clusters) {
        bool any_used = false;
        for (int idx : cl.members) any_used = any_used || used[static_cast<size_t>(idx)];
        if (!any_used) td.unmatched.push_back(cl.mean);
    }
    return td;
}

// ----------------------------------------------------------------- large SNR
TrialData run_trial_large_snr(const RegimeContext& ctx, int t) {
    const auto& cfg = ctx.cfg;
    const double r = cfg.r * std::pow(static_cast<double>(cfg.n), 0.25);
    const XorDataset ds = gen_xor(cfg.n, cfg.d, r, trial_seed(cfg, t));
    const WeightMatrix w = gen_weights(cfg.N, cfg.d, trial_seed(cfg, t), std::nullopt);
    const CkPair ck = build_ck(w, ds.X, ctx.act);
    const EigenSystem es = eigh(ck.K);
    const SpectrumReport rep = spectrum(es, *ctx.law, cfg.margin);

    std::vector<const SpikePrediction*> adm;
    for (const auto& p : ctx.preds)
        if (p.admissible) adm.push_back(&p);
    std::vector<double> ovals;
    std::vector<int> oidx;
    for (int idx : rep.outlier_indices) {
        ovals.push_back(es.values(idx));
        oidx.push_back(idx);
    }
    const auto claimed =
        claim_outliers(adm, ovals, oidx, cfg.match_window_rel, cfg.margin * rep.bulk_width);

    TrialData td;
    td.matches.resize(ctx.preds.size());
    size_t ai = 0;
    double readout = 0.0;
    for (size_t pi = 0; pi < ctx.preds.size(); ++pi) {
        if (!ctx.preds[pi].admissible) continue;
        const auto& members = claimed[ai++];
        if (members.empty()) continue;
        auto& m = td.matches[pi];
        m.found = true;
        double loc = 0.0;
        for (int idx : members) loc += es.values(idx);
        m.location = loc / static_cast<double>(members.size());
        m.aligns["label_y"] = per_n_overlap(es.vectors, members, ds.y);
        if (ctx.preds[pi].channel == Channel::quad_label) {
            for (int idx : members)
                readout = std::max(readout, linear_readout(es.vectors.col(idx), ds.y));
        }
    }
    td.metrics["esd_ks"] = rep.esd_ks;
    td.metrics["readout_accuracy"] = readout;
    td.metrics["outlier_count"] = static_cast<double>(rep.outlier_indices.size());
    std::vector<bool> used(es.values.size(), false);
    for (const auto& cm : claimed)
        for (int idx : cm) used[static_cast<size_t>(idx)] = true;
    for (const auto& cl : rep.clusters) {
        bool any_used = false;
        for (int idx : cl.members) any_used = any_used || used[static_cast<size_t>(idx)];
        if (!any_used) td.unmatched.push_back(cl.mean);
    }
    return td;
}

// ---------------------------------------------------------------- pretrained
TrialData run_trial_pretrained(const RegimeContext& ctx, int t) {
    const auto& cfg = ctx.cfg;
    const XorDataset ds = gen_xor(cfg.n, cfg.d, cfg.r, trial_seed(cfg, t));
    WeightMatrix w;
    if (!cfg.weights_file.empty()) {
        // External weight import: the file stands in for the full W1.
        w.W = load_matrix(cfg.weights_file);
        if (w.N() != cfg.N || w.d() != cfg.d)
            throw std::runtime_error("weights_file dimensions do not match the config");
    } else {
        w = gen_weights(cfg.N, cfg.d, trial_seed(cfg, t), cfg.theta0);
    }
    const CkPair ck = build_ck(w, ds.X, ctx.act);
    const EigenSystem es_full = eigh(ck.K);

    const SampleSpike sp = sample_spike_direction(ds.X);
    const Matrix Ks = deflate_rank_one(ck.K, sp.s_hat);
    const EigenSystem es = eigh(Ks);
    const SpectrumReport rep = spectrum(es, *ctx.law, cfg.margin);

    TrialData td;
    td.matches.resize(ctx.preds.size());

    // The giant spike is matched against the top eigenvalue of the full CK.
    std::vector<const SpikePrediction*> adm;
    std::vector<size_t> adm_idx;
    for (size_t pi = 0; pi < ctx.preds.size(); ++pi) {
        const auto& p = ctx.preds[pi];
        if (p.channel == Channel::giant_diverging) {
            auto& m = td.matches[pi];
            m.found = true;
            m.location = es_full.values(es_full.values.size() - 1);
            const Eigen::Index top = es_full.values.size() - 1;
            const double ip = es_full.vectors.col(top).dot(sp.s_hat);
            m.aligns["s_hat"] = ip * ip;
            const double yl = es_full.vectors.col(top).dot(ds.y);
            m.aligns["label_y"] = yl * yl / static_cast<double>(cfg.n);
            continue;
        }
        if (p.admissible) {
            adm.push_back(&p);
            adm_idx.push_back(pi);
        }
    }
    std::vector<double> ovals;
    std::vector<int> oidx;
    for (int idx : rep.outlier_indices) {
        ovals.push_back(es.values(idx));
        oidx.push_back(idx);
    }
    const auto claimed =
        claim_outliers(adm, ovals, oidx, cfg.match_window_rel, cfg.margin * rep.bulk_width);
    Vector qs = sp.q - sp.s_hat * (sp.s_hat.dot(sp.q));
    for (size_t k = 0; k < adm.size(); ++k) {
        const auto& members = claimed[k];
        if (members.empty()) continue;
        auto& m = td.matches[adm_idx[k]];
        m.found = true;
        double loc = 0.0;
        for (int idx : members) loc += es.values(idx);
        m.location = loc / static_cast<double>(members.size());
        m.aligns["label_y"] = per_n_overlap(es.vectors, members, ds.y);
        if (adm[k]->channel == Channel::fq_root)
            m.aligns["q_hat"] = unit_overlap(es.vectors, members, qs);
    }
    td.metrics["esd_ks"] = rep.esd_ks;
    std::vector<bool> used(es.values.size(), false);
    for (const auto& cm : claimed)
        for (int idx : cm) used[static_cast<size_t>(idx)] = true;
    for (const auto& cl : rep.clusters) {
        bool any_used = false;
        for (int idx : cl.members) any_used = any_used || used[static_cast<size_t>(idx)];
        if (!any_used) td.unmatched.push_back(cl.mean);
    }
    return td;
}

// ----------------------------------------------------------------- quadratic
TrialData run_trial_quadratic(const RegimeContext& ctx, int t) {
    const auto& cfg = ctx.cfg;
    const XorDataset ds = gen_xor(cfg.n, cfg.d, cfg.r, trial_seed(cfg, t));
    const WeightMatrix w = gen_weights(cfg.N, cfg.d, trial_seed(cfg, t), std::nullopt);
    const Matrix U = nuisance_basis(ds.X, ctx.act);

    TrialData td;
    td.matches.resize(ctx.preds.size());

    // Population check: deflated lift Gram H_sigma = P (Q'Q) P.
    const Matrix Q = svec_lift(ds.X);
    Matrix QP = Q;
    QP.noalias() -= (Q * U) * U.transpose();
    const Matrix Hs = QP.transpose() * QP;
    const EigenSystem esH = eigh(Hs);
    const Eigen::Index topH = esH.values.size() - 1;

    const CkPair ck = build_ck(w, ds.X, ctx.act);
    const Matrix Ksig = apply_deflation(ck.K, U);
    const EigenSystem es = eigh(Ksig);
    const SpectrumReport rep = spectrum(es, *ctx.law, cfg.margin);

    for (size_t pi = 0; pi < ctx.preds.size(); ++pi) {
        const auto& p = ctx.preds[pi];
        auto& m = td.matches[pi];
        if (p.channel == Channel::population_spike) {
            m.found = true;
            m.location = esH.values(topH);
            const double ip = esH.vectors.col(topH).dot(ds.y);
            m.aligns["label_y"] = ip * ip / static_cast<double>(cfg.n);
        } else if (p.channel == Channel::quad_label && p.admissible) {
            // The label-aligned outlier: detected outlier eigenvector with the
            // largest per-sample label mass.
            int best = -1;
            double best_ov = 0.0;
            for (int idx : rep.outlier_indices) {
                const double ip = es.vectors.col(idx).dot(ds.y);
                const double ov = ip * ip / static_cast<double>(cfg.n);
                if (ov > best_ov) {
                    best_ov = ov;
                    best = idx;
                }
            }
            if (best >= 0) {
                m.found = true;
                m.location = es.values(best);
                m.aligns["label_y"] = best_ov;
            }
        }
    }
    td.metrics["esd_ks"] = rep.esd_ks;
    td.metrics["lift_top"] = esH.values(topH);
    td.metrics["outlier_count"] = static_cast<double>(rep.outlier_indices.size());
    // Label mass on any detected outlier (for the subcritical control).
    double max_ov = 0.0;
    for (int idx : rep.outlier_indices) {
        const double ip = es.vectors.col(idx).dot(ds.y);
        max_ov = std::max(max_ov, ip * ip / static_cast<double>(cfg.n));
    }
    td.metrics["max_outlier_label_per_n"] = max_ov;
    return td;
}

// ------------------------------------------------------------ kernel cluster
TrialData run_trial_kernel(const RegimeContext& ctx, int t) {
    const auto& cfg = ctx.cfg;
    const XorDataset ds = gen_xor(cfg.n, cfg.d, cfg.r, trial_seed(cfg, t));
    const auto f = kernel_evaluator(cfg.kernel);
    const KernelLaplacian kl = distance_kernel_laplacian(ds.X, f);
    const EigenSystem es = eigh(kl.L);
    const int n = cfg.n;

    TrialData td;
    td.matches.resize(ctx.preds.size());

    // Trivial eigenvalue n sits at the top; isolate the rest.
    const Eigen::Index last = es.values.size() - 1;
    td.metrics["trivial_eig"] = es.values(last);
    std::vector<double> vals(es.values.data(), es.values.data() + last);  // non-trivial
    // Gap-based isolation: an eigenvalue group at either end of the
    // non-trivial spectrum is isolated when a gap wider than margin * range
    // separates it from the rest (search window: 12 extreme positions).
    const double range = vals.back() - vals.front();
    const double iso_gap = cfg.margin * range;
    const int sz = static_cast<int>(vals.size());
    std::vector<int> iso;
    int cut_top = sz;  // suffix [cut_top, sz) is isolated
    for (int i = std::max(1, sz - 12); i < sz; ++i) {
        if (vals[static_cast<size_t>(i)] - vals[static_cast<size_t>(i - 1)] > iso_gap) {
            cut_top = i;
            break;
        }
    }
    int cut_bot = 0;  // prefix [0, cut_bot) is isolated
    for (int i = std::min(sz - 1, 12); i >= 1; --i) {
        if (vals[static_cast<size_t>(i)] - vals[static_cast<size_t>(i - 1)] > iso_gap) {
            cut_bot = i;
            break;
        }
    }
    for (int i = 0; i < cut_bot; ++i) iso.push_back(i);
    for (int i = cut_top; i < sz; ++i) iso.push_back(i);
    td.metrics["isolated_count"] = static_cast<double>(iso.size());

    std::vector<const SpikePrediction*> adm;
    std::vector<size_t> adm_idx;
    for (size_t pi = 0; pi < ctx.preds.size(); ++pi)
        if (ctx.preds[pi].admissible) {
            adm.push_back(&ctx.preds[pi]);
            adm_idx.push_back(pi);
        }
    std::vector<double> ovals;
    std::vector<int> oidx;
    for (int i : iso) {
        ovals.push_back(vals[static_cast<size_t>(i)]);
        oidx.push_back(i);
    }
    const auto claimed = claim_outliers(adm, ovals, oidx, cfg.match_window_rel, 0.5);

    // Cluster-indicator frame: J columns are the four cluster indicators.
    Matrix J = Matrix::Zero(n, 4);
    for (int k = 0; k < 4; ++k)
        for (int j = k * (n / 4); j < (k + 1) * (n / 4); ++j) J(j, k) = 1.0;

    double informative_label = 0.0;
    for (size_t k = 0; k < adm.size(); ++k) {
        const auto& members = claimed[k];
        if (members.empty()) continue;
        auto& m = td.matches[adm_idx[k]];
        m.found = true;
        double loc = 0.0;
        for (int idx : members) loc += es.values(idx);
        m.location = loc / static_cast<double>(members.size());
        m.aligns["label_y"] = per_n_overlap(es.vectors, members, ds.y);
        if (adm[k]->channel == Channel::laplacian_informative) {
            informative_label = m.aligns["label_y"];
            double diag = 0.0;
            for (int c = 0; c < 4; ++c) {
                double acc = 0.0;
                for (int idx : members) {
                    const double ip = es.vectors.col(idx).dot(J.col(c));
                    acc += ip * ip;
                }
                diag += acc / static_cast<double>(cfg.d);
            }
            m.aligns["cluster_indicator"] = diag / 4.0;
        }
    }
    td.metrics["informative_label_per_n"] = informative_label;
    return td;
}

TrialData run_trial(const RegimeContext& ctx, int t) {
    switch (ctx.cfg.regime) {
        case Regime::finite_snr: return run_trial_finite_snr(ctx, t);
        case Regime::large_snr: return run_trial_large_snr(ctx, t);
        case Regime::pretrained: return run_trial_pretrained(ctx, t);
        case Regime::quadratic: return run_trial_quadratic(ctx, t);
        case Regime::kernel_cluster: return run_trial_kernel(ctx, t);
    }
    throw std::logic_error("run_trial: unhandled regime");
}

RegimeContext make_context(const ExperimentConfig& cfg) {
    RegimeContext ctx;
    ctx.cfg = cfg;
    ctx.act = make_activation(cfg.activation);
    RegimeParams rp;
    rp.regime = cfg.regime;
    rp.act = ctx.act;
    rp.r = cfg.r;
    rp.theta0 = cfg.theta0;
    rp.psi = static_cast<double>(cfg.n) / cfg.d;
    rp.phi = cfg.N > 0 ? static_cast<double>(cfg.n) / cfg.N : 1.0;
    if (cfg.regime == Regime::quadratic) {
        const double p = static_cast<double>(cfg.d) * (cfg.d + 1) / 2.0;
        rp.gamma = static_cast<double>(cfg.n) / p;
    }
    if (cfg.regime == Regime::kernel_cluster) rp.kernel_f = kernel_by_name(cfg.kernel);
    rp.n_hint = static_cast<double>(cfg.n);
    ctx.preds = predict(rp);
    ctx.size_hint_n = cfg.n;
    ctx.size_hint_N = cfg.N;
    // Instantiate diverging predictions.
    for (auto& p : ctx.preds)
        if (p.diverging())
            p.location = p.value_at(p.growth_base == 'N' ? ctx.size_hint_N : ctx.size_hint_n);
    switch (cfg.regime) {
        case Regime::finite_snr:
        case Regime::large_snr:
        case Regime::pretrained:
            ctx.law = proportional_law(ctx.act, rp.psi, rp.phi);
            break;
        case Regime::quadratic:
            ctx.law = quadratic_law(ctx.act, rp.gamma, rp.phi);
            break;
        case Regime::kernel_cluster:
            break;
    }
    return ctx;
}

int pick_threads(const ExperimentConfig& cfg) {
    // CKSPIKE_THREADS overrides any config/flag value.
    if (const char* env = std::getenv("CKSPIKE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    if (cfg.threads > 0) return cfg.threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return std::max(1, static_cast<int>(hw / 2));
}

void write_artifacts(const ExperimentConfig& cfg, const RegimeContext& ctx,
                     const ComparisonReport& rep);

} // namespace

ComparisonReport run_regime(const ExperimentConfig& cfg) {
    const RegimeContext ctx = make_context(cfg);
    const int total_threads = pick_threads(cfg);
    const int workers = std::min(total_threads, cfg.trials);
    // Split the thread budget: `workers` concurrent trials, each with
    // `inner` BLAS/OpenMP threads.
    const int inner = std::max(1, total_threads / workers);
    openblas_set_num_threads(inner);
    Eigen::setNbThreads(inner);
#if defined(_OPENMP)
    omp_set_num_threads(inner);
#endif

    std::vector<TrialData> trials(static_cast<size_t>(cfg.trials));
    std::vector<std::string> errors(static_cast<size_t>(cfg.trials));
    for (int base = 0; base < cfg.trials; base += workers) {
        const int batch = std::min(workers, cfg.trials - base);
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(batch));
        for (int k = 0; k < batch; ++k) {
            const int t = base + k;
            pool.emplace_back([&, t] {
                try {
                    trials[static_cast<size_t>(t)] = run_trial(ctx, t);
                } catch (const std::exception& e) {
                    errors[static_cast<size_t>(t)] = e.what();
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (int t = 0; t < cfg.trials; ++t)
        if (!errors[static_cast<size_t>(t)].empty())
            throw std::runtime_error("trial " + std::to_string(t) + " (seed " +
                                     std::to_string(trial_seed(cfg, t)) +
                                     ") failed: " + errors[static_cast<size_t>(t)]);

    ComparisonReport rep;
    rep.config_json = cfg.to_json();
    for (size_t pi = 0; pi < ctx.preds.size(); ++pi) {
        MatchedRow row;
        row.pred = ctx.preds[pi];
        row.predicted_location = ctx.preds[pi].location;
        row.predicted_alignments = ctx.preds[pi].alignments;
        std::vector<double> locs;
        std::map<std::string, std::vector<double>> al;
        for (const auto& td : trials) {
            const auto& m = td.matches[pi];
            if (!m.found) continue;
            locs.push_back(m.location);
            for (const auto& [k, v] : m.aligns) al[k].push_back(v);
        }
        row.measured_location = aggregate(locs);
        row.matched = !locs.empty();
        for (const auto& [k, vs] : al) row.measured_alignments[k] = aggregate(vs);
        if (row.matched && row.predicted_location != 0.0)
            row.location_rel_error =
                (row.measured_location.mean - row.predicted_location) / row.predicted_location;
        if (row.pred.admissible) {
            row.pass_location =
                row.matched && std::fabs(row.location_rel_error) <= cfg.tol.location_rel;
            for (const auto& [k, pv] : row.predicted_alignments) {
                const auto it = row.measured_alignments.find(k);
                if (it == row.measured_alignments.end()) continue;
                const bool label_zero = (k == "label_y" && pv == 0.0);
                const double err = std::fabs(it->second.mean - pv);
                if (label_zero ? it->second.mean > cfg.tol.label_max : err > cfg.tol.alignment_abs)
                    row.pass_alignments = false;
            }
            rep.pass = rep.pass && row.pass_location && row.pass_alignments;
        }
        rep.rows.push_back(std::move(row));
    }
    // Average numeric metrics over trials.
    std::map<std::string, std::vector<double>> metric_vals;
    for (const auto& td : trials)
        for (const auto& [k, v] : td.metrics) metric_vals[k].push_back(v);
    for (const auto& [k, vs] : metric_vals) {
        const Aggregate a = aggregate(vs);
        rep.metrics[k] = a.mean;
        rep.metrics[k + "_se"] = a.se;
        double mx = vs.front();
        for (double v : vs) mx = std::max(mx, v);
        rep.metrics[k + "_max"] = mx;
    }
    rep.unmatched_clusters = trials.front().unmatched;

    if (!cfg.out_dir.empty()) write_artifacts(cfg, ctx, rep);
    return rep;
}

std::string ComparisonReport::to_json() const {
    json j;
    j["pass"] = pass;
    j["config"] = json::parse(config_json);
    j["metrics"] = metrics;
    j["unmatched_clusters"] = unmatched_clusters;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        json row;
        row["channel"] = channel_name(r.pred.channel);
        row["admissible"] = r.pred.admissible;
        row["multiplicity"] = r.pred.multiplicity;
        if (r.pred.has_s) row["s"] = r.pred.s;
        if (r.pred.diverging()) {
            row["growth_exponent"] = r.pred.growth_exponent;
            row["growth_base"] = std::string(1, r.pred.growth_base);
        }
        if (!r.pred.note.empty()) row["note"] = r.pred.note;
        row["predicted_location"] = r.predicted_location;
        row["matched"] = r.matched;
        if (r.matched) {
            row["measured_location"] = {{"mean", r.measured_location.mean},
                                        {"se", r.measured_location.se},
                                        {"trials", r.measured_location.count}};
            row["location_rel_error"] = r.location_rel_error;
        }
        row["predicted_alignments"] = r.predicted_alignments;
        json ma;
        for (const auto& [k, a] : r.measured_alignments)
            ma[k] = {{"mean", a.mean}, {"se", a.se}, {"trials", a.count}};
        row["measured_alignments"] = ma;
        row["pass_location"] = r.pass_location;
        row["pass_alignments"] = r.pass_alignments;
        j["rows"].push_back(std::move(row));
    }
    return j.dump(2);
}

void emit_density(const BulkLaw& law, double x_lo, double x_hi, int points, double eta,
                  const std::string& path) {
    const SupportIntervals sup = mu_support(law);
    if (eta <= 0.0) eta = 1e-7 * sup.width();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_density: cannot open " + path);
    out.precision(12);
    for (const auto& [lo, hi] : sup.intervals) out << "# support_edge," << lo << "," << hi << "\n";
    if (sup.has_zero_atom) out << "# zero_atom_mass," << (1.0 - 1.0 / law.phi()) << "\n";
    out << "x,density\n";
    for (int i = 0; i < points; ++i) {
        const double x = x_lo + (x_hi - x_lo) * i / (points - 1);
        double dens = 0.0;
        if (x > 0.0) dens = mu_density(law, x, eta).density;
        out << x << "," << dens << "\n";
    }
}

namespace {

void write_artifacts(const ExperimentConfig& cfg, const RegimeContext& ctx,
                     const ComparisonReport& rep) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);

    {
        std::ofstream out(dir / "report.json");
        out << rep.to_json() << "\n";
    }
    {
        json preds = json::array();
        for (const auto& p : ctx.preds) {
            json jp;
            jp["channel"] = channel_name(p.channel);
            if (p.has_s) jp["s"] = p.s;
            jp["location"] = p.location;
            if (p.diverging()) {
                jp["growth_exponent"] = p.growth_exponent;
                jp["growth_base"] = std::string(1, p.growth_base);
            }
            jp["alignments"] = p.alignments;
            jp["admissible"] = p.admissible;
            jp["multiplicity"] = p.multiplicity;
            if (!p.note.empty()) jp["note"] = p.note;
            preds.push_back(std::move(jp));
        }
        if (cfg.regime == Regime::kernel_cluster) {
            preds.push_back(json{{"channel", "laplacian_trivial"},
                                 {"location", static_cast<double>(cfg.n)},
                                 {"admissible", true},
                                 {"multiplicity", 1}});
        }
        std::ofstream out(dir / "predictions.json");
        out << preds.dump(2) << "\n";
    }

    // Re-run trial 0 to produce the spectral artifacts.
    const std::uint64_t s0 = trial_seed(cfg, 0);
    EigenSystem es;
    Vector labels;
    if (cfg.regime == Regime::kernel_cluster) {
        const XorDataset ds = gen_xor(cfg.n, cfg.d, cfg.r, s0);
        es = eigh(distance_kernel_laplacian(ds.X, kernel_evaluator(cfg.kernel)).L);
        labels = ds.y;
    } else {
        const double r_eff = (cfg.regime == Regime::large_snr)
                                 ? cfg.r * std::pow(static_cast<double>(cfg.n), 0.25)
                                 : cfg.r;
        const XorDataset ds = gen_xor(cfg.n, cfg.d, r_eff, s0);
        const WeightMatrix w = gen_weights(
            cfg.N, cfg.d, s0,
            cfg.regime == Regime::pretrained ? std::optional<double>(cfg.theta0) : std::nullopt);
        Matrix K = build_ck(w, ds.X, ctx.act).K;
        if (cfg.regime == Regime::pretrained)
            K = deflate_rank_one(K, sample_spike_direction(ds.X).s_hat);
        if (cfg.regime == Regime::quadratic) K = apply_deflation(K, nuisance_basis(ds.X, ctx.act));
        es = eigh(K);
        labels = ds.y;
    }

    {
        std::ofstream out(dir / "eigenvalues.csv");
        out.precision(12);
        out << "index,value\n";
        for (Eigen::Index i = 0; i < es.values.size(); ++i) out << i << "," << es.values(i) << "\n";
    }
    {
        // Histogram over the bulk range with the theory overlay when a law exists.
        const int bins = 120;
        double lo = es.values.minCoeff(), hi = es.values.maxCoeff();
        std::optional<DensityCurve> curve;
        if (ctx.law) {
            const SupportIntervals sup = mu_support(*ctx.law);
            lo = std::min(lo, sup.lower() - 0.05 * sup.width());
            hi = std::max(std::min(hi, sup.upper() + 2.0 * sup.width()),
                          sup.upper() + 0.05 * sup.width());
            curve = mu_cdf_curve(*ctx.law, sup);
        }
        std::ofstream out(dir / "histogram.csv");
        out.precision(12);
        out << "bin_left,bin_right,count,theory_density\n";
        const double w = (hi - lo) / bins;
        for (int b = 0; b < bins; ++b) {
            const double bl = lo + b * w, br = bl + w;
            int count = 0;
            for (Eigen::Index i = 0; i < es.values.size(); ++i)
                if (es.values(i) >= bl && es.values(i) < br) ++count;
            double dens = 0.0;
            if (curve) {
                const double mid = 0.5 * (bl + br);
                const auto& cx = curve->x;
                if (mid >= cx.front() && mid <= cx.back()) {
                    const auto it = std::upper_bound(cx.begin(), cx.end(), mid);
                    const size_t j = std::min(curve->density.size() - 1,
                                              static_cast<size_t>(it - cx.begin()));
                    dens = curve->density[j];
                }
            }
            out << bl << "," << br << "," << count << "," << dens << "\n";
        }
    }
    {
        std::ofstream out(dir / "alignments.csv");
        out.precision(12);
        out << "cluster,direction,value,normalization\n";
        int ci = 0;
        for (const auto& row : rep.rows) {
            for (const auto& [k, a] : row.measured_alignments) {
                const char* nrm = (k == "label_y") ? "per_n" : "unit";
                out << channel_name(row.pred.channel) << "-" << ci << "," << k << "," << a.mean
                    << "," << nrm << "\n";
            }
            ++ci;
        }
    }
    {
        // Kernel-PCA embedding on the two leading non-trivial components.
        const Eigen::Index nn = es.values.size();
        std::vector<int> comps;
        if (cfg.regime == Regime::kernel_cluster && nn >= 3)
            comps = {static_cast<int>(nn - 2), static_cast<int>(nn - 3)};
        else if (nn >= 2)
            comps = {static_cast<int>(nn - 1), static_cast<int>(nn - 2)};
        const Matrix emb = embedding(es, comps);
        std::ofstream out(dir / "embedding.csv");
        out.precision(12);
        out << "sample_index,pc_i,pc_j,label\n";
        for (Eigen::Index i = 0; i < emb.rows(); ++i)
            out << i << "," << emb(i, 0) << "," << emb(i, 1) << "," << labels(i) << "\n";
    }
    if (ctx.law) {
        const SupportIntervals sup = mu_support(*ctx.law);
        emit_density(*ctx.law, std::max(0.0, sup.lower() - 0.1 * sup.width()),
                     sup.upper() + 0.1 * sup.width(), 512, cfg.eta, (dir / "density.csv").string());
    }
}

} // namespace

} // namespace ckspike
