#include "ckspike/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ckspike {

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::finite_snr: return "finite_snr";
        case Regime::large_snr: return "large_snr";
        case Regime::pretrained: return "pretrained";
        case Regime::quadratic: return "quadratic";
        case Regime::kernel_cluster: return "kernel_cluster";
    }
    return "unknown";
}

Regime parse_regime(const std::string& name) {
    if (name == "finite_snr") return Regime::finite_snr;
    if (name == "large_snr") return Regime::large_snr;
    if (name == "pretrained") return Regime::pretrained;
    if (name == "quadratic") return Regime::quadratic;
    if (name == "kernel_cluster") return Regime::kernel_cluster;
    throw std::invalid_argument("parse_regime: unknown regime '" + name + "'");
}

BulkLaw proportional_law(const ActivationSpec& act, double psi, double phi) {
    const double b2 = act.b_sigma * act.b_sigma;
    return BulkLaw(1.0 - b2, b2, psi, phi);
}

BulkLaw quadratic_law(const ActivationSpec& act, double gamma, double phi) {
    const double b2 = act.b_sigma * act.b_sigma;
    const double a2 = 0.5 * act.c_sigma * act.c_sigma;
    return BulkLaw(1.0 - b2 - a2, a2, gamma, phi);
}

namespace {

// Fill location/admissibility of an s-parametrized spike; admissibility is
// z'(s) > 0 together with z(s) outside supp(mu) u {0}.
void finalize_spike(const BulkLaw& law, const SupportIntervals& sup, SpikePrediction& p) {
    p.location = law.z_of(p.s);
    const double slack = 1e-9 * (1.0 + sup.width());
    p.admissible = law.z_prime(p.s) > 0.0 && !sup.contains(p.location, slack) &&
                   std::fabs(p.location) > slack;
}

SpikePrediction branch_failure(Channel ch, const std::string& why) {
    SpikePrediction p;
    p.channel = ch;
    p.has_s = false;
    p.admissible = false;
    p.note = why;
    return p;
}

} // namespace

std::vector<SpikePrediction> predict_finite_snr(const RegimeParams& p) {
    const double b = p.act.b_sigma, c = p.act.c_sigma;
    const BulkLaw law = proportional_law(p.act, p.psi, p.phi);
    const SupportIntervals sup = mu_support(law);
    const double tau = 0.5 * c * c * p.psi;
    const double beta_lin = 0.5 * p.r * p.r * p.psi * b * b;

    std::vector<SpikePrediction> out;
    if (tau > 0.0) {
        SpikePrediction un;
        un.channel = Channel::uninformative;
        un.multiplicity = 2;
        try {
            un.s = law.t_inverse(1.0 / tau);
            finalize_spike(law, sup, un);
            un.alignments["ones_u"] = law.varphi(un.s);
            un.alignments["mean_m"] = gamma_r(law, un.s, tau);
            un.alignments["label_y"] = 0.0;
        } catch (const std::domain_error& e) {
            un = branch_failure(Channel::uninformative, e.what());
            un.multiplicity = 2;
        }
        out.push_back(std::move(un));
    }
    if (beta_lin > 0.0) {
        SpikePrediction lin;
        lin.channel = Channel::linear;
        lin.multiplicity = 2;
        try {
            lin.s = law.t_inverse(1.0 / beta_lin);
            finalize_spike(law, sup, lin);
            lin.alignments["v1v2_span"] = 2.0 * gamma_r(law, lin.s, beta_lin);
            lin.alignments["label_y"] = 0.0;
        } catch (const std::domain_error& e) {
            lin = branch_failure(Channel::linear, e.what());
            lin.multiplicity = 2;
        }
        out.push_back(std::move(lin));
    }
    if (out.size() == 2 && out[0].has_s && out[1].has_s &&
        std::fabs(out[0].s - out[1].s) < 1e-9)
        for (auto& pr : out) pr.note = "collision: s_un == s_lin";
    return out;
}

std::vector<SpikePrediction> predict_large_snr(const RegimeParams& p) {
    const double b = p.act.b_sigma, c = p.act.c_sigma;
    const double r0 = p.r;
    const BulkLaw law = proportional_law(p.act, p.psi, p.phi);
    const SupportIntervals sup = mu_support(law);
    const double tau = 0.5 * c * c * p.psi;
    const double kappa0 = 0.25 * r0 * r0 * r0 * r0 * p.psi * p.psi;
    const double beta_quad = c * c * kappa0;

    std::vector<SpikePrediction> out;
    if (b != 0.0 && r0 > 0.0) {
        SpikePrediction div;
        div.channel = Channel::giant_diverging;
        div.has_s = false;
        div.multiplicity = 2;
        div.location = 0.5 * b * b * r0 * r0 * p.psi;
        div.growth_exponent = 0.5;
        div.growth_base = 'n';
        div.admissible = true;
        div.alignments["label_y"] = 0.0;
        out.push_back(std::move(div));
    }
    if (c != 0.0 && beta_quad > 0.0) {
        struct Cand {
            Channel ch;
            double t;
        };
        const double root = std::sqrt(beta_quad / (tau + beta_quad));
        const std::vector<Cand> cands{{Channel::quad_label, 1.0 / beta_quad},
                                      {Channel::quad_nonlabel_plus, (1.0 + root) / tau},
                                      {Channel::quad_nonlabel_minus, (1.0 - root) / tau}};
        for (const auto& cd : cands) {
            SpikePrediction sp;
            sp.channel = cd.ch;
            try {
                sp.s = law.t_inverse(cd.t);
                finalize_spike(law, sup, sp);
                sp.alignments["label_y"] =
                    (cd.ch == Channel::quad_label) ? gamma_r(law, sp.s, beta_quad) : 0.0;
            } catch (const std::domain_error& e) {
                sp = branch_failure(cd.ch, e.what());
            }
            out.push_back(std::move(sp));
        }
    }
    return merge_collisions(std::move(out));
}

double fq_value(double tau, double beta_q, double omega_q, double t) {
    const double a = 1.0 - tau * t;
    return a * a - beta_q * t * (1.0 - tau * omega_q * t) * (1.0 - (2.0 / 3.0) * tau * t);
}

double fq_derivative(double tau, double beta_q, double omega_q, double t) {
    const double h = 1.0 - tau * omega_q * t;
    const double g = 1.0 - (2.0 / 3.0) * tau * t;
    return -2.0 * tau * (1.0 - tau * t) -
           beta_q * (h * g + t * (-tau * omega_q) * g + t * h * (-(2.0 / 3.0) * tau));
}

std::vector<double> fq_real_roots(double tau, double beta_q, double omega_q) {
    // Coefficients of F_q(t) = c3 t^3 + c2 t^2 + c1 t + c0.
    const double c0 = 1.0;
    const double c1 = -2.0 * tau - beta_q;
    const double c2 = tau * tau + beta_q * tau * (omega_q + 2.0 / 3.0);
    const double c3 = -beta_q * (2.0 / 3.0) * tau * tau * omega_q;
    std::vector<double> roots;
    if (std::fabs(c3) < 1e-300) {
        // Degenerate to a quadratic (beta_q = 0 or tau = 0 or omega_q = 0).
        if (std::fabs(c2) < 1e-300) {
            if (c1 != 0.0) roots.push_back(-c0 / c1);
        } else {
            const double disc = c1 * c1 - 4.0 * c2 * c0;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                roots.push_back((-c1 + sq) / (2.0 * c2));
                roots.push_back((-c1 - sq) / (2.0 * c2));
            }
        }
    } else {
        // Depressed cubic via t = u - c2/(3 c3).
        const double a = c2 / c3, b = c1 / c3, c = c0 / c3;
        const double pq_p = b - a * a / 3.0;
        const double pq_q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        const double shift = -a / 3.0;
        const double disc = -(4.0 * pq_p * pq_p * pq_p + 27.0 * pq_q * pq_q);
        if (disc > 0.0) {
            // Three distinct real roots (trigonometric form).
            const double m = 2.0 * std::sqrt(-pq_p / 3.0);
            const double theta = std::acos(std::clamp(3.0 * pq_q / (pq_p * m), -1.0, 1.0)) / 3.0;
            for (int k = 0; k < 3; ++k)
                roots.push_back(shift + m * std::cos(theta - 2.0 * 3.14159265358979323846 * k / 3.0));
        } else {
            // One real root (Cardano).
            const double half_q = pq_q / 2.0;
            const double rad = std::sqrt(half_q * half_q + pq_p * pq_p * pq_p / 27.0);
            const double u = std::cbrt(-half_q + rad);
            const double v = std::cbrt(-half_q - rad);
            roots.push_back(shift + u + v);
        }
    }
    // Newton polish against the product form (slow convergence near a
    // double root is expected; the repeated-root flag covers that case).
    for (double& t : roots) {
        for (int it = 0; it < 40; ++it) {
            const double f = fq_value(tau, beta_q, omega_q, t);
            const double fp = fq_derivative(tau, beta_q, omega_q, t);
            if (fp == 0.0) break;
            const double step = f / fp;
            t -= step;
            if (std::fabs(step) < 1e-15 * (1.0 + std::fabs(t))) break;
        }
    }
    std::sort(roots.begin(), roots.end());
    return roots;
}

std::vector<SpikePrediction> predict_pretrained(const RegimeParams& p) {
    if (p.theta0 <= 0.0) throw std::invalid_argument("predict_pretrained: theta0 must be positive");
    const double b = p.act.b_sigma, c = p.act.c_sigma, r = p.r;
    const BulkLaw law = proportional_law(p.act, p.psi, p.phi);
    const SupportIntervals sup = mu_support(law);
    const double tau = 0.5 * c * c * p.psi;
    const double beta_lin = 0.5 * r * r * p.psi * b * b;
    const double kappa = 1.0 + 0.5 * r * r;
    const double eta = 3.0 + 3.0 * r * r + 0.5 * r * r * r * r;
    const double kappa_perp = eta - kappa * kappa;
    const double omega_q = kappa_perp / eta;
    const double chi_y = r * r * r * r / (4.0 * eta);
    const double beta_q = 0.75 * c * c * std::pow(p.theta0, 4.0) * p.phi * eta;

    std::vector<SpikePrediction> out;
    if (b != 0.0) {
        SpikePrediction giant;
        giant.channel = Channel::giant_diverging;
        giant.has_s = false;
        giant.location = b * b * p.theta0 * p.theta0 * p.phi * kappa;
        giant.growth_exponent = 0.5;
        giant.growth_base = 'N';
        giant.admissible = true;
        giant.alignments["s_hat"] = 1.0;
        giant.alignments["label_y"] = 0.0;
        out.push_back(std::move(giant));
    }
    if (beta_lin > 0.0) {
        for (const double t : {1.0 / beta_lin, kappa / beta_lin}) {
            SpikePrediction lin;
            lin.channel = Channel::linear;
            try {
                lin.s = law.t_inverse(t);
                finalize_spike(law, sup, lin);
                lin.alignments["label_y"] = 0.0;
            } catch (const std::domain_error& e) {
                lin = branch_failure(Channel::linear, e.what());
            }
            out.push_back(std::move(lin));
        }
    }
    // Coupled mean/covariance/quadratic block.
    const auto roots = fq_real_roots(tau, beta_q, omega_q);
    for (size_t i = 0; i < roots.size(); ++i) {
        const double t = roots[i];
        SpikePrediction sp;
        sp.channel = Channel::fq_root;
        const bool repeated = (i > 0 && std::fabs(t - roots[i - 1]) < 1e-8) ||
                              (i + 1 < roots.size() && std::fabs(roots[i + 1] - t) < 1e-8);
        if (repeated) sp.note = "repeated F_q root";
        try {
            sp.s = law.t_inverse(t);
            finalize_spike(law, sup, sp);
            const double fp = fq_derivative(tau, beta_q, omega_q, t);
            const Cplx m_mu = law.m_mu_from_s(Cplx(sp.s, 0.0));
            const double num = beta_q * chi_y * t * (1.0 - tau * t) * (1.0 - (2.0 / 3.0) * tau * t);
            sp.alignments["label_y"] =
                -(m_mu.real() * law.z_prime(sp.s) / law.T_prime(sp.s)) * num / fp;
        } catch (const std::domain_error& e) {
            sp = branch_failure(Channel::fq_root, e.what());
            if (repeated) sp.note += "; repeated F_q root";
        }
        out.push_back(std::move(sp));
    }
    return merge_collisions(std::move(out));
}

std::vector<SpikePrediction> predict_quadratic(const RegimeParams& p) {
    if (p.r <= 0.0) throw std::invalid_argument("predict_quadratic: r must be positive");
    const double c = p.act.c_sigma;
    if (c == 0.0) throw std::invalid_argument("predict_quadratic: needs c_sigma != 0");
    const double gamma = p.gamma;
    const double ell = std::pow(p.r, 4.0) / 4.0;
    const double b2 = p.act.b_sigma * p.act.b_sigma;
    const double alpha0 = 1.0 - b2 - 0.5 * c * c;
    const double alpha2 = 0.5 * c * c;

    std::vector<SpikePrediction> out;
    // Strict supercriticality with a relative guard so exact-boundary inputs
    // (e.g. r = sqrt(2) at gamma = 1) classify as subcritical.
    if (!(ell > (1.0 / std::sqrt(gamma)) * (1.0 + 1e-9))) {
        SpikePrediction none;
        none.channel = Channel::quad_label;
        none.has_s = false;
        none.admissible = false;
        none.note = "subcritical: ell <= gamma^{-1/2}";
        out.push_back(std::move(none));
        return out;
    }
    const double lam_out = 1.0 + gamma + gamma * ell + 1.0 / ell;
    const double align_lift = (gamma * ell * ell - 1.0) / (gamma * ell * (ell + 1.0));
    const double lambda_y_pop = alpha0 + alpha2 * lam_out;

    SpikePrediction pop;
    pop.channel = Channel::population_spike;
    pop.has_s = false;
    pop.location = lam_out;  // eigenvalue of the deflated lift Gram
    pop.admissible = true;
    pop.alignments["label_y"] = align_lift;
    pop.note = "population covariance spike Lambda_y = " + std::to_string(lambda_y_pop);
    out.push_back(std::move(pop));

    const BulkLaw law = quadratic_law(p.act, gamma, p.phi);
    const SupportIntervals sup = mu_support(law);
    SpikePrediction ck;
    ck.channel = Channel::quad_label;
    ck.s = -1.0 / lambda_y_pop;
    finalize_spike(law, sup, ck);
    ck.alignments["label_y"] = law.varphi(ck.s) * align_lift;
    out.push_back(std::move(ck));
    return out;
}

std::vector<SpikePrediction> predict_kernel_cluster(const RegimeParams& p) {
    if (!p.kernel_f) throw std::invalid_argument("predict_kernel_cluster: kernel_f required");
    const auto& f = *p.kernel_f;
    if (!(f.f2 > 0.0) || f.fp2 == 0.0)
        throw std::invalid_argument("predict_kernel_cluster: need f(2) > 0 and f'(2) != 0");
    const double tau = 2.0;
    const double offset = (f.f0 - f.f2 + tau * f.fp2) / f.f2;
    const double slope = -2.0 * f.fp2 / f.f2;

    std::vector<SpikePrediction> out;
    if (p.r * p.r > 2.0 * std::sqrt(1.0 / p.psi) * (1.0 + 1e-9)) {
        SpikePrediction inf;
        inf.channel = Channel::laplacian_informative;
        inf.has_s = false;
        inf.multiplicity = 2;
        const double rho = p.psi * (1.0 + 0.5 * p.r * p.r) + (2.0 + p.r * p.r) / (p.r * p.r);
        inf.location = slope * rho + offset;
        inf.admissible = true;
        inf.alignments["label_y"] = 0.0;
        inf.alignments["cluster_indicator"] =
            (p.r * p.r / (16.0 + 8.0 * p.r * p.r)) * (p.psi - 4.0 / std::pow(p.r, 4.0));
        out.push_back(std::move(inf));
    }
    const double ell_p = 5.0 * f.fp2 / (4.0 * f.f2) - f.fpp2 / f.fp2;
    if ((1.0 - ell_p) * (1.0 - ell_p) > 1.0 / p.psi) {
        SpikePrediction ni;
        ni.channel = Channel::laplacian_noninformative;
        ni.has_s = false;
        const double rho_p = ell_p * (p.psi - 1.0 / (1.0 - ell_p));
        ni.location = slope * rho_p + offset;
        ni.admissible = true;
        ni.alignments["label_y"] = 0.0;
        out.push_back(std::move(ni));
    }
    return out;
}

std::vector<SpikePrediction> predict(const RegimeParams& p) {
    switch (p.regime) {
        case Regime::finite_snr: return predict_finite_snr(p);
        case Regime::large_snr: return predict_large_snr(p);
        case Regime::pretrained: return predict_pretrained(p);
        case Regime::quadratic: return predict_quadratic(p);
        case Regime::kernel_cluster: return predict_kernel_cluster(p);
    }
    return {};
}

std::vector<SpikePrediction> merge_collisions(std::vector<SpikePrediction> preds, double tol) {
    std::vector<SpikePrediction> out;
    for (auto& p : preds) {
        bool merged = false;
        if (p.admissible && !p.diverging()) {
            for (auto& q : out) {
                if (!q.admissible || q.diverging() || !q.has_s || !p.has_s) continue;
                if (std::fabs(q.location - p.location) < tol) {
                    q.multiplicity += p.multiplicity;
                    for (const auto& [k, v] : p.alignments) q.alignments[k] += v;
                    if (!p.note.empty()) q.note += (q.note.empty() ? "" : "; ") + p.note;
                    q.note += (q.note.empty() ? "" : "; ") + std::string("merged ") +
                              channel_name(p.channel);
                    merged = true;
                    break;
                }
            }
        }
        if (!merged) out.push_back(std::move(p));
    }
    return out;
}

} // namespace ckspike
