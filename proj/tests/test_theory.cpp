#include <doctest.h>

#include <cmath>

#include "ckspike/theory.hpp"

using namespace ckspike;

namespace {

const SpikePrediction* find_channel(const std::vector<SpikePrediction>& v, Channel c) {
    for (const auto& p : v)
        if (p.channel == c) return &p;
    return nullptr;
}

// 5-point Gauss-Legendre quadrature oracle against nu = alpha + beta MP(psi),
// edge singularities absorbed by x = m + h sin(t).
template <typename F>
double nu_expect(const BulkLaw& law, F g) {
    if (law.beta() == 0.0) return g(law.alpha());
    static const double xs[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                 0.5384693101056831, 0.9061798459386640};
    static const double ws[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                 0.4786286704993665, 0.2369268850561891};
    const auto e = mp_edges(law.psi());
    const double a = std::max(0.0, e.lower), b = e.upper;
    const double mid = 0.5 * (a + b), hh = 0.5 * (b - a);
    const double pi = 3.14159265358979323846;
    double acc = 0.0;
    const int panels = 400;
    const double step = pi / panels;
    for (int p = 0; p < panels; ++p) {
        const double t0 = -pi / 2.0 + (p + 0.5) * step;
        for (int k = 0; k < 5; ++k) {
            const double t = t0 + 0.5 * step * xs[k];
            const double x = mid + hh * std::sin(t);
            const double c = std::cos(t);
            acc += 0.5 * step * ws[k] * (hh * hh * c * c / (2.0 * pi * law.psi() * x)) *
                   g(law.alpha() + law.beta() * x);
        }
    }
    if (law.psi() > 1.0) acc += (1.0 - 1.0 / law.psi()) * g(law.alpha());
    return acc;
}

} // namespace

TEST_CASE("finite SNR with GELU: no uninformative spike, zero label alignment") {
    RegimeParams p;
    p.regime = Regime::finite_snr;
    p.act = make_activation("gelu");
    p.psi = p.phi = 1.0 / 3.0;
    p.r = 6.0;
    const auto preds = predict_finite_snr(p);
    const auto* un = find_channel(preds, Channel::uninformative);
    REQUIRE(un != nullptr);
    CHECK_FALSE(un->admissible);
    const auto* lin = find_channel(preds, Channel::linear);
    REQUIRE(lin != nullptr);
    CHECK(lin->admissible);
    CHECK(lin->multiplicity == 2);
    for (const auto& pr : preds)
        if (pr.alignments.count("label_y")) CHECK(pr.alignments.at("label_y") == 0.0);
}

TEST_CASE("finite SNR: beta_lin = 0 emits no linear cluster") {
    RegimeParams p;
    p.regime = Regime::finite_snr;
    p.act = make_activation("gelu");
    p.psi = p.phi = 0.5;
    p.r = 0.0;
    CHECK(find_channel(predict_finite_snr(p), Channel::linear) == nullptr);
    // b_sigma = 0 also kills the linear channel at any r.
    p.act = make_activation("sqrt_quad");
    p.r = 3.0;
    CHECK(find_channel(predict_finite_snr(p), Channel::linear) == nullptr);
}

TEST_CASE("large SNR candidate algebra: tau = beta_quad gives t_pm = (1 +- 1/sqrt(2))/tau") {
    // Engineer tau = beta_quad: c^2 psi/2 = c^2 r0^4 psi^2 / 4 => r0^4 = 2/psi.
    RegimeParams p;
    p.regime = Regime::large_snr;
    p.act = make_activation("sqrt_quad");
    p.psi = p.phi = 1.0 / 3.0;
    p.r = std::pow(2.0 / p.psi, 0.25);
    const double c = p.act.c_sigma;
    const double tau = 0.5 * c * c * p.psi;
    const auto preds = predict_large_snr(p);
    const BulkLaw law = proportional_law(p.act, p.psi, p.phi);
    const auto* tp = find_channel(preds, Channel::quad_nonlabel_plus);
    const auto* tm = find_channel(preds, Channel::quad_nonlabel_minus);
    // s_plus never detaches here (z' < 0 branch), but its t-value is fixed by
    // algebra whenever a real preimage exists; s_minus is realized.
    REQUIRE(tm != nullptr);
    if (tm->has_s)
        CHECK(law.T(tm->s) == doctest::Approx((1.0 - 1.0 / std::sqrt(2.0)) / tau).epsilon(1e-10));
    REQUIRE(tp != nullptr);
    if (tp->has_s)
        CHECK(law.T(tp->s) == doctest::Approx((1.0 + 1.0 / std::sqrt(2.0)) / tau).epsilon(1e-10));
}

TEST_CASE("large SNR with tanh: only the diverging linear channel") {
    RegimeParams p;
    p.regime = Regime::large_snr;
    p.act = make_activation("tanh");
    p.psi = p.phi = 1.0 / 3.0;
    p.r = 2.0;
    p.n_hint = 1000.0;
    const auto preds = predict_large_snr(p);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].channel == Channel::giant_diverging);
    CHECK(preds[0].growth_exponent == 0.5);
    CHECK(preds[0].location ==
          doctest::Approx(0.5 * p.act.b_sigma * p.act.b_sigma * p.r * p.r * p.psi));
}

TEST_CASE("large SNR label channel: positive gamma_y with matching dual forms") {
    RegimeParams p;
    p.regime = Regime::large_snr;
    p.act = make_activation("sqrt_quad");
    p.psi = p.phi = 1.0 / 3.0;
    p.r = 2.5;
    const auto preds = predict_large_snr(p);
    const auto* sy = find_channel(preds, Channel::quad_label);
    REQUIRE(sy != nullptr);
    REQUIRE(sy->admissible);
    const double gy = sy->alignments.at("label_y");
    CHECK(gy > 0.0);
    // Two algebraic routes to gamma_y agree.
    const BulkLaw law = proportional_law(p.act, p.psi, p.phi);
    const double c = p.act.c_sigma;
    const double beta_quad = c * c * 0.25 * std::pow(p.r, 4.0) * p.psi * p.psi;
    const double s = sy->s;
    const double route1 = law.m_mu_from_s(Cplx(s, 0.0)).real() * law.z_prime(s) /
                          (beta_quad * law.T_prime(s));
    const double route2 = -law.varphi(s) / (beta_quad * beta_quad * s * s * law.T_prime(s));
    CHECK(std::fabs(route1 - route2) < 1e-10);
    CHECK(gy == doctest::Approx(route1).epsilon(1e-12));
}

TEST_CASE("pretrained constants at r = 6") {
    RegimeParams p;
    p.regime = Regime::pretrained;
    p.act = make_activation("soft_relu");
    p.psi = 2.0;
    p.phi = 1.0;
    p.r = 6.0;
    p.theta0 = 1.0;
    const double r2 = 36.0;
    const double kappa = 1.0 + r2 / 2.0;
    const double eta = 3.0 + 3.0 * r2 + r2 * r2 / 2.0;
    CHECK(kappa == 19.0);
    CHECK(eta == 759.0);
    CHECK(eta - kappa * kappa == 398.0);
    CHECK((eta - kappa * kappa) / eta == doctest::Approx(398.0 / 759.0));
    CHECK(r2 * r2 / (4.0 * eta) == doctest::Approx(1296.0 / 3036.0));

    const auto preds = predict_pretrained(p);
    const auto* giant = find_channel(preds, Channel::giant_diverging);
    REQUIRE(giant != nullptr);
    CHECK(giant->location ==
          doctest::Approx(p.act.b_sigma * p.act.b_sigma * p.theta0 * p.theta0 * p.phi * kappa));
    CHECK(giant->growth_base == 'N');
    CHECK(giant->alignments.at("s_hat") == 1.0);
    // At least one admissible F_q root with strictly positive label mass.
    bool found_label = false;
    for (const auto& pr : preds)
        if (pr.channel == Channel::fq_root && pr.admissible) {
            CHECK(pr.alignments.at("label_y") > 0.0);
            found_label = true;
        }
    CHECK(found_label);
}

TEST_CASE("pretrained with c = 0: F_q collapses to the double root 1/tau, label mass zero") {
    RegimeParams p;
    p.regime = Regime::pretrained;
    p.act = make_activation("tanh");
    p.psi = 2.0;
    p.phi = 1.0;
    p.r = 4.0;
    p.theta0 = 1.0;
    // beta_q = 0 since c = 0; tau = 0 as well, so F_q(t) = 1 identically and
    // there is no quadratic root at all.
    const auto preds = predict_pretrained(p);
    for (const auto& pr : preds)
        if (pr.alignments.count("label_y")) CHECK(pr.alignments.at("label_y") == 0.0);
}

TEST_CASE("F_q root structure: count, beta_q -> 0 limit, repeated-root flag") {
    const double tau = 0.45, omega = 0.52;
    for (double bq : {0.3, 5.0, 300.0}) {
        const auto roots = fq_real_roots(tau, bq, omega);
        CHECK((roots.size() == 1 || roots.size() == 3));
        for (double t : roots) CHECK(std::fabs(fq_value(tau, bq, omega, t)) < 1e-8 * (1.0 + bq));
    }
    // Near the beta_q -> 0 degeneration the two quadratic-block roots pinch
    // toward the double root 1/tau (root accuracy is limited there; only the
    // location matters).
    for (double bq : {1e-10, 1e-8, 1e-4}) {
        const auto roots = fq_real_roots(tau, bq, omega);
        CHECK((roots.size() == 1 || roots.size() == 3));
        bool near_double = false;
        for (double t : roots) near_double = near_double || std::fabs(t - 1.0 / tau) < 0.05;
        CHECK(near_double);
    }
    // beta_q = 0 exactly: double root at 1/tau.
    const auto zero = fq_real_roots(tau, 0.0, omega);
    REQUIRE(zero.size() == 2);
    CHECK(zero[0] == doctest::Approx(1.0 / tau));
    CHECK(zero[1] == doctest::Approx(1.0 / tau));
}

TEST_CASE("quadratic regime: lift location, alignment factor, subcritical boundary") {
    RegimeParams p;
    p.regime = Regime::quadratic;
    p.act = make_activation("soft_relu");
    p.gamma = 1.0;
    p.phi = 1.0;
    p.r = 2.0;
    const auto preds = predict_quadratic(p);
    const auto* pop = find_channel(preds, Channel::population_spike);
    REQUIRE(pop != nullptr);
    CHECK(pop->location == doctest::Approx(6.25));
    CHECK(pop->alignments.at("label_y") == doctest::Approx(0.75));
    const auto* ck = find_channel(preds, Channel::quad_label);
    REQUIRE(ck != nullptr);
    CHECK(ck->admissible);
    // overlap = varphi(-1/Lambda_y) * 0.75
    const BulkLaw law = quadratic_law(p.act, p.gamma, p.phi);
    CHECK(ck->alignments.at("label_y") == doctest::Approx(law.varphi(ck->s) * 0.75).epsilon(1e-12));

    // Boundary ell = gamma^{-1/2} (r = sqrt(2), gamma = 1): no label outlier.
    p.r = std::sqrt(2.0);
    const auto sub = predict_quadratic(p);
    REQUIRE(sub.size() == 1);
    CHECK_FALSE(sub[0].admissible);
    CHECK(sub[0].note.find("subcritical") != std::string::npos);
}

TEST_CASE("quadratic regime integral identities against quadrature") {
    const ActivationSpec act = make_activation("gelu");
    const BulkLaw law = quadratic_law(act, 1.0, 1.0);
    const double ell = 4.0;
    const double lam_out = 1.0 + 1.0 + ell + 1.0 / ell;
    const double b2 = act.b_sigma * act.b_sigma;
    const double Lam = (1.0 - b2 - 0.5 * act.c_sigma * act.c_sigma) +
                       0.5 * act.c_sigma * act.c_sigma * lam_out;
    const double m_nu = law.nu_stieltjes(Lam);
    const double m_nu_p = law.nu_stieltjes_prime(Cplx(Lam, 0.0)).real();
    const double i1_closed = -1.0 - Lam * m_nu;
    const double i2_closed = 1.0 + 2.0 * Lam * m_nu + Lam * Lam * m_nu_p;
    const double i1_quad = nu_expect(law, [&](double t) { return t / (Lam - t); });
    const double i2_quad = nu_expect(law, [&](double t) { return t * t / ((Lam - t) * (Lam - t)); });
    CHECK(std::fabs(i1_closed - i1_quad) < 1e-8);
    CHECK(std::fabs(i2_closed - i2_quad) < 1e-8);
    // And varphi(-1/Lam) as the ratio of the two integral expressions.
    const double phi_ratio = (1.0 - law.phi() * i2_quad) / (1.0 + law.phi() * i1_quad);
    CHECK(law.varphi(-1.0 / Lam) == doctest::Approx(phi_ratio).epsilon(1e-8));
}

TEST_CASE("kernel clustering: locations, thresholds, alignment value") {
    RegimeParams p;
    p.regime = Regime::kernel_cluster;
    p.act = make_activation("gelu");  // unused by the kernel predictor
    p.psi = 3.0;
    p.r = 2.0;
    p.kernel_f = KernelFunction{1.0, std::exp(-1.0), -0.5 * std::exp(-1.0), 0.25 * std::exp(-1.0)};
    const auto preds = predict_kernel_cluster(p);
    const auto* inf = find_channel(preds, Channel::laplacian_informative);
    REQUIRE(inf != nullptr);
    CHECK(inf->multiplicity == 2);
    CHECK(inf->location == doctest::Approx(10.5 + std::exp(1.0) - 2.0).epsilon(1e-12));
    CHECK(inf->alignments.at("label_y") == 0.0);
    CHECK(inf->alignments.at("cluster_indicator") ==
          doctest::Approx((4.0 / (16.0 + 32.0)) * (3.0 - 0.25)).epsilon(1e-12));
    const auto* ni = find_channel(preds, Channel::laplacian_noninformative);
    REQUIRE(ni != nullptr);  // (1 - ell_+)^2 = 1.266 > 1/3
    CHECK(ni->location == doctest::Approx(-0.2638888888888889 + std::exp(1.0) - 2.0).epsilon(1e-9));

    // Exactly at the threshold the informative pair is not emitted.
    p.r = std::sqrt(2.0 * std::sqrt(1.0 / p.psi));
    CHECK(find_channel(predict_kernel_cluster(p), Channel::laplacian_informative) == nullptr);
}

TEST_CASE("with b = 0 the ones and mean-direction overlaps coincide") {
    // For a point-mass bulk the uninformative root satisfies
    // tau^2 s^2 T'(s) = -1, which makes the two overlap formulas equal.
    RegimeParams p;
    p.regime = Regime::finite_snr;
    p.act = make_activation("cos:0.6");
    p.psi = 6.0;
    p.phi = 1.0;
    p.r = 0.0;
    const auto preds = predict_finite_snr(p);
    REQUIRE(preds.size() == 1);
    REQUIRE(preds[0].admissible);
    CHECK(preds[0].alignments.at("ones_u") ==
          doctest::Approx(preds[0].alignments.at("mean_m")).epsilon(1e-12));
}

TEST_CASE("admissible predictions re-verify the separation condition") {
    RegimeParams p;
    p.regime = Regime::finite_snr;
    p.act = make_activation("soft_relu");
    p.psi = p.phi = 1.0 / 3.0;
    p.r = 6.0;
    const BulkLaw law = proportional_law(p.act, p.psi, p.phi);
    const SupportIntervals sup = mu_support(law);
    for (const auto& pr : predict_finite_snr(p)) {
        if (!pr.admissible) continue;
        CHECK(law.z_prime(pr.s) > 0.0);
        CHECK_FALSE(sup.contains(pr.location));
        CHECK(pr.location != 0.0);
    }
}

TEST_CASE("collision merging adds multiplicities and alignments") {
    std::vector<SpikePrediction> preds(2);
    preds[0].channel = Channel::quad_label;
    preds[0].location = 5.0;
    preds[0].s = -0.2;
    preds[0].admissible = true;
    preds[0].multiplicity = 1;
    preds[0].alignments["label_y"] = 0.3;
    preds[1] = preds[0];
    preds[1].channel = Channel::quad_nonlabel_minus;
    preds[1].location = 5.0 + 1e-9;
    const auto merged = merge_collisions(preds);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].multiplicity == 2);
    CHECK(merged[0].alignments.at("label_y") == doctest::Approx(0.6));
}
