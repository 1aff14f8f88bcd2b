// theory.hpp — per-regime outlier and alignment predictors.
//
// Each predictor transcribes one spectral regime into SpikePrediction rows:
//
//   finite_snr     tau = (c^2/2) psi and beta_lin = (r^2 psi / 2) b^2 drive
//                  the uninformative and linear clusters (multiplicity 2 each)
//   large_snr      r = r0 n^{1/4}: diverging linear pair plus order-one
//                  candidates s_y = T^{-1}(1/beta_quad), s_+- from
//                  t_+- = (1 +- sqrt(beta_quad/(tau+beta_quad)))/tau
//   pretrained     W1 = W + theta0 N^{1/4} a 1_d': giant spike
//                  b^2 theta0^2 phi kappa sqrt(N), two linear roots, and the
//                  real roots of the cubic F_q(t)
//   quadratic      n ~ gamma d(d+1)/2: population spike Lambda_y and the
//                  finite-width outlier z(-1/Lambda_y) under nu_q
//   kernel_cluster distance-kernel Laplacian eigenvalues and alignments
//
// Admissibility is always z'(s) > 0 with z(s) outside supp(mu) u {0}, checked
// by direct re-evaluation.

#pragma once

#include <optional>
#include <vector>

#include "ckspike/activation.hpp"
#include "ckspike/transforms.hpp"

namespace ckspike {

enum class Regime { finite_snr, large_snr, pretrained, quadratic, kernel_cluster };

const char* regime_name(Regime r);
Regime parse_regime(const std::string& name);

struct KernelFunction {
    double f0;   // f(0)
    double f2;   // f(2)
    double fp2;  // f'(2)
    double fpp2; // f''(2)
};

struct RegimeParams {
    Regime regime = Regime::finite_snr;
    double psi = 1.0;    // n/d (or n/p for the quadratic regime via `gamma`)
    double phi = 1.0;    // n/N
    double gamma = 1.0;  // n/p, quadratic regime only
    double r = 0.0;      // SNR knob (or r0 for large_snr)
    double theta0 = 0.0; // pretrained spike scale
    ActivationSpec act;
    std::optional<KernelFunction> kernel_f;
    std::optional<double> n_hint;  // instantiate diverging predictions
};

// The bulk law used by the proportional-limit regimes.
BulkLaw proportional_law(const ActivationSpec& act, double psi, double phi);
// The bulk law of the deflated quadratic-regime CK: nu_q = alpha0 + alpha2 MP(gamma).
BulkLaw quadratic_law(const ActivationSpec& act, double gamma, double phi);

std::vector<SpikePrediction> predict_finite_snr(const RegimeParams& p);
std::vector<SpikePrediction> predict_large_snr(const RegimeParams& p);
std::vector<SpikePrediction> predict_pretrained(const RegimeParams& p);
std::vector<SpikePrediction> predict_quadratic(const RegimeParams& p);
std::vector<SpikePrediction> predict_kernel_cluster(const RegimeParams& p);

std::vector<SpikePrediction> predict(const RegimeParams& p);

// Real roots (with multiplicity) of the cubic F_q(t) = (1 - tau t)^2
// - beta_q t (1 - tau omega_q t)(1 - (2/3) tau t); closed-form discriminant
// classification with a Newton polish. Roots with |Im| < 1e-10 are real.
std::vector<double> fq_real_roots(double tau, double beta_q, double omega_q);
double fq_value(double tau, double beta_q, double omega_q, double t);
double fq_derivative(double tau, double beta_q, double omega_q, double t);

// Merge predictions whose locations collide within `tol`: multiplicities and
// alignments add.
std::vector<SpikePrediction> merge_collisions(std::vector<SpikePrediction> preds,
                                              double tol = 1e-6);

} // namespace ckspike
