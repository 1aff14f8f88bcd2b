// activation.hpp — centered/normalized activations and their first two
// Hermite coefficients
//
//   b = E[xi sigma(xi)],   c = E[(xi^2 - 1) sigma(xi)],   xi ~ N(0,1),
//
// computed by Gauss-Hermite quadrature from the moment forms (no
// differentiation), with E[sigma] = 0 and E[sigma^2] = 1 enforced by an
// affine rescale of the raw map.

#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ckspike {

enum class ActKind {
    gelu_cn,
    tanh_cn,
    erf_cn,
    soft_relu_cn,
    cos_family,
    sqrt_quad_cn,
    tabulated,
};

struct ActivationSpec {
    ActKind kind = ActKind::tabulated;
    std::string name;
    double param = 0.0;   // alpha for cos_family, unused otherwise
    double center = 0.0;  // mu_g of the raw map
    double scale = 1.0;   // v_g, the raw standard deviation
    double b_sigma = 0.0;
    double c_sigma = 0.0;
    std::function<double(double)> evaluator;  // the centered/normalized map

    double operator()(double x) const { return evaluator(x); }
};

// Gauss-Hermite nodes/weights for E[f(xi)], xi ~ N(0,1) (Golub-Welsch on the
// probabilists' Jacobi matrix; weights sum to 1).
struct GaussHermite {
    std::vector<double> nodes, weights;
    explicit GaussHermite(int order);
    double integrate(const std::function<double(double)>& f) const;
};

// Build a centered/normalized spec from a raw pointwise map. Errors if the
// raw map has (numerically) zero variance or the order-doubling check moves
// any of the four constants by more than 1e-8.
ActivationSpec hermite_coeffs(const std::function<double(double)>& raw, int quad_order = 200,
                              const std::string& name = "custom");

// Closed-form GELU constants: mu_g = 1/(2 sqrt(pi)),
// v_g^2 = 1/3 + 1/(2 pi sqrt(3)) - 1/(4 pi), b = 1/(2 v_g), c = 3/(4 sqrt(pi) v_g).
ActivationSpec gelu_closed_form();

// f_alpha(x) = (cos(alpha x) - e^{-alpha^2/2}) / sqrt(e^{-alpha^2}(cosh(alpha^2)-1)).
ActivationSpec cos_family(double alpha);

// Named builtins.
ActivationSpec make_activation(ActKind kind, double param = 0.0);
ActivationSpec make_activation(const std::string& name);  // "gelu", "cos:0.6", ...

// Tabulated activation from (x, sigma(x)) samples, linear interpolation,
// then centered/normalized by quadrature.
ActivationSpec tabulated_activation(std::vector<double> xs, std::vector<double> ys);
ActivationSpec load_activation_csv(const std::string& path);

// Quadratic map with exact Hermite mass (b, c/sqrt(2)) on h1, h2 only:
// sigma(x) = b x + (c/2)(x^2 - 1); requires b^2 + c^2/2 = 1. Its Hermite
// expansion terminates, so second-order equivalents are exact for it.
ActivationSpec hermite12_activation(double b, double c);

// E[chi_d]/sqrt(d): exact log-gamma value and the 1 - 1/(4d) + 1/(32 d^2)
// + 5/(128 d^3) expansion.
struct ChiMeanRatio {
    double exact, expansion;
};
ChiMeanRatio chi_mean_ratio(int d);

// F(t) = E[sigma(sqrt(t) xi)] for t >= 0 (conditional mean map used by the
// mean-direction estimate).
double conditional_mean(const ActivationSpec& act, double t, const GaussHermite& gh);

} // namespace ckspike
