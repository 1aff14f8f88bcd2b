#include "ckspike/activation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <lapacke.h>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace ckspike {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846); }

} // namespace

GaussHermite::GaussHermite(int order) {
    if (order < 2) throw std::invalid_argument("GaussHermite: order must be >= 2");
    // Probabilists' Hermite recurrence: a_k = 0, b_k = sqrt(k). Eigenvalues of
    // the Jacobi matrix are the nodes; weights are the squared first components.
    std::vector<double> diag(order, 0.0), off(order - 1);
    for (int k = 1; k < order; ++k) off[k - 1] = std::sqrt(static_cast<double>(k));
    std::vector<double> evec(static_cast<size_t>(order) * order);
    const int info = LAPACKE_dstev(LAPACK_COL_MAJOR, 'V', order, diag.data(), off.data(),
                                   evec.data(), order);
    if (info != 0) throw std::runtime_error("GaussHermite: dstev failed");
    nodes = std::move(diag);
    weights.resize(order);
    for (int k = 0; k < order; ++k) {
        const double v0 = evec[static_cast<size_t>(k) * order];
        weights[k] = v0 * v0;  // total mass 1 for the N(0,1) weight
    }
}

double GaussHermite::integrate(const std::function<double(double)>& f) const {
    double acc = 0.0;
    for (size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * f(nodes[k]);
    return acc;
}

namespace {

struct RawMoments {
    double mean, var, b_raw, c_raw;
};

RawMoments raw_moments(const std::function<double(double)>& raw, const GaussHermite& gh) {
    double m = 0, m2 = 0, bx = 0, cx = 0;
    for (size_t k = 0; k < gh.nodes.size(); ++k) {
        const double x = gh.nodes[k], w = gh.weights[k], f = raw(x);
        m += w * f;
        m2 += w * f * f;
        bx += w * x * f;
        cx += w * (x * x - 1.0) * f;
    }
    return {m, m2 - m * m, bx, cx};
}

ActivationSpec build_spec(ActKind kind, const std::string& name, double param,
                          std::function<double(double)> raw, int quad_order) {
    const GaussHermite gh(quad_order), gh2(2 * quad_order);
    const RawMoments lo = raw_moments(raw, gh);
    const RawMoments hi = raw_moments(raw, gh2);
    const double disagree = std::max({std::fabs(lo.mean - hi.mean), std::fabs(lo.var - hi.var),
                                      std::fabs(lo.b_raw - hi.b_raw), std::fabs(lo.c_raw - hi.c_raw)});
    if (!(disagree < 1e-8))
        throw std::runtime_error("hermite_coeffs: quadrature order-doubling disagreement " +
                                 std::to_string(disagree));
    if (!(hi.var > 1e-14)) throw std::runtime_error("hermite_coeffs: zero-variance activation");

    ActivationSpec spec;
    spec.kind = kind;
    spec.name = name;
    spec.param = param;
    spec.center = hi.mean;
    spec.scale = std::sqrt(hi.var);
    spec.b_sigma = hi.b_raw / spec.scale;
    spec.c_sigma = hi.c_raw / spec.scale;
    // Parity-zero coefficients come out as quadrature dust; clamp so the law
    // parameters (b^2, c^2/2) are exactly zero for even/odd activations.
    if (std::fabs(spec.b_sigma) < 1e-12) spec.b_sigma = 0.0;
    if (std::fabs(spec.c_sigma) < 1e-12) spec.c_sigma = 0.0;
    const double mu = spec.center, v = spec.scale;
    spec.evaluator = [raw = std::move(raw), mu, v](double x) { return (raw(x) - mu) / v; };
    return spec;
}

} // namespace

ActivationSpec hermite_coeffs(const std::function<double(double)>& raw, int quad_order,
                              const std::string& name) {
    return build_spec(ActKind::tabulated, name, 0.0, raw, quad_order);
}

ActivationSpec gelu_closed_form() {
    const double mu_g = 1.0 / (2.0 * kSqrtPi);
    const double pi = 3.14159265358979323846;
    const double vg2 = 1.0 / 3.0 + 1.0 / (2.0 * pi * std::sqrt(3.0)) - 1.0 / (4.0 * pi);
    const double vg = std::sqrt(vg2);
    ActivationSpec spec;
    spec.kind = ActKind::gelu_cn;
    spec.name = "gelu";
    spec.center = mu_g;
    spec.scale = vg;
    spec.b_sigma = 1.0 / (2.0 * vg);
    spec.c_sigma = 3.0 / (4.0 * kSqrtPi * vg);
    spec.evaluator = [mu_g, vg](double x) { return (x * std_normal_cdf(x) - mu_g) / vg; };
    return spec;
}

ActivationSpec cos_family(double alpha) {
    if (alpha == 0.0) throw std::invalid_argument("cos_family: alpha = 0 is degenerate");
    const double a2 = alpha * alpha;
    const double shift = std::exp(-0.5 * a2);
    const double norm = std::sqrt(std::exp(-a2) * (std::cosh(a2) - 1.0));
    auto raw = [alpha, shift, norm](double x) { return (std::cos(alpha * x) - shift) / norm; };
    ActivationSpec spec = build_spec(ActKind::cos_family, "cos", alpha, raw, 200);
    spec.b_sigma = 0.0;  // exact: even function
    return spec;
}

ActivationSpec make_activation(ActKind kind, double param) {
    switch (kind) {
        case ActKind::gelu_cn:
            return gelu_closed_form();
        case ActKind::tanh_cn:
            return build_spec(kind, "tanh", 0.0, [](double x) { return std::tanh(x); }, 200);
        case ActKind::erf_cn:
            return build_spec(kind, "erf", 0.0, [](double x) { return std::erf(x); }, 200);
        case ActKind::soft_relu_cn: {
            // Gaussian-smoothed ReLU with kernel width eps = 1e-2:
            // f(x) = E[relu(x + eps g)] = x Phi(x/eps) + eps phi(x/eps).
            // The smoothing kernel is itself Gaussian, so all four constants
            // have exact Gaussian closed forms (f(xi) =d (s zeta)^+ in law
            // with s^2 = 1 + eps^2): the sharp kink at scale eps defeats
            // fixed-order Gauss-Hermite quadrature.
            const double eps = 1e-2;
            const double pi = 3.14159265358979323846;
            const double s2 = 1.0 + eps * eps;
            const double s = std::sqrt(s2);
            const double rho = 1.0 / s2;  // corr of two smoothing draws
            const double mu = s / std::sqrt(2.0 * pi);
            const double m2 =
                s2 * (std::sqrt(1.0 - rho * rho) + rho * (pi / 2.0 + std::asin(rho))) / (2.0 * pi);
            const double v = std::sqrt(m2 - mu * mu);
            ActivationSpec spec;
            spec.kind = kind;
            spec.name = "soft_relu";
            spec.center = mu;
            spec.scale = v;
            spec.b_sigma = 0.5 / v;                                  // E[xi f(xi)] = 1/2
            spec.c_sigma = 1.0 / (s * std::sqrt(2.0 * pi)) / v;      // E[(xi^2-1) f(xi)]
            spec.evaluator = [eps, mu, v](double x) {
                return (x * std_normal_cdf(x / eps) + eps * std_normal_pdf(x / eps) - mu) / v;
            };
            return spec;
        }
        case ActKind::cos_family:
            return cos_family(param);
        case ActKind::sqrt_quad_cn:
            return build_spec(kind, "sqrt_quad", 0.0,
                              [](double x) { return std::sqrt(x * x + 1.0) - 1.0; }, 200);
        case ActKind::tabulated:
            throw std::invalid_argument("make_activation: tabulated needs samples");
    }
    throw std::invalid_argument("make_activation: unknown kind");
}

ActivationSpec make_activation(const std::string& name) {
    if (name == "gelu") return make_activation(ActKind::gelu_cn);
    if (name == "tanh") return make_activation(ActKind::tanh_cn);
    if (name == "erf") return make_activation(ActKind::erf_cn);
    if (name == "soft_relu" || name == "relu") return make_activation(ActKind::soft_relu_cn);
    if (name == "sqrt_quad") return make_activation(ActKind::sqrt_quad_cn);
    if (name.rfind("cos:", 0) == 0) return cos_family(std::stod(name.substr(4)));
    if (name.rfind("hermite12:", 0) == 0) {
        const auto rest = name.substr(10);
        const auto comma = rest.find(',');
        if (comma == std::string::npos)
            throw std::invalid_argument("make_activation: hermite12 needs b,c");
        return hermite12_activation(std::stod(rest.substr(0, comma)), std::stod(rest.substr(comma + 1)));
    }
    if (name.rfind("csv:", 0) == 0) return load_activation_csv(name.substr(4));
    throw std::invalid_argument("make_activation: unknown activation '" + name + "'");
}

ActivationSpec tabulated_activation(std::vector<double> xs, std::vector<double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("tabulated_activation: need >= 2 matching samples");
    for (size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1])) throw std::invalid_argument("tabulated_activation: x not increasing");
    auto xp = std::make_shared<std::vector<double>>(std::move(xs));
    auto yp = std::make_shared<std::vector<double>>(std::move(ys));
    auto raw = [xp, yp](double x) {
        const auto& xv = *xp;
        const auto& yv = *yp;
        if (x <= xv.front()) {
            const double sl = (yv[1] - yv[0]) / (xv[1] - xv[0]);
            return yv[0] + sl * (x - xv[0]);
        }
        if (x >= xv.back()) {
            const size_t m = xv.size();
            const double sl = (yv[m - 1] - yv[m - 2]) / (xv[m - 1] - xv[m - 2]);
            return yv[m - 1] + sl * (x - xv[m - 1]);
        }
        const auto it = std::upper_bound(xv.begin(), xv.end(), x);
        const size_t j = static_cast<size_t>(it - xv.begin());
        const double t = (x - xv[j - 1]) / (xv[j] - xv[j - 1]);
        return yv[j - 1] + t * (yv[j] - yv[j - 1]);
    };
    return build_spec(ActKind::tabulated, "tabulated", 0.0, raw, 200);
}

ActivationSpec load_activation_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_activation_csv: cannot open " + path);
    std::vector<double> xs, ys;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
            throw std::runtime_error("load_activation_csv: need two columns in " + path);
        xs.push_back(std::stod(a));
        ys.push_back(std::stod(b));
    }
    return tabulated_activation(std::move(xs), std::move(ys));
}

ActivationSpec hermite12_activation(double b, double c) {
    if (std::fabs(b * b + c * c / 2.0 - 1.0) > 1e-10)
        throw std::invalid_argument("hermite12_activation: need b^2 + c^2/2 = 1");
    ActivationSpec spec;
    spec.kind = ActKind::tabulated;
    spec.name = "hermite12";
    spec.b_sigma = b;
    spec.c_sigma = c;
    spec.center = 0.0;
    spec.scale = 1.0;
    spec.evaluator = [b, c](double x) { return b * x + 0.5 * c * (x * x - 1.0); };
    return spec;
}

ChiMeanRatio chi_mean_ratio(int d) {
    if (d < 1) throw std::invalid_argument("chi_mean_ratio: d must be >= 1");
    const double dd = d;
    ChiMeanRatio r;
    r.exact = std::exp(0.5 * std::log(2.0) + std::lgamma((dd + 1.0) / 2.0) - std::lgamma(dd / 2.0)) /
              std::sqrt(dd);
    r.expansion = 1.0 - 1.0 / (4.0 * dd) + 1.0 / (32.0 * dd * dd) + 5.0 / (128.0 * dd * dd * dd);
    return r;
}

double conditional_mean(const ActivationSpec& act, double t, const GaussHermite& gh) {
    if (t < 0.0) throw std::invalid_argument("conditional_mean: t must be nonnegative");
    const double s = std::sqrt(t);
    double acc = 0.0;
    for (size_t k = 0; k < gh.nodes.size(); ++k) acc += gh.weights[k] * act(s * gh.nodes[k]);
    return acc;
}

} // namespace ckspike
