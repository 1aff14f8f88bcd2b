// transforms.hpp — deterministic-equivalent calculus for deformed MP laws.
//
// The bulk family is nu = alpha + beta * MP(psi) composed with an outer
// MP(phi) by free multiplicative convolution, mu = MP(phi) (x) nu. Everything
// is driven by the Marchenko-Pastur Stieltjes transform
//
//   m_psi(z):  psi z m^2 + (z + psi - 1) m + 1 = 0,   Im m >= 0 for Im z > 0,
//
// and the Silverstein-Choi branch maps
//
//   z(s)    = -1/s + phi * Int x/(1+xs) dnu(x)
//   z'(s)   =  1/s^2 - phi * Int x^2/(1+xs)^2 dnu(x)
//   varphi(s) = -s z'(s) / z(s)
//   T(s)    = (z(s) s^2 - (phi-1) s) / phi,
//
// all evaluated in closed form through m_psi at xi(s) = -(1+alpha s)/(beta s).
// T is strictly decreasing between consecutive poles, with closed-form
// inverse obtained by the substitution chain m = -beta t -> xi -> s.
//
// Real arguments are treated as limits from the upper half-plane.

#pragma once

#include <complex>
#include <map>
#include <string>
#include <vector>

namespace ckspike {

using Cplx = std::complex<double>;

// MP Stieltjes transform m_psi(z) on the branch with Im m >= 0 for Im z > 0.
Cplx mp_stieltjes(double psi, Cplx z);
double mp_stieltjes(double psi, double z);     // real z outside the MP support
Cplx mp_stieltjes_prime(double psi, Cplx z);

struct MpEdges {
    double lower, upper;
};
inline MpEdges mp_edges(double psi) {
    const double sq = std::sqrt(psi);
    return {(1.0 - sq) * (1.0 - sq), (1.0 + sq) * (1.0 + sq)};
}
// MP density at x (continuous part).
double mp_density(double psi, double x);

struct SupportIntervals {
    std::vector<std::pair<double, double>> intervals;  // disjoint, sorted
    bool has_zero_atom = false;

    double lower() const { return intervals.front().first; }
    double upper() const { return intervals.back().second; }
    double width() const { return upper() - lower(); }
    bool contains(double x, double slack = 0.0) const;
    // Distance to the union of the intervals (0 if inside).
    double distance(double x) const;
};

enum class Channel {
    uninformative,
    linear,
    quad_label,
    quad_nonlabel_plus,
    quad_nonlabel_minus,
    fq_root,
    giant_diverging,
    population_spike,
    laplacian_informative,
    laplacian_noninformative,
};

const char* channel_name(Channel c);

struct SpikePrediction {
    Channel channel = Channel::population_spike;
    bool has_s = true;
    double s = 0.0;          // branch parameter (meaningless when has_s = false)
    double location = 0.0;   // limiting eigenvalue; for diverging channels the
                             // leading coefficient of growth_base^growth_exponent
    double growth_exponent = 0.0;  // 0 for order-one spikes
    char growth_base = 'n';        // 'n' or 'N'
    std::map<std::string, double> alignments;
    bool admissible = false;
    int multiplicity = 1;
    std::string note;

    bool diverging() const { return growth_exponent != 0.0; }
    double value_at(double size_hint) const {
        return diverging() ? location * std::pow(size_hint, growth_exponent) : location;
    }
};

struct BranchMaps {
    Cplx z, z_prime, varphi, T;
};

class BulkLaw {
  public:
    BulkLaw(double alpha, double beta, double psi, double phi);

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    double psi() const { return psi_; }
    double phi() const { return phi_; }

    // Support of nu: [nu_lower, nu_upper], plus an atom at alpha when
    // beta > 0 and psi > 1 (MP mass at zero maps to alpha).
    double nu_lower() const;
    double nu_upper() const;
    bool nu_has_atom() const { return beta_ > 0.0 && psi_ > 1.0; }

    // Stieltjes transform of nu and its derivative.
    Cplx nu_stieltjes(Cplx z) const;
    double nu_stieltjes(double z) const;  // real z outside supp(nu)
    Cplx nu_stieltjes_prime(Cplx z) const;

    // E[1/(1+s L)] and E[1/(1+s L)^2] under L ~ nu.
    Cplx inv_moment1(Cplx s) const;
    Cplx inv_moment2(Cplx s) const;

    // Branch maps at s (pole error if s == 0 or -1/s in supp(nu)).
    BranchMaps branch_maps(Cplx s) const;
    double z_of(double s) const;
    double z_prime(double s) const;
    double varphi(double s) const;
    double T(double s) const;
    double T_prime(double s) const;

    // m_mu at lambda = z(s) via the companion relation.
    Cplx m_mu_from_s(Cplx s) const;

    // Closed-form inverse of T; throws when the requested t has no real
    // preimage with T(s) = t (branch error) or the denominator degenerates.
    double t_inverse(double t) const;

    // 1 / T at the upper edge of supp(nu); T maps (-1/nu_upper, 0) onto
    // (0, 1/edge_scale) bijectively. Equals b^2 sqrt(psi)(1+sqrt(psi)) for
    // the unit-mass shifted family.
    double t_branch_scale() const;

  private:
    void check_pole(Cplx s) const;
    double alpha_, beta_, psi_, phi_;
};

struct DensityPoint {
    Cplx m_mu;
    double density;
    Cplx s;  // companion transform value at x + i eta
};

// Solve z(s) = x + i*eta for s with Im s > 0 (damped Newton with fixed-point
// fallback), return m_mu and density = Im(m_mu)/pi.
DensityPoint mu_density(const BulkLaw& law, double x, double eta);

struct SupportOptions {
    int grid_points = 4096;
    double span_factor = 1e4;  // how far the unbounded branches are scanned
};

// Support of mu from the zeros of z'(s) on every pole-free branch, mapped
// through z; flags the atom at zero when phi > 1, and includes the hard edge
// at zero when phi >= 1.
SupportIntervals mu_support(const BulkLaw& law, const SupportOptions& opt = {});

// Numeric CDF of mu on [lo, hi] sampled at `points` (for KS distances).
struct DensityCurve {
    std::vector<double> x, density, cdf;  // cdf normalized to total mass 1
    double zero_atom_mass = 0.0;
    double cdf_at(double v) const;        // includes the zero atom
};
DensityCurve mu_cdf_curve(const BulkLaw& law, const SupportIntervals& sup, int points = 2048,
                          double eta = -1.0);

// Population covariance spike Lambda_tau of nu + tau * u u' for the
// unit-mean family alpha = 1 - beta: closed form, threshold
// tau_crit = beta sqrt(psi)(1+sqrt(psi)), sample location z(-1/Lambda_tau),
// overlap varphi(-1/Lambda_tau).
SpikePrediction covariance_spike(const BulkLaw& law, double tau);

// Additive rank-one BBP: s = T^{-1}(1/beta_spike), location z(s), alignment
// multiplicity * gamma_R(s) with gamma_R = -varphi(s)/(beta^2 s^2 T'(s)).
SpikePrediction additive_spike(const BulkLaw& law, double beta_spike, int multiplicity = 1);

// gamma_R(s) for spike strength beta: m_mu(z(s)) z'(s) / (beta T'(s)).
double gamma_r(const BulkLaw& law, double s, double beta_spike);

} // namespace ckspike
