#include "ckspike/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ckspike {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Ensure real axis values are treated as limits from the upper half-plane:
// a -0.0 imaginary part would flip the branch of the square roots.
inline Cplx from_above(Cplx z) {
    if (z.imag() == 0.0) return Cplx(z.real(), +0.0);
    return z;
}

} // namespace

Cplx mp_stieltjes(double psi, Cplx z) {
    if (psi <= 0.0) throw std::invalid_argument("mp_stieltjes: psi must be positive");
    z = from_above(z);
    if (z == Cplx(0.0, 0.0)) throw std::domain_error("mp_stieltjes: z = 0");
    const auto e = mp_edges(psi);
    // sqrt((z-a)(z-b)) with the branch fixed by taking principal roots of
    // each factor; this realizes the upper-half-plane limit on the real axis.
    const Cplx root = std::sqrt(z - e.lower) * std::sqrt(z - e.upper);
    Cplx m = (-(z + psi - 1.0) + root) / (2.0 * psi * z);
    // The subtraction loses ~sqrt(eps) digits near the edges; polish on the
    // defining quadratic (Newton stays on the selected root).
    for (int it = 0; it < 2; ++it) {
        const Cplx den = 2.0 * psi * z * m + z + psi - 1.0;
        if (std::abs(den) < 1e-8 * (1.0 + std::abs(z))) break;
        m -= (psi * z * m * m + (z + psi - 1.0) * m + 1.0) / den;
    }
    return m;
}

double mp_stieltjes(double psi, double z) {
    const auto e = mp_edges(psi);
    if (z > e.lower && z < e.upper)
        throw std::domain_error("mp_stieltjes: real z inside the MP support");
    const Cplx m = mp_stieltjes(psi, Cplx(z, 0.0));
    return m.real();
}

Cplx mp_stieltjes_prime(double psi, Cplx z) {
    // Implicit differentiation of psi z m^2 + (z + psi - 1) m + 1 = 0.
    const Cplx m = mp_stieltjes(psi, z);
    z = from_above(z);
    return -(psi * m * m + m) / (2.0 * psi * z * m + z + psi - 1.0);
}

double mp_density(double psi, double x) {
    const auto e = mp_edges(psi);
    if (x <= e.lower || x >= e.upper) return 0.0;
    return std::sqrt((e.upper - x) * (x - e.lower)) / (2.0 * kPi * psi * x);
}

bool SupportIntervals::contains(double x, double slack) const {
    for (const auto& [lo, hi] : intervals)
        if (x >= lo - slack && x <= hi + slack) return true;
    return false;
}

double SupportIntervals::distance(double x) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [lo, hi] : intervals) {
        if (x >= lo && x <= hi) return 0.0;
        best = std::min(best, std::min(std::fabs(x - lo), std::fabs(x - hi)));
    }
    return best;
}

const char* channel_name(Channel c) {
    switch (c) {
        case Channel::uninformative: return "uninformative";
        case Channel::linear: return "linear";
        case Channel::quad_label: return "quad_label";
        case Channel::quad_nonlabel_plus: return "quad_nonlabel_plus";
        case Channel::quad_nonlabel_minus: return "quad_nonlabel_minus";
        case Channel::fq_root: return "fq_root";
        case Channel::giant_diverging: return "giant_diverging";
        case Channel::population_spike: return "population_spike";
        case Channel::laplacian_informative: return "laplacian_informative";
        case Channel::laplacian_noninformative: return "laplacian_noninformative";
    }
    return "unknown";
}

BulkLaw::BulkLaw(double alpha, double beta, double psi, double phi)
    : alpha_(alpha), beta_(beta), psi_(psi), phi_(phi) {
    if (alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0)
        throw std::invalid_argument("BulkLaw: need alpha, beta >= 0 and alpha + beta > 0");
    if (psi <= 0.0 || phi <= 0.0) throw std::invalid_argument("BulkLaw: psi, phi must be positive");
}

double BulkLaw::nu_lower() const {
    if (beta_ == 0.0) return alpha_;
    return alpha_ + beta_ * std::max(0.0, mp_edges(psi_).lower);
}

double BulkLaw::nu_upper() const {
    if (beta_ == 0.0) return alpha_;
    return alpha_ + beta_ * mp_edges(psi_).upper;
}

Cplx BulkLaw::nu_stieltjes(Cplx z) const {
    if (beta_ == 0.0) return 1.0 / (alpha_ - z);
    return mp_stieltjes(psi_, (z - alpha_) / beta_) / beta_;
}

double BulkLaw::nu_stieltjes(double z) const {
    if (beta_ == 0.0) {
        if (z == alpha_) throw std::domain_error("nu_stieltjes: z at the point mass");
        return 1.0 / (alpha_ - z);
    }
    if ((z > nu_lower() && z < nu_upper()) || (nu_has_atom() && z == alpha_))
        throw std::domain_error("nu_stieltjes: real z strictly inside supp(nu)");
    return nu_stieltjes(Cplx(z, 0.0)).real();
}

Cplx BulkLaw::nu_stieltjes_prime(Cplx z) const {
    if (beta_ == 0.0) {
        const Cplx w = alpha_ - z;
        return 1.0 / (w * w);
    }
    return mp_stieltjes_prime(psi_, (z - alpha_) / beta_) / (beta_ * beta_);
}

void BulkLaw::check_pole(Cplx s) const {
    if (s == Cplx(0.0, 0.0)) throw std::domain_error("branch_maps: s = 0 is a pole");
    if (s.imag() != 0.0) return;
    const double sr = s.real();
    // -1/s in supp(nu) <=> 1 + lambda s = 0 for some lambda in supp(nu).
    const double lam = -1.0 / sr;
    if (lam >= nu_lower() && lam <= nu_upper())
        throw std::domain_error("branch_maps: -1/s lies in supp(nu)");
    if (nu_has_atom() && lam == alpha_) throw std::domain_error("branch_maps: -1/s at the nu atom");
}

Cplx BulkLaw::inv_moment1(Cplx s) const {
    if (beta_ == 0.0) return 1.0 / (1.0 + alpha_ * s);
    // E[1/(1 + s(alpha + beta X))] = m_psi(xi)/(s beta), xi = -(1+alpha s)/(beta s)
    const Cplx xi = -(1.0 + alpha_ * s) / (beta_ * s);
    return mp_stieltjes(psi_, xi) / (s * beta_);
}

Cplx BulkLaw::inv_moment2(Cplx s) const {
    if (beta_ == 0.0) {
        const Cplx w = 1.0 + alpha_ * s;
        return 1.0 / (w * w);
    }
    const Cplx xi = -(1.0 + alpha_ * s) / (beta_ * s);
    return mp_stieltjes_prime(psi_, xi) / (s * s * beta_ * beta_);
}

BranchMaps BulkLaw::branch_maps(Cplx s) const {
    check_pole(s);
    s = from_above(s);
    const Cplx e1 = inv_moment1(s);
    const Cplx e2 = inv_moment2(s);
    BranchMaps bm;
    // Int x/(1+xs) dnu = (1 - E1)/s; Int x^2/(1+xs)^2 dnu = (1 - 2 E1 + E2)/s^2
    bm.z = -1.0 / s + phi_ * (1.0 - e1) / s;
    bm.z_prime = (1.0 - phi_ * (1.0 - 2.0 * e1 + e2)) / (s * s);
    bm.varphi = -s * bm.z_prime / bm.z;
    bm.T = (bm.z * s * s - (phi_ - 1.0) * s) / phi_;
    return bm;
}

double BulkLaw::z_of(double s) const { return branch_maps(Cplx(s, 0.0)).z.real(); }
double BulkLaw::z_prime(double s) const { return branch_maps(Cplx(s, 0.0)).z_prime.real(); }
double BulkLaw::varphi(double s) const { return branch_maps(Cplx(s, 0.0)).varphi.real(); }
double BulkLaw::T(double s) const { return branch_maps(Cplx(s, 0.0)).T.real(); }

double BulkLaw::T_prime(double s) const {
    const auto bm = branch_maps(Cplx(s, 0.0));
    return ((bm.z_prime * s * s + 2.0 * bm.z * s - (phi_ - 1.0)) / phi_).real();
}

Cplx BulkLaw::m_mu_from_s(Cplx s) const {
    const auto bm = branch_maps(s);
    return (s - (phi_ - 1.0) / bm.z) / phi_;
}

double BulkLaw::t_branch_scale() const {
    // -1/m_nu at the upper edge of supp(nu). For beta = 0 the branch
    // (-1/alpha, 0) covers all of (0, inf), so there is no finite scale.
    if (beta_ == 0.0) return 0.0;
    return beta_ * std::sqrt(psi_) * (1.0 + std::sqrt(psi_));
}

double BulkLaw::t_inverse(double t) const {
    if (t == 0.0) throw std::invalid_argument("t_inverse: t = 0 has no finite preimage");
    double s;
    if (beta_ == 0.0) {
        const double den = 1.0 + alpha_ * t;
        if (den == 0.0) throw std::domain_error("t_inverse: singular denominator");
        s = -t / den;
    } else {
        // Substitution chain: m = -beta t, xi from the MP quadratic, s = -1/(alpha + beta xi).
        const double m = -beta_ * t;
        const double den_xi = m * (1.0 + psi_ * m);
        if (den_xi == 0.0) throw std::domain_error("t_inverse: singular denominator in xi(m)");
        const double xi = -(1.0 + (psi_ - 1.0) * m) / den_xi;
        const double den_s = alpha_ + beta_ * xi;
        if (den_s == 0.0) throw std::domain_error("t_inverse: singular denominator in s(xi)");
        s = -1.0 / den_s;
    }
    // The chain is algebraic and silently lands on the wrong quadratic root
    // when t is not in the range of T on any real branch; verify, then polish
    // the few digits lost to the edge-sensitive evaluation of T.
    double resid = std::numeric_limits<double>::infinity();
    try {
        resid = std::fabs(T(s) - t);
        for (int it = 0; it < 3 && resid > 1e-13 * (1.0 + std::fabs(t)); ++it) {
            const double tp = T_prime(s);
            if (tp == 0.0) break;
            const double snext = s - (T(s) - t) / tp;
            const double rnext = std::fabs(T(snext) - t);
            if (rnext >= resid) break;
            s = snext;
            resid = rnext;
        }
    } catch (const std::domain_error&) {
        // s fell on a pole: also a branch failure
    }
    if (!(resid <= 1e-9 * (1.0 + std::fabs(t))))
        throw std::domain_error("t_inverse: no real preimage with T(s) = t on any branch");
    return s;
}

namespace {

// Damped Newton for z(s) = target with Im s kept positive. Returns the final
// residual magnitude.
double newton_solve(const BulkLaw& law, Cplx target, Cplx& s, int max_iter, double tol) {
    auto residual = [&](Cplx sv) { return law.branch_maps(sv).z - target; };
    for (int it = 0; it < max_iter; ++it) {
        const Cplx f = residual(s);
        const double fn = std::abs(f);
        if (fn < tol) return fn;
        const Cplx dz = law.branch_maps(s).z_prime;
        if (!(std::abs(dz) > 0.0) || !std::isfinite(std::abs(dz))) break;
        const Cplx step = f / dz;
        double damp = 1.0;
        Cplx snext = s;
        bool moved = false;
        for (int h = 0; h < 60; ++h) {
            const Cplx cand = s - damp * step;
            if (cand.imag() > 0.0 && std::isfinite(std::abs(cand))) {
                double rn;
                try {
                    rn = std::abs(residual(cand));
                } catch (const std::domain_error&) {
                    rn = std::numeric_limits<double>::infinity();
                }
                if (rn < fn) {
                    snext = cand;
                    moved = true;
                    break;
                }
            }
            damp *= 0.5;
        }
        if (!moved) break;
        s = snext;
    }
    return std::abs(residual(s));
}

} // namespace

DensityPoint mu_density(const BulkLaw& law, double x, double eta) {
    if (eta <= 0.0) throw std::invalid_argument("mu_density: eta must be positive");
    const double tol_scale = 1.0 + std::fabs(x) + eta;

    // Continuation in the imaginary part: start high, where Newton from
    // s0 = -1/target converges globally, and track the solution down to eta.
    const double eta0 = std::max(eta, 1.0 + std::fabs(x));
    Cplx s = -1.0 / Cplx(x, eta0);
    if (s.imag() <= 0.0) s = Cplx(s.real(), 1e-16);
    double cur = eta0;
    newton_solve(law, Cplx(x, cur), s, 100, 1e-12 * tol_scale);
    while (cur > eta) {
        cur = std::max(eta, 0.35 * cur);
        newton_solve(law, Cplx(x, cur), s, 100, 1e-12 * tol_scale);
        if (s.imag() <= 0.0) s = Cplx(s.real(), 1e-16);
    }
    const Cplx target(x, eta);
    double resid = newton_solve(law, target, s, 200, 1e-10 * (1.0 + std::abs(target)));
    if (!(resid < 1e-10 * (1.0 + std::abs(target)))) {
        // Fixed-point fallback on the Silverstein equation, then re-polish.
        Cplx sf = -1.0 / target;
        if (sf.imag() <= 0.0) sf = Cplx(sf.real(), 1e-16);
        for (int it = 0; it < 2000; ++it) {
            const Cplx e1 = law.inv_moment1(sf);
            Cplx snew = -1.0 / (target - law.phi() * (1.0 - e1) / sf);
            if (snew.imag() <= 0.0) snew = Cplx(snew.real(), 1e-16);
            if (std::abs(snew - sf) < 1e-14 * (1.0 + std::abs(sf))) {
                sf = snew;
                break;
            }
            sf = snew;
        }
        const double resid2 = newton_solve(law, target, sf, 200, 1e-10 * (1.0 + std::abs(target)));
        if (resid2 < resid) {
            s = sf;
            resid = resid2;
        }
        if (!(resid < 1e-10 * (1.0 + std::abs(target))))
            throw std::runtime_error("mu_density: solver did not converge, |z(s)-target| = " +
                                     std::to_string(resid));
    }
    DensityPoint p;
    p.s = s;
    p.m_mu = (s - (law.phi() - 1.0) / target) / law.phi();
    p.density = p.m_mu.imag() / kPi;
    return p;
}

namespace {

// Bisection on the sign of z' over [lo, hi] (both with the same-signed z'
// neighborhood excluded).
double bisect_zprime(const BulkLaw& law, double lo, double hi) {
    double flo = law.z_prime(lo);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fmid = law.z_prime(mid);
        if (fmid == 0.0) return mid;
        if ((flo > 0.0) == (fmid > 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-12 * (1.0 + std::fabs(lo))) break;
    }
    return 0.5 * (lo + hi);
}

} // namespace

SupportIntervals mu_support(const BulkLaw& law, const SupportOptions& opt) {
    // Pole set of z: s = 0 and -1/supp(nu). supp(nu) is an interval (plus an
    // atom at alpha when psi > 1), so the poles partition the real line into
    // finitely many open branches.
    std::vector<double> cuts{0.0};
    const double lo = law.nu_lower(), hi = law.nu_upper();
    cuts.push_back(-1.0 / hi);
    if (lo > 0.0) cuts.push_back(-1.0 / lo);
    if (law.nu_has_atom() && law.alpha() > 0.0) cuts.push_back(-1.0 / law.alpha());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    // Branch list: (-inf, cuts[0]), gaps between pole-free cut pairs, (cuts.back(), +inf).
    // The continuum [-1/lo, -1/hi] (when lo > 0) is fully polar: skip it.
    struct Branch {
        double lo, hi;
    };
    std::vector<Branch> branches;
    const double span = opt.span_factor * (1.0 + std::fabs(hi));
    auto polar = [&](double a, double b) {
        // A branch is polar when it is inside -1/[nu_lo, nu_hi].
        if (lo <= 0.0) return false;
        const double pa = -1.0 / lo, pb = -1.0 / hi;
        return a >= pa - 1e-300 && b <= pb + 1e-300;
    };
    double prev = -span;
    for (double c : cuts) {
        if (c > prev && !polar(prev, c)) branches.push_back({prev, c});
        prev = c;
    }
    branches.push_back({prev, span});

    std::vector<double> edges;
    for (const auto& br : branches) {
        const double pad = 1e-9 * (1.0 + std::fabs(br.lo) + std::fabs(br.hi));
        const double a = br.lo + std::max(pad, (br.hi - br.lo) * 1e-7);
        const double b = br.hi - std::max(pad, (br.hi - br.lo) * 1e-7);
        if (!(a < b)) continue;
        // Log-spaced toward both endpoints (z' varies fastest near poles).
        const int m = opt.grid_points;
        double prev_s = 0.0, prev_f = 0.0;
        for (int i = 0; i <= m; ++i) {
            const double u = static_cast<double>(i) / m;
            // symmetric log warp: cluster points near both ends
            const double w = 0.5 * (1.0 + std::tanh(4.0 * (2.0 * u - 1.0)) / std::tanh(4.0));
            const double sv = a + (b - a) * w;
            double f;
            try {
                f = law.z_prime(sv);
            } catch (const std::domain_error&) {
                continue;
            }
            if (i > 0 && ((prev_f > 0.0) != (f > 0.0))) {
                const double root = bisect_zprime(law, prev_s, sv);
                edges.push_back(law.z_of(root));
            }
            prev_s = sv;
            prev_f = f;
        }
    }

    SupportIntervals sup;
    sup.has_zero_atom = law.phi() > 1.0;
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end(),
                            [](double a, double b) { return std::fabs(a - b) < 1e-10; }),
                edges.end());
    // Hard edge at zero: for phi >= 1 the smallest nonzero-density point is 0
    // itself (phi = 1) or the bulk detaches from an atom at 0 (phi > 1); in
    // the phi = 1 case the left edge is not a zero of z'.
    if (law.phi() == 1.0 && edges.size() % 2 == 1) edges.insert(edges.begin(), 0.0);
    if (edges.size() % 2 != 0)
        throw std::runtime_error("mu_support: odd number of support edges found");
    for (size_t i = 0; i + 1 < edges.size(); i += 2) sup.intervals.emplace_back(edges[i], edges[i + 1]);
    if (sup.intervals.empty()) throw std::runtime_error("mu_support: no support edges found");
    return sup;
}

DensityCurve mu_cdf_curve(const BulkLaw& law, const SupportIntervals& sup, int points, double eta) {
    DensityCurve c;
    const double lo = std::max(0.0, sup.lower() - 0.02 * sup.width());
    const double hi = sup.upper() + 0.02 * sup.width();
    if (eta <= 0.0) eta = 1e-7 * sup.width();
    c.x.resize(points);
    c.density.resize(points);
    c.cdf.resize(points);
    for (int i = 0; i < points; ++i) {
        const double x = lo + (hi - lo) * i / (points - 1);
        c.x[i] = x;
        c.density[i] = (x <= 0.0) ? 0.0 : mu_density(law, x, eta).density;
    }
    c.zero_atom_mass = sup.has_zero_atom ? 1.0 - 1.0 / law.phi() : 0.0;
    double acc = 0.0;
    c.cdf[0] = 0.0;
    for (int i = 1; i < points; ++i) {
        acc += 0.5 * (c.density[i] + c.density[i - 1]) * (c.x[i] - c.x[i - 1]);
        c.cdf[i] = acc;
    }
    // Normalize the continuous part to 1 - atom mass.
    const double total = acc;
    if (total > 0.0) {
        const double scale = (1.0 - c.zero_atom_mass) / total;
        for (double& v : c.cdf) v *= scale;
    }
    return c;
}

double DensityCurve::cdf_at(double v) const {
    if (v < 0.0) return 0.0;
    if (v < x.front()) return zero_atom_mass;  // gap between the atom and the bulk
    if (v >= x.back()) return 1.0;
    const auto it = std::upper_bound(x.begin(), x.end(), v);
    const size_t j = static_cast<size_t>(it - x.begin());
    const double t = (v - x[j - 1]) / (x[j] - x[j - 1]);
    return zero_atom_mass + cdf[j - 1] + t * (cdf[j] - cdf[j - 1]);
}

SpikePrediction covariance_spike(const BulkLaw& law, double tau) {
    if (tau < 0.0) throw std::invalid_argument("covariance_spike: tau must be nonnegative");
    const double beta = law.beta();
    if (beta > 0.0 && tau == beta * law.psi())
        throw std::domain_error("covariance_spike: tau at the closed-form pole beta*psi");
    SpikePrediction p;
    p.channel = Channel::uninformative;
    p.multiplicity = 1;
    const double tau_crit = beta * std::sqrt(law.psi()) * (1.0 + std::sqrt(law.psi()));
    if (tau <= tau_crit) {
        p.admissible = false;
        p.has_s = false;
        p.note = "subcritical: no population outlier";
        return p;
    }
    const double lambda_tau =
        law.alpha() + tau + (beta > 0.0 ? beta * tau / (tau - beta * law.psi()) : 0.0);
    const double s = -1.0 / lambda_tau;
    p.s = s;
    p.location = law.z_of(s);
    const double zp = law.z_prime(s);
    p.admissible = zp > 0.0;
    p.alignments["ones_u"] = law.varphi(s);
    p.note = "population spike Lambda_tau = " + std::to_string(lambda_tau);
    return p;
}

double gamma_r(const BulkLaw& law, double s, double beta_spike) {
    const auto bm = law.branch_maps(Cplx(s, 0.0));
    const Cplx m_mu = (Cplx(s, 0.0) - (law.phi() - 1.0) / bm.z) / law.phi();
    return (m_mu * bm.z_prime).real() / (beta_spike * law.T_prime(s));
}

SpikePrediction additive_spike(const BulkLaw& law, double beta_spike, int multiplicity) {
    if (beta_spike <= 0.0) throw std::invalid_argument("additive_spike: strength must be positive");
    SpikePrediction p;
    p.channel = Channel::population_spike;
    p.multiplicity = multiplicity;
    const double s = law.t_inverse(1.0 / beta_spike);
    p.s = s;
    p.location = law.z_of(s);
    const double zp = law.z_prime(s);
    p.admissible = zp > 0.0 && p.location != 0.0;
    p.alignments["overlap"] = multiplicity * gamma_r(law, s, beta_spike);
    return p;
}

} // namespace ckspike
