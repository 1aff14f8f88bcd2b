// Randomized invariants across the modules: Stieltjes branch signs, the
// definitional T identity, inverse round trips, monotonicity, PSD kernels,
// eigenpair residuals, and alignment partition of unity.

#include <doctest.h>

#include <cmath>
#include <random>

#include "ckspike/empirics.hpp"
#include "ckspike/theory.hpp"

using namespace ckspike;

namespace {

// Random two-parameter bulk laws. The MP weight is kept away from zero: as
// beta -> 0 the branch t-scale diverges like 1/beta and absolute residual
// targets stop being meaningful in double precision (the exact beta = 0
// point-mass laws take the Moebius closed form and are tested separately).
BulkLaw random_law(std::mt19937_64& gen) {
    std::uniform_real_distribution<double> ua(0.0, 0.8), upsi(0.2, 4.0), uphi(0.2, 4.0);
    const double a = ua(gen);
    return BulkLaw(a, 1.0 - a, upsi(gen), uphi(gen));
}

// A pole-free random s on the branch right of the nu support poles.
double random_branch_s(const BulkLaw& law, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    return -u(gen) / law.nu_upper();
}

} // namespace

TEST_CASE("Stieltjes branch: upper half-plane maps to upper half-plane") {
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> ux(-5.0, 15.0), ueta(1e-9, 2.0);
    for (int k = 0; k < 300; ++k) {
        const BulkLaw law = random_law(gen);
        const Cplx z(ux(gen), ueta(gen));
        CHECK(law.nu_stieltjes(z).imag() >= 0.0);
    }
    for (int k = 0; k < 50; ++k) {
        const BulkLaw law = random_law(gen);
        const SupportIntervals sup = mu_support(law);
        std::uniform_real_distribution<double> uin(sup.lower(), sup.upper());
        const double x = std::max(1e-3, uin(gen));
        const auto pt = mu_density(law, x, 1e-6 * sup.width());
        CHECK(pt.m_mu.imag() >= 0.0);
        CHECK(pt.density >= 0.0);
        CHECK(pt.s.imag() > 0.0);
    }
}

TEST_CASE("definitional identity T = (z s^2 - (phi-1) s)/phi at 1000 samples") {
    std::mt19937_64 gen(102);
    for (int k = 0; k < 1000; ++k) {
        const BulkLaw law = random_law(gen);
        const double s = random_branch_s(law, gen);
        const auto bm = law.branch_maps(Cplx(s, 0.0));
        const double lhs = bm.T.real();
        const double rhs = (bm.z.real() * s * s - (law.phi() - 1.0) * s) / law.phi();
        CHECK(std::fabs(lhs - rhs) <= 1e-12 * (1.0 + std::fabs(lhs)));
    }
}

TEST_CASE("T' < 0 and the inverse round trip on sampled branches") {
    std::mt19937_64 gen(103);
    std::uniform_real_distribution<double> ut(0.02, 0.9);
    for (int k = 0; k < 1000; ++k) {
        const BulkLaw law = random_law(gen);
        const double s = random_branch_s(law, gen);
        CHECK(law.T_prime(s) < 0.0);
        const double scale = law.t_branch_scale();
        const double t = ut(gen) / scale;
        CHECK(std::fabs(law.T(law.t_inverse(t)) - t) < 1e-10);
    }
}

TEST_CASE("CK matrices are PSD with accurate eigenpairs") {
    std::mt19937_64 gen(104);
    std::uniform_int_distribution<int> un(15, 40);
    for (int k = 0; k < 6; ++k) {
        const int n = 4 * un(gen);
        const int d = 2 * un(gen);
        const int N = 2 * un(gen);
        const XorDataset ds = gen_xor(n, d, 1.5, 1000 + static_cast<std::uint64_t>(k));
        const WeightMatrix w = gen_weights(N, d, 2000 + static_cast<std::uint64_t>(k));
        const CkPair ck = build_ck(w, ds.X, make_activation("gelu"));
        const EigenSystem es = eigh(ck.K);
        const double scale = es.values.cwiseAbs().maxCoeff();
        CHECK(es.values.minCoeff() >= -1e-8 * scale);
        CHECK(es.values.sum() == doctest::Approx(ck.K.trace()).epsilon(1e-8));
        for (int j : {0, n / 2, n - 1}) {
            const double resid =
                (ck.K * es.vectors.col(j) - es.values(j) * es.vectors.col(j)).norm();
            CHECK(resid <= 1e-8 * scale);
        }
    }
}

TEST_CASE("alignment partition of unity over a full eigenbasis") {
    std::mt19937_64 gen(105);
    const XorDataset ds = gen_xor(48, 16, 1.0, 3000);
    const WeightMatrix w = gen_weights(32, 16, 3001);
    const EigenSystem es = eigh(build_ck(w, ds.X, make_activation("gelu")).K);
    std::vector<int> all(48);
    for (int i = 0; i < 48; ++i) all[i] = i;
    std::normal_distribution<double> nd;
    for (int k = 0; k < 20; ++k) {
        Vector dir(48);
        for (int i = 0; i < 48; ++i) dir(i) = nd(gen);
        const auto m = cluster_alignment(es.vectors, all, dir, AlignNorm::unit);
        CHECK(m.value == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("normalization and Bessel bound for randomized cos-family members") {
    std::mt19937_64 gen(106);
    std::uniform_real_distribution<double> ua(0.3, 3.0);
    const GaussHermite gh(200);
    for (int k = 0; k < 10; ++k) {
        const ActivationSpec f = cos_family(ua(gen));
        CHECK(std::fabs(gh.integrate(f.evaluator)) < 1e-8);
        CHECK(gh.integrate([&](double x) { return f(x) * f(x); }) ==
              doctest::Approx(1.0).epsilon(1e-8));
        CHECK(f.b_sigma * f.b_sigma + 0.5 * f.c_sigma * f.c_sigma <= 1.0 + 1e-8);
    }
}

TEST_CASE("mu mass is normalized including the zero atom") {
    std::mt19937_64 gen(107);
    for (int k = 0; k < 5; ++k) {
        const BulkLaw law = random_law(gen);
        const SupportIntervals sup = mu_support(law);
        const DensityCurve curve = mu_cdf_curve(law, sup, 2048);
        CHECK(curve.cdf_at(sup.upper() + 0.1 * sup.width()) == doctest::Approx(1.0).epsilon(2e-3));
    }
}
