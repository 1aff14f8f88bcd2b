#include "ckspike/empirics.hpp"

#include <algorithm>
#include <cmath>
#include <lapacke.h>
#include <numeric>
#include <stdexcept>

namespace ckspike {

EigenSystem eigh(const Matrix& sym) {
    if (sym.rows() != sym.cols()) throw std::invalid_argument("eigh: matrix not square");
    EigenSystem es;
    es.vectors = sym;
    const int n = static_cast<int>(sym.rows());
    es.values = Vector(n);
    const int info =
        LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, es.vectors.data(), n, es.values.data());
    if (info != 0) throw std::runtime_error("eigh: dsyevd failed with info " + std::to_string(info));
    return es;
}

Vector eigvalsh(const Matrix& sym) {
    if (sym.rows() != sym.cols()) throw std::invalid_argument("eigvalsh: matrix not square");
    Matrix a = sym;
    const int n = static_cast<int>(sym.rows());
    Vector w(n);
    const int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'L', n, a.data(), n, w.data());
    if (info != 0) throw std::runtime_error("eigvalsh: dsyevd failed with info " + std::to_string(info));
    return w;
}

double op_norm(const Matrix& a, int iters, double tol, std::uint64_t seed) {
    Stream st(seed, "opnorm");
    Vector v(a.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = st.normal(static_cast<std::uint64_t>(i));
    v.normalize();
    double lam = 0.0;
    for (int it = 0; it < iters; ++it) {
        Vector w = a * v;
        Vector v2 = a.transpose() * w;
        const double nrm = v2.norm();
        if (nrm == 0.0) return 0.0;
        v2 /= nrm;
        if (std::fabs(nrm - lam) < tol * std::max(1.0, nrm)) {
            lam = nrm;
            break;
        }
        lam = nrm;
        v = v2;
    }
    return std::sqrt(lam);
}

CkPair build_ck(const WeightMatrix& w, const Matrix& X, const ActivationSpec& act) {
    if (w.d() != X.rows()) throw std::invalid_argument("build_ck: dimension mismatch W vs X");
    CkPair out;
    out.Y = (w.W * X).unaryExpr([&](double v) { return act(v); }) /
            std::sqrt(static_cast<double>(w.N()));
    if (!out.Y.allFinite()) throw std::runtime_error("build_ck: non-finite feature values");
    out.K = out.Y.transpose() * out.Y;
    return out;
}

QePair build_qe(const WeightMatrix& w, const Matrix& X, const ActivationSpec& act,
                const XorDataset& ds) {
    if (X.rows() != ds.X.rows() || X.cols() != ds.X.cols())
        throw std::invalid_argument("build_qe: dataset inconsistent with X");
    if (ds.u1.size() == 0 || ds.v1.size() == 0)
        throw std::invalid_argument("build_qe: missing signal frame");
    const double th = ds.theta_snr;
    const double sqn = std::sqrt(static_cast<double>(w.N()));
    const Matrix Z = X - ds.signal();
    QePair out;
    out.Y_qe = (w.W * Z).unaryExpr([&](double v) { return act(v); }) / sqn;
    if (th > 0.0) {
        const Vector g1 = w.W * ds.u1;
        const Vector g2 = w.W * ds.u2;
        out.Y_qe += (th * act.b_sigma / sqn) * (g1 * ds.v1.transpose() + g2 * ds.v2.transpose());
        const Vector g1sq = g1.array().square().matrix();
        const Vector g2sq = g2.array().square().matrix();
        const Vector v1sq = ds.v1.array().square().matrix();
        const Vector v2sq = ds.v2.array().square().matrix();
        out.Y_qe += (th * th * act.c_sigma / (2.0 * sqn)) *
                    (g1sq * v1sq.transpose() + g2sq * v2sq.transpose());
    }
    const Matrix Y = (w.W * X).unaryExpr([&](double v) { return act(v); }) / sqn;
    const Matrix diff = Y - out.Y_qe;
    out.qe_error = diff.isZero(0.0) ? 0.0 : op_norm(diff);
    return out;
}

SpectrumReport spectrum(const Matrix& K, const BulkLaw& law, double margin) {
    return spectrum(eigh(K), law, margin);
}

SpectrumReport spectrum(const EigenSystem& es, const BulkLaw& law, double margin) {
    SpectrumReport rep;
    rep.eigenvalues = es.values;
    rep.margin = margin;
    rep.bulk = mu_support(law);
    rep.bulk_width = rep.bulk->width();
    const double tol = margin * rep.bulk_width;

    const int n = static_cast<int>(es.values.size());
    for (int i = 0; i < n; ++i) {
        const double x = es.values(i);
        const double dist = std::min(rep.bulk->distance(x), std::fabs(x));
        if (dist > tol) rep.outlier_indices.push_back(i);
    }
    // Gap-merge into clusters.
    const double merge_gap = 0.5 * tol;
    for (size_t k = 0; k < rep.outlier_indices.size(); ++k) {
        const int idx = rep.outlier_indices[k];
        const double x = es.values(idx);
        if (!rep.clusters.empty() && x - rep.clusters.back().hi <= merge_gap) {
            auto& c = rep.clusters.back();
            c.hi = x;
            c.members.push_back(idx);
        } else {
            OutlierCluster c;
            c.lo = c.hi = x;
            c.members.push_back(idx);
            rep.clusters.push_back(std::move(c));
        }
    }
    for (auto& c : rep.clusters) {
        double acc = 0.0;
        for (int idx : c.members) acc += es.values(idx);
        c.mean = acc / static_cast<double>(c.members.size());
        c.wide = (c.hi - c.lo) > 0.25 * tol;
    }
    // KS distance of the ESD against the numeric CDF of mu.
    const DensityCurve curve = mu_cdf_curve(law, *rep.bulk);
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = es.values(i);
        const double fe_hi = static_cast<double>(i + 1) / n;
        const double fe_lo = static_cast<double>(i) / n;
        const double ft = curve.cdf_at(x);
        ks = std::max(ks, std::max(std::fabs(fe_hi - ft), std::fabs(fe_lo - ft)));
    }
    rep.esd_ks = ks;
    return rep;
}

AlignmentMeasurement cluster_alignment(const Matrix& eigvecs, const std::vector<int>& members,
                                       const Vector& direction, AlignNorm norm,
                                       const std::string& tag) {
    if (members.empty()) throw std::invalid_argument("cluster_alignment: empty cluster");
    const double dn = direction.norm();
    if (dn == 0.0) throw std::invalid_argument("cluster_alignment: zero direction");
    AlignmentMeasurement m;
    m.direction = tag;
    m.normalization = norm;
    double acc = 0.0;
    for (int idx : members) {
        const double ip = eigvecs.col(idx).dot(direction);
        acc += ip * ip;
    }
    if (norm == AlignNorm::unit) {
        m.value = acc / (dn * dn);
    } else {
        m.value = acc / static_cast<double>(direction.size());
    }
    return m;
}

KernelLaplacian distance_kernel_laplacian(const Matrix& X, const std::function<double(double)>& f) {
    if (!(f(2.0) > 0.0)) throw std::invalid_argument("distance_kernel_laplacian: need f(2) > 0");
    const double h = 1e-5;
    const double fp2 = (f(2.0 + h) - f(2.0 - h)) / (2.0 * h);
    if (fp2 == 0.0) throw std::invalid_argument("distance_kernel_laplacian: need f'(2) != 0");
    const int n = static_cast<int>(X.cols());
    const Vector sq = X.colwise().squaredNorm();
    Matrix d2 = -2.0 * (X.transpose() * X);
    d2.rowwise() += sq.transpose();
    d2.colwise() += sq;
    KernelLaplacian out;
    out.Kf = d2.unaryExpr([&](double v) { return f(std::max(0.0, v)); });
    const Vector deg = out.Kf.rowwise().sum();
    if (deg.minCoeff() <= 0.0) throw std::runtime_error("distance_kernel_laplacian: nonpositive degree");
    const Vector dmhalf = deg.array().rsqrt().matrix();
    out.L = static_cast<double>(n) *
            (dmhalf.asDiagonal() * out.Kf * dmhalf.asDiagonal());
    out.L = 0.5 * (out.L + out.L.transpose());
    return out;
}

double linear_readout(const Vector& eigvec, const Vector& y) {
    if (eigvec.size() != y.size()) throw std::invalid_argument("linear_readout: length mismatch");
    const int n = static_cast<int>(y.size());
    int agree = 0;
    for (int i = 0; i < n; ++i)
        if ((eigvec(i) >= 0.0 ? 1.0 : -1.0) == y(i)) ++agree;
    const double acc = static_cast<double>(agree) / n;
    return std::max(acc, 1.0 - acc);
}

Vector mean_direction(const Matrix& X, const ActivationSpec& act, int quad_order) {
    const GaussHermite gh(quad_order);
    const int n = static_cast<int>(X.cols());
    Vector m(n);
    for (int j = 0; j < n; ++j) m(j) = conditional_mean(act, X.col(j).squaredNorm(), gh);
    return m;
}

SampleSpike sample_spike_direction(const Matrix& X) {
    SampleSpike sp;
    Vector s = X.transpose() * Vector::Ones(X.rows());
    sp.q = s.array().square().matrix();
    const double nrm = s.norm();
    if (nrm == 0.0) throw std::runtime_error("sample_spike_direction: zero spike direction");
    sp.s_hat = s / nrm;
    return sp;
}

Matrix deflate_rank_one(const Matrix& K, const Vector& unit) {
    const Vector Ku = K * unit;
    const double uKu = unit.dot(Ku);
    Matrix out = K;
    out.noalias() -= Ku * unit.transpose();
    out.noalias() -= unit * Ku.transpose();
    out.noalias() += (uKu)*unit * unit.transpose();
    return 0.5 * (out + out.transpose());
}

Matrix nuisance_basis(const Matrix& X, const ActivationSpec& act, double drop_tol) {
    const int n = static_cast<int>(X.cols());
    const int d = static_cast<int>(X.rows());
    const GaussHermite gh(200);
    Matrix B(n, d + 2);
    B.col(0).setOnes();
    for (int j = 0; j < n; ++j) {
        const double sj = X.col(j).norm();
        B(j, 1) = conditional_mean(act, sj * sj, gh);
        // zeta_1 / s = E[sigma(s xi) xi] / s
        double z1 = 0.0;
        for (size_t k = 0; k < gh.nodes.size(); ++k)
            z1 += gh.weights[k] * gh.nodes[k] * act(sj * gh.nodes[k]);
        const double a_j = z1 / sj;
        B.row(j).tail(d) = a_j * X.col(j).transpose();
    }
    // Rank-revealing column-pivoted QR; keep columns above the drop tolerance.
    Eigen::ColPivHouseholderQR<Matrix> qr(B);
    qr.setThreshold(drop_tol);
    const int rank = static_cast<int>(qr.rank());
    Matrix Q = qr.householderQ() * Matrix::Identity(n, rank);
    return Q;
}

Matrix apply_deflation(const Matrix& K, const Matrix& U) {
    // (I - UU') K (I - UU') without forming the projector.
    const Matrix KU = K * U;
    const Matrix UtKU = U.transpose() * KU;
    Matrix out = K;
    out.noalias() -= KU * U.transpose();
    out.noalias() -= U * KU.transpose();
    out.noalias() += U * UtKU * U.transpose();
    return 0.5 * (out + out.transpose());
}

Vector apply_deflation(const Vector& v, const Matrix& U) { return v - U * (U.transpose() * v); }

Matrix svec_lift(const Matrix& X) {
    const int d = static_cast<int>(X.rows());
    const int n = static_cast<int>(X.cols());
    const int p = d * (d + 1) / 2;
    const double rt2 = std::sqrt(2.0);
    Matrix Q(p, n);
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (int j = 0; j < n; ++j) {
        int row = 0;
        for (int a = 0; a < d; ++a) {
            Q(row++, j) = X(a, j) * X(a, j);
            for (int b = a + 1; b < d; ++b) Q(row++, j) = rt2 * X(a, j) * X(b, j);
        }
    }
    return Q;
}

Matrix embedding(const EigenSystem& es, const std::vector<int>& comps) {
    Matrix emb(es.vectors.rows(), static_cast<Eigen::Index>(comps.size()));
    for (size_t k = 0; k < comps.size(); ++k) emb.col(static_cast<Eigen::Index>(k)) = es.vectors.col(comps[k]);
    return emb;
}

} // namespace ckspike
