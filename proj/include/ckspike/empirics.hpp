// empirics.hpp — conjugate-kernel construction, eigendecomposition, outlier
// detection, alignment measurement, quadratic equivalents, and the distance
// kernel / normalized Laplacian.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ckspike/activation.hpp"
#include "ckspike/data.hpp"
#include "ckspike/transforms.hpp"

namespace ckspike {

// Full symmetric eigendecomposition (LAPACK divide & conquer), ascending.
struct EigenSystem {
    Vector values;
    Matrix vectors;  // column k belongs to values(k)
};
EigenSystem eigh(const Matrix& sym);
Vector eigvalsh(const Matrix& sym);

// Operator norm by power iteration on A'A (100 steps, tol 1e-6 by default).
double op_norm(const Matrix& a, int iters = 100, double tol = 1e-6, std::uint64_t seed = 12345);

struct CkPair {
    Matrix Y;  // N x n features sigma(WX)/sqrt(N)
    Matrix K;  // n x n Gram Y'Y
};
CkPair build_ck(const WeightMatrix& w, const Matrix& X, const ActivationSpec& act);

struct QePair {
    Matrix Y_qe;
    double qe_error;  // ||Y - Y_qe||_op
};
// Quadratic equivalent around sigma(WZ): bulk + theta b (g v') terms +
// (theta^2 c / 2) (g^2 (v^2)') terms, with Z = X - M and g_k = W u_k.
QePair build_qe(const WeightMatrix& w, const Matrix& X, const ActivationSpec& act,
                const XorDataset& ds);

struct OutlierCluster {
    double mean = 0.0;
    double lo = 0.0, hi = 0.0;
    std::vector<int> members;              // eigenvalue indices (ascending order)
    bool wide = false;                     // member spread exceeds margin/4
    std::map<std::string, double> alignments;
};

struct SpectrumReport {
    Vector eigenvalues;  // ascending
    std::optional<SupportIntervals> bulk;
    std::vector<int> outlier_indices;
    std::vector<OutlierCluster> clusters;
    double esd_ks = 0.0;
    double margin = 0.0;
    double bulk_width = 0.0;
};

// Eigendecomposition + outlier detection against the reference bulk law:
// outliers are eigenvalues farther than margin * (bulk width) from
// supp(mu) u {0}; clusters merge outliers closer than margin/2 * width.
// The KS distance is computed against the numerically integrated CDF.
SpectrumReport spectrum(const Matrix& K, const BulkLaw& law, double margin = 0.04);
SpectrumReport spectrum(const EigenSystem& es, const BulkLaw& law, double margin = 0.04);

enum class AlignNorm { unit, per_n };

struct AlignmentMeasurement {
    std::string direction;
    double value = 0.0;
    AlignNorm normalization = AlignNorm::unit;
};

// Sum over the cluster eigenvectors of squared inner products with the
// normalized direction; per_n divides by n instead of normalizing the
// direction (label conventions: y has norm sqrt(n)).
AlignmentMeasurement cluster_alignment(const Matrix& eigvecs, const std::vector<int>& members,
                                       const Vector& direction, AlignNorm norm,
                                       const std::string& tag = "custom");

struct KernelLaplacian {
    Matrix Kf;  // f(||xi - xj||^2)
    Matrix L;   // n D^{-1/2} Kf D^{-1/2}
};
KernelLaplacian distance_kernel_laplacian(const Matrix& X, const std::function<double(double)>& f);

// max over the global sign of the fraction of agreeing label signs.
double linear_readout(const Vector& eigvec, const Vector& y);

// Conditional-mean direction m_hat with entries F(||x_j||^2),
// F(t) = E[sigma(sqrt(t) xi)].
Vector mean_direction(const Matrix& X, const ActivationSpec& act, int quad_order = 200);

// Pretrained-regime deflation: s = X' 1_d, Pi_s = I - s_hat s_hat'.
struct SampleSpike {
    Vector s_hat;  // unit
    Vector q;      // s .* s (un-normalized)
};
SampleSpike sample_spike_direction(const Matrix& X);
Matrix deflate_rank_one(const Matrix& K, const Vector& unit);

// Quadratic-regime deflation P_sigma: orthogonal projector complement of
// span{1, mu_sigma} + Range(A_sigma X') via rank-revealing QR with drop
// tolerance 1e-10. Returns the orthonormal basis U of the nuisance space.
Matrix nuisance_basis(const Matrix& X, const ActivationSpec& act, double drop_tol = 1e-10);
Matrix apply_deflation(const Matrix& K, const Matrix& U);   // (I-UU')K(I-UU')
Vector apply_deflation(const Vector& v, const Matrix& U);

// Frobenius-isometric symmetric vectorization of x_i x_i' per column:
// Q is p x n with p = d(d+1)/2.
Matrix svec_lift(const Matrix& X);

// Kernel-PCA embedding: coordinates of each sample on the selected
// eigenvectors (columns selected by index into the ascending order).
Matrix embedding(const EigenSystem& es, const std::vector<int>& comps);

} // namespace ckspike
