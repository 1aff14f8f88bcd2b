// data.hpp — XOR Gaussian-mixture data and random / spiked weights.
//
// The dataset is X = M + Z with
//   M = theta_snr * (u1 v1' + u2 v2'),   theta_snr = r sqrt(n/(2d)),
//   Z_ij iid N(0, 1/d),
// labels y = [1 ... 1, -1 ... -1], and the fixed orthonormal frame
//   u1 = (1,..,1,-1,..,-1)/sqrt(d),  u2 = 1_d/sqrt(d),
//   v1 = sqrt(2/n) (1_{n/4}, -1_{n/4}, 0_{n/2}),
//   v2 = sqrt(2/n) (0_{n/2}, 1_{n/4}, -1_{n/4}).
//
// Weights are W with iid N(0,1) entries; the spiked variant is
// W1 = W + theta a b', b = 1_d, a ~ N(0, I_N / N), theta = theta0 N^{1/4}.
//
// X is stored column-major (Eigen default): one column per sample.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>

#include "ckspike/rng.hpp"

namespace ckspike {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct XorDataset {
    Matrix X;  // d x n
    Vector y;  // +-1 labels, length n
    Vector u1, u2;  // unit vectors in R^d
    Vector v1, v2;  // unit vectors in R^n
    double r = 0.0;
    double theta_snr = 0.0;
    std::uint64_t seed = 0;

    int d() const { return static_cast<int>(X.rows()); }
    int n() const { return static_cast<int>(X.cols()); }
    Matrix signal() const { return theta_snr * (u1 * v1.transpose() + u2 * v2.transpose()); }
};

struct WeightSpike {
    double theta0 = 0.0;
    double theta = 0.0;  // theta0 * N^{1/4}
    Vector a;            // N(0, I_N/N)
    Vector b;            // 1_d
};

struct WeightMatrix {
    Matrix W;  // N x d, iid N(0,1); includes the spike when present
    std::optional<WeightSpike> spike;
    std::uint64_t seed = 0;

    int N() const { return static_cast<int>(W.rows()); }
    int d() const { return static_cast<int>(W.cols()); }
};

// n must be divisible by 4 and d even. Deterministic given (n, d, r, seed).
XorDataset gen_xor(int n, int d, double r, std::uint64_t seed);

// Deterministic given (N, d, seed); optional rank-one pretrained spike.
WeightMatrix gen_weights(int N, int d, std::uint64_t seed,
                         std::optional<double> spike_theta0 = std::nullopt);

// Binary matrix format: int64 rows, int64 cols, then rows*cols little-endian
// doubles in column-major order.
void save_matrix(const Matrix& m, const std::string& path);
Matrix load_matrix(const std::string& path);
void save_matrix_csv(const Matrix& m, const std::string& path);
Matrix load_matrix_csv(const std::string& path);

// Fill an n-vector / matrix from a stream, one value per counter position,
// column-major; parallel over columns for matrices.
void fill_gaussian(Matrix& m, const Stream& s, double scale = 1.0);

} // namespace ckspike
