#include "ckspike/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace ckspike {

void fill_gaussian(Matrix& m, const Stream& s, double scale) {
    const auto rows = m.rows();
    const auto cols = m.cols();
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (Eigen::Index j = 0; j < cols; ++j) {
        const std::uint64_t base = static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(rows);
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = scale * s.normal(base + static_cast<std::uint64_t>(i));
        }
    }
}

XorDataset gen_xor(int n, int d, double r, std::uint64_t seed) {
    if (n <= 0 || n % 4 != 0) throw std::invalid_argument("gen_xor: n must be a positive multiple of 4");
    if (d <= 0 || d % 2 != 0) throw std::invalid_argument("gen_xor: d must be positive and even");
    if (r < 0.0) throw std::invalid_argument("gen_xor: r must be nonnegative");

    XorDataset ds;
    ds.r = r;
    ds.seed = seed;
    ds.theta_snr = r * std::sqrt(static_cast<double>(n) / (2.0 * d));

    ds.u1 = Vector(d);
    ds.u2 = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
    for (int i = 0; i < d; ++i) ds.u1(i) = (i < d / 2 ? 1.0 : -1.0) / std::sqrt(static_cast<double>(d));

    const double vq = std::sqrt(2.0 / n);
    ds.v1 = Vector::Zero(n);
    ds.v2 = Vector::Zero(n);
    for (int j = 0; j < n / 4; ++j) ds.v1(j) = vq;
    for (int j = n / 4; j < n / 2; ++j) ds.v1(j) = -vq;
    for (int j = n / 2; j < 3 * n / 4; ++j) ds.v2(j) = vq;
    for (int j = 3 * n / 4; j < n; ++j) ds.v2(j) = -vq;

    ds.y = Vector(n);
    for (int j = 0; j < n; ++j) ds.y(j) = (j < n / 2 ? 1.0 : -1.0);

    Stream zs(seed, "xor.noise");
    ds.X = Matrix(d, n);
    fill_gaussian(ds.X, zs, 1.0 / std::sqrt(static_cast<double>(d)));
    if (r > 0.0) ds.X += ds.signal();
    return ds;
}

WeightMatrix gen_weights(int N, int d, std::uint64_t seed, std::optional<double> spike_theta0) {
    if (N < 1 || d < 1) throw std::invalid_argument("gen_weights: N, d must be >= 1");
    WeightMatrix wm;
    wm.seed = seed;
    Stream ws(seed, "weights.base");
    wm.W = Matrix(N, d);
    fill_gaussian(wm.W, ws, 1.0);
    if (spike_theta0) {
        if (*spike_theta0 <= 0.0) throw std::invalid_argument("gen_weights: theta0 must be positive");
        WeightSpike sp;
        sp.theta0 = *spike_theta0;
        sp.theta = sp.theta0 * std::pow(static_cast<double>(N), 0.25);
        sp.b = Vector::Ones(d);
        sp.a = Vector(N);
        Stream as(seed, "weights.spike.a");
        const double scale = 1.0 / std::sqrt(static_cast<double>(N));
        for (int i = 0; i < N; ++i) sp.a(i) = scale * as.normal(static_cast<std::uint64_t>(i));
        wm.W += sp.theta * sp.a * sp.b.transpose();
        wm.spike = std::move(sp);
    }
    return wm;
}

void save_matrix(const Matrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_matrix: cannot open " + path);
    const std::int64_t rows = m.rows(), cols = m.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!out) throw std::runtime_error("save_matrix: write failed for " + path);
}

Matrix load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_matrix: cannot open " + path);
    std::int64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows < 0 || cols < 0) throw std::runtime_error("load_matrix: bad header in " + path);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw std::runtime_error("load_matrix: truncated data in " + path);
    return m;
}

void save_matrix_csv(const Matrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_matrix_csv: cannot open " + path);
    out.precision(17);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << m(i, j);
            if (j + 1 < m.cols()) out << ',';
        }
        out << '\n';
    }
}

Matrix load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_matrix_csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::runtime_error("load_matrix_csv: ragged rows in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("load_matrix_csv: empty file " + path);
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return m;
}

} // namespace ckspike
