#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvlens/matrix.hpp"

// Minimal dense linear algebra and classical-ML kernels. Everything here is a
// pure function over immutable inputs and safe to call concurrently.
namespace kvlens::numerics {

inline constexpr double kRmsEps = 1e-6;

Matrix matmul(const Matrix& a, const Matrix& b);

// Softmax restricted to allowed positions (nonzero mask entries). Blocked
// positions are exactly 0 in the output; the rest sums to 1. Throws if every
// position is blocked.
std::vector<double> masked_softmax(std::span<const double> logits,
                                   std::span<const std::uint8_t> allowed);

std::vector<double> softmax(std::span<const double> logits);

// out_i = gain_i * x_i / sqrt(mean(x^2) + eps)
std::vector<double> rms_norm(std::span<const double> x, std::span<const double> gain);

struct PcaModel {
    std::vector<double> mean;       // d
    Matrix components;              // k x d, orthonormal rows
    std::vector<double> explained_variance; // k, nonincreasing
};

// Covariance + cyclic Jacobi eigendecomposition; deterministic, suitable for
// d up to a few hundred. Component signs are fixed so the largest-magnitude
// coefficient of each component is positive.
PcaModel pca_fit(const Matrix& data, std::size_t k);

Matrix pca_project(const PcaModel& model, const Matrix& data);

// Symmetric eigendecomposition helper (descending eigenvalues). Exposed for
// reuse by pca_fit; input must be square symmetric.
void symmetric_eigen(const Matrix& a, std::vector<double>& eigenvalues, Matrix& eigenvectors);

struct KmeansResult {
    std::vector<int> labels;
    Matrix centroids;
    double inertia = 0.0;
    std::vector<double> inertia_trace; // one entry per assignment step
    std::size_t iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding from the given seed, run to an
// assignment fixpoint or 200 iterations. Empty clusters are re-seeded from
// the point farthest from its assigned centroid (lowest index on ties).
KmeansResult kmeans(const Matrix& data, std::size_t k, std::uint64_t seed);

struct LogisticConfig {
    double step = 0.1;
    std::size_t epochs = 500;
    double l2 = 1e-4;
};

struct LogisticModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> training_loss_trace;
};

// Full-batch gradient descent on L2-regularized log loss (bias unregularized).
// A step that would increase the loss is retried with a transiently halved
// step so the accepted-loss trace is nonincreasing.
LogisticModel logistic_fit(const Matrix& features, std::span<const int> labels,
                           const LogisticConfig& config = {});

double logistic_predict(const LogisticModel& model, std::span<const double> x);

// Loss/gradient at (w, b); exposed so tests can run finite-difference checks
// against the same expressions the optimizer uses.
double logistic_loss(const Matrix& x, std::span<const int> y,
                     std::span<const double> w, double b, double l2);
void logistic_grad(const Matrix& x, std::span<const int> y,
                   std::span<const double> w, double b, double l2,
                   std::span<double> grad_w, double& grad_b);

} // namespace kvlens::numerics
