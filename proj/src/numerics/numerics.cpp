#include "kvlens/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kvlens/kernels.hpp"
#include "kvlens/rng.hpp"

namespace kvlens::numerics {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions do not match");
    }
    Matrix c(a.rows, b.cols);
    kernels::matmul(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
    return c;
}

std::vector<double> masked_softmax(std::span<const double> logits,
                                   std::span<const std::uint8_t> allowed) {
    if (logits.size() != allowed.size()) {
        throw std::invalid_argument("masked_softmax: logits/mask length mismatch");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    std::size_t n_allowed = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (allowed[i]) {
            ++n_allowed;
            max_logit = std::max(max_logit, logits[i]);
        }
    }
    if (n_allowed == 0) {
        throw std::invalid_argument("masked_softmax: all positions blocked");
    }
    std::vector<double> out(logits.size(), 0.0);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (allowed[i]) {
            out[i] = std::exp(logits[i] - max_logit);
            denom += out[i];
        }
    }
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (allowed[i]) out[i] /= denom;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<std::uint8_t> allowed(logits.size(), 1);
    return masked_softmax(logits, allowed);
}

std::vector<double> rms_norm(std::span<const double> x, std::span<const double> gain) {
    if (x.empty()) throw std::invalid_argument("rms_norm: empty input");
    if (x.size() != gain.size()) throw std::invalid_argument("rms_norm: gain length mismatch");
    const double ms = kernels::dot(x.data(), x.data(), x.size()) / static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + kRmsEps);
    std::vector<double> out(x.size());
    kernels::scaled_mul(out.data(), x.data(), gain.data(), inv, x.size());
    return out;
}

void symmetric_eigen(const Matrix& a, std::vector<double>& eigenvalues, Matrix& eigenvectors) {
    if (a.rows != a.cols) throw std::invalid_argument("symmetric_eigen: matrix not square");
    const std::size_t n = a.rows;
    Matrix m = a;
    Matrix v = Matrix::identity(n);

    // Cyclic Jacobi sweeps until off-diagonal mass is negligible.
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double app = m.at(p, p);
                const double aqq = m.at(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double mip = m.at(i, p);
                    const double miq = m.at(i, q);
                    m.at(i, p) = c * mip - s * miq;
                    m.at(i, q) = s * mip + c * miq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double mpi = m.at(p, i);
                    const double mqi = m.at(q, i);
                    m.at(p, i) = c * mpi - s * mqi;
                    m.at(q, i) = s * mpi + c * mqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v.at(i, p);
                    const double viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return m.at(x, x) > m.at(y, y); });

    eigenvalues.assign(n, 0.0);
    eigenvectors = Matrix(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        eigenvalues[r] = m.at(order[r], order[r]);
        for (std::size_t i = 0; i < n; ++i) eigenvectors.at(r, i) = v.at(i, order[r]);
    }
}

PcaModel pca_fit(const Matrix& data, std::size_t k) {
    const std::size_t n = data.rows;
    const std::size_t d = data.cols;
    if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");
    if (k == 0 || k > std::min(n, d)) throw std::invalid_argument("pca_fit: k out of range");

    PcaModel model;
    model.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) model.mean[j] += data.at(i, j);
    for (std::size_t j = 0; j < d; ++j) model.mean[j] /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered.at(i, j) = data.at(i, j) - model.mean[j];

    // Sample covariance (n-1 denominator).
    Matrix cov(d, d);
    for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = p; q < d; ++q) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += centered.at(i, p) * centered.at(i, q);
            s /= static_cast<double>(n - 1);
            cov.at(p, q) = s;
            cov.at(q, p) = s;
        }
    }

    std::vector<double> evals;
    Matrix evecs;
    symmetric_eigen(cov, evals, evecs);

    model.components = Matrix(k, d);
    model.explained_variance.assign(k, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
        model.explained_variance[r] = std::max(0.0, evals[r]);
        // Sign convention: largest-|coeff| entry positive.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(evecs.at(r, j)) > std::abs(evecs.at(r, arg))) arg = j;
        const double sign = evecs.at(r, arg) < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < d; ++j) model.components.at(r, j) = sign * evecs.at(r, j);
    }
    return model;
}

Matrix pca_project(const PcaModel& model, const Matrix& data) {
    const std::size_t d = model.mean.size();
    if (data.cols != d) throw std::invalid_argument("pca_project: dimension mismatch");
    const std::size_t k = model.components.rows;
    Matrix out(data.rows, k);
    for (std::size_t i = 0; i < data.rows; ++i) {
        std::vector<double> centered(d);
        for (std::size_t j = 0; j < d; ++j) centered[j] = data.at(i, j) - model.mean[j];
        for (std::size_t r = 0; r < k; ++r) {
            out.at(i, r) = kernels::dot(centered.data(), model.components.data.data() + r * d, d);
        }
    }
    return out;
}

namespace {

double nearest_centroid(const Matrix& data, const Matrix& centroids, std::size_t i, int& label) {
    const std::size_t d = data.cols;
    double best = std::numeric_limits<double>::infinity();
    label = 0;
    for (std::size_t c = 0; c < centroids.rows; ++c) {
        const double dist = kernels::l2sq(data.data.data() + i * d,
                                          centroids.data.data() + c * d, d);
        if (dist < best) {
            best = dist;
            label = static_cast<int>(c);
        }
    }
    return best;
}

} // namespace

KmeansResult kmeans(const Matrix& data, std::size_t k, std::uint64_t seed) {
    const std::size_t n = data.rows;
    const std::size_t d = data.cols;
    if (k == 0 || k > n) throw std::invalid_argument("kmeans: k out of range");

    Rng rng(seed);
    KmeansResult res;
    res.centroids = Matrix(k, d);

    // k-means++ seeding.
    std::size_t first = static_cast<std::size_t>(rng.uniform_index(n));
    for (std::size_t j = 0; j < d; ++j) res.centroids.at(0, j) = data.at(first, j);
    std::vector<double> dist2(n, 0.0);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t cc = 0; cc < c; ++cc) {
                best = std::min(best, kernels::l2sq(data.data.data() + i * d,
                                                    res.centroids.data.data() + cc * d, d));
            }
            dist2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(rng.uniform_index(n));
        }
        for (std::size_t j = 0; j < d; ++j) res.centroids.at(c, j) = data.at(pick, j);
    }

    res.labels.assign(n, -1);
    std::vector<int> prev_labels(n, -2);
    for (std::size_t iter = 0; iter < 200; ++iter) {
        // Assignment.
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += nearest_centroid(data, res.centroids, i, res.labels[i]);
        res.inertia_trace.push_back(inertia);
        res.inertia = inertia;
        res.iterations = iter + 1;
        if (res.labels == prev_labels) break;
        prev_labels = res.labels;

        // Update.
        std::vector<std::size_t> counts(k, 0);
        Matrix sums(k, d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(res.labels[i]);
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) sums.at(c, j) += data.at(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed from the point farthest from its assigned centroid.
                std::size_t far = 0;
                double far_dist = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto ci = static_cast<std::size_t>(res.labels[i]);
                    const double dist = kernels::l2sq(data.data.data() + i * d,
                                                      res.centroids.data.data() + ci * d, d);
                    if (dist > far_dist) {
                        far_dist = dist;
                        far = i;
                    }
                }
                for (std::size_t j = 0; j < d; ++j) res.centroids.at(c, j) = data.at(far, j);
            } else {
                for (std::size_t j = 0; j < d; ++j)
                    res.centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
            }
        }
    }
    return res;
}

double logistic_loss(const Matrix& x, std::span<const int> y,
                     std::span<const double> w, double b, double l2) {
    const std::size_t n = x.rows;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = kernels::dot(x.data.data() + i * x.cols, w.data(), x.cols) + b;
        // log(1 + exp(-|z|)) form for stability.
        const double m = std::max(z, 0.0);
        const double log1pe = m + std::log1p(std::exp(-std::abs(z)));
        loss += y[i] ? (log1pe - z) : log1pe;
    }
    loss /= static_cast<double>(n);
    double reg = 0.0;
    for (double wi : w) reg += wi * wi;
    return loss + 0.5 * l2 * reg;
}

void logistic_grad(const Matrix& x, std::span<const int> y,
                   std::span<const double> w, double b, double l2,
                   std::span<double> grad_w, double& grad_b) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = kernels::dot(x.data.data() + i * d, w.data(), d) + b;
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double err = p - static_cast<double>(y[i]);
        kernels::axpy(err, x.data.data() + i * d, grad_w.data(), d);
        grad_b += err;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) grad_w[j] = grad_w[j] * inv_n + l2 * w[j];
    grad_b *= inv_n;
}

LogisticModel logistic_fit(const Matrix& features, std::span<const int> labels,
                           const LogisticConfig& config) {
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    if (n == 0) throw std::invalid_argument("logistic_fit: empty training set");
    if (labels.size() != n) throw std::invalid_argument("logistic_fit: label count mismatch");
    if (!features.all_finite()) throw std::invalid_argument("logistic_fit: non-finite features");
    for (int v : labels) {
        if (v != 0 && v != 1) throw std::invalid_argument("logistic_fit: labels must be 0/1");
    }

    LogisticModel model;
    model.weights.assign(d, 0.0);
    model.bias = 0.0;
    double loss = logistic_loss(features, labels, model.weights, model.bias, config.l2);
    model.training_loss_trace.push_back(loss);

    std::vector<double> gw(d);
    std::vector<double> cand_w(d);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double gb = 0.0;
        logistic_grad(features, labels, model.weights, model.bias, config.l2, gw, gb);
        double step = config.step;
        bool accepted = false;
        for (int halvings = 0; halvings < 30; ++halvings) {
            for (std::size_t j = 0; j < d; ++j) cand_w[j] = model.weights[j] - step * gw[j];
            const double cand_b = model.bias - step * gb;
            const double cand_loss = logistic_loss(features, labels, cand_w, cand_b, config.l2);
            if (cand_loss <= loss + 1e-12) {
                model.weights = cand_w;
                model.bias = cand_b;
                loss = cand_loss;
                model.training_loss_trace.push_back(loss);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // at a (numerical) stationary point
    }
    return model;
}

double logistic_predict(const LogisticModel& model, std::span<const double> x) {
    const double z = kernels::dot(x.data(), model.weights.data(), x.size()) + model.bias;
    return 1.0 / (1.0 + std::exp(-z));
}

} // namespace kvlens::numerics
