#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "kvlens/numerics.hpp"
#include "kvlens/rng.hpp"

using namespace kvlens;
namespace num = kvlens::numerics;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST_CASE("matmul identity and hand cases") {
    Rng rng(1);
    Matrix m(3, 3);
    for (auto& v : m.data) v = rng.gaussian();
    CHECK(num::matmul(Matrix::identity(3), m) == m);

    Matrix a(2, 2, {1, 2, 3, 4});
    Matrix b(2, 1, {0, 1});
    auto c = num::matmul(a, b);
    CHECK(c.data == std::vector<double>{2, 4});

    Matrix z = Matrix::zeros(2, 3);
    Matrix any(3, 4);
    for (auto& v : any.data) v = rng.gaussian();
    CHECK(num::matmul(z, any) == Matrix::zeros(2, 4));

    CHECK_THROWS_AS((void)num::matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// masked_softmax
// ---------------------------------------------------------------------------

TEST_CASE("masked_softmax uniform, restriction, scalar oracle") {
    std::vector<double> logits{2.5, 2.5, 2.5, 2.5};
    std::vector<std::uint8_t> all(4, 1);
    auto p = num::masked_softmax(logits, all);
    for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    // Blocking a position restricts the softmax to the remainder.
    std::vector<double> l2{5.0, 1.0, 3.0};
    std::vector<std::uint8_t> mask{0, 1, 1};
    auto q = num::masked_softmax(l2, mask);
    CHECK(q[0] == 0.0);
    auto sub = num::softmax(std::vector<double>{1.0, 3.0});
    CHECK(q[1] == doctest::Approx(sub[0]).epsilon(1e-15));
    CHECK(q[2] == doctest::Approx(sub[1]).epsilon(1e-15));

    // Scalar exp/sum oracle.
    auto r = num::softmax(std::vector<double>{0.5, -0.5});
    CHECK(r[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(r[1] == doctest::Approx(0.2689).epsilon(1e-4));

    std::vector<std::uint8_t> none(3, 0);
    CHECK_THROWS_AS((void)num::masked_softmax(l2, none), std::invalid_argument);
}

TEST_CASE("masked_softmax is a probability vector with exact zeros") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 2 + rng.uniform_index(20);
        std::vector<double> logits(n);
        std::vector<std::uint8_t> mask(n);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            logits[i] = rng.gaussian() * 5.0;
            mask[i] = rng.uniform() < 0.7 ? 1 : 0;
            any |= mask[i] != 0;
        }
        if (!any) mask[0] = 1;
        auto p = num::masked_softmax(logits, mask);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) CHECK(p[i] == 0.0);
            sum += p[i];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// rms_norm
// ---------------------------------------------------------------------------

TEST_CASE("rms_norm hand arithmetic and scale invariance") {
    std::vector<double> zeros(5, 0.0), ones(5, 1.0);
    auto z = num::rms_norm(zeros, ones);
    for (double v : z) CHECK(v == 0.0);

    std::vector<double> x{3.0, 4.0};
    std::vector<double> g{1.0, 1.0};
    auto y = num::rms_norm(x, g);
    const double denom = std::sqrt(12.5 + num::kRmsEps);
    CHECK(y[0] == doctest::Approx(3.0 / denom).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(4.0 / denom).epsilon(1e-15));

    // Scale invariance is exact up to the eps guard, so use vectors whose
    // mean square dominates it.
    Rng rng(3);
    std::vector<double> v(16), gain(16, 1.0);
    for (auto& e : v) e = rng.gaussian() * 50.0;
    auto base = num::rms_norm(v, gain);
    for (double c : {2.0, 17.5, 1e3}) {
        auto scaled = v;
        for (auto& e : scaled) e *= c;
        auto out = num::rms_norm(scaled, gain);
        for (std::size_t i = 0; i < v.size(); ++i)
            CHECK(out[i] == doctest::Approx(base[i]).epsilon(1e-9));
    }
}

// ---------------------------------------------------------------------------
// PCA (oracle: power iteration with deflation on the sample covariance)
// ---------------------------------------------------------------------------

namespace {

Matrix sample_covariance(const Matrix& data) {
    const std::size_t n = data.rows, d = data.cols;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += data.at(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    Matrix cov(d, d);
    for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s += (data.at(i, p) - mean[p]) * (data.at(i, q) - mean[q]);
            cov.at(p, q) = s / static_cast<double>(n - 1);
        }
    return cov;
}

// Independent top-k eigensolver: power iteration + deflation.
void eigen_oracle(Matrix cov, std::size_t k, std::vector<double>& vals, Matrix& vecs) {
    const std::size_t d = cov.rows;
    vals.assign(k, 0.0);
    vecs = Matrix(k, d);
    Rng rng(4242);
    for (std::size_t r = 0; r < k; ++r) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.gaussian();
        for (int it = 0; it < 5000; ++it) {
            std::vector<double> w(d, 0.0);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) w[i] += cov.at(i, j) * v[j];
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-300) break;
            for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / norm;
        }
        double lambda = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) lambda += v[i] * cov.at(i, j) * v[j];
        vals[r] = lambda;
        for (std::size_t i = 0; i < d; ++i) vecs.at(r, i) = v[i];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) cov.at(i, j) -= lambda * v[i] * v[j];
    }
}

} // namespace

TEST_CASE("pca_fit trivial geometry") {
    // Collinear points carry all variance in the first component.
    Matrix line(6, 3);
    const double dir[3] = {1.0, -2.0, 0.5};
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 3; ++j) line.at(i, j) = (double(i) - 2.5) * dir[j] + 7.0;
    auto model = num::pca_fit(line, 2);
    double total = 0.0;
    auto cov = sample_covariance(line);
    for (std::size_t j = 0; j < 3; ++j) total += cov.at(j, j);
    CHECK(model.explained_variance[0] == doctest::Approx(total).epsilon(1e-9));
    CHECK(model.explained_variance[1] == doctest::Approx(0.0).scale(total).epsilon(1e-12));

    // Zero-variance data has zero explained variance.
    Matrix flat(4, 3);
    for (auto& v : flat.data) v = 3.25;
    auto fm = num::pca_fit(flat, 2);
    for (double ev : fm.explained_variance) CHECK(ev == doctest::Approx(0.0));

    CHECK_THROWS_AS((void)num::pca_fit(line, 9), std::invalid_argument);
    CHECK_THROWS_AS((void)num::pca_fit(Matrix(1, 3), 1), std::invalid_argument);
}

TEST_CASE("pca_fit matches the eigendecomposition oracle") {
    Rng rng(17);
    for (std::size_t d : {4u, 9u, 16u}) {
        const std::size_t n = 60;
        Matrix data(n, d);
        // Anisotropic covariance so eigenvalues are well separated.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                data.at(i, j) = rng.gaussian() * (1.0 + 2.0 * double(d - j)) + double(j);
        const std::size_t k = 3;
        auto model = num::pca_fit(data, k);

        // Orthonormality.
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t s = 0; s < k; ++s) {
                double dotv = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    dotv += model.components.at(r, j) * model.components.at(s, j);
                CHECK(std::abs(dotv - (r == s ? 1.0 : 0.0)) < 1e-8);
            }

        std::vector<double> ovals;
        Matrix ovecs;
        eigen_oracle(sample_covariance(data), k, ovals, ovecs);
        for (std::size_t r = 0; r < k; ++r) {
            CHECK(model.explained_variance[r] ==
                  doctest::Approx(ovals[r]).epsilon(1e-6));
            double align = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                align += model.components.at(r, j) * ovecs.at(r, j);
            CHECK(std::abs(std::abs(align) - 1.0) < 1e-6);
        }
        CHECK(std::is_sorted(model.explained_variance.rbegin(),
                             model.explained_variance.rend()));
    }
}

TEST_CASE("pca planted rank-2 plane is recovered") {
    Rng rng(23);
    const std::size_t d = 6, n = 80;
    // Orthonormal plane basis p1, p2.
    std::vector<double> p1(d), p2(d);
    for (std::size_t j = 0; j < d; ++j) {
        p1[j] = rng.gaussian();
        p2[j] = rng.gaussian();
    }
    double n1 = std::sqrt(std::inner_product(p1.begin(), p1.end(), p1.begin(), 0.0));
    for (auto& v : p1) v /= n1;
    double d12 = std::inner_product(p1.begin(), p1.end(), p2.begin(), 0.0);
    for (std::size_t j = 0; j < d; ++j) p2[j] -= d12 * p1[j];
    double n2 = std::sqrt(std::inner_product(p2.begin(), p2.end(), p2.begin(), 0.0));
    for (auto& v : p2) v /= n2;

    Matrix data(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.gaussian() * 3.0;
        const double b = rng.gaussian() * 1.5;
        for (std::size_t j = 0; j < d; ++j) data.at(i, j) = a * p1[j] + b * p2[j];
    }
    auto model = num::pca_fit(data, 2);
    for (std::size_t r = 0; r < 2; ++r) {
        double c1 = 0.0, c2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            c1 += model.components.at(r, j) * p1[j];
            c2 += model.components.at(r, j) * p2[j];
        }
        const double in_plane = c1 * c1 + c2 * c2; // = cos^2(principal angle)
        CHECK(std::sqrt(std::max(0.0, 1.0 - in_plane)) < 1e-3);
    }

    // Rank-2 data reconstructs exactly from 2 components.
    auto proj = num::pca_project(model, data);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double rec = model.mean[j];
            for (std::size_t r = 0; r < 2; ++r) rec += proj.at(i, r) * model.components.at(r, j);
            CHECK(std::abs(rec - data.at(i, j)) < 1e-6);
        }
    }
}

TEST_CASE("pca_project mean row and isometry at k == d") {
    Rng rng(31);
    Matrix data(10, 4);
    for (auto& v : data.data) v = rng.gaussian() * 2.0 + 1.0;
    auto model = num::pca_fit(data, 4);

    Matrix mean_row(1, 4);
    for (std::size_t j = 0; j < 4; ++j) mean_row.at(0, j) = model.mean[j];
    auto pm = num::pca_project(model, mean_row);
    for (double v : pm.data) CHECK(std::abs(v) < 1e-12);

    // Full-rank projection preserves centered pairwise distances.
    auto proj = num::pca_project(model, data);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t l = i + 1; l < 3; ++l) {
            double d_orig = 0.0, d_proj = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double diff = data.at(i, j) - data.at(l, j);
                d_orig += diff * diff;
                const double pdiff = proj.at(i, j) - proj.at(l, j);
                d_proj += pdiff * pdiff;
            }
            CHECK(d_proj == doctest::Approx(d_orig).epsilon(1e-9));
        }

    CHECK_THROWS_AS((void)num::pca_project(model, Matrix(2, 5)), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// k-means (oracle: exhaustive 2-partition search)
// ---------------------------------------------------------------------------

namespace {

double partition_inertia(const Matrix& data, const std::vector<int>& labels, int k) {
    const std::size_t d = data.cols;
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
        std::vector<double> mean(d, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < data.rows; ++i) {
            if (labels[i] != c) continue;
            ++count;
            for (std::size_t j = 0; j < d; ++j) mean[j] += data.at(i, j);
        }
        if (count == 0) continue;
        for (auto& m : mean) m /= static_cast<double>(count);
        for (std::size_t i = 0; i < data.rows; ++i) {
            if (labels[i] != c) continue;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = data.at(i, j) - mean[j];
                total += diff * diff;
            }
        }
    }
    return total;
}

double brute_force_two_cluster(const Matrix& data) {
    const std::size_t n = data.rows;
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t bits = 1; bits + 1 < (1u << n); ++bits) {
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = (bits >> i) & 1;
        best = std::min(best, partition_inertia(data, labels, 2));
    }
    return best;
}

} // namespace

TEST_CASE("kmeans separates two blobs and is deterministic") {
    Rng rng(41);
    const std::size_t per = 12;
    Matrix data(2 * per, 2);
    for (std::size_t i = 0; i < per; ++i) {
        data.at(i, 0) = rng.gaussian() * 0.2;
        data.at(i, 1) = rng.gaussian() * 0.2;
        data.at(per + i, 0) = 10.0 + rng.gaussian() * 0.2;
        data.at(per + i, 1) = 10.0 + rng.gaussian() * 0.2;
    }
    auto res = num::kmeans(data, 2, 7);
    for (std::size_t i = 1; i < per; ++i) CHECK(res.labels[i] == res.labels[0]);
    for (std::size_t i = 1; i < per; ++i) CHECK(res.labels[per + i] == res.labels[per]);
    CHECK(res.labels[0] != res.labels[per]);

    auto res2 = num::kmeans(data, 2, 7);
    CHECK(res.labels == res2.labels);
    CHECK(res.inertia == res2.inertia);

    CHECK(std::is_sorted(res.inertia_trace.rbegin(), res.inertia_trace.rend()));
}

TEST_CASE("kmeans k == n gives zero inertia") {
    Matrix data(4, 2, {0, 0, 1, 0, 0, 1, 5, 5});
    auto res = num::kmeans(data, 4, 3);
    CHECK(res.inertia == doctest::Approx(0.0));
    std::vector<int> sorted = res.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("kmeans reaches the brute-force optimum on 6 fixed points") {
    Matrix data(6, 2, {0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 5.0, 5.0, 5.1, 5.0, 5.0, 5.1});
    const double oracle = brute_force_two_cluster(data);
    auto res = num::kmeans(data, 2, 123);
    CHECK(res.inertia == doctest::Approx(oracle).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// logistic regression
// ---------------------------------------------------------------------------

TEST_CASE("logistic_fit on separable data reaches training accuracy 1") {
    Rng rng(55);
    const std::size_t n = 40;
    Matrix x(n, 2);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = i % 2 == 0;
        x.at(i, 0) = (pos ? 2.0 : -2.0) + rng.gaussian() * 0.3;
        x.at(i, 1) = rng.gaussian();
        y[i] = pos ? 1 : 0;
    }
    auto model = num::logistic_fit(x, y);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = num::logistic_predict(model, x.row(i));
        CHECK((p >= 0.5 ? 1 : 0) == y[i]);
    }
    // Nonincreasing trace within 1e-9.
    for (std::size_t i = 1; i < model.training_loss_trace.size(); ++i)
        CHECK(model.training_loss_trace[i] <= model.training_loss_trace[i - 1] + 1e-9);
}

TEST_CASE("logistic_fit with constant labels saturates") {
    Rng rng(66);
    Matrix x(20, 3);
    for (auto& v : x.data) v = rng.gaussian();
    std::vector<int> y(20, 1);
    auto model = num::logistic_fit(x, y);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(num::logistic_predict(model, x.row(i)) >= 0.9);
}

TEST_CASE("logistic gradient matches central finite differences") {
    Rng rng(77);
    const std::size_t n = 12, d = 4;
    Matrix x(n, d);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x.at(i, j) = rng.gaussian();
        y[i] = rng.uniform() < 0.5 ? 0 : 1;
    }
    std::vector<double> w(d);
    for (auto& v : w) v = rng.gaussian() * 0.5;
    const double b = 0.3;
    const double l2 = 1e-4;

    std::vector<double> gw(d);
    double gb = 0.0;
    num::logistic_grad(x, y, w, b, l2, gw, gb);

    const double h = 1e-5;
    for (std::size_t j = 0; j < d; ++j) {
        auto wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        const double fd = (num::logistic_loss(x, y, wp, b, l2) -
                           num::logistic_loss(x, y, wm, b, l2)) / (2.0 * h);
        CHECK(gw[j] == doctest::Approx(fd).epsilon(1e-6));
    }
    const double fdb = (num::logistic_loss(x, y, w, b + h, l2) -
                        num::logistic_loss(x, y, w, b - h, l2)) / (2.0 * h);
    CHECK(gb == doctest::Approx(fdb).epsilon(1e-6));
}

TEST_CASE("logistic_fit rejects non-finite features") {
    Matrix x(2, 2, {1.0, 2.0, std::numeric_limits<double>::quiet_NaN(), 0.0});
    std::vector<int> y{0, 1};
    CHECK_THROWS_AS((void)num::logistic_fit(x, y), std::invalid_argument);
}
