#include "kvlens/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <cstring>
#include <immintrin.h>

// AVX2 kernels. No FMA: mul followed by add matches the scalar reference's
// rounding exactly. Horizontal reduction order is (s0+s2)+(s1+s3), the same
// tree the scalar reference uses.
namespace kvlens::kernels {
namespace {

inline double hsum_pairs(__m256d acc) {
    const __m128d lo = _mm256_castpd256_pd128(acc);  // {s0, s1}
    const __m128d hi = _mm256_extractf128_pd(acc, 1); // {s2, s3}
    const __m128d sum = _mm_add_pd(lo, hi);           // {s0+s2, s1+s3}
    const __m128d h = _mm_hadd_pd(sum, sum);          // (s0+s2)+(s1+s3)
    return _mm_cvtsd_f64(h);
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(a + i);
        const __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
    }
    double s = hsum_pairs(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double l2sq_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    double s = hsum_pairs(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vy = _mm256_loadu_pd(y + i);
        const __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scaled_mul_avx2(double* out, const double* x, const double* g, double s, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(out + i, _mm256_mul_pd(v, vs));
    }
    for (; i < n; ++i) out[i] = (x[i] * g[i]) * s;
}

void matmul_avx2(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ai[l];
            const __m256d vav = _mm256_set1_pd(av);
            const double* bl = b + l * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d vc = _mm256_loadu_pd(ci + j);
                const __m256d vb = _mm256_loadu_pd(bl + j);
                _mm256_storeu_pd(ci + j, _mm256_add_pd(vc, _mm256_mul_pd(vav, vb)));
            }
            for (; j < n; ++j) ci[j] += av * bl[j];
        }
    }
}

} // namespace

const detail::KernelTable& detail::avx2_table() {
    static const KernelTable t{dot_avx2, l2sq_avx2, axpy_avx2, scaled_mul_avx2, matmul_avx2};
    return t;
}

} // namespace kvlens::kernels

#endif // x86_64
