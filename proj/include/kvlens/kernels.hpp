#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner kernels with a scalar reference implementation and an
// AVX2 variant selected at runtime. Both backends are bitwise-equivalent by
// construction: the scalar code mirrors the vector lane layout (4 running
// partial sums combined as (s0+s2)+(s1+s3), sequential tail) and the AVX2
// code uses separate mul/add rather than FMA. Swapping backends therefore
// never changes a single output bit, which keeps every downstream artifact
// checksum stable across machines.
namespace kvlens::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_supported(Backend b);

// Force a backend; throws std::runtime_error if unsupported on this CPU.
// The KVLENS_KERNELS environment variable ("scalar" or "avx2") is honored
// once at startup.
void force_backend(Backend b);

std::string backend_name(Backend b);

double dot(const double* a, const double* b, std::size_t n);
double l2sq(const double* a, const double* b, std::size_t n);

// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

// out[i] = x[i] * g[i] * s
void scaled_mul(double* out, const double* x, const double* g, double s, std::size_t n);

// Row-major c[m x n] = a[m x k] * b[k x n]; c is overwritten.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);

namespace detail {

struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t);
    double (*l2sq)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scaled_mul)(double*, const double*, const double*, double, std::size_t);
    void (*matmul)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

} // namespace detail

} // namespace kvlens::kernels
