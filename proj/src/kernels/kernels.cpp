#include "kvlens/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace kvlens::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

const detail::KernelTable* table_for(Backend b) {
    switch (b) {
        case Backend::scalar:
            return &detail::scalar_table();
        case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return &detail::avx2_table();
#else
            return nullptr;
#endif
    }
    return nullptr;
}

struct Dispatch {
    Backend backend;
    const detail::KernelTable* table;

    Dispatch() {
        backend = cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
        if (const char* env = std::getenv("KVLENS_KERNELS")) {
            if (std::strcmp(env, "scalar") == 0) backend = Backend::scalar;
            else if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) backend = Backend::avx2;
        }
        table = table_for(backend);
    }
};

Dispatch& dispatch() {
    static Dispatch d;
    return d;
}

} // namespace

Backend active_backend() { return dispatch().backend; }

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
    return cpu_has_avx2();
}

void force_backend(Backend b) {
    if (!backend_supported(b)) {
        throw std::runtime_error("kernel backend not supported on this CPU: " + backend_name(b));
    }
    dispatch().backend = b;
    dispatch().table = table_for(b);
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "unknown";
}

double dot(const double* a, const double* b, std::size_t n) {
    return dispatch().table->dot(a, b, n);
}

double l2sq(const double* a, const double* b, std::size_t n) {
    return dispatch().table->l2sq(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    dispatch().table->axpy(alpha, x, y, n);
}

void scaled_mul(double* out, const double* x, const double* g, double s, std::size_t n) {
    dispatch().table->scaled_mul(out, x, g, s, n);
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    dispatch().table->matmul(a, b, c, m, k, n);
}

} // namespace kvlens::kernels
