#include "iclsynth/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace icls::kern {
namespace {

Backend g_backend = Backend::Auto;

Backend env_backend() {
    const char* env = std::getenv("ICLSYNTH_KERNELS");
    if (env == nullptr) return Backend::Auto;
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0) return Backend::Avx2;
    return Backend::Auto;
}

Backend resolve() {
    if (g_backend == Backend::Auto) {
        Backend from_env = env_backend();
        if (from_env != Backend::Auto) {
            g_backend = from_env;
        } else {
            g_backend = avx2_supported() ? Backend::Avx2 : Backend::Scalar;
        }
    }
    return g_backend;
}

}  // namespace

bool avx2_supported() {
#if defined(ICLSYNTH_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& active() {
    switch (resolve()) {
        case Backend::Avx2:
            if (avx2_supported()) return avx2_table();
            return scalar_table();
        case Backend::Scalar:
        default:
            return scalar_table();
    }
}

void force_backend(Backend b) { g_backend = b; }

Backend active_backend() {
    resolve();
    if (g_backend == Backend::Avx2 && !avx2_supported()) return Backend::Scalar;
    return g_backend;
}

#if !defined(ICLSYNTH_HAVE_AVX2)
// Without the AVX2 translation unit the accessor must still link; it is
// unreachable because avx2_supported() is false.
const KernelTable& avx2_table() { return scalar_table(); }
#endif

}  // namespace icls::kern
