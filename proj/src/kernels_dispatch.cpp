// SPDX-License-Identifier: Apache-2.0
#include "blora/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "blora/error.hpp"

namespace blora::kern {

#if BLORA_BUILD_AVX2
const Ops& avx2_ops_impl();
#endif

namespace {

bool cpu_has_avx2_fma() {
#if BLORA_BUILD_AVX2
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

struct Dispatch {
  const Ops* ops;
  const char* name;
};

Dispatch resolve_auto() {
  if (avx2_available()) return {&avx2_ops(), "avx2"};
  return {&scalar_ops(), "scalar"};
}

Dispatch& state() {
  static Dispatch d = [] {
    if (const char* env = std::getenv("BLORA_KERNELS")) {
      if (std::strcmp(env, "scalar") == 0) return Dispatch{&scalar_ops(), "scalar"};
      if (std::strcmp(env, "avx2") == 0 && avx2_available())
        return Dispatch{&avx2_ops(), "avx2"};
    }
    return resolve_auto();
  }();
  return d;
}

}  // namespace

bool avx2_available() {
  static const bool ok = cpu_has_avx2_fma();
  return ok;
}

const Ops& avx2_ops() {
#if BLORA_BUILD_AVX2
  if (avx2_available()) return avx2_ops_impl();
#endif
  throw UsageError("avx2 kernels not available on this build/CPU");
}

const Ops& active() { return *state().ops; }

const char* active_name() { return state().name; }

void force_variant(const char* name) {
  if (std::strcmp(name, "scalar") == 0) {
    state() = {&scalar_ops(), "scalar"};
  } else if (std::strcmp(name, "avx2") == 0) {
    state() = {&avx2_ops(), "avx2"};
  } else if (std::strcmp(name, "auto") == 0) {
    state() = resolve_auto();
  } else {
    throw ParameterError(std::string("unknown kernel variant: ") + name);
  }
}

}  // namespace blora::kern
