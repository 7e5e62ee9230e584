// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace blora::kern {

// Data-parallel inner loops behind the matrix type. Two implementations share
// this table: a portable scalar reference and an AVX2+FMA variant selected at
// runtime when the CPU supports it. Elementwise transcendentals stay on scalar
// libm in both variants so results are reproducible across the two paths.
struct Ops {
  // c(m x n) = a(m x k) * b(k x n), row-major, c overwritten.
  void (*matmul)(const double* a, const double* b, double* c, int m, int k, int n);
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  void (*scale)(const double* x, double alpha, double* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

// Active table. Resolved once: AVX2 when supported, else scalar. The
// BLORA_KERNELS environment variable ("scalar" or "avx2") overrides.
const Ops& active();

const Ops& scalar_ops();

// True when this build carries the AVX2 variant and the CPU supports it.
bool avx2_available();
const Ops& avx2_ops();  // errors if !avx2_available()

// Test hook: force a variant by name ("scalar", "avx2", "auto").
void force_variant(const char* name);
const char* active_name();

}  // namespace blora::kern
