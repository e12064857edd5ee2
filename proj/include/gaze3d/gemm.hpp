#pragma once

// Row-major matrix multiply-accumulate C += A * B used by the tensor library.
// The float path dispatches to a packed FMA kernel when available; dispatch
// depends only on the shapes, so results are reproducible run to run.

#include <cstddef>

namespace gaze3d {

void gemm_accumulate(int m, int n, int k, const float* a, const float* b, float* c);
void gemm_accumulate(int m, int n, int k, const double* a, const double* b, double* c);

}  // namespace gaze3d
