#pragma once

// Command-line surface: dataset generation, training, evaluation, ablation
// sweeps, geometric debugging, and dataset validation.
//
// Exit codes: 0 success, 1 validation error (bad flags, bad schema),
// 2 runtime error (I/O failures, corrupt files). GAZE3D_CONFIG names a
// default key-value config file applied below any --config file and flags.

namespace gaze3d {

int run_cli(int argc, const char* const* argv);

}  // namespace gaze3d
