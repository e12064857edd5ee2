#pragma once

// Fourier-feature positional encodings. gamma(x) = [sin(2 pi B x), cos(2 pi B x)]
// with B drawn once from N(0, sigma^2) under a fixed seed and frozen. The
// direction-distance-decomposed encoding of a point p concatenates
// gamma_dir(p / |p|) with gamma_dist(|p|).

#include <cstdint>
#include <string>
#include <vector>

#include "gaze3d/geom.hpp"

namespace gaze3d {

enum class PeMode { kD3, kStandard };

const char* to_string(PeMode m);
std::optional<PeMode> pe_mode_from_string(const std::string& s);

// Frequency matrix of one encoding map: B is m x k (row-major, single
// precision), output dimension is 2m. Reproducible from (seed, sigma, shape).
struct FourierFeatureMap {
  int frequencies = 0;  // m
  int input_dim = 0;    // k
  float sigma = 1.0f;
  std::uint64_t seed = 0;
  std::vector<float> B;  // m * k

  int output_dim() const { return 2 * frequencies; }

  static FourierFeatureMap make(int output_dim, int input_dim, float sigma, std::uint64_t seed,
                                std::uint64_t stream);
};

// [sin(2 pi B x), cos(2 pi B x)]; x must have map.input_dim entries.
std::vector<float> gamma(const FourierFeatureMap& map, const double* x, int dim);
std::vector<float> gamma(const FourierFeatureMap& map, const Vec3& p);

struct D3Encoding {
  std::vector<float> values;   // dir block then dist block
  bool zero_direction = false; // |p| ~ 0: dir block fell back to gamma(0)
};

// gamma_dir(p/|p|) ++ gamma_dist(|p|).
D3Encoding d3_encode(const FourierFeatureMap& dir_map, const FourierFeatureMap& dist_map,
                     const Vec3& p);

// Embedding dimensions. The defaults satisfy
// C_gaze + N_pose * C_keypoint = C_latent (106 + 15*10 = 256).
struct EncodingConfig {
  int c_gaze = 106;
  int c_keypoint_dir = 6;
  int c_keypoint_dist = 4;
  int c_latent_dir = 128;
  int c_latent_dist = 128;
  float sigma_dir = 1.0f;
  float sigma_dist = 0.5f;

  int c_keypoint() const { return c_keypoint_dir + c_keypoint_dist; }
  int c_latent() const { return c_latent_dir + c_latent_dist; }

  void validate() const;
};

// The full set of frozen frequency matrices: D3 maps plus the raw-point maps
// used by the standard-encoding ablation. All derive from one seed.
struct EncoderMaps {
  EncodingConfig config;
  FourierFeatureMap view;        // S2 -> c_gaze
  FourierFeatureMap pose_dir;    // S2 -> c_keypoint_dir
  FourierFeatureMap pose_dist;   // R  -> c_keypoint_dist
  FourierFeatureMap object_dir;  // S2 -> c_latent_dir
  FourierFeatureMap object_dist; // R  -> c_latent_dist
  FourierFeatureMap pose_raw;    // R3 -> c_keypoint (standard PE ablation)
  FourierFeatureMap object_raw;  // R3 -> c_latent   (standard PE ablation)

  static EncoderMaps make(const EncodingConfig& cfg, std::uint64_t seed);
};

struct ContextEmbedding {
  std::vector<float> subject;         // c_latent
  std::vector<float> objects;         // n_objects rows of c_latent
  int n_objects = 0;
  int view_dim = 0;                   // leading slice of `subject` holding E_view
};

// E_view = gamma_view(v'), E_pose = per-keypoint encoding flattened,
// E_subject = E_view ++ E_pose, E_object = one row per object position.
ContextEmbedding embed_context(const EgoContext& ego, const EncoderMaps& maps, PeMode pe_mode);

}  // namespace gaze3d
