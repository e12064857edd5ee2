#include "gaze3d/encoding.hpp"

#include <cmath>

#include "gaze3d/context.hpp"
#include "gaze3d/rng.hpp"

namespace gaze3d {

const char* to_string(PeMode m) { return m == PeMode::kD3 ? "d3" : "standard"; }

std::optional<PeMode> pe_mode_from_string(const std::string& s) {
  if (s == "d3") return PeMode::kD3;
  if (s == "standard") return PeMode::kStandard;
  return std::nullopt;
}

FourierFeatureMap FourierFeatureMap::make(int output_dim, int input_dim, float sigma,
                                          std::uint64_t seed, std::uint64_t stream) {
  if (output_dim <= 0 || output_dim % 2 != 0)
    throw domain_error("FourierFeatureMap: output dimension must be positive and even");
  FourierFeatureMap map;
  map.frequencies = output_dim / 2;
  map.input_dim = input_dim;
  map.sigma = sigma;
  map.seed = seed;
  map.B.resize(static_cast<std::size_t>(map.frequencies) * input_dim);
  Rng rng(seed, stream);
  for (float& b : map.B) b = static_cast<float>(rng.normal(0.0, sigma));
  return map;
}

std::vector<float> gamma(const FourierFeatureMap& map, const double* x, int dim) {
  if (dim != map.input_dim) throw domain_error("gamma: input dimension mismatch");
  const int m = map.frequencies;
  std::vector<float> out(2 * m);
  for (int i = 0; i < m; ++i) {
    double t = 0.0;
    for (int j = 0; j < map.input_dim; ++j)
      t += static_cast<double>(map.B[i * map.input_dim + j]) * x[j];
    t *= 2.0 * M_PI;
    out[i] = static_cast<float>(std::sin(t));
    out[m + i] = static_cast<float>(std::cos(t));
  }
  return out;
}

std::vector<float> gamma(const FourierFeatureMap& map, const Vec3& p) {
  const double x[3] = {p.x, p.y, p.z};
  return gamma(map, x, 3);
}

D3Encoding d3_encode(const FourierFeatureMap& dir_map, const FourierFeatureMap& dist_map,
                     const Vec3& p) {
  D3Encoding enc;
  const double norm = p.norm();
  std::vector<float> dir_block;
  if (norm > 1e-9) {
    const double u[3] = {p.x / norm, p.y / norm, p.z / norm};
    dir_block = gamma(dir_map, u, 3);
  } else {
    const double u[3] = {0.0, 0.0, 0.0};
    dir_block = gamma(dir_map, u, 3);
    enc.zero_direction = true;
  }
  const std::vector<float> dist_block = gamma(dist_map, &norm, 1);
  enc.values = std::move(dir_block);
  enc.values.insert(enc.values.end(), dist_block.begin(), dist_block.end());
  return enc;
}

void EncodingConfig::validate() const {
  const auto even = [](int d) { return d > 0 && d % 2 == 0; };
  if (!even(c_gaze) || !even(c_keypoint_dir) || !even(c_keypoint_dist) || !even(c_latent_dir) ||
      !even(c_latent_dist))
    throw domain_error("EncodingConfig: all embedding dims must be positive and even");
  if (c_gaze + kPoseSubsampleCount * c_keypoint() != c_latent())
    throw domain_error("EncodingConfig: c_gaze + N_pose * c_keypoint must equal c_latent");
}

EncoderMaps EncoderMaps::make(const EncodingConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderMaps maps;
  maps.config = cfg;
  maps.view = FourierFeatureMap::make(cfg.c_gaze, 3, cfg.sigma_dir, seed, 0x76696577);
  maps.pose_dir = FourierFeatureMap::make(cfg.c_keypoint_dir, 3, cfg.sigma_dir, seed, 0x706F6472);
  maps.pose_dist = FourierFeatureMap::make(cfg.c_keypoint_dist, 1, cfg.sigma_dist, seed, 0x706F6473);
  maps.object_dir = FourierFeatureMap::make(cfg.c_latent_dir, 3, cfg.sigma_dir, seed, 0x6F626472);
  maps.object_dist = FourierFeatureMap::make(cfg.c_latent_dist, 1, cfg.sigma_dist, seed, 0x6F626473);
  maps.pose_raw = FourierFeatureMap::make(cfg.c_keypoint(), 3, cfg.sigma_dir, seed, 0x706F7261);
  maps.object_raw = FourierFeatureMap::make(cfg.c_latent(), 3, cfg.sigma_dir, seed, 0x6F627261);
  return maps;
}

ContextEmbedding embed_context(const EgoContext& ego, const EncoderMaps& maps, PeMode pe_mode) {
  const EncodingConfig& cfg = maps.config;
  if (static_cast<int>(ego.pose.size()) != kPoseSubsampleCount)
    throw domain_error("embed_context: expected the subsampled 15-keypoint pose");

  ContextEmbedding out;
  out.view_dim = cfg.c_gaze;
  out.subject = gamma(maps.view, ego.view_dir.vec());
  out.subject.reserve(cfg.c_latent());
  for (const Vec3& p : ego.pose) {
    std::vector<float> e = pe_mode == PeMode::kD3
                               ? d3_encode(maps.pose_dir, maps.pose_dist, p).values
                               : gamma(maps.pose_raw, p);
    out.subject.insert(out.subject.end(), e.begin(), e.end());
  }

  out.n_objects = static_cast<int>(ego.objects.size());
  out.objects.reserve(static_cast<std::size_t>(out.n_objects) * cfg.c_latent());
  for (const Vec3& p : ego.objects) {
    std::vector<float> e = pe_mode == PeMode::kD3
                               ? d3_encode(maps.object_dir, maps.object_dist, p).values
                               : gamma(maps.object_raw, p);
    out.objects.insert(out.objects.end(), e.begin(), e.end());
  }
  return out;
}

}  // namespace gaze3d
