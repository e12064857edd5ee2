#pragma once

// The 3D gaze transformer: object encoder (self-attention), gaze decoder
// (self- plus cross-attention with a gaze-cone logit bias), residual-gaze MLP
// head, and checkpoint serialization. Forward graph builders are templated on
// the scalar type so the same code runs in float for training/inference and
// in double for finite-difference verification.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaze3d/autodiff.hpp"
#include "gaze3d/context.hpp"
#include "gaze3d/encoding.hpp"
#include "gaze3d/geom.hpp"
#include "gaze3d/runconfig.hpp"

namespace gaze3d {

struct ModelConfig {
  int n_heads = 2;
  int ff_dim = 512;
  int n_encoder_layers = 3;
  int n_decoder_layers = 3;
  int gaze_hidden = 512;
  int n_object_max = 32;   // padding length for batched attention
  double dropout = 0.0;    // exposed for config compatibility; only 0 supported
  RotationMode rotation_mode = RotationMode::kCyclotorsion;
  PeMode pe_mode = PeMode::kD3;
  bool use_objects = true;
  bool use_pose = true;
  bool use_cone_bias = true;
  std::uint64_t seed = 0;
  EncodingConfig encoding;

  int d_model() const { return encoding.c_latent(); }
  void validate() const;

  KeyValueConfig to_kv() const;
  static ModelConfig from_kv(const KeyValueConfig& kv);
};

struct Parameter {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<float> value;

  std::size_t size() const { return value.size(); }
};

class GazeModel {
 public:
  // zero_init_gaze_head makes the initial prediction equal the view prior
  explicit GazeModel(const ModelConfig& cfg, bool zero_init_gaze_head = true);

  const ModelConfig& config() const { return config_; }
  const EncoderMaps& maps() const { return maps_; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);
  int param_index(const std::string& name) const;
  std::size_t parameter_count() const;

  void save_checkpoint(const std::string& path) const;
  static GazeModel load_checkpoint(const std::string& path);

 private:
  ModelConfig config_;
  EncoderMaps maps_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> index_;

  void add_param(const std::string& name, int rows, int cols);
};

// Gaze-cone attention bias: cosine between the reference direction and each
// head-relative object position. In the camera frame the reference is the
// view direction; in the egocentric frame it is +z. Objects closer than 1e-9
// to the head get bias 0.
enum class ConeBiasFrame { kCamera, kEgocentric };
std::vector<double> cone_bias(const UnitVec3& view, const std::vector<Vec3>& objects_head_relative,
                              ConeBiasFrame frame);

// E_object rows padded to n_padded with zero rows plus the validity mask.
struct PaddedObjectBatch {
  std::vector<float> embeddings;      // n_padded x c_latent, masked rows zero
  std::vector<std::uint8_t> mask;     // 1 = real object
  std::vector<double> cone_bias;      // n_padded, 0 on padding
  int n_padded = 0;

  static PaddedObjectBatch make(const ContextEmbedding& emb, const std::vector<double>& bias,
                                int n_padded, int width);
};

// ---- forward graph builders -------------------------------------------------

// Parameter leaves bound onto a tape, parallel to model.params().
template <typename T>
struct BoundParams {
  std::vector<ad::Var<T>> vars;

  ad::Var<T> operator[](int index) const { return vars[index]; }
};

template <typename T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const GazeModel& model, bool requires_grad) {
  BoundParams<T> bound;
  bound.vars.reserve(model.params().size());
  for (const Parameter& p : model.params()) {
    if constexpr (std::is_same_v<T, float>) {
      bound.vars.push_back(tape.leaf(p.value, p.rows, p.cols, requires_grad));
    } else {
      std::vector<T> widened(p.value.begin(), p.value.end());
      bound.vars.push_back(tape.leaf(widened, p.rows, p.cols, requires_grad));
    }
  }
  return bound;
}

// Object encoder: masked self-attention stack; masked rows are zeroed in the
// returned features.
template <typename T>
ad::Var<T> encode_objects_fwd(ad::Tape<T>& tape, const GazeModel& model,
                              const BoundParams<T>& params, ad::Var<T> object_embeddings,
                              const std::vector<std::uint8_t>& mask);

// Gaze decoder: the single-token subject embedding attends to the object
// features; returns the unconstrained residual gaze (1 x 3).
template <typename T>
ad::Var<T> decode_gaze_fwd(ad::Tape<T>& tape, const GazeModel& model, const BoundParams<T>& params,
                           ad::Var<T> subject_embedding, ad::Var<T> object_features,
                           const std::vector<std::uint8_t>& mask, ad::Var<T> cone_bias_row);

// ---- end-to-end pipeline ------------------------------------------------------

// One sample resolved into model inputs (everything already in camera space).
// Pose is either the full 30-keypoint set or the 15-keypoint subsample.
struct SampleContext {
  std::vector<Vec3> pose_keypoints;
  bool pose_subsampled = false;
  std::vector<Vec3> objects;
  UnitVec3 view_dir;
  std::optional<Vec3> t_object;  // head position for object normalization;
                                 // empty: fall back to the pose-derived anchor
};

// Everything predict computes on the way to a gaze direction; exposed for the
// transform-dump command and for tests.
struct PipelineTrace {
  EgoContext ego;
  ContextEmbedding embedding;
  std::vector<double> cone_bias;
  Vec3 residual;
  bool fallback_to_view = false;  // degenerate inversion, returned v instead
};

UnitVec3 predict(const GazeModel& model, const SampleContext& sample,
                 PipelineTrace* trace = nullptr);

// Builds the egocentric context honoring the model's ablation flags.
EgoContext build_ego_context(const ModelConfig& cfg, const SampleContext& sample);

// Embedding with ablations applied (pose slice zeroed when use_pose is off).
ContextEmbedding embed_for_model(const GazeModel& model, const EgoContext& ego);

}  // namespace gaze3d
