#pragma once

// Training loop for the gaze transformer: angular loss through the tape,
// AdamW with global-norm clipping and a cosine warm-up schedule, the
// view-direction noise augmentation, and deterministic evaluation.
//
// Determinism contract: one training thread; batches, shuffles, and
// augmentation draws derive from counter-based streams of the run seed, and
// gradient accumulation follows tape order, so a (seed, config) pair fully
// determines the metric log and the checkpoint bytes.

#include <functional>
#include <string>
#include <vector>

#include "gaze3d/dataio.hpp"
#include "gaze3d/model.hpp"
#include "gaze3d/rng.hpp"

namespace gaze3d {

struct TrainConfig {
  double lr = 0.0014;
  double weight_decay = 0.1;
  int epochs = 20;
  int warmup_epochs = 4;
  double clip_l2 = 0.1;
  int batch_size = 32;
  bool noise_augment = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.1;  // hash-split fallback when no explicit val set
  std::uint64_t seed = 0;

  void validate() const;
  KeyValueConfig to_kv() const;
  static TrainConfig from_kv(const KeyValueConfig& kv);
};

struct OptimizerState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  long long step = 0;

  static OptimizerState make(const std::vector<Parameter>& params);
};

// Linear warm-up to lr, then cosine decay to zero at total_steps.
double lr_schedule(long long step, long long total_steps, long long warmup_steps, double lr);

// v_noise = (v + eps) / |v + eps|.
UnitVec3 apply_view_noise(const UnitVec3& v, const Vec3& eps);

// apply_view_noise with eps uniform in [-0.5, 0.5]^3; a draw that cancels v
// (norm < 1e-6) is resampled.
UnitVec3 augment_view(const UnitVec3& v, Rng& rng);

// Global-L2 clip to cfg.clip_l2, then one AdamW update with decoupled decay
// lr_t * wd * theta. Throws domain_error on non-finite gradients.
void adamw_step(std::vector<Parameter>& params, const std::vector<const std::vector<float>*>& grads,
                OptimizerState& state, double lr_t, const TrainConfig& cfg);

struct TrainSample {
  std::string id;
  SampleContext context;
  UnitVec3 gaze_gt;
};

// Loss graph for one sample: the transformer forward plus the differentiable
// un-normalization g = normalize(R^T g' + v) and L = arccos(g . g_gt).
// When R^T g' + v degenerates (norm <= 1e-6) the loss is the clamp ceiling
// as a constant and `degenerate` is set.
template <typename T>
struct LossGraph {
  ad::Var<T> loss;
  UnitVec3 predicted;
  bool degenerate = false;
};

template <typename T>
LossGraph<T> build_loss_graph(ad::Tape<T>& tape, const GazeModel& model,
                              const BoundParams<T>& params, const SampleContext& sample,
                              const UnitVec3& gaze_gt);

struct MetricsRecord {
  int epoch = 0;
  std::string split;
  double mae3d_deg = 0.0;
  double mae2d_deg = 0.0;
  double loss = 0.0;  // radians
  double lr = 0.0;
  std::string config_hash;

  std::string to_json_line() const;
};

struct SampleEval {
  double err3d_deg = 0.0;
  bool has_err2d = false;
  double err2d_deg = 0.0;
  double prior_err_deg = 0.0;  // angle between the view prior and the truth
};

struct EvalStats {
  int count = 0;
  int skipped_2d = 0;
  double mae3d_deg = 0.0;
  double mae2d_deg = 0.0;
  double mean_loss = 0.0;  // radians
};

// Forward-only evaluation; requires ground truth on every sample.
EvalStats evaluate(const GazeModel& model, const std::vector<TrainSample>& samples,
                   std::vector<SampleEval>* per_sample = nullptr);

struct TrainResult {
  std::vector<MetricsRecord> log;
  double best_val_mae3d_deg = 0.0;
  int best_epoch = -1;
};

// Trains in place; writes the best-validation checkpoint to checkpoint_path
// (when non-empty) and streams records through sink (when set).
TrainResult train(const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, GazeModel& model,
                  const TrainConfig& cfg, const std::string& config_hash,
                  const std::string& checkpoint_path,
                  const std::function<void(const MetricsRecord&)>& sink = nullptr);

// Seed-stable split by sample id hash: roughly val_fraction of samples land
// in the second return.
std::pair<std::vector<TrainSample>, std::vector<TrainSample>> split_by_hash(
    const std::vector<TrainSample>& samples, double val_fraction, std::uint64_t seed);

// Record -> training sample (resolving the depth path when present).
TrainSample to_train_sample(const ContextSampleRecord& record, const std::string& root);

}  // namespace gaze3d
