#include "gaze3d/train.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "gaze3d/dataio.hpp"

namespace gaze3d {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw domain_error("TrainConfig: lr must be positive");
  if (weight_decay < 0) throw domain_error("TrainConfig: weight decay must be >= 0");
  if (epochs <= 0 || warmup_epochs < 0 || warmup_epochs > epochs)
    throw domain_error("TrainConfig: warmup epochs must lie within the epoch budget");
  if (!(clip_l2 > 0)) throw domain_error("TrainConfig: clip threshold must be positive");
  if (batch_size <= 0) throw domain_error("TrainConfig: batch size must be positive");
  if (val_fraction < 0 || val_fraction >= 1)
    throw domain_error("TrainConfig: val fraction must be in [0, 1)");
}

KeyValueConfig TrainConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set_double("train.lr", lr);
  kv.set_double("train.weight_decay", weight_decay);
  kv.set_int("train.epochs", epochs);
  kv.set_int("train.warmup_epochs", warmup_epochs);
  kv.set_double("train.clip_l2", clip_l2);
  kv.set_int("train.batch_size", batch_size);
  kv.set_bool("train.noise_augment", noise_augment);
  kv.set_double("train.beta1", beta1);
  kv.set_double("train.beta2", beta2);
  kv.set_double("train.adam_eps", adam_eps);
  kv.set_double("train.val_fraction", val_fraction);
  kv.set_uint("train.seed", seed);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValueConfig& kv) {
  TrainConfig c;
  if (kv.has("train.lr")) c.lr = kv.get_double("train.lr");
  if (kv.has("train.weight_decay")) c.weight_decay = kv.get_double("train.weight_decay");
  if (kv.has("train.epochs")) c.epochs = static_cast<int>(kv.get_int("train.epochs"));
  if (kv.has("train.warmup_epochs"))
    c.warmup_epochs = static_cast<int>(kv.get_int("train.warmup_epochs"));
  if (kv.has("train.clip_l2")) c.clip_l2 = kv.get_double("train.clip_l2");
  if (kv.has("train.batch_size")) c.batch_size = static_cast<int>(kv.get_int("train.batch_size"));
  if (kv.has("train.noise_augment")) c.noise_augment = kv.get_bool("train.noise_augment");
  if (kv.has("train.beta1")) c.beta1 = kv.get_double("train.beta1");
  if (kv.has("train.beta2")) c.beta2 = kv.get_double("train.beta2");
  if (kv.has("train.adam_eps")) c.adam_eps = kv.get_double("train.adam_eps");
  if (kv.has("train.val_fraction")) c.val_fraction = kv.get_double("train.val_fraction");
  if (kv.has("train.seed")) c.seed = kv.get_uint("train.seed");
  c.validate();
  return c;
}

OptimizerState OptimizerState::make(const std::vector<Parameter>& params) {
  OptimizerState s;
  s.first_moment.reserve(params.size());
  s.second_moment.reserve(params.size());
  for (const Parameter& p : params) {
    s.first_moment.emplace_back(p.size(), 0.f);
    s.second_moment.emplace_back(p.size(), 0.f);
  }
  return s;
}

double lr_schedule(long long step, long long total_steps, long long warmup_steps, double lr) {
  if (step < 0 || step > total_steps) throw domain_error("lr_schedule: step outside [0, total]");
  if (warmup_steps > 0 && step < warmup_steps)
    return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

UnitVec3 apply_view_noise(const UnitVec3& v, const Vec3& eps) {
  if (eps.x == 0.0 && eps.y == 0.0 && eps.z == 0.0) return v;
  return UnitVec3(v.vec() + eps);
}

UnitVec3 augment_view(const UnitVec3& v, Rng& rng) {
  for (;;) {
    const Vec3 eps{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    if ((v.vec() + eps).norm() >= 1e-6) return apply_view_noise(v, eps);
  }
}

void adamw_step(std::vector<Parameter>& params, const std::vector<const std::vector<float>*>& grads,
                OptimizerState& state, double lr_t, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw domain_error("adamw_step: parameter/gradient/state count mismatch");

  double norm_sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const std::vector<float>& g = *grads[i];
    if (g.size() != params[i].size())
      throw domain_error("adamw_step: gradient shape mismatch for '" + params[i].name + "'");
    for (float x : g) {
      if (!std::isfinite(x))
        throw domain_error("adamw_step: non-finite gradient in '" + params[i].name + "'");
      norm_sq += static_cast<double>(x) * x;
    }
  }
  const double norm = std::sqrt(norm_sq);
  const float clip_scale =
      norm > cfg.clip_l2 ? static_cast<float>(cfg.clip_l2 / norm) : 1.0f;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float lr_f = static_cast<float>(lr_t);
  const float decay = static_cast<float>(lr_t * cfg.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    float* w = params[i].value.data();
    const float* g = grads[i]->data();
    float* m = state.first_moment[i].data();
    float* v = state.second_moment[i].data();
    const std::size_t n = params[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      const float gc = g[j] * clip_scale;
      m[j] = b1 * m[j] + (1.f - b1) * gc;
      v[j] = b2 * v[j] + (1.f - b2) * gc * gc;
      const float mhat = m[j] / static_cast<float>(bc1);
      const float vhat = v[j] / static_cast<float>(bc2);
      w[j] -= lr_f * (mhat / (std::sqrt(vhat) + static_cast<float>(cfg.adam_eps))) + decay * w[j];
    }
  }
}

// ---- loss graph ----------------------------------------------------------------

template <typename T>
LossGraph<T> build_loss_graph(ad::Tape<T>& tape, const GazeModel& model,
                              const BoundParams<T>& params, const SampleContext& sample,
                              const UnitVec3& gaze_gt) {
  const ModelConfig& cfg = model.config();
  const EgoContext ego = build_ego_context(cfg, sample);
  const ContextEmbedding emb = embed_for_model(model, ego);

  std::vector<double> bias =
      cfg.rotation_mode == RotationMode::kIdentity
          ? cone_bias(sample.view_dir, ego.objects, ConeBiasFrame::kCamera)
          : cone_bias(ego.view_dir, ego.objects, ConeBiasFrame::kEgocentric);
  if (!cfg.use_cone_bias) std::fill(bias.begin(), bias.end(), 0.0);

  const int n_padded = std::max(1, emb.n_objects);
  PaddedObjectBatch batch = PaddedObjectBatch::make(emb, bias, n_padded, cfg.d_model());
  if (!cfg.use_objects) std::fill(batch.mask.begin(), batch.mask.end(), std::uint8_t(0));

  std::vector<T> e_obj_t(batch.embeddings.begin(), batch.embeddings.end());
  std::vector<T> e_subj_t(emb.subject.begin(), emb.subject.end());
  std::vector<T> bias_t(batch.cone_bias.begin(), batch.cone_bias.end());
  ad::Var<T> e_obj = tape.leaf(e_obj_t, batch.n_padded, cfg.d_model(), false);
  ad::Var<T> e_subj = tape.leaf(e_subj_t, 1, cfg.d_model(), false);
  ad::Var<T> bias_row = tape.leaf(bias_t, 1, batch.n_padded, false);

  ad::Var<T> f_obj = encode_objects_fwd(tape, model, params, e_obj, batch.mask);
  ad::Var<T> residual = decode_gaze_fwd(tape, model, params, e_subj, f_obj, batch.mask,
                                        cfg.use_cone_bias ? bias_row : ad::Var<T>{});

  // row form of R^T g' + v: g'_row * R + v_row
  std::vector<T> r_vals(9);
  for (int i = 0; i < 9; ++i) r_vals[i] = static_cast<T>(ego.rotation.data()[i]);
  ad::Var<T> r_mat = tape.leaf(r_vals, 3, 3, false);
  std::vector<T> v_vals = {static_cast<T>(sample.view_dir.x()), static_cast<T>(sample.view_dir.y()),
                           static_cast<T>(sample.view_dir.z())};
  ad::Var<T> v_row = tape.leaf(v_vals, 1, 3, false);
  ad::Var<T> unnormalized = tape.add(tape.matmul(residual, r_mat), v_row);

  LossGraph<T> out;
  const auto& sum_vals = tape.val(unnormalized);
  const double sum_norm = std::sqrt(static_cast<double>(sum_vals[0]) * sum_vals[0] +
                                    static_cast<double>(sum_vals[1]) * sum_vals[1] +
                                    static_cast<double>(sum_vals[2]) * sum_vals[2]);
  if (sum_norm <= 1e-6) {
    // residual cancelled the prior: constant ceiling loss, no gradient
    out.loss = tape.scalar(std::acos(T(-1) + T(kAngleClampEpsilon)));
    out.predicted = sample.view_dir;
    out.degenerate = true;
    return out;
  }
  ad::Var<T> g_hat = tape.l2_normalize(unnormalized);
  std::vector<T> gt_vals = {static_cast<T>(gaze_gt.x()), static_cast<T>(gaze_gt.y()),
                            static_cast<T>(gaze_gt.z())};
  ad::Var<T> gt_row = tape.leaf(gt_vals, 1, 3, false);
  out.loss = tape.arccos_clamped(tape.dot(g_hat, gt_row), T(kAngleClampEpsilon));
  const auto& gv = tape.val(g_hat);
  out.predicted = UnitVec3(Vec3{static_cast<double>(gv[0]), static_cast<double>(gv[1]),
                                static_cast<double>(gv[2])});
  return out;
}

template LossGraph<float> build_loss_graph<float>(ad::Tape<float>&, const GazeModel&,
                                                  const BoundParams<float>&, const SampleContext&,
                                                  const UnitVec3&);
template LossGraph<double> build_loss_graph<double>(ad::Tape<double>&, const GazeModel&,
                                                    const BoundParams<double>&,
                                                    const SampleContext&, const UnitVec3&);

// ---- metrics --------------------------------------------------------------------

std::string MetricsRecord::to_json_line() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["mae3d_deg"] = mae3d_deg;
  j["mae2d_deg"] = mae2d_deg;
  j["loss"] = loss;
  j["lr"] = lr;
  j["config_hash"] = config_hash;
  return j.dump();
}

EvalStats evaluate(const GazeModel& model, const std::vector<TrainSample>& samples,
                   std::vector<SampleEval>* per_sample) {
  if (samples.empty()) throw domain_error("evaluate: empty sample set");
  EvalStats stats;
  double sum3d = 0.0, sum2d = 0.0;
  constexpr int kChunk = 64;  // parameters are bound once per chunk
  for (std::size_t base = 0; base < samples.size(); base += kChunk) {
    ad::Tape<float> tape;
    BoundParams<float> params = bind_params(tape, model, false);
    const std::size_t end = std::min(samples.size(), base + kChunk);
    for (std::size_t i = base; i < end; ++i) {
      const TrainSample& s = samples[i];
      UnitVec3 predicted = s.context.view_dir;
      try {
        LossGraph<float> g = build_loss_graph(tape, model, params, s.context, s.gaze_gt);
        predicted = g.predicted;
      } catch (const degenerate_error&) {
        // alignment degeneracy: keep the view prior
      }
      const double err3d = angular_error(predicted, s.gaze_gt);
      sum3d += err3d;
      const auto err2d = angular_error_2d(predicted, s.gaze_gt);
      SampleEval se;
      se.err3d_deg = degrees(err3d);
      se.prior_err_deg = degrees(angular_error(s.context.view_dir, s.gaze_gt));
      if (err2d) {
        sum2d += *err2d;
        se.has_err2d = true;
        se.err2d_deg = degrees(*err2d);
      } else {
        ++stats.skipped_2d;
      }
      if (per_sample) per_sample->push_back(se);
      ++stats.count;
    }
  }
  stats.mae3d_deg = degrees(sum3d / stats.count);
  stats.mae2d_deg =
      stats.count > stats.skipped_2d ? degrees(sum2d / (stats.count - stats.skipped_2d)) : 0.0;
  stats.mean_loss = sum3d / stats.count;
  return stats;
}

// ---- training -------------------------------------------------------------------

TrainResult train(const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, GazeModel& model,
                  const TrainConfig& cfg, const std::string& config_hash,
                  const std::string& checkpoint_path,
                  const std::function<void(const MetricsRecord&)>& sink) {
  cfg.validate();
  if (train_set.empty()) throw domain_error("train: empty training set");
  if (val_set.empty()) throw domain_error("train: empty validation set");

  const long long steps_per_epoch =
      (static_cast<long long>(train_set.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps = steps_per_epoch * cfg.epochs;
  const long long warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  OptimizerState state = OptimizerState::make(model.params());
  TrainResult result;
  result.best_val_mae3d_deg = std::numeric_limits<double>::infinity();
  std::vector<Parameter> best_params;

  const auto emit = [&](const MetricsRecord& rec) {
    result.log.push_back(rec);
    if (sink) sink(rec);
  };

  std::vector<std::size_t> order(train_set.size());
  long long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed, 0x73687566ull, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    Rng augment_rng(cfg.seed, 0x61756Dull, static_cast<std::uint64_t>(epoch));

    double train_sum3d = 0.0, train_sum2d = 0.0, train_loss_sum = 0.0;
    long long train_n = 0, train_n2d = 0;
    double last_lr = 0.0;

    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += cfg.batch_size) {
      const std::size_t batch_end =
          std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));

      ad::Tape<float> tape;
      BoundParams<float> params = bind_params(tape, model, true);
      ad::Var<float> batch_loss{};
      int batch_n = 0;
      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const TrainSample& s = train_set[order[bi]];
        SampleContext ctx = s.context;
        if (cfg.noise_augment) ctx.view_dir = augment_view(ctx.view_dir, augment_rng);
        LossGraph<float> g;
        try {
          g = build_loss_graph(tape, model, params, ctx, s.gaze_gt);
        } catch (const degenerate_error&) {
          continue;  // alignment degeneracy: drop the sample from this batch
        }
        batch_loss = batch_n == 0 ? g.loss : tape.add(batch_loss, g.loss);
        ++batch_n;
        const double err3d = angular_error(g.predicted, s.gaze_gt);
        train_sum3d += err3d;
        train_loss_sum += tape.val(g.loss)[0];
        if (const auto err2d = angular_error_2d(g.predicted, s.gaze_gt)) {
          train_sum2d += *err2d;
          ++train_n2d;
        }
        ++train_n;
      }
      const double lr_t = lr_schedule(global_step, total_steps, warmup_steps, cfg.lr);
      last_lr = lr_t;
      ++global_step;
      if (batch_n == 0) continue;
      tape.backward(tape.mul_scalar(batch_loss, 1.0f / static_cast<float>(batch_n)));
      std::vector<const std::vector<float>*> grads;
      grads.reserve(model.params().size());
      for (std::size_t pi = 0; pi < model.params().size(); ++pi)
        grads.push_back(&tape.grad(params.vars[pi]));
      adamw_step(model.params(), grads, state, lr_t, cfg);
    }

    MetricsRecord train_rec;
    train_rec.epoch = epoch;
    train_rec.split = "train";
    train_rec.mae3d_deg = train_n ? degrees(train_sum3d / train_n) : 0.0;
    train_rec.mae2d_deg = train_n2d ? degrees(train_sum2d / train_n2d) : 0.0;
    train_rec.loss = train_n ? train_loss_sum / train_n : 0.0;
    train_rec.lr = last_lr;
    train_rec.config_hash = config_hash;
    emit(train_rec);

    const EvalStats val = evaluate(model, val_set);
    MetricsRecord val_rec;
    val_rec.epoch = epoch;
    val_rec.split = "val";
    val_rec.mae3d_deg = val.mae3d_deg;
    val_rec.mae2d_deg = val.mae2d_deg;
    val_rec.loss = val.mean_loss;
    val_rec.lr = last_lr;
    val_rec.config_hash = config_hash;
    emit(val_rec);

    if (val.mae3d_deg < result.best_val_mae3d_deg) {
      result.best_val_mae3d_deg = val.mae3d_deg;
      result.best_epoch = epoch;
      best_params = model.params();
    }
  }

  if (!checkpoint_path.empty() && !best_params.empty()) {
    std::vector<Parameter> final_params = model.params();
    model.params() = best_params;
    model.save_checkpoint(checkpoint_path);
    model.params() = std::move(final_params);
  }
  return result;
}

std::pair<std::vector<TrainSample>, std::vector<TrainSample>> split_by_hash(
    const std::vector<TrainSample>& samples, double val_fraction, std::uint64_t seed) {
  std::pair<std::vector<TrainSample>, std::vector<TrainSample>> out;
  const std::uint64_t threshold =
      static_cast<std::uint64_t>(val_fraction * 18446744073709551615.0);
  for (const TrainSample& s : samples) {
    const std::uint64_t h = mix64(fnv1a64(s.id.data(), s.id.size()) ^ mix64(seed));
    (h < threshold ? out.second : out.first).push_back(s);
  }
  return out;
}

TrainSample to_train_sample(const ContextSampleRecord& record, const std::string& root) {
  ResolvedSample resolved = resolve_sample(record, root);
  if (!resolved.gaze_gt)
    throw domain_error("to_train_sample: record '" + record.id + "' lacks gaze_gt");
  return {resolved.id, std::move(resolved.context), *resolved.gaze_gt};
}

}  // namespace gaze3d
