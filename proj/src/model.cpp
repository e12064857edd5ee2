#include "gaze3d/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "gaze3d/rng.hpp"

namespace gaze3d {

void ModelConfig::validate() const {
  encoding.validate();
  if (n_heads <= 0 || d_model() % n_heads != 0)
    throw domain_error("ModelConfig: head count must divide d_model");
  if (ff_dim <= 0 || gaze_hidden <= 0 || n_encoder_layers <= 0 || n_decoder_layers <= 0)
    throw domain_error("ModelConfig: layer dimensions must be positive");
  if (n_object_max < 1) throw domain_error("ModelConfig: n_object_max must be at least 1");
  if (dropout != 0.0) throw domain_error("ModelConfig: only dropout = 0 is supported");
}

KeyValueConfig ModelConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set_int("model.n_heads", n_heads);
  kv.set_int("model.ff_dim", ff_dim);
  kv.set_int("model.n_encoder_layers", n_encoder_layers);
  kv.set_int("model.n_decoder_layers", n_decoder_layers);
  kv.set_int("model.gaze_hidden", gaze_hidden);
  kv.set_int("model.n_object_max", n_object_max);
  kv.set_double("model.dropout", dropout);
  kv.set("model.rotation", to_string(rotation_mode));
  kv.set("model.pe", to_string(pe_mode));
  kv.set_bool("model.use_objects", use_objects);
  kv.set_bool("model.use_pose", use_pose);
  kv.set_bool("model.use_cone_bias", use_cone_bias);
  kv.set_uint("model.seed", seed);
  kv.set_int("enc.c_gaze", encoding.c_gaze);
  kv.set_int("enc.c_keypoint_dir", encoding.c_keypoint_dir);
  kv.set_int("enc.c_keypoint_dist", encoding.c_keypoint_dist);
  kv.set_int("enc.c_latent_dir", encoding.c_latent_dir);
  kv.set_int("enc.c_latent_dist", encoding.c_latent_dist);
  kv.set_double("enc.sigma_dir", encoding.sigma_dir);
  kv.set_double("enc.sigma_dist", encoding.sigma_dist);
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValueConfig& kv) {
  ModelConfig cfg;
  cfg.n_heads = static_cast<int>(kv.get_int("model.n_heads"));
  cfg.ff_dim = static_cast<int>(kv.get_int("model.ff_dim"));
  cfg.n_encoder_layers = static_cast<int>(kv.get_int("model.n_encoder_layers"));
  cfg.n_decoder_layers = static_cast<int>(kv.get_int("model.n_decoder_layers"));
  cfg.gaze_hidden = static_cast<int>(kv.get_int("model.gaze_hidden"));
  cfg.n_object_max = static_cast<int>(kv.get_int("model.n_object_max"));
  cfg.dropout = kv.get_double("model.dropout");
  const auto rot = rotation_mode_from_string(kv.get_or("model.rotation", "cyclotorsion"));
  if (!rot) throw domain_error("ModelConfig: unknown rotation mode");
  cfg.rotation_mode = *rot;
  const auto pe = pe_mode_from_string(kv.get_or("model.pe", "d3"));
  if (!pe) throw domain_error("ModelConfig: unknown positional encoding mode");
  cfg.pe_mode = *pe;
  cfg.use_objects = kv.get_bool("model.use_objects");
  cfg.use_pose = kv.get_bool("model.use_pose");
  cfg.use_cone_bias = kv.get_bool("model.use_cone_bias");
  cfg.seed = kv.get_uint("model.seed");
  cfg.encoding.c_gaze = static_cast<int>(kv.get_int("enc.c_gaze"));
  cfg.encoding.c_keypoint_dir = static_cast<int>(kv.get_int("enc.c_keypoint_dir"));
  cfg.encoding.c_keypoint_dist = static_cast<int>(kv.get_int("enc.c_keypoint_dist"));
  cfg.encoding.c_latent_dir = static_cast<int>(kv.get_int("enc.c_latent_dir"));
  cfg.encoding.c_latent_dist = static_cast<int>(kv.get_int("enc.c_latent_dist"));
  cfg.encoding.sigma_dir = static_cast<float>(kv.get_double("enc.sigma_dir"));
  cfg.encoding.sigma_dist = static_cast<float>(kv.get_double("enc.sigma_dist"));
  cfg.validate();
  return cfg;
}

void GazeModel::add_param(const std::string& name, int rows, int cols) {
  Parameter p;
  p.name = name;
  p.rows = rows;
  p.cols = cols;
  p.value.assign(static_cast<std::size_t>(rows) * cols, 0.f);
  index_[name] = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
}

namespace {

void xavier_fill(Parameter& p, std::uint64_t seed) {
  // Xavier-uniform over (fan_in, fan_out) = (rows, cols); seeded per name so
  // initialization does not depend on registration order
  Rng rng(seed, fnv1a64(p.name.data(), p.name.size()));
  const double limit = std::sqrt(6.0 / (p.rows + p.cols));
  for (float& w : p.value) w = static_cast<float>(rng.uniform(-limit, limit));
}

}  // namespace

GazeModel::GazeModel(const ModelConfig& cfg, bool zero_init_gaze_head)
    : config_(cfg), maps_(EncoderMaps::make(cfg.encoding, cfg.seed)) {
  config_.validate();
  const int d = config_.d_model();

  const auto add_attention = [&](const std::string& prefix) {
    add_param(prefix + ".wq", d, d);
    add_param(prefix + ".bq", 1, d);
    add_param(prefix + ".wk", d, d);
    add_param(prefix + ".bk", 1, d);
    add_param(prefix + ".wv", d, d);
    add_param(prefix + ".bv", 1, d);
    add_param(prefix + ".wo", d, d);
    add_param(prefix + ".bo", 1, d);
  };
  const auto add_norm = [&](const std::string& prefix) {
    add_param(prefix + ".gain", 1, d);
    add_param(prefix + ".bias", 1, d);
  };
  const auto add_ff = [&](const std::string& prefix) {
    add_param(prefix + ".w1", d, config_.ff_dim);
    add_param(prefix + ".b1", 1, config_.ff_dim);
    add_param(prefix + ".w2", config_.ff_dim, d);
    add_param(prefix + ".b2", 1, d);
  };

  for (int l = 0; l < config_.n_encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    add_attention(p + ".self");
    add_norm(p + ".norm1");
    add_ff(p + ".ff");
    add_norm(p + ".norm2");
  }
  for (int l = 0; l < config_.n_decoder_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    add_attention(p + ".self");
    add_norm(p + ".norm1");
    add_attention(p + ".cross");
    add_norm(p + ".norm2");
    add_ff(p + ".ff");
    add_norm(p + ".norm3");
  }
  add_param("head.w1", d, config_.gaze_hidden);
  add_param("head.b1", 1, config_.gaze_hidden);
  add_param("head.w2", config_.gaze_hidden, 3);
  add_param("head.b2", 1, 3);

  for (Parameter& p : params_) {
    const bool is_weight = p.rows > 1;
    const bool is_norm_gain = p.name.size() > 5 && p.name.substr(p.name.size() - 5) == ".gain";
    if (is_norm_gain) {
      std::fill(p.value.begin(), p.value.end(), 1.f);
    } else if (is_weight) {
      xavier_fill(p, config_.seed);
    }
    // all other biases stay zero
  }
  if (zero_init_gaze_head) {
    std::fill(param("head.w2").value.begin(), param("head.w2").value.end(), 0.f);
    std::fill(param("head.b2").value.begin(), param("head.b2").value.end(), 0.f);
  }
}

int GazeModel::param_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw domain_error("GazeModel: unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& GazeModel::param(const std::string& name) const {
  return params_[param_index(name)];
}
Parameter& GazeModel::param(const std::string& name) { return params_[param_index(name)]; }

std::size_t GazeModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.size();
  return n;
}

std::vector<double> cone_bias(const UnitVec3& view, const std::vector<Vec3>& objects_head_relative,
                              ConeBiasFrame frame) {
  const Vec3 ref = frame == ConeBiasFrame::kCamera ? view.vec() : Vec3{0.0, 0.0, 1.0};
  std::vector<double> bias;
  bias.reserve(objects_head_relative.size());
  for (const Vec3& p : objects_head_relative) {
    const double n = p.norm();
    bias.push_back(n < 1e-9 ? 0.0 : ref.dot(p) / n);
  }
  return bias;
}

PaddedObjectBatch PaddedObjectBatch::make(const ContextEmbedding& emb,
                                          const std::vector<double>& bias, int n_padded,
                                          int width) {
  if (n_padded < std::max(1, emb.n_objects))
    throw domain_error("PaddedObjectBatch: padding length below object count");
  if (static_cast<int>(bias.size()) != emb.n_objects)
    throw domain_error("PaddedObjectBatch: bias length does not match object count");
  if (emb.n_objects > 0 &&
      emb.objects.size() != static_cast<std::size_t>(emb.n_objects) * width)
    throw domain_error("PaddedObjectBatch: embedding width mismatch");
  PaddedObjectBatch batch;
  batch.n_padded = n_padded;
  batch.embeddings.assign(static_cast<std::size_t>(n_padded) * width, 0.f);
  batch.mask.assign(n_padded, 0);
  batch.cone_bias.assign(n_padded, 0.0);
  if (emb.n_objects > 0) {
    std::copy(emb.objects.begin(), emb.objects.end(), batch.embeddings.begin());
    for (int i = 0; i < emb.n_objects; ++i) {
      batch.mask[i] = 1;
      batch.cone_bias[i] = bias[i];
    }
  }
  return batch;
}

// ---- forward builders ---------------------------------------------------------

namespace {

template <typename T>
ad::Var<T> linear(ad::Tape<T>& tp, const GazeModel& m, const BoundParams<T>& P, ad::Var<T> x,
                  const std::string& w, const std::string& b) {
  return tp.add_rowvec(tp.matmul(x, P[m.param_index(w)]), P[m.param_index(b)]);
}

template <typename T>
ad::Var<T> multihead_attention(ad::Tape<T>& tp, const GazeModel& m, const BoundParams<T>& P,
                               const std::string& prefix, ad::Var<T> query_in, ad::Var<T> kv_in,
                               const std::vector<std::uint8_t>* mask, ad::Var<T> key_bias) {
  const int d = m.config().d_model();
  const int heads = m.config().n_heads;
  const int dk = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  ad::Var<T> q = linear(tp, m, P, query_in, prefix + ".wq", prefix + ".bq");
  ad::Var<T> k = linear(tp, m, P, kv_in, prefix + ".wk", prefix + ".bk");
  ad::Var<T> v = linear(tp, m, P, kv_in, prefix + ".wv", prefix + ".bv");

  std::optional<ad::Var<T>> bias;
  if (key_bias.valid()) bias = key_bias;

  ad::Var<T> merged;
  for (int h = 0; h < heads; ++h) {
    ad::Var<T> qh = tp.slice_cols(q, h * dk, (h + 1) * dk);
    ad::Var<T> kh = tp.slice_cols(k, h * dk, (h + 1) * dk);
    ad::Var<T> vh = tp.slice_cols(v, h * dk, (h + 1) * dk);
    ad::Var<T> logits = tp.mul_scalar(tp.matmul(qh, tp.transpose(kh)), scale);
    ad::Var<T> weights = tp.softmax_rows(logits, bias, mask);
    ad::Var<T> oh = tp.matmul(weights, vh);
    merged = h == 0 ? oh : tp.concat_cols(merged, oh);
  }
  return linear(tp, m, P, merged, prefix + ".wo", prefix + ".bo");
}

template <typename T>
ad::Var<T> post_norm(ad::Tape<T>& tp, const GazeModel& m, const BoundParams<T>& P,
                     const std::string& prefix, ad::Var<T> x, ad::Var<T> sublayer) {
  ad::Var<T> normed = tp.layer_norm_rows(tp.add(x, sublayer));
  return tp.rowwise_affine(normed, P[m.param_index(prefix + ".gain")],
                           P[m.param_index(prefix + ".bias")]);
}

template <typename T>
ad::Var<T> feed_forward(ad::Tape<T>& tp, const GazeModel& m, const BoundParams<T>& P,
                        const std::string& prefix, ad::Var<T> x) {
  ad::Var<T> h = tp.relu(linear(tp, m, P, x, prefix + ".w1", prefix + ".b1"));
  return linear(tp, m, P, h, prefix + ".w2", prefix + ".b2");
}

}  // namespace

template <typename T>
ad::Var<T> encode_objects_fwd(ad::Tape<T>& tape, const GazeModel& model,
                              const BoundParams<T>& params, ad::Var<T> object_embeddings,
                              const std::vector<std::uint8_t>& mask) {
  if (tape.rows(object_embeddings) != static_cast<int>(mask.size()))
    throw domain_error("encode_objects: mask length does not match row count");
  ad::Var<T> x = object_embeddings;
  for (int l = 0; l < model.config().n_encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    ad::Var<T> attn =
        multihead_attention(tape, model, params, p + ".self", x, x, &mask, ad::Var<T>{});
    x = post_norm(tape, model, params, p + ".norm1", x, attn);
    ad::Var<T> ff = feed_forward(tape, model, params, p + ".ff", x);
    x = post_norm(tape, model, params, p + ".norm2", x, ff);
  }
  // zero the padded rows so downstream consumers see a pure function of the
  // valid objects
  std::vector<T> row_mask(static_cast<std::size_t>(mask.size()) * model.config().d_model());
  for (std::size_t r = 0; r < mask.size(); ++r)
    for (int c = 0; c < model.config().d_model(); ++c)
      row_mask[r * model.config().d_model() + c] = mask[r] ? T(1) : T(0);
  ad::Var<T> mask_mat =
      tape.leaf(row_mask, static_cast<int>(mask.size()), model.config().d_model(), false);
  return tape.mul(x, mask_mat);
}

template <typename T>
ad::Var<T> decode_gaze_fwd(ad::Tape<T>& tape, const GazeModel& model, const BoundParams<T>& params,
                           ad::Var<T> subject_embedding, ad::Var<T> object_features,
                           const std::vector<std::uint8_t>& mask, ad::Var<T> cone_bias_row) {
  if (tape.rows(subject_embedding) != 1 || tape.cols(subject_embedding) != model.config().d_model())
    throw domain_error("decode_gaze: subject embedding must be 1 x d_model");
  ad::Var<T> t = subject_embedding;
  for (int l = 0; l < model.config().n_decoder_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    ad::Var<T> self =
        multihead_attention(tape, model, params, p + ".self", t, t, nullptr, ad::Var<T>{});
    t = post_norm(tape, model, params, p + ".norm1", t, self);
    ad::Var<T> cross = multihead_attention(tape, model, params, p + ".cross", t, object_features,
                                           &mask, cone_bias_row);
    t = post_norm(tape, model, params, p + ".norm2", t, cross);
    ad::Var<T> ff = feed_forward(tape, model, params, p + ".ff", t);
    t = post_norm(tape, model, params, p + ".norm3", t, ff);
  }
  ad::Var<T> hidden = tape.relu(linear(tape, model, params, t, "head.w1", "head.b1"));
  return linear(tape, model, params, hidden, "head.w2", "head.b2");
}

template ad::Var<float> encode_objects_fwd<float>(ad::Tape<float>&, const GazeModel&,
                                                  const BoundParams<float>&, ad::Var<float>,
                                                  const std::vector<std::uint8_t>&);
template ad::Var<double> encode_objects_fwd<double>(ad::Tape<double>&, const GazeModel&,
                                                    const BoundParams<double>&, ad::Var<double>,
                                                    const std::vector<std::uint8_t>&);
template ad::Var<float> decode_gaze_fwd<float>(ad::Tape<float>&, const GazeModel&,
                                               const BoundParams<float>&, ad::Var<float>,
                                               ad::Var<float>, const std::vector<std::uint8_t>&,
                                               ad::Var<float>);
template ad::Var<double> decode_gaze_fwd<double>(ad::Tape<double>&, const GazeModel&,
                                                 const BoundParams<double>&, ad::Var<double>,
                                                 ad::Var<double>, const std::vector<std::uint8_t>&,
                                                 ad::Var<double>);

// ---- pipeline -------------------------------------------------------------------

EgoContext build_ego_context(const ModelConfig& cfg, const SampleContext& sample) {
  std::vector<Vec3> pose15;
  HeadAnchor anchor;
  if (sample.pose_subsampled) {
    pose15 = sample.pose_keypoints;
    anchor = head_anchor_subsampled(pose15);
  } else {
    if (static_cast<int>(sample.pose_keypoints.size()) != kPoseKeypointCount)
      throw domain_error("build_ego_context: expected 30 pose keypoints");
    PoseKeypoints pose{};
    std::copy(sample.pose_keypoints.begin(), sample.pose_keypoints.end(), pose.begin());
    anchor = head_anchor(pose);
    pose15 = subsample_pose(pose);
  }
  const Vec3 t_object = sample.t_object ? *sample.t_object : anchor.t_pose;
  return egocentric_transform(sample.view_dir, pose15, sample.objects, anchor.t_pose, t_object,
                              anchor.scale, cfg.rotation_mode);
}

ContextEmbedding embed_for_model(const GazeModel& model, const EgoContext& ego) {
  ContextEmbedding emb = embed_context(ego, model.maps(), model.config().pe_mode);
  if (!model.config().use_pose) {
    for (std::size_t i = emb.view_dim; i < emb.subject.size(); ++i) emb.subject[i] = 0.f;
  }
  return emb;
}

UnitVec3 predict(const GazeModel& model, const SampleContext& sample, PipelineTrace* trace) {
  const ModelConfig& cfg = model.config();
  EgoContext ego = build_ego_context(cfg, sample);
  ContextEmbedding emb = embed_for_model(model, ego);

  std::vector<double> bias =
      cfg.rotation_mode == RotationMode::kIdentity
          ? cone_bias(sample.view_dir, ego.objects, ConeBiasFrame::kCamera)
          : cone_bias(ego.view_dir, ego.objects, ConeBiasFrame::kEgocentric);
  if (!cfg.use_cone_bias) std::fill(bias.begin(), bias.end(), 0.0);

  const int n_padded = std::max(1, emb.n_objects);
  PaddedObjectBatch batch = PaddedObjectBatch::make(emb, bias, n_padded, cfg.d_model());
  if (!cfg.use_objects) std::fill(batch.mask.begin(), batch.mask.end(), std::uint8_t(0));

  ad::Tape<float> tape;
  BoundParams<float> params = bind_params(tape, model, false);
  ad::Var<float> e_obj =
      tape.leaf(batch.embeddings, batch.n_padded, cfg.d_model(), false);
  std::vector<float> bias_f(batch.cone_bias.begin(), batch.cone_bias.end());
  ad::Var<float> bias_row = tape.leaf(bias_f, 1, batch.n_padded, false);
  ad::Var<float> e_subj = tape.leaf(emb.subject, 1, cfg.d_model(), false);

  ad::Var<float> f_obj = encode_objects_fwd(tape, model, params, e_obj, batch.mask);
  ad::Var<float> residual_var = decode_gaze_fwd(tape, model, params, e_subj, f_obj, batch.mask,
                                                cfg.use_cone_bias ? bias_row : ad::Var<float>{});
  const auto& rv = tape.val(residual_var);
  const Vec3 residual{rv[0], rv[1], rv[2]};

  UnitVec3 gaze = sample.view_dir;
  bool fallback = false;
  const Vec3 unnormalized = ego.rotation.transposed().apply(residual) + sample.view_dir.vec();
  if (unnormalized.norm() <= 1e-6) {
    fallback = true;  // degenerate inversion: keep the view prior
  } else {
    gaze = UnitVec3(unnormalized);
  }

  if (trace) {
    trace->ego = std::move(ego);
    trace->embedding = std::move(emb);
    trace->cone_bias = std::move(bias);
    trace->residual = residual;
    trace->fallback_to_view = fallback;
  }
  return gaze;
}

// ---- checkpoint I/O ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'A', '3', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, static_cast<std::uint32_t>(v));
  write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw io_error(std::string("checkpoint: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& in, const char* what) {
  const std::uint64_t lo = read_u32(in, what);
  const std::uint64_t hi = read_u32(in, what);
  return lo | (hi << 32);
}

void write_block(std::ostream& out, const std::string& name, int rows, int cols,
                 const float* data) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(rows));
  write_u32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(sizeof(float) * rows * cols));
}

struct Block {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<float> data;
};

Block read_block(std::istream& in) {
  Block b;
  const std::uint32_t name_len = read_u32(in, "block name length");
  if (name_len > 4096) throw io_error("checkpoint: implausible block name length");
  b.name.resize(name_len);
  in.read(b.name.data(), name_len);
  if (!in) throw io_error("checkpoint: truncated while reading block name");
  b.rows = static_cast<int>(read_u32(in, "block rows"));
  b.cols = static_cast<int>(read_u32(in, "block cols"));
  if (b.rows <= 0 || b.cols <= 0 || static_cast<long long>(b.rows) * b.cols > (1ll << 28))
    throw io_error("checkpoint: implausible block shape for '" + b.name + "'");
  b.data.resize(static_cast<std::size_t>(b.rows) * b.cols);
  in.read(reinterpret_cast<char*>(b.data.data()),
          static_cast<std::streamsize>(sizeof(float) * b.data.size()));
  if (!in) throw io_error("checkpoint: truncated while reading block '" + b.name + "'");
  return b;
}

}  // namespace

void GazeModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);
  const std::string config_text = config_.to_kv().canonical_text();
  write_u32(out, static_cast<std::uint32_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_u64(out, config_.seed);

  const FourierFeatureMap* maps[] = {&maps_.view,       &maps_.pose_dir,   &maps_.pose_dist,
                                     &maps_.object_dir, &maps_.object_dist, &maps_.pose_raw,
                                     &maps_.object_raw};
  const char* map_names[] = {"pe.view.B",       "pe.pose_dir.B",   "pe.pose_dist.B",
                             "pe.object_dir.B", "pe.object_dist.B", "pe.pose_raw.B",
                             "pe.object_raw.B"};
  write_u32(out, static_cast<std::uint32_t>(params_.size() + std::size(maps)));
  for (const Parameter& p : params_) write_block(out, p.name, p.rows, p.cols, p.value.data());
  for (std::size_t i = 0; i < std::size(maps); ++i)
    write_block(out, map_names[i], maps[i]->frequencies, maps[i]->input_dim, maps[i]->B.data());
  if (!out) throw io_error("checkpoint: write failed for '" + path + "'");
}

GazeModel GazeModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw io_error("checkpoint: bad magic bytes in '" + path + "'");
  const std::uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion)
    throw io_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t config_len = read_u32(in, "config length");
  if (config_len > (1u << 20)) throw io_error("checkpoint: implausible config length");
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), config_len);
  if (!in) throw io_error("checkpoint: truncated while reading config");
  const std::uint64_t seed = read_u64(in, "seed");

  ModelConfig cfg = ModelConfig::from_kv(KeyValueConfig::parse(config_text));
  if (cfg.seed != seed) throw io_error("checkpoint: header seed disagrees with config");
  GazeModel model(cfg, false);

  const std::uint32_t n_blocks = read_u32(in, "block count");
  std::size_t params_seen = 0;
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    Block b = read_block(in);
    if (b.name.rfind("pe.", 0) == 0) {
      FourierFeatureMap* map = nullptr;
      if (b.name == "pe.view.B") map = &model.maps_.view;
      else if (b.name == "pe.pose_dir.B") map = &model.maps_.pose_dir;
      else if (b.name == "pe.pose_dist.B") map = &model.maps_.pose_dist;
      else if (b.name == "pe.object_dir.B") map = &model.maps_.object_dir;
      else if (b.name == "pe.object_dist.B") map = &model.maps_.object_dist;
      else if (b.name == "pe.pose_raw.B") map = &model.maps_.pose_raw;
      else if (b.name == "pe.object_raw.B") map = &model.maps_.object_raw;
      if (!map) throw io_error("checkpoint: unknown frequency block '" + b.name + "'");
      if (map->frequencies != b.rows || map->input_dim != b.cols)
        throw io_error("checkpoint: frequency block '" + b.name + "' has shape " +
                       std::to_string(b.rows) + "x" + std::to_string(b.cols) +
                       ", config expects " + std::to_string(map->frequencies) + "x" +
                       std::to_string(map->input_dim));
      map->B = std::move(b.data);
      continue;
    }
    auto it = model.index_.find(b.name);
    if (it == model.index_.end())
      throw io_error("checkpoint: unknown parameter block '" + b.name + "'");
    Parameter& p = model.params_[it->second];
    if (p.rows != b.rows || p.cols != b.cols)
      throw io_error("checkpoint: parameter '" + b.name + "' has shape " + std::to_string(b.rows) +
                     "x" + std::to_string(b.cols) + ", config expects " + std::to_string(p.rows) +
                     "x" + std::to_string(p.cols));
    p.value = std::move(b.data);
    ++params_seen;
  }
  if (params_seen != model.params_.size())
    throw io_error("checkpoint: " + std::to_string(params_seen) + " parameter blocks for " +
                   std::to_string(model.params_.size()) + " parameters");
  return model;
}

}  // namespace gaze3d
