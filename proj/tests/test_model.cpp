#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "gaze3d/model.hpp"
#include "gaze3d/rng.hpp"

using namespace gaze3d;

namespace {

UnitVec3 random_unit(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double a = rng.uniform(0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return UnitVec3(Vec3{r * std::cos(a), r * std::sin(a), z});
}

SampleContext random_sample(Rng& rng, int n_objects) {
  SampleContext ctx;
  ctx.pose_keypoints.resize(kPoseKeypointCount);
  const Vec3 head{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 4)};
  for (int i = 0; i < kPoseKeypointCount; ++i)
    ctx.pose_keypoints[i] =
        head + Vec3{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 0.2)};
  ctx.pose_keypoints[24] = head + Vec3{-0.08, 0, 0};
  ctx.pose_keypoints[28] = head + Vec3{0.08, 0, 0};
  for (int i = 0; i < n_objects; ++i)
    ctx.objects.push_back(head + Vec3{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
  ctx.view_dir = random_unit(rng);
  return ctx;
}

std::vector<float> random_vec(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

Vec3 rotate_yaw(const Vec3& p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x + s * p.z, p.y, -s * p.x + c * p.z};
}

}  // namespace

TEST_CASE("model construction and parameter budget") {
  ModelConfig cfg;
  cfg.seed = 3;
  const GazeModel model(cfg);
  // 3 encoder layers (attn 4d^2+4d, two norms 2d each, ff 2*d*ff+ff+d),
  // 3 decoder layers (two attn blocks, three norms, ff), gaze head
  const std::size_t d = 256, ff = 512;
  const std::size_t attn = 4 * d * d + 4 * d;
  const std::size_t norm = 2 * d;
  const std::size_t ffn = d * ff + ff + ff * d + d;
  const std::size_t enc = 3 * (attn + 2 * norm + ffn);
  const std::size_t dec = 3 * (2 * attn + 3 * norm + ffn);
  const std::size_t head = d * 512 + 512 + 512 * 3 + 3;
  CHECK(model.parameter_count() == enc + dec + head);

  // same config, same seed: identical initialization
  const GazeModel again(cfg);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(model.params()[i].value == again.params()[i].value);

  ModelConfig bad = cfg;
  bad.n_heads = 3;  // does not divide 256
  CHECK_THROWS_AS(GazeModel{bad}, domain_error);
  ModelConfig dropout = cfg;
  dropout.dropout = 0.1;
  CHECK_THROWS_AS(GazeModel{dropout}, domain_error);
}

TEST_CASE("cone bias") {
  const UnitVec3 v(0.0, 0.0, 1.0);
  const std::vector<Vec3> objects = {{0, 0, 2.5}, {3, 0, 0}, {0, 0, 0}};
  const std::vector<double> bias = cone_bias(v, objects, ConeBiasFrame::kCamera);
  CHECK(bias[0] == doctest::Approx(1.0));   // on the view ray
  CHECK(bias[1] == doctest::Approx(0.0));   // perpendicular
  CHECK(bias[2] == 0.0);                    // at the head: convention 0

  SUBCASE("camera and egocentric frames agree") {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
      const UnitVec3 view = random_unit(rng);
      std::vector<Vec3> head_rel;
      for (int i = 0; i < 7; ++i)
        head_rel.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
      const std::vector<double> cam = cone_bias(view, head_rel, ConeBiasFrame::kCamera);
      const Rotation3 R = cyclotorsion_alignment(view);
      std::vector<Vec3> ego;
      for (const Vec3& p : head_rel) ego.push_back(R.apply(p));
      const std::vector<double> egob = cone_bias(view, ego, ConeBiasFrame::kEgocentric);
      for (std::size_t i = 0; i < cam.size(); ++i)
        CHECK(cam[i] == doctest::Approx(egob[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("object encoder: masks and permutations") {
  ModelConfig cfg;
  cfg.seed = 11;
  const GazeModel model(cfg, /*zero_init_gaze_head=*/false);
  Rng rng(2);
  const int n = 6, d = cfg.d_model();

  const std::vector<float> emb = random_vec(rng, n * d);
  const std::vector<std::uint8_t> mask(n, 1);

  const auto encode = [&](const std::vector<float>& e, const std::vector<std::uint8_t>& m) {
    ad::Tape<float> tape;
    BoundParams<float> params = bind_params(tape, model, false);
    ad::Var<float> x = tape.leaf(e, static_cast<int>(m.size()), d, false);
    return tape.val(encode_objects_fwd(tape, model, params, x, m));
  };

  SUBCASE("all-masked batch encodes to zeros") {
    const std::vector<float> out = encode(emb, std::vector<std::uint8_t>(n, 0));
    for (float x : out) CHECK(x == 0.0f);
  }

  SUBCASE("permutation equivariance") {
    const std::vector<float> base = encode(emb, mask);
    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    std::vector<float> permuted(emb.size());
    for (int r = 0; r < n; ++r)
      std::copy(emb.begin() + perm[r] * d, emb.begin() + (perm[r] + 1) * d,
                permuted.begin() + r * d);
    const std::vector<float> out = encode(permuted, mask);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c)
        CHECK(out[r * d + c] == doctest::Approx(base[perm[r] * d + c]).epsilon(1e-5));
  }

  SUBCASE("masked padding rows do not disturb valid rows") {
    const std::vector<float> base = encode(emb, mask);
    std::vector<float> padded = emb;
    Rng noise(3);
    for (int i = 0; i < 4 * d; ++i) padded.push_back(static_cast<float>(noise.uniform(-9, 9)));
    std::vector<std::uint8_t> padded_mask = mask;
    padded_mask.insert(padded_mask.end(), 4, 0);
    const std::vector<float> out = encode(padded, padded_mask);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c)
        CHECK(out[r * d + c] == doctest::Approx(base[r * d + c]).epsilon(1e-5));
    for (int r = n; r < n + 4; ++r)
      for (int c = 0; c < d; ++c) CHECK(out[r * d + c] == 0.0f);
  }
}

TEST_CASE("gaze decoder") {
  ModelConfig cfg;
  cfg.seed = 21;
  const GazeModel model(cfg, false);
  const int d = cfg.d_model();
  Rng rng(4);
  const std::vector<float> subj = random_vec(rng, d);
  const std::vector<float> fobj = random_vec(rng, 5 * d);
  const std::vector<float> bias = {0.9f, -0.2f, 0.1f, 0.5f, -0.7f};

  const auto decode = [&](const std::vector<float>& f, const std::vector<std::uint8_t>& m,
                          bool with_bias) {
    ad::Tape<float> tape;
    BoundParams<float> params = bind_params(tape, model, false);
    ad::Var<float> s = tape.leaf(subj, 1, d, false);
    ad::Var<float> fo = tape.leaf(f, static_cast<int>(m.size()), d, false);
    ad::Var<float> b = tape.leaf(bias, 1, static_cast<int>(m.size()), false);
    return tape.val(
        decode_gaze_fwd(tape, model, params, s, fo, m, with_bias ? b : ad::Var<float>{}));
  };

  SUBCASE("deterministic") {
    CHECK(decode(fobj, std::vector<std::uint8_t>(5, 1), true) ==
          decode(fobj, std::vector<std::uint8_t>(5, 1), true));
  }
  SUBCASE("with everything masked the output ignores object content") {
    const std::vector<std::uint8_t> none(5, 0);
    const std::vector<float> a = decode(fobj, none, true);
    std::vector<float> other = fobj;
    for (float& x : other) x += 3.25f;
    const std::vector<float> b = decode(other, none, true);
    CHECK(a == b);
  }
  SUBCASE("permutation invariance over objects") {
    const std::vector<std::uint8_t> all(5, 1);
    const std::vector<float> base = decode(fobj, all, false);
    std::vector<float> shuffled(fobj.size());
    const int perm[5] = {4, 2, 0, 3, 1};
    for (int r = 0; r < 5; ++r)
      std::copy(fobj.begin() + perm[r] * d, fobj.begin() + (perm[r] + 1) * d,
                shuffled.begin() + r * d);
    const std::vector<float> out = decode(shuffled, all, false);
    for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(base[i]).epsilon(1e-5));
  }
  SUBCASE("bounded residual at initialization over many seeds") {
    Rng seeds(77);
    for (int s = 0; s < 100; ++s) {
      ModelConfig c2;
      c2.seed = seeds.next_u64();
      const GazeModel m2(c2, false);
      ad::Tape<float> tape;
      BoundParams<float> params = bind_params(tape, m2, false);
      Rng in(s);
      ad::Var<float> subj_v = tape.leaf(random_vec(in, d), 1, d, false);
      ad::Var<float> fo = tape.leaf(random_vec(in, 4 * d), 4, d, false);
      const std::vector<std::uint8_t> m(4, 1);
      const auto& g = tape.val(decode_gaze_fwd(tape, m2, params, subj_v, fo, m, ad::Var<float>{}));
      const double norm = std::sqrt(static_cast<double>(g[0]) * g[0] + g[1] * g[1] + g[2] * g[2]);
      CHECK(norm < 10.0);
    }
  }
}

TEST_CASE("predict") {
  Rng rng(31);
  SUBCASE("zeroed gaze head returns the view prior") {
    ModelConfig cfg;
    cfg.seed = 5;
    const GazeModel model(cfg);  // zero-initialized gaze head
    for (int t = 0; t < 10; ++t) {
      SampleContext ctx = random_sample(rng, 6);
      PipelineTrace trace;
      const UnitVec3 g = predict(model, ctx, &trace);
      CHECK((g.vec() - ctx.view_dir.vec()).norm() < 1e-14);
      CHECK((trace.residual.norm()) == 0.0);
    }
  }

  SUBCASE("egocentric prediction is equivariant to horizon-preserving scene rotations") {
    ModelConfig cfg;
    cfg.seed = 9;
    const GazeModel model(cfg, false);
    for (int t = 0; t < 10; ++t) {
      SampleContext ctx = random_sample(rng, 8);
      const Vec3 pivot = ctx.pose_keypoints[24];
      const double yaw = rng.uniform(-M_PI, M_PI);
      SampleContext rotated = ctx;
      for (Vec3& p : rotated.pose_keypoints) p = pivot + rotate_yaw(p - pivot, yaw);
      for (Vec3& p : rotated.objects) p = pivot + rotate_yaw(p - pivot, yaw);
      rotated.view_dir = UnitVec3(rotate_yaw(ctx.view_dir.vec(), yaw));

      const UnitVec3 g = predict(model, ctx);
      const UnitVec3 g_rot = predict(model, rotated);
      CHECK((g_rot.vec() - rotate_yaw(g.vec(), yaw)).norm() < 1e-4);
    }
  }

  SUBCASE("identity mode is not equivariant (the ablation is distinguishable)") {
    ModelConfig cfg;
    cfg.seed = 9;
    cfg.rotation_mode = RotationMode::kIdentity;
    const GazeModel model(cfg, false);
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      SampleContext ctx = random_sample(rng, 8);
      const Vec3 pivot = ctx.pose_keypoints[24];
      const double yaw = M_PI / 2;
      SampleContext rotated = ctx;
      for (Vec3& p : rotated.pose_keypoints) p = pivot + rotate_yaw(p - pivot, yaw);
      for (Vec3& p : rotated.objects) p = pivot + rotate_yaw(p - pivot, yaw);
      rotated.view_dir = UnitVec3(rotate_yaw(ctx.view_dir.vec(), yaw));
      const UnitVec3 g = predict(model, ctx);
      const UnitVec3 g_rot = predict(model, rotated);
      worst = std::max(worst, (g_rot.vec() - rotate_yaw(g.vec(), yaw)).norm());
    }
    CHECK(worst > 1e-3);
  }

  SUBCASE("object-free context still predicts") {
    ModelConfig cfg;
    cfg.seed = 5;
    const GazeModel model(cfg, false);
    SampleContext ctx = random_sample(rng, 0);
    CHECK_NOTHROW(predict(model, ctx));
  }
}

TEST_CASE("checkpoint round trip and corruption handling") {
  ModelConfig cfg;
  cfg.seed = 1234;
  const GazeModel model(cfg, false);
  const std::string path = "test_checkpoint.gz3";
  model.save_checkpoint(path);

  SUBCASE("round trip is bitwise") {
    const GazeModel loaded = GazeModel::load_checkpoint(path);
    REQUIRE(loaded.params().size() == model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      CHECK(loaded.params()[i].name == model.params()[i].name);
      CHECK(loaded.params()[i].value == model.params()[i].value);
    }
    CHECK(loaded.maps().view.B == model.maps().view.B);
    CHECK(loaded.maps().object_dist.B == model.maps().object_dist.B);

    // saving the loaded model reproduces the file bytes
    const std::string path2 = "test_checkpoint2.gz3";
    loaded.save_checkpoint(path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
    CHECK(bytes_a == bytes_b);
    std::remove(path2.c_str());
  }

  SUBCASE("corrupt magic is rejected") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(GazeModel::load_checkpoint(path), io_error);
  }

  SUBCASE("truncated file is rejected") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(GazeModel::load_checkpoint(path), io_error);
  }

  std::remove(path.c_str());
}
