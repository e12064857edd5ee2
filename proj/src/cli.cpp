#include "gaze3d/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "gaze3d/dataio.hpp"
#include "gaze3d/model.hpp"
#include "gaze3d/runconfig.hpp"
#include "gaze3d/synthdata.hpp"
#include "gaze3d/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gaze3d {

namespace {

void print_header(const KeyValueConfig& cfg, std::uint64_t seed, std::ostream& out) {
  out << "gaze3d " << kVersionString << " | config " << cfg.hash_hex() << " | seed " << seed
      << "\n";
}

KeyValueConfig base_config(const std::string& config_flag) {
  KeyValueConfig cfg;
  if (const char* env = std::getenv("GAZE3D_CONFIG"); env && *env)
    cfg.merge_from(KeyValueConfig::load_file(env));
  if (!config_flag.empty()) cfg.merge_from(KeyValueConfig::load_file(config_flag));
  return cfg;
}

const std::set<std::string>& known_scene_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    for (const auto& [key, value] : SceneSpec{}.to_kv().entries()) k.insert(key);
    return k;
  }();
  return keys;
}

SceneSpec scene_spec_from_config(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.entries())
    if (known_scene_keys().count(key) == 0)
      throw domain_error("scene spec: unknown key '" + key + "'");
  return SceneSpec::from_kv(kv);
}

std::vector<TrainSample> load_train_samples(const std::string& root) {
  const Dataset ds = read_dataset(root);
  std::vector<TrainSample> out;
  out.reserve(ds.samples.size());
  for (const ContextSampleRecord& r : ds.samples) out.push_back(to_train_sample(r, root));
  return out;
}

// ---- gen ---------------------------------------------------------------------

struct GenArgs {
  std::string spec_file;
  std::string out;
  std::string config_flag;
  int count = 1000;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool render_depth = false;
};

int cmd_gen(const GenArgs& args) {
  KeyValueConfig spec_kv;
  if (!args.spec_file.empty()) spec_kv.merge_from(KeyValueConfig::load_file(args.spec_file));
  SceneSpec spec = scene_spec_from_config(spec_kv);
  if (args.seed_set) spec.seed = args.seed;

  const KeyValueConfig resolved = spec.to_kv();
  print_header(resolved, spec.seed, std::cout);

  Dataset dataset;
  dataset.manifest.source_note = "synthetic";
  dataset.manifest.generator_spec_hash = resolved.hash_hex();
  if (args.render_depth) dataset.manifest.depth_dir = "depth";

  const std::string depth_dir = (fs::path(args.out) / "depth").string();
  if (args.render_depth) fs::create_directories(depth_dir);

  int rendered = 0;
  for (int i = 0; i < args.count; ++i) {
    GeneratedSample g = generate_sample(spec, i);
    if (args.render_depth) {
      RenderResult rr = render_depth(g, spec);
      const std::string rel = "depth/" + g.record.id + ".gzd";
      write_depth_sidecar((fs::path(args.out) / rel).string(), rr.sidecar);
      // masked median path end to end: positions resolve from the sidecar
      g.record.object_positions.reset();
      g.record.depth_ref = rel;
      g.record.mask_refs = rr.visible_instances;
      ++rendered;
    }
    dataset.samples.push_back(std::move(g.record));
  }
  write_dataset(args.out, dataset);

  std::cout << "wrote " << dataset.manifest.count << " samples to " << args.out
            << " (samples_hash " << dataset.manifest.samples_hash << ")";
  if (args.render_depth) std::cout << ", " << rendered << " depth sidecars";
  std::cout << "\n";
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string val_data;
  std::string out;
  std::string config_flag;
  std::string rotation = "cyclotorsion";
  std::string pe = "d3";
  bool no_egocentric = false;
  bool no_objects = false;
  bool no_pose = false;
  bool no_cone_bias = false;
  bool no_augment = false;
  std::uint64_t seed = 0;
  int epochs = -1;
  int batch_size = -1;
};

ModelConfig model_config_from_args(const TrainArgs& args) {
  ModelConfig mc;
  const auto rot = rotation_mode_from_string(args.rotation);
  if (!rot) throw domain_error("train: unknown --rotation value '" + args.rotation + "'");
  mc.rotation_mode = args.no_egocentric ? RotationMode::kIdentity : *rot;
  const auto pe = pe_mode_from_string(args.pe);
  if (!pe) throw domain_error("train: unknown --pe value '" + args.pe + "'");
  mc.pe_mode = *pe;
  mc.use_objects = !args.no_objects;
  mc.use_pose = !args.no_pose;
  mc.use_cone_bias = !args.no_cone_bias;
  mc.seed = args.seed;
  if (!mc.use_pose && !mc.use_objects && mc.rotation_mode != RotationMode::kIdentity)
    throw domain_error(
        "train: --no-pose with --no-objects leaves no usable context (the view prior is constant "
        "after egocentric normalization); drop one flag or use --no-egocentric");
  return mc;
}

int cmd_train(const TrainArgs& args) {
  const KeyValueConfig base = base_config(args.config_flag);

  ModelConfig mc = model_config_from_args(args);
  TrainConfig tc = TrainConfig::from_kv(base);
  tc.seed = args.seed;
  if (args.epochs > 0) tc.epochs = args.epochs;
  if (args.batch_size > 0) tc.batch_size = args.batch_size;
  if (args.no_augment) tc.noise_augment = false;
  tc.validate();
  mc.validate();

  std::vector<TrainSample> train_set = load_train_samples(args.data);
  std::vector<TrainSample> val_set;
  if (!args.val_data.empty()) {
    val_set = load_train_samples(args.val_data);
  } else {
    // explicit split tags first, seed-stable hash split otherwise
    std::vector<TrainSample> tagged_train, tagged_val;
    const Dataset ds = read_dataset(args.data);
    bool has_tags = false;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      if (ds.samples[i].split) {
        has_tags = true;
        (*ds.samples[i].split == "val" ? tagged_val : tagged_train)
            .push_back(std::move(train_set[i]));
      }
    }
    if (has_tags && !tagged_val.empty()) {
      train_set = std::move(tagged_train);
      val_set = std::move(tagged_val);
    } else {
      auto split = split_by_hash(train_set, tc.val_fraction, tc.seed);
      train_set = std::move(split.first);
      val_set = std::move(split.second);
    }
  }
  if (train_set.empty() || val_set.empty())
    throw domain_error("train: need non-empty train and validation sets");

  KeyValueConfig resolved = mc.to_kv();
  resolved.merge_from(tc.to_kv());
  resolved.set("data.train", args.data);
  resolved.set("data.val", args.val_data.empty() ? "(split)" : args.val_data);
  const std::string config_hash = resolved.hash_hex();
  print_header(resolved, args.seed, std::cout);
  std::cout << "train " << train_set.size() << " samples, val " << val_set.size() << "\n";

  fs::create_directories(args.out);
  {
    std::ofstream cfg_out(fs::path(args.out) / "config.txt", std::ios::trunc);
    cfg_out << resolved.canonical_text();
  }

  GazeModel model(mc);
  const std::string metrics_path = (fs::path(args.out) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw io_error("train: cannot open '" + metrics_path + "'");
  const std::string ckpt = (fs::path(args.out) / "checkpoint.gz3").string();
  TrainResult result = train(train_set, val_set, model, tc, config_hash, ckpt,
                             [&](const MetricsRecord& rec) {
                               metrics << rec.to_json_line() << "\n";
                               std::cout << rec.to_json_line() << "\n";
                             });
  std::cout << "best val mae3d " << format_double(result.best_val_mae3d_deg) << " deg at epoch "
            << result.best_epoch << "; checkpoint " << ckpt << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string report;
  std::string expect_config_hash;
};

int cmd_eval(const EvalArgs& args) {
  GazeModel model = GazeModel::load_checkpoint(args.checkpoint);
  const KeyValueConfig model_kv = model.config().to_kv();
  if (!args.expect_config_hash.empty() && model_kv.hash_hex() != args.expect_config_hash)
    throw domain_error("eval: checkpoint config hash " + model_kv.hash_hex() +
                       " does not match expected " + args.expect_config_hash);

  std::vector<TrainSample> samples = load_train_samples(args.data);
  if (samples.empty()) throw domain_error("eval: empty evaluation set");

  print_header(model_kv, model.config().seed, std::cout);

  std::vector<SampleEval> per_sample;
  per_sample.reserve(samples.size());
  const EvalStats stats = evaluate(model, samples, &per_sample);

  // breakdown over view-prior error buckets
  const double edges[] = {0, 10, 20, 30, 45, 90, 181};
  constexpr int n_buckets = 6;
  double bucket_sum[n_buckets] = {};
  int bucket_n[n_buckets] = {};
  for (const SampleEval& se : per_sample) {
    for (int b = 0; b < n_buckets; ++b)
      if (se.prior_err_deg >= edges[b] && se.prior_err_deg < edges[b + 1]) {
        bucket_sum[b] += se.err3d_deg;
        ++bucket_n[b];
        break;
      }
  }

  std::ostringstream report;
  report << "samples " << stats.count << "\n";
  report << "mae3d_deg " << format_double(stats.mae3d_deg) << "\n";
  report << "mae2d_deg " << format_double(stats.mae2d_deg) << " (skipped "
         << stats.skipped_2d << ")\n";
  report << "prior-error bucket -> mean mae3d (count)\n";
  for (int b = 0; b < n_buckets; ++b) {
    report << "  [" << edges[b] << ", " << edges[b + 1] << ") deg: ";
    if (bucket_n[b])
      report << format_double(bucket_sum[b] / bucket_n[b]) << " (" << bucket_n[b] << ")\n";
    else
      report << "- (0)\n";
  }
  std::cout << report.str();

  if (!args.report.empty()) {
    std::ofstream out(args.report, std::ios::trunc);
    if (!out) throw io_error("eval: cannot open '" + args.report + "'");
    out << "gaze3d " << kVersionString << " | config " << model_kv.hash_hex() << " | seed "
        << model.config().seed << "\n";
    out << report.str();
    json j;
    j["mae3d_deg"] = stats.mae3d_deg;
    j["mae2d_deg"] = stats.mae2d_deg;
    j["skipped_2d"] = stats.skipped_2d;
    j["count"] = stats.count;
    j["config_hash"] = model_kv.hash_hex();
    out << j.dump() << "\n";
  }
  return 0;
}

// ---- transform ------------------------------------------------------------------

struct TransformArgs {
  std::string data;
  std::string sample_id;
  std::string mode = "cyclotorsion";
};

int cmd_transform(const TransformArgs& args) {
  const Dataset ds = read_dataset(args.data);
  const ContextSampleRecord* record = nullptr;
  for (const ContextSampleRecord& r : ds.samples)
    if (r.id == args.sample_id) {
      record = &r;
      break;
    }
  if (!record) throw domain_error("transform: unknown sample id '" + args.sample_id + "'");

  ModelConfig mc;
  const auto rot = rotation_mode_from_string(args.mode);
  if (!rot) throw domain_error("transform: unknown --mode value '" + args.mode + "'");
  mc.rotation_mode = *rot;
  mc.seed = 0;

  const ResolvedSample resolved = resolve_sample(*record, args.data);
  const EgoContext ego = build_ego_context(mc, resolved.context);
  const EncoderMaps maps = EncoderMaps::make(mc.encoding, mc.seed);
  const ContextEmbedding emb = embed_context(ego, maps, mc.pe_mode);

  print_header(mc.to_kv(), mc.seed, std::cout);
  const auto pv = [](const Vec3& v) {
    return "(" + format_double(v.x) + ", " + format_double(v.y) + ", " + format_double(v.z) + ")";
  };
  std::cout << "sample " << record->id << " mode " << to_string(ego.mode) << "\n";
  std::cout << "v'      " << pv(ego.view_dir.vec()) << "\n";
  std::cout << "R\n";
  for (int r = 0; r < 3; ++r)
    std::cout << "        " << format_double(ego.rotation(r, 0)) << " "
              << format_double(ego.rotation(r, 1)) << " " << format_double(ego.rotation(r, 2))
              << "\n";
  std::cout << "t_pose  " << pv(ego.t_pose) << "\n";
  std::cout << "t_obj   " << pv(ego.t_object) << "\n";
  std::cout << "s       " << format_double(ego.scale) << "\n";
  std::cout << "pose' (" << ego.pose.size() << " keypoints)\n";
  for (const Vec3& p : ego.pose) std::cout << "        " << pv(p) << "\n";
  std::cout << "objects' (" << ego.objects.size() << ")\n";
  for (const Vec3& p : ego.objects) std::cout << "        " << pv(p) << "\n";
  std::cout << "dims: E_subject " << emb.subject.size() << " (E_view " << emb.view_dim
            << "), E_object " << emb.n_objects << "x"
            << (emb.n_objects ? emb.objects.size() / emb.n_objects : maps.config.c_latent())
            << "\n";
  return 0;
}

// ---- sweep --------------------------------------------------------------------

struct SweepArgs {
  std::string data;
  std::string val_data;
  std::string out;
  std::string axis;
  std::string config_flag;
  int seeds = 3;
  int epochs = -1;
};

struct SweepCell {
  std::string label;
  TrainArgs train_args;
};

int cmd_sweep(const SweepArgs& args) {
  std::vector<std::pair<std::string, std::function<void(TrainArgs&)>>> variants;
  if (args.axis == "rotation") {
    variants = {{"cyclotorsion", [](TrainArgs&) {}},
                {"axis-angle", [](TrainArgs& t) { t.rotation = "axis-angle"; }}};
  } else if (args.axis == "pe") {
    variants = {{"d3", [](TrainArgs&) {}}, {"standard", [](TrainArgs& t) { t.pe = "standard"; }}};
  } else if (args.axis == "egocentric") {
    variants = {{"egocentric", [](TrainArgs&) {}},
                {"identity", [](TrainArgs& t) { t.no_egocentric = true; }}};
  } else if (args.axis == "context") {
    variants = {{"full", [](TrainArgs&) {}},
                {"no-pose", [](TrainArgs& t) { t.no_pose = true; }},
                {"no-objects", [](TrainArgs& t) { t.no_objects = true; }},
                {"no-cone-bias", [](TrainArgs& t) { t.no_cone_bias = true; }}};
  } else {
    throw domain_error("sweep: unknown --axis '" + args.axis +
                       "' (rotation, pe, egocentric, context)");
  }

  fs::create_directories(fs::path(args.out) / "cells");

  struct CellResult {
    std::string label;
    std::uint64_t seed;
    double val_mae3d = 0.0;
    bool ok = false;
    std::string hash;
  };
  std::vector<CellResult> cells;

  for (const auto& [label, mutate] : variants) {
    for (int s = 0; s < args.seeds; ++s) {
      TrainArgs targs;
      targs.data = args.data;
      targs.val_data = args.val_data;
      targs.config_flag = args.config_flag;
      targs.seed = static_cast<std::uint64_t>(s);
      targs.epochs = args.epochs;
      mutate(targs);

      CellResult cell;
      cell.label = label;
      cell.seed = targs.seed;
      try {
        ModelConfig mc = model_config_from_args(targs);
        TrainConfig tc = TrainConfig::from_kv(base_config(args.config_flag));
        tc.seed = targs.seed;
        if (targs.epochs > 0) tc.epochs = targs.epochs;
        KeyValueConfig resolved = mc.to_kv();
        resolved.merge_from(tc.to_kv());
        resolved.set("data.train", args.data);
        resolved.set("data.val", args.val_data);
        cell.hash = resolved.hash_hex();

        const fs::path cell_file = fs::path(args.out) / "cells" / (cell.hash + ".json");
        if (fs::exists(cell_file)) {
          // completed on an earlier run; reuse
          std::ifstream in(cell_file);
          json j;
          in >> j;
          cell.val_mae3d = j.at("val_mae3d").get<double>();
          cell.ok = true;
        } else {
          std::vector<TrainSample> train_set = load_train_samples(args.data);
          std::vector<TrainSample> val_set = load_train_samples(args.val_data);
          GazeModel model(mc);
          TrainResult r = train(train_set, val_set, model, tc, cell.hash, "");
          cell.val_mae3d = r.best_val_mae3d_deg;
          cell.ok = true;
          json j;
          j["label"] = label;
          j["seed"] = cell.seed;
          j["val_mae3d"] = cell.val_mae3d;
          j["config_hash"] = cell.hash;
          std::ofstream out(cell_file, std::ios::trunc);
          out << j.dump() << "\n";
        }
        std::cout << "cell " << label << " seed " << cell.seed << " -> "
                  << format_double(cell.val_mae3d) << " deg (" << cell.hash << ")\n";
      } catch (const std::exception& e) {
        std::cerr << "cell " << label << " seed " << s << " failed: " << e.what() << "\n";
      }
      cells.push_back(cell);
    }
  }

  struct RowStat {
    std::string label;
    double mean = 0.0, stddev = 0.0;
    int n = 0, missing = 0;
  };
  std::vector<RowStat> rows;
  for (const auto& [label, mutate] : variants) {
    RowStat row;
    row.label = label;
    std::vector<double> vals;
    for (const CellResult& c : cells)
      if (c.label == label) {
        if (c.ok)
          vals.push_back(c.val_mae3d);
        else
          ++row.missing;
      }
    row.n = static_cast<int>(vals.size());
    if (!vals.empty()) {
      for (double v : vals) row.mean += v;
      row.mean /= vals.size();
      for (double v : vals) row.stddev += (v - row.mean) * (v - row.mean);
      row.stddev = vals.size() > 1 ? std::sqrt(row.stddev / (vals.size() - 1)) : 0.0;
    }
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const RowStat& a, const RowStat& b) {
    if (a.n == 0) return false;
    if (b.n == 0) return true;
    return a.mean < b.mean;
  });

  std::ostringstream table;
  table << "axis " << args.axis << ", " << args.seeds << " seed(s), val 3D MAE (deg)\n";
  for (const RowStat& r : rows) {
    table << "  " << r.label << ": ";
    if (r.n)
      table << format_double(r.mean) << " +- " << format_double(r.stddev) << " (n=" << r.n << ")";
    else
      table << "missing";
    if (r.missing) table << " [" << r.missing << " cell(s) failed]";
    table << "\n";
  }
  std::cout << table.str();
  std::ofstream report(fs::path(args.out) / ("sweep_" + args.axis + ".txt"), std::ios::trunc);
  report << "gaze3d " << kVersionString << "\n" << table.str();
  return 0;
}

// ---- validate ------------------------------------------------------------------

int cmd_validate(const std::string& data) {
  const ValidationReport report = validate_dataset(data);
  std::cout << "checked " << report.records_checked << " records\n";
  if (report.clean()) {
    std::cout << "clean\n";
    return 0;
  }
  for (const auto& [field, count] : report.violations_by_field)
    std::cout << field << ": " << count << " violation(s)\n";
  for (const ValidationIssue& issue : report.issues)
    std::cout << "  line " << issue.line << ": " << issue.message << "\n";
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"3D gaze estimation from 3D context: egocentric normalization, "
               "direction-distance positional encoding, and a gaze transformer"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
  gen_cmd->add_option("--spec", gen.spec_file, "scene spec file (key = value)");
  gen_cmd->add_option("--count", gen.count, "number of samples")->required();
  gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
  auto* gen_seed = gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_flag("--render-depth", gen.render_depth,
                    "render sphere depth maps and instance masks");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train the gaze transformer");
  train_cmd->add_option("--data", train_args.data, "training dataset directory")->required();
  train_cmd->add_option("--val-data", train_args.val_data, "validation dataset directory");
  train_cmd->add_option("--out", train_args.out, "run output directory")->required();
  train_cmd->add_option("--config", train_args.config_flag, "key-value config file");
  train_cmd->add_option("--rotation", train_args.rotation, "cyclotorsion | axis-angle");
  train_cmd->add_option("--pe", train_args.pe, "d3 | standard");
  train_cmd->add_flag("--no-egocentric", train_args.no_egocentric, "identity-mode geometry");
  train_cmd->add_flag("--no-objects", train_args.no_objects, "mask all objects");
  train_cmd->add_flag("--no-pose", train_args.no_pose, "zero the pose embedding");
  train_cmd->add_flag("--no-cone-bias", train_args.no_cone_bias, "drop the gaze-cone bias");
  train_cmd->add_flag("--no-augment", train_args.no_augment, "disable view-direction noise");
  train_cmd->add_option("--seed", train_args.seed, "run seed");
  train_cmd->add_option("--epochs", train_args.epochs, "override the epoch count");
  train_cmd->add_option("--batch-size", train_args.batch_size, "override the batch size");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_args.data, "evaluation dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--report", eval_args.report, "report file to write");
  eval_cmd->add_option("--expect-config-hash", eval_args.expect_config_hash,
                       "fail unless the checkpoint config hash matches");

  TransformArgs transform_args;
  auto* transform_cmd =
      app.add_subcommand("transform", "dump the egocentric context of one sample");
  transform_cmd->add_option("--data", transform_args.data, "dataset directory")->required();
  transform_cmd->add_option("--sample-id", transform_args.sample_id, "sample id")->required();
  transform_cmd->add_option("--mode", transform_args.mode,
                            "cyclotorsion | axis-angle | identity");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "run an ablation axis across seeds");
  sweep_cmd->add_option("--data", sweep_args.data, "training dataset directory")->required();
  sweep_cmd->add_option("--val-data", sweep_args.val_data, "validation dataset directory")
      ->required();
  sweep_cmd->add_option("--out", sweep_args.out, "sweep output directory")->required();
  sweep_cmd->add_option("--axis", sweep_args.axis, "rotation | pe | egocentric | context")
      ->required();
  sweep_cmd->add_option("--seeds", sweep_args.seeds, "seeds per configuration");
  sweep_cmd->add_option("--config", sweep_args.config_flag, "key-value config file");
  sweep_cmd->add_option("--epochs", sweep_args.epochs, "override the epoch count");

  std::string validate_data;
  auto* validate_cmd = app.add_subcommand("validate", "validate a dataset");
  validate_cmd->add_option("--data", validate_data, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) {
      gen.seed_set = gen_seed->count() > 0;
      return cmd_gen(gen);
    }
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (transform_cmd->parsed()) return cmd_transform(transform_args);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args);
    if (validate_cmd->parsed()) return cmd_validate(validate_data);
  } catch (const domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace gaze3d
