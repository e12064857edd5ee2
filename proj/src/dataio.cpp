#include "gaze3d/dataio.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gaze3d/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gaze3d {

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number())
    throw domain_error(field + ": expected [x, y, z]");
  Vec3 v{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  if (!v.finite()) throw domain_error(field + ": non-finite component");
  return v;
}

json box_to_json(const PixelBox& b) { return json::array({b.u_min, b.v_min, b.u_max, b.v_max}); }

PixelBox box_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 4) throw domain_error(field + ": expected [u0, v0, u1, v1]");
  PixelBox b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (!b.valid()) throw domain_error(field + ": min must be below max on both axes");
  return b;
}

json record_to_json(const ContextSampleRecord& r) {
  json j;
  j["id"] = r.id;
  j["intrinsics"] = {{"fx", r.intrinsics.fx}, {"fy", r.intrinsics.fy},
                     {"cx", r.intrinsics.cx}, {"cy", r.intrinsics.cy}};
  if (r.head_box) j["head_box"] = box_to_json(*r.head_box);
  if (r.body_box) j["body_box"] = box_to_json(*r.body_box);
  json pose = json::array();
  for (const Vec3& p : r.pose_keypoints) pose.push_back(vec3_to_json(p));
  j["pose_keypoints"] = std::move(pose);
  if (r.pose_subsampled) j["pose_subsampled"] = true;
  if (r.object_positions) {
    json objs = json::array();
    for (const Vec3& p : *r.object_positions) objs.push_back(vec3_to_json(p));
    j["object_positions"] = std::move(objs);
  }
  if (r.depth_ref) j["depth_ref"] = *r.depth_ref;
  if (r.mask_refs) j["mask_refs"] = *r.mask_refs;
  j["view_dir"] = vec3_to_json(r.view_dir.vec());
  if (r.gaze_gt) j["gaze_gt"] = vec3_to_json(r.gaze_gt->vec());
  if (r.split) j["split"] = *r.split;
  if (r.gazed_index) j["gazed_index"] = *r.gazed_index;
  if (r.camera_rotation)
    j["camera_rotation"] = json::array(
        {(*r.camera_rotation)[0], (*r.camera_rotation)[1], (*r.camera_rotation)[2]});
  return j;
}

ContextSampleRecord record_from_json(const json& j, int format_version) {
  ContextSampleRecord r;
  if (!j.contains("id") || !j["id"].is_string()) throw domain_error("id: missing or not a string");
  r.id = j["id"].get<std::string>();
  if (!j.contains("intrinsics")) throw domain_error("intrinsics: missing");
  const json& K = j["intrinsics"];
  r.intrinsics = {K.at("fx").get<double>(), K.at("fy").get<double>(), K.at("cx").get<double>(),
                  K.at("cy").get<double>()};
  if (!r.intrinsics.valid()) throw domain_error("intrinsics: focal lengths must be positive");
  if (j.contains("head_box")) r.head_box = box_from_json(j["head_box"], "head_box");
  if (j.contains("body_box")) r.body_box = box_from_json(j["body_box"], "body_box");

  if (!j.contains("pose_keypoints")) throw domain_error("pose_keypoints: missing");
  r.pose_subsampled = j.value("pose_subsampled", false);
  const int expected = r.pose_subsampled ? kPoseSubsampleCount : kPoseKeypointCount;
  const json& pose = j["pose_keypoints"];
  if (!pose.is_array() || static_cast<int>(pose.size()) != expected)
    throw domain_error("pose_keypoints: expected " + std::to_string(expected) + " keypoints, got " +
                       std::to_string(pose.size()));
  r.pose_keypoints.reserve(expected);
  for (const json& p : pose) r.pose_keypoints.push_back(vec3_from_json(p, "pose_keypoints"));

  if (j.contains("object_positions")) {
    std::vector<Vec3> objs;
    for (const json& p : j["object_positions"]) objs.push_back(vec3_from_json(p, "object_positions"));
    r.object_positions = std::move(objs);
  }
  if (j.contains("depth_ref")) {
    if (format_version < 2) throw domain_error("depth_ref: not valid in format version 1");
    r.depth_ref = j["depth_ref"].get<std::string>();
  }
  if (j.contains("mask_refs")) r.mask_refs = j["mask_refs"].get<std::vector<int>>();
  if (!r.object_positions && !r.depth_ref)
    throw domain_error("object_positions: missing (and no depth_ref to derive them from)");
  if (r.depth_ref && !r.mask_refs)
    throw domain_error("mask_refs: missing for a record with depth_ref");

  if (!j.contains("view_dir")) throw domain_error("view_dir: missing");
  r.view_dir = UnitVec3::from_unit(vec3_from_json(j["view_dir"], "view_dir"));
  if (j.contains("gaze_gt"))
    r.gaze_gt = UnitVec3::from_unit(vec3_from_json(j["gaze_gt"], "gaze_gt"));
  if (j.contains("split")) {
    r.split = j["split"].get<std::string>();
    if (*r.split != "train" && *r.split != "val")
      throw domain_error("split: expected 'train' or 'val'");
  }
  if (j.contains("gazed_index")) r.gazed_index = j["gazed_index"].get<int>();
  if (j.contains("camera_rotation")) {
    const json& c = j["camera_rotation"];
    if (!c.is_array() || c.size() != 3) throw domain_error("camera_rotation: expected 3 angles");
    r.camera_rotation = {c[0].get<double>(), c[1].get<double>(), c[2].get<double>()};
  }
  return r;
}

std::string file_fnv_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::uint64_t h = 0xCBF29CE484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace

void write_dataset(const std::string& root, Dataset& dataset) {
  fs::create_directories(root);
  const std::string samples_path = (fs::path(root) / dataset.manifest.samples_file).string();
  {
    std::ofstream out(samples_path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("write_dataset: cannot open '" + samples_path + "'");
    for (const ContextSampleRecord& r : dataset.samples) out << record_to_json(r).dump() << '\n';
  }
  dataset.manifest.format_version = kDatasetFormatVersion;
  dataset.manifest.count = static_cast<int>(dataset.samples.size());
  dataset.manifest.samples_hash = file_fnv_hex(samples_path);
  dataset.manifest.split_counts.clear();
  for (const ContextSampleRecord& r : dataset.samples)
    if (r.split) ++dataset.manifest.split_counts[*r.split];

  json m;
  m["format_version"] = dataset.manifest.format_version;
  m["count"] = dataset.manifest.count;
  m["samples_file"] = dataset.manifest.samples_file;
  if (dataset.manifest.depth_dir) m["depth_dir"] = *dataset.manifest.depth_dir;
  m["source_note"] = dataset.manifest.source_note;
  m["generator_spec_hash"] = dataset.manifest.generator_spec_hash;
  m["samples_hash"] = dataset.manifest.samples_hash;
  m["split_counts"] = dataset.manifest.split_counts;
  const std::string manifest_path = (fs::path(root) / "manifest.json").string();
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("write_dataset: cannot open '" + manifest_path + "'");
  out << m.dump(2) << '\n';
}

namespace {

DatasetManifest read_manifest(const std::string& root) {
  const std::string manifest_path = (fs::path(root) / "manifest.json").string();
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw io_error("dataset: cannot open '" + manifest_path + "'");
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw io_error("dataset: malformed manifest: " + std::string(e.what()));
  }
  DatasetManifest manifest;
  manifest.format_version = m.at("format_version").get<int>();
  if (manifest.format_version > kDatasetFormatVersion ||
      manifest.format_version < kOldestReadableFormatVersion)
    throw io_error("dataset: unknown format version " + std::to_string(manifest.format_version));
  manifest.count = m.at("count").get<int>();
  manifest.samples_file = m.value("samples_file", std::string("samples.jsonl"));
  if (m.contains("depth_dir")) manifest.depth_dir = m["depth_dir"].get<std::string>();
  manifest.source_note = m.value("source_note", std::string());
  manifest.generator_spec_hash = m.value("generator_spec_hash", std::string());
  manifest.samples_hash = m.value("samples_hash", std::string());
  if (m.contains("split_counts"))
    manifest.split_counts = m["split_counts"].get<std::map<std::string, int>>();
  return manifest;
}

}  // namespace

Dataset read_dataset(const std::string& root) {
  Dataset dataset;
  dataset.manifest = read_manifest(root);
  const std::string samples_path = (fs::path(root) / dataset.manifest.samples_file).string();
  if (!dataset.manifest.samples_hash.empty() &&
      file_fnv_hex(samples_path) != dataset.manifest.samples_hash)
    throw io_error("dataset: samples file hash does not match the manifest");

  std::ifstream in(samples_path, std::ios::binary);
  if (!in) throw io_error("dataset: cannot open '" + samples_path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      dataset.samples.push_back(
          record_from_json(json::parse(line), dataset.manifest.format_version));
    } catch (const json::exception& e) {
      throw io_error("dataset: line " + std::to_string(line_no) + ": malformed record: " +
                     e.what());
    } catch (const domain_error& e) {
      throw io_error("dataset: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (static_cast<int>(dataset.samples.size()) != dataset.manifest.count)
    throw io_error("dataset: manifest count " + std::to_string(dataset.manifest.count) +
                   " does not match " + std::to_string(dataset.samples.size()) + " records");
  return dataset;
}

ValidationReport validate_dataset(const std::string& root) {
  ValidationReport report;
  DatasetManifest manifest;
  try {
    manifest = read_manifest(root);
  } catch (const io_error& e) {
    report.issues.push_back({0, "manifest", e.what()});
    ++report.violations_by_field["manifest"];
    return report;
  }
  const std::string samples_path = (fs::path(root) / manifest.samples_file).string();
  std::ifstream in(samples_path, std::ios::binary);
  if (!in) {
    report.issues.push_back({0, "samples", "cannot open '" + samples_path + "'"});
    ++report.violations_by_field["samples"];
    return report;
  }
  if (!manifest.samples_hash.empty() && file_fnv_hex(samples_path) != manifest.samples_hash) {
    report.issues.push_back({0, "manifest.samples_hash", "samples file hash mismatch"});
    ++report.violations_by_field["manifest.samples_hash"];
  }

  std::string line;
  int line_no = 0;
  int records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++records;
    try {
      const ContextSampleRecord r = record_from_json(json::parse(line), manifest.format_version);
      if (r.depth_ref) {
        const std::string depth_path = (fs::path(root) / *r.depth_ref).string();
        if (!fs::exists(depth_path)) {
          report.issues.push_back({line_no, "depth_ref", "missing file '" + *r.depth_ref + "'"});
          ++report.violations_by_field["depth_ref"];
        }
      }
    } catch (const json::exception& e) {
      report.issues.push_back({line_no, "record", std::string("malformed JSON: ") + e.what()});
      ++report.violations_by_field["record"];
    } catch (const domain_error& e) {
      const std::string what = e.what();
      const std::string field = what.substr(0, what.find(':'));
      report.issues.push_back({line_no, field, what});
      ++report.violations_by_field[field];
    }
  }
  report.records_checked = records;
  if (records != manifest.count) {
    report.issues.push_back({0, "manifest.count",
                             "manifest says " + std::to_string(manifest.count) + ", found " +
                                 std::to_string(records)});
    ++report.violations_by_field["manifest.count"];
  }
  return report;
}

// ---- depth sidecar ----------------------------------------------------------------

namespace {
constexpr char kDepthMagic[4] = {'G', 'Z', 'D', 'M'};
constexpr std::uint32_t kDepthVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t take_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw io_error(std::string("depth sidecar: truncated reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_depth_sidecar(const std::string& path, const DepthSidecar& sidecar) {
  const std::size_t pixels =
      static_cast<std::size_t>(sidecar.depth.width) * sidecar.depth.height;
  if (sidecar.depth.depth_mm.size() != pixels ||
      (!sidecar.instance_index.empty() && sidecar.instance_index.size() != pixels))
    throw domain_error("depth sidecar: grid sizes do not match the header dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("depth sidecar: cannot open '" + path + "' for writing");
  out.write(kDepthMagic, 4);
  put_u32(out, kDepthVersion);
  put_u32(out, static_cast<std::uint32_t>(sidecar.depth.width));
  put_u32(out, static_cast<std::uint32_t>(sidecar.depth.height));
  put_u32(out, static_cast<std::uint32_t>(sidecar.instance_count));
  put_u32(out, sidecar.instance_index.empty() ? 0u : 1u);
  out.write(reinterpret_cast<const char*>(sidecar.depth.depth_mm.data()),
            static_cast<std::streamsize>(pixels * 2));
  if (!sidecar.instance_index.empty())
    out.write(reinterpret_cast<const char*>(sidecar.instance_index.data()),
              static_cast<std::streamsize>(pixels * 2));
  if (!out) throw io_error("depth sidecar: write failed for '" + path + "'");
}

DepthSidecar read_depth_sidecar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("depth sidecar: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDepthMagic, 4) != 0)
    throw io_error("depth sidecar: bad magic in '" + path + "'");
  const std::uint32_t version = take_u32(in, "version");
  if (version != kDepthVersion)
    throw io_error("depth sidecar: unsupported version " + std::to_string(version));
  DepthSidecar sc;
  sc.depth.width = static_cast<int>(take_u32(in, "width"));
  sc.depth.height = static_cast<int>(take_u32(in, "height"));
  sc.instance_count = static_cast<int>(take_u32(in, "instance count"));
  const bool has_masks = take_u32(in, "mask flag") != 0;
  if (sc.depth.width <= 0 || sc.depth.height <= 0 ||
      static_cast<long long>(sc.depth.width) * sc.depth.height > (1ll << 26))
    throw io_error("depth sidecar: implausible dimensions");
  const std::size_t pixels = static_cast<std::size_t>(sc.depth.width) * sc.depth.height;
  sc.depth.depth_mm.resize(pixels);
  in.read(reinterpret_cast<char*>(sc.depth.depth_mm.data()),
          static_cast<std::streamsize>(pixels * 2));
  if (!in) throw io_error("depth sidecar: truncated depth grid in '" + path + "'");
  if (has_masks) {
    sc.instance_index.resize(pixels);
    in.read(reinterpret_cast<char*>(sc.instance_index.data()),
            static_cast<std::streamsize>(pixels * 2));
    if (!in) throw io_error("depth sidecar: truncated instance grid in '" + path + "'");
  }
  return sc;
}

ObjectMask DepthSidecar::mask_for(int instance) const {
  ObjectMask mask;
  if (instance_index.empty()) return mask;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u)
      if (instance_index[static_cast<std::size_t>(v) * depth.width + u] ==
          static_cast<std::uint16_t>(instance + 1))
        mask.pixels.emplace_back(u, v);
  return mask;
}

// ---- resolution ---------------------------------------------------------------------

ResolvedSample resolve_sample(const ContextSampleRecord& record, const std::string& root) {
  ResolvedSample out;
  out.id = record.id;
  out.context.pose_keypoints = record.pose_keypoints;
  out.context.pose_subsampled = record.pose_subsampled;
  out.context.view_dir = record.view_dir;
  out.gaze_gt = record.gaze_gt;

  if (record.object_positions) {
    out.context.objects = *record.object_positions;
  }
  if (record.depth_ref) {
    const std::string depth_path = (fs::path(root) / *record.depth_ref).string();
    const DepthSidecar sidecar = read_depth_sidecar(depth_path);
    if (!record.object_positions) {
      for (int instance : *record.mask_refs) {
        const ObjectMask mask = sidecar.mask_for(instance);
        if (mask.pixels.empty()) {
          ++out.dropped_objects;
          continue;
        }
        try {
          out.context.objects.push_back(object_position(mask, sidecar.depth, record.intrinsics));
        } catch (const degenerate_error&) {
          ++out.dropped_objects;
        }
      }
    }
    if (record.head_box) {
      const auto head = head_position_from_depth(*record.head_box, sidecar.depth, record.intrinsics);
      if (!head)
        throw degenerate_error("resolve_sample: no valid depth in the head box of '" + record.id +
                               "'");
      out.context.t_object = *head;
    }
  }
  return out;
}

}  // namespace gaze3d
