#pragma once

// Dataset schemas and (de)serialization: JSON-lines sample records, a JSON
// manifest with integrity hash, binary depth/mask sidecars, and validation.
//
// Layout under a dataset root:
//   manifest.json     format version, counts, hashes, file names
//   samples.jsonl     one self-describing record per line
//   depth/<id>.gzd    optional 16-bit millimeter depth + instance index grid

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gaze3d/context.hpp"
#include "gaze3d/geom.hpp"
#include "gaze3d/model.hpp"

namespace gaze3d {

inline constexpr int kDatasetFormatVersion = 2;
inline constexpr int kOldestReadableFormatVersion = 1;

struct ContextSampleRecord {
  std::string id;
  CameraIntrinsics intrinsics;
  std::optional<PixelBox> head_box;
  std::optional<PixelBox> body_box;
  std::vector<Vec3> pose_keypoints;  // 30, or 15 when pose_subsampled
  bool pose_subsampled = false;
  std::optional<std::vector<Vec3>> object_positions;
  std::optional<std::string> depth_ref;       // path relative to dataset root
  std::optional<std::vector<int>> mask_refs;  // instance ids within the sidecar
  UnitVec3 view_dir;
  std::optional<UnitVec3> gaze_gt;
  std::optional<std::string> split;  // "train" or "val"
  // provenance (format v2)
  std::optional<int> gazed_index;                        // -1: gaze not at an object
  std::optional<std::array<double, 3>> camera_rotation;  // yaw, pitch, roll
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  int count = 0;
  std::string samples_file = "samples.jsonl";
  std::optional<std::string> depth_dir;
  std::string source_note;
  std::string generator_spec_hash;  // hex, empty for external data
  std::string samples_hash;         // fnv1a64 hex over the samples file bytes
  std::map<std::string, int> split_counts;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ContextSampleRecord> samples;
};

// Writes manifest + samples (and nothing else; depth sidecars are written
// separately). Emits the current format version only.
void write_dataset(const std::string& root, Dataset& dataset);

// Reads and verifies a dataset. Rejects unknown format versions, manifest
// count mismatches, hash mismatches, and malformed records (with their line
// number).
Dataset read_dataset(const std::string& root);

struct ValidationIssue {
  int line = 0;  // 0: dataset-level issue
  std::string field;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  std::map<std::string, int> violations_by_field;
  int records_checked = 0;

  bool clean() const { return issues.empty(); }
};

// Validation that keeps going past bad records; io_error only when the
// dataset cannot be opened at all.
ValidationReport validate_dataset(const std::string& root);

// ---- depth sidecar -------------------------------------------------------------

struct DepthSidecar {
  DepthMap depth;
  std::vector<std::uint16_t> instance_index;  // 0 = none, i+1 = instance i
  int instance_count = 0;

  ObjectMask mask_for(int instance) const;
};

void write_depth_sidecar(const std::string& path, const DepthSidecar& sidecar);
DepthSidecar read_depth_sidecar(const std::string& path);

// ---- record resolution ------------------------------------------------------------

// Model-ready context: object positions resolved (directly or via the depth
// sidecar median path), head position for object normalization resolved from
// depth when available.
struct ResolvedSample {
  SampleContext context;
  std::optional<UnitVec3> gaze_gt;
  std::string id;
  int dropped_objects = 0;  // masks with no valid depth
};

ResolvedSample resolve_sample(const ContextSampleRecord& record, const std::string& root);

}  // namespace gaze3d
