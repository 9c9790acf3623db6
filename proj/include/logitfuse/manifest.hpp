#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

struct BackboneEntry {
  std::string name;
  double gflops = 0.0;
  std::size_t feature_dim = 0;
  std::map<std::string, std::filesystem::path> logits;    // split -> npy path
  std::map<std::string, std::filesystem::path> features;  // optional per split
  std::filesystem::path probe_init;                       // optional C x feature_dim npy

  bool has_features(const std::string& split) const { return features.count(split) != 0; }
};

struct DatasetBundle {
  std::string name;
  std::size_t num_classes = 0;
  std::vector<std::string> splits;
  std::map<std::string, std::filesystem::path> labels;  // split -> npy path
  std::vector<BackboneEntry> backbones;

  bool has_split(const std::string& split) const;
  const BackboneEntry& backbone(const std::string& name) const;  // UnknownBackboneName
  std::size_t backbone_index(const std::string& name) const;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Lazy: resolves paths relative to the manifest directory, touches no npy
// files. Schema problems throw; data problems are validate_bundle's job.
DatasetBundle load_manifest(const std::filesystem::path& path);

// Writes the bundle back out with paths relative to the manifest directory.
void save_manifest(const DatasetBundle& bundle, const std::filesystem::path& path);

// Header-peeks every matrix, fully reads labels (cheap), and reports every
// violation instead of stopping at the first.
ValidationReport validate_bundle(const DatasetBundle& bundle);

// Loads labels plus every backbone's logits for one split, in manifest order.
LogitStack load_stack(const DatasetBundle& bundle, const std::string& split);

// Per-backbone feature matrices, manifest order. MissingFeatures if any
// backbone lacks a features entry for the split.
std::vector<Matrix2D> load_feature_stack(const DatasetBundle& bundle, const std::string& split);

}  // namespace logitfuse
