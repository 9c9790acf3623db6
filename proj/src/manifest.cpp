#include "logitfuse/manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "logitfuse/npy.hpp"

namespace logitfuse {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& what) {
  throw Error(ErrorKind::schema_violation, "manifest: " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(context + " missing key \"" + key + "\"");
  return *it;
}

std::map<std::string, std::filesystem::path> path_map(const json& obj,
                                                      const std::filesystem::path& base,
                                                      const std::string& context) {
  if (!obj.is_object()) schema_error(context + " must be an object of split -> path");
  std::map<std::string, std::filesystem::path> out;
  for (const auto& [split, value] : obj.items()) {
    if (!value.is_string()) schema_error(context + "." + split + " must be a string path");
    out[split] = base / value.get<std::string>();
  }
  return out;
}

std::filesystem::path relative_to(const std::filesystem::path& path,
                                  const std::filesystem::path& base) {
  const std::filesystem::path rel = path.lexically_relative(base);
  return rel.empty() ? path : rel;
}

}  // namespace

bool DatasetBundle::has_split(const std::string& split) const {
  for (const auto& s : splits)
    if (s == split) return true;
  return false;
}

const BackboneEntry& DatasetBundle::backbone(const std::string& name) const {
  return backbones[backbone_index(name)];
}

std::size_t DatasetBundle::backbone_index(const std::string& name) const {
  for (std::size_t i = 0; i < backbones.size(); ++i)
    if (backbones[i].name == name) return i;
  throw Error(ErrorKind::unknown_backbone_name, "no backbone named \"" + name + "\"");
}

DatasetBundle load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    schema_error(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) schema_error("top level must be an object");

  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
  DatasetBundle bundle;

  const json& name = require(doc, "name", "manifest");
  if (!name.is_string()) schema_error("\"name\" must be a string");
  bundle.name = name.get<std::string>();

  const json& classes = require(doc, "num_classes", "manifest");
  if (!classes.is_number_unsigned() || classes.get<std::uint64_t>() == 0)
    schema_error("\"num_classes\" must be a positive integer");
  bundle.num_classes = classes.get<std::size_t>();

  const json& splits = require(doc, "splits", "manifest");
  if (!splits.is_array() || splits.empty()) schema_error("\"splits\" must be a non-empty array");
  for (const auto& s : splits) {
    if (!s.is_string()) schema_error("\"splits\" entries must be strings");
    bundle.splits.push_back(s.get<std::string>());
  }

  bundle.labels = path_map(require(doc, "labels", "manifest"), base, "labels");

  const json& backbones = require(doc, "backbones", "manifest");
  if (!backbones.is_array() || backbones.empty())
    schema_error("\"backbones\" must be a non-empty array");
  std::set<std::string> seen;
  for (const auto& entry : backbones) {
    if (!entry.is_object()) schema_error("backbone entries must be objects");
    BackboneEntry backbone;
    const json& bname = require(entry, "name", "backbone");
    if (!bname.is_string()) schema_error("backbone \"name\" must be a string");
    backbone.name = bname.get<std::string>();
    if (!seen.insert(backbone.name).second)
      throw Error(ErrorKind::duplicate_backbone_name,
                  "manifest lists backbone \"" + backbone.name + "\" more than once");

    const json& gflops = require(entry, "gflops", "backbone " + backbone.name);
    if (!gflops.is_number() || gflops.get<double>() < 0)
      schema_error("backbone " + backbone.name + ": \"gflops\" must be a number >= 0");
    backbone.gflops = gflops.get<double>();

    const json& fdim = require(entry, "feature_dim", "backbone " + backbone.name);
    if (!fdim.is_number_unsigned())
      schema_error("backbone " + backbone.name + ": \"feature_dim\" must be a non-negative integer");
    backbone.feature_dim = fdim.get<std::size_t>();

    backbone.logits = path_map(require(entry, "logits", "backbone " + backbone.name), base,
                               "backbone " + backbone.name + ".logits");
    if (entry.contains("features"))
      backbone.features =
          path_map(entry["features"], base, "backbone " + backbone.name + ".features");
    if (entry.contains("probe_init")) {
      if (!entry["probe_init"].is_string())
        schema_error("backbone " + backbone.name + ": \"probe_init\" must be a string path");
      backbone.probe_init = base / entry["probe_init"].get<std::string>();
    }
    bundle.backbones.push_back(std::move(backbone));
  }

  for (const auto& split : bundle.splits) {
    if (!bundle.labels.count(split)) schema_error("no labels path for split \"" + split + "\"");
    for (const auto& backbone : bundle.backbones)
      if (!backbone.logits.count(split))
        schema_error("backbone " + backbone.name + " has no logits for split \"" + split + "\"");
  }
  return bundle;
}

void save_manifest(const DatasetBundle& bundle, const std::filesystem::path& path) {
  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
  json doc;
  doc["name"] = bundle.name;
  doc["num_classes"] = bundle.num_classes;
  doc["splits"] = bundle.splits;
  json labels = json::object();
  for (const auto& [split, file] : bundle.labels)
    labels[split] = relative_to(file, base).generic_string();
  doc["labels"] = labels;
  json backbones = json::array();
  for (const auto& backbone : bundle.backbones) {
    json entry;
    entry["name"] = backbone.name;
    entry["gflops"] = backbone.gflops;
    entry["feature_dim"] = backbone.feature_dim;
    json logits = json::object();
    for (const auto& [split, file] : backbone.logits)
      logits[split] = relative_to(file, base).generic_string();
    entry["logits"] = logits;
    if (!backbone.features.empty()) {
      json features = json::object();
      for (const auto& [split, file] : backbone.features)
        features[split] = relative_to(file, base).generic_string();
      entry["features"] = features;
    }
    if (!backbone.probe_init.empty())
      entry["probe_init"] = relative_to(backbone.probe_init, base).generic_string();
    backbones.push_back(entry);
  }
  doc["backbones"] = backbones;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::io_failure, "short write to " + path.string());
}

ValidationReport validate_bundle(const DatasetBundle& bundle) {
  ValidationReport report;
  auto flag = [&report](const std::string& what) { report.violations.push_back(what); };

  for (const auto& split : bundle.splits) {
    auto labels_it = bundle.labels.find(split);
    if (labels_it == bundle.labels.end()) {
      flag("split " + split + ": no labels path");
      continue;
    }
    LabelVector labels;
    bool have_labels = false;
    try {
      labels = load_labels(labels_it->second);
      have_labels = true;
    } catch (const Error& e) {
      flag("split " + split + " labels: " + e.what());
    }
    if (have_labels) {
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= static_cast<std::int64_t>(bundle.num_classes)) {
          flag("split " + split + ": label out of range at index " + std::to_string(i) + " (" +
               std::to_string(labels[i]) + " with num_classes " +
               std::to_string(bundle.num_classes) + ")");
          break;  // one entry per file is enough signal
        }
      }
    }

    // expected payload size guards against truncated files without a full read
    auto check_matrix = [&](const std::filesystem::path& file, const std::string& what,
                            std::size_t want_cols) {
      NpyHeader header;
      try {
        header = peek_npy_header(file);
      } catch (const Error& e) {
        flag(what + ": " + e.what());
        return;
      }
      if (header.ndim != 2) {
        flag(what + ": expected a 2-D array, got " + std::to_string(header.ndim) + "-D");
        return;
      }
      if (header.dtype != NpyDtype::f32) {
        flag(what + ": expected float32 payload");
        return;
      }
      if (have_labels && header.rows != labels.size())
        flag(what + ": row count mismatch (" + std::to_string(header.rows) + " rows vs " +
             std::to_string(labels.size()) + " labels)");
      if (header.cols != want_cols)
        flag(what + ": width " + std::to_string(header.cols) + ", expected " +
             std::to_string(want_cols));
      std::error_code ec;
      const auto size = std::filesystem::file_size(file, ec);
      if (!ec) {
        const std::size_t expected = header.data_offset + header.rows * header.cols * 4;
        if (size < expected)
          flag(what + ": file too small for declared shape (truncated payload?)");
      }
    };

    for (const auto& backbone : bundle.backbones) {
      auto logits_it = backbone.logits.find(split);
      if (logits_it == backbone.logits.end()) {
        flag("backbone " + backbone.name + ": no logits for split " + split);
        continue;
      }
      check_matrix(logits_it->second, "backbone " + backbone.name + " logits[" + split + "]",
                   bundle.num_classes);
      if (backbone.has_features(split))
        check_matrix(backbone.features.at(split),
                     "backbone " + backbone.name + " features[" + split + "]",
                     backbone.feature_dim);
    }
  }
  return report;
}

LogitStack load_stack(const DatasetBundle& bundle, const std::string& split) {
  if (!bundle.has_split(split))
    throw Error(ErrorKind::empty_split, "bundle has no split \"" + split + "\"");
  LogitStack stack;
  stack.labels = load_labels(bundle.labels.at(split));
  for (const auto& backbone : bundle.backbones) {
    Matrix2D logits = load_matrix(backbone.logits.at(split));
    if (logits.rows != stack.labels.size())
      throw Error(ErrorKind::length_mismatch,
                  "backbone " + backbone.name + " logits[" + split + "]: " +
                      std::to_string(logits.rows) + " rows vs " +
                      std::to_string(stack.labels.size()) + " labels");
    if (logits.cols != bundle.num_classes)
      throw Error(ErrorKind::shape_mismatch,
                  "backbone " + backbone.name + " logits[" + split + "]: width " +
                      std::to_string(logits.cols) + ", expected " +
                      std::to_string(bundle.num_classes));
    stack.names.push_back(backbone.name);
    stack.logits.push_back(std::move(logits));
  }
  return stack;
}

std::vector<Matrix2D> load_feature_stack(const DatasetBundle& bundle, const std::string& split) {
  std::vector<Matrix2D> features;
  for (const auto& backbone : bundle.backbones) {
    if (!backbone.has_features(split))
      throw Error(ErrorKind::missing_features,
                  "backbone " + backbone.name + " has no features for split \"" + split + "\"");
    Matrix2D block = load_matrix(backbone.features.at(split));
    if (block.cols != backbone.feature_dim)
      throw Error(ErrorKind::shape_mismatch,
                  "backbone " + backbone.name + " features[" + split + "]: width " +
                      std::to_string(block.cols) + ", expected feature_dim " +
                      std::to_string(backbone.feature_dim));
    features.push_back(std::move(block));
  }
  return features;
}

}  // namespace logitfuse
