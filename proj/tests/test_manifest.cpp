#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "logitfuse/manifest.hpp"
#include "logitfuse/npy.hpp"

using namespace logitfuse;
using testutil::TmpDir;

#ifndef LGF_FIXTURES_DIR
#define LGF_FIXTURES_DIR "tests/fixtures"
#endif

namespace {

namespace fs = std::filesystem;

// Writes a well-formed two-backbone bundle and returns the manifest path.
fs::path write_bundle(const fs::path& dir, std::size_t n = 6, std::size_t classes = 3,
                      bool with_features = true) {
  Rng rng(99);
  LabelVector labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::int64_t>(rng.index(classes)));
  save_npy(dir / "labels.npy", labels);

  nlohmann::json doc;
  doc["name"] = "tiny";
  doc["num_classes"] = classes;
  doc["splits"] = {"train", "test"};
  doc["labels"] = {{"train", "labels.npy"}, {"test", "labels.npy"}};
  doc["backbones"] = nlohmann::json::array();
  for (int b = 0; b < 2; ++b) {
    const std::string name = b == 0 ? "alpha" : "beta";
    save_npy(dir / (name + "_logits.npy"), testutil::random_matrix(n, classes, rng));
    nlohmann::json entry = {{"name", name},
                            {"gflops", 10.0 * (b + 1)},
                            {"feature_dim", with_features ? 4 : 0},
                            {"logits",
                             {{"train", name + "_logits.npy"}, {"test", name + "_logits.npy"}}}};
    if (with_features) {
      save_npy(dir / (name + "_feat.npy"), testutil::random_matrix(n, 4, rng));
      entry["features"] = {{"train", name + "_feat.npy"}, {"test", name + "_feat.npy"}};
    }
    doc["backbones"].push_back(entry);
  }
  const fs::path manifest = dir / "manifest.json";
  std::ofstream(manifest) << doc.dump(2);
  return manifest;
}

nlohmann::json read_json(const fs::path& path) {
  nlohmann::json doc;
  std::ifstream(path) >> doc;
  return doc;
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream(path) << doc.dump(2);
}

}  // namespace

TEST_SUITE("manifest") {

TEST_CASE("happy path: order, lazy load, relative paths") {
  TmpDir dir("manifest");
  const fs::path manifest = write_bundle(dir.path());
  const DatasetBundle bundle = load_manifest(manifest);
  CHECK(bundle.name == "tiny");
  CHECK(bundle.num_classes == 3);
  REQUIRE(bundle.backbones.size() == 2);
  CHECK(bundle.backbones[0].name == "alpha");  // manifest order preserved
  CHECK(bundle.backbones[1].name == "beta");
  CHECK(bundle.backbone_index("beta") == 1);
  CHECK(bundle.has_split("train"));
  CHECK(!bundle.has_split("val"));
  // paths resolved against the manifest's own directory
  CHECK(bundle.labels.at("test").is_absolute());
  CHECK(validate_bundle(bundle).ok());
}

TEST_CASE("schema violations") {
  TmpDir dir("manifest");
  const fs::path manifest = write_bundle(dir.path());

  nlohmann::json doc = read_json(manifest);
  doc.erase("num_classes");
  write_json(dir / "bad1.json", doc);
  try {
    load_manifest(dir / "bad1.json");
    FAIL("expected SchemaViolation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema_violation);
  }

  doc = read_json(manifest);
  doc["backbones"][1]["name"] = "alpha";  // now listed twice
  write_json(dir / "bad2.json", doc);
  try {
    load_manifest(dir / "bad2.json");
    FAIL("expected DuplicateBackboneName");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::duplicate_backbone_name);
  }

  doc = read_json(manifest);
  doc["splits"] = nlohmann::json::array();
  write_json(dir / "bad3.json", doc);
  CHECK_THROWS_AS(load_manifest(dir / "bad3.json"), Error);

  std::ofstream(dir / "bad4.json") << "{ not json";
  CHECK_THROWS_AS(load_manifest(dir / "bad4.json"), Error);

  // a split listed without a labels entry
  doc = read_json(manifest);
  doc["splits"].push_back("val");
  write_json(dir / "bad5.json", doc);
  CHECK_THROWS_AS(load_manifest(dir / "bad5.json"), Error);
}

TEST_CASE("unknown backbone lookups") {
  TmpDir dir("manifest");
  const DatasetBundle bundle = load_manifest(write_bundle(dir.path()));
  try {
    bundle.backbone("gamma");
    FAIL("expected UnknownBackboneName");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unknown_backbone_name);
  }
}

TEST_CASE("save then load round trips") {
  TmpDir dir("manifest");
  const DatasetBundle bundle = load_manifest(write_bundle(dir.path()));
  save_manifest(bundle, dir / "copy.json");
  const DatasetBundle back = load_manifest(dir / "copy.json");
  CHECK(back.name == bundle.name);
  CHECK(back.num_classes == bundle.num_classes);
  CHECK(back.splits == bundle.splits);
  REQUIRE(back.backbones.size() == bundle.backbones.size());
  for (std::size_t b = 0; b < back.backbones.size(); ++b) {
    CHECK(back.backbones[b].name == bundle.backbones[b].name);
    CHECK(back.backbones[b].gflops == bundle.backbones[b].gflops);
    CHECK(back.backbones[b].logits.at("test") == bundle.backbones[b].logits.at("test"));
  }
}

TEST_CASE("validate_bundle is pure") {
  TmpDir dir("manifest");
  const DatasetBundle bundle = load_manifest(write_bundle(dir.path()));
  const ValidationReport a = validate_bundle(bundle);
  const ValidationReport b = validate_bundle(bundle);
  CHECK(a.violations == b.violations);
}

TEST_CASE("each committed corrupt fixture is caught with the right violation") {
  const fs::path corrupt = fs::path(LGF_FIXTURES_DIR) / "corrupt";
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"missing_labels", "labels"},
      {"row_mismatch", "row count mismatch"},
      {"label_range", "label out of range"},
      {"logits_width", "width 4, expected 3"},
      {"feature_width", "width 2, expected 5"},
      {"truncated", "truncated payload"},
  };
  for (const auto& [name, needle] : cases) {
    CAPTURE(name);
    const ValidationReport report = validate_bundle(load_manifest(corrupt / name / "manifest.json"));
    REQUIRE(!report.ok());
    bool found = false;
    for (const auto& violation : report.violations)
      if (violation.find(needle) != std::string::npos) found = true;
    CHECK(found);
  }
}

TEST_CASE("load_stack shape guards") {
  TmpDir dir("manifest");
  const fs::path manifest = write_bundle(dir.path());
  DatasetBundle bundle = load_manifest(manifest);

  const LogitStack stack = load_stack(bundle, "test");
  CHECK(stack.num_backbones() == 2);
  CHECK(stack.num_examples() == 6);
  CHECK(stack.num_classes() == 3);
  CHECK(stack.names == std::vector<std::string>{"alpha", "beta"});

  CHECK_THROWS_AS(load_stack(bundle, "val"), Error);

  // mismatched row count surfaces as LengthMismatch on load
  Rng rng(1);
  save_npy(dir / "alpha_logits.npy", testutil::random_matrix(5, 3, rng));
  try {
    load_stack(bundle, "test");
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::length_mismatch);
  }
}

TEST_CASE("feature stack requires features everywhere") {
  TmpDir dir("manifest");
  const DatasetBundle with = load_manifest(write_bundle(dir.path(), 6, 3, true));
  const auto features = load_feature_stack(with, "test");
  REQUIRE(features.size() == 2);
  CHECK(features[0].cols == 4);

  TmpDir dir2("manifest");
  const DatasetBundle without = load_manifest(write_bundle(dir2.path(), 6, 3, false));
  try {
    load_feature_stack(without, "test");
    FAIL("expected MissingFeatures");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::missing_features);
  }
}

}  // TEST_SUITE
