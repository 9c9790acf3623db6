#include "logitfuse/synth.hpp"

#include <cmath>

#include "logitfuse/npy.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/rng.hpp"

namespace logitfuse {

namespace {

void check_config(const SynthConfig& cfg) {
  if (cfg.classes < 2)
    throw Error(ErrorKind::too_few_classes, "synth needs at least 2 classes");
  if (cfg.backbones < 1) throw Error(ErrorKind::empty_list, "synth needs at least 1 backbone");
  if (cfg.acc.size() != cfg.backbones)
    throw Error(ErrorKind::length_mismatch,
                std::to_string(cfg.acc.size()) + " accuracies for " +
                    std::to_string(cfg.backbones) + " backbones");
  for (const double p : cfg.acc)
    if (!(p > 0.0 && p < 1.0))
      throw Error(ErrorKind::infeasible_rates,
                  "target accuracy " + std::to_string(p) +
                      " outside the feasible interval (0, 1); marginals at the boundary leave no "
                      "room for routing");
  if (cfg.rho < 0.0 || cfg.rho > 1.0)
    throw Error(ErrorKind::schema_violation, "rho must lie in [0, 1]");
  if (cfg.margin <= 0.0) throw Error(ErrorKind::schema_violation, "margin must be positive");
  if (cfg.cue_strength < 0.0)
    throw Error(ErrorKind::schema_violation, "cue_strength must be >= 0");
  if (cfg.feature_dim < 1)
    throw Error(ErrorKind::schema_violation, "feature_dim must be >= 1");
  if (cfg.cue_strength > 0.0 && cfg.feature_dim < cfg.backbones)
    throw Error(ErrorKind::schema_violation,
                "feature_dim must be >= backbones so the reliable-backbone cue fits");
  if (cfg.n_train < 1 || cfg.n_test < 1)
    throw Error(ErrorKind::empty_split, "train and test splits must be non-empty");
}

struct SplitData {
  LabelVector labels;
  std::vector<Matrix2D> logits;    // per backbone
  std::vector<Matrix2D> features;  // per backbone
};

SplitData generate_split(const SynthConfig& cfg, std::uint64_t split_tag, std::size_t n) {
  const std::size_t b = cfg.backbones;
  const std::size_t c = cfg.classes;
  const std::size_t f = cfg.feature_dim;

  // Routed correctness rates. The designated backbone runs at
  // r_hi = min(1, B p) and the others at r_lo = (B p - r_hi)/(B - 1), which
  // preserves every marginal accuracy exactly while maximizing the contrast
  // between "my example" and "someone else's example" — the separation the
  // routing knob is supposed to create. Any p in (0,1) is feasible.
  std::vector<double> r_hi(b), r_lo(b);
  for (std::size_t k = 0; k < b; ++k) {
    const double p = cfg.acc[k];
    if (b == 1) {
      r_hi[k] = r_lo[k] = p;
    } else {
      r_hi[k] = std::min(1.0, static_cast<double>(b) * p);
      r_lo[k] = (static_cast<double>(b) * p - r_hi[k]) / static_cast<double>(b - 1);
    }
  }

  SplitData data;
  data.labels.resize(n);
  data.logits.assign(b, Matrix2D(n, c));
  data.features.assign(b, Matrix2D(n, f));

  const std::uint64_t split_seed = mix_seed(cfg.seed, split_tag);
  // one substream per example: output is identical no matter the thread count
  parallel_for(n, [&](std::size_t i) {
    Rng rng(mix_seed(split_seed, static_cast<std::uint64_t>(i)));
    const std::size_t y = rng.index(c);
    data.labels[i] = static_cast<std::int64_t>(y);
    const std::size_t reliable = rng.index(b);
    const bool routed = rng.uniform() < cfg.rho;

    for (std::size_t k = 0; k < b; ++k) {
      const double rate = routed ? (k == reliable ? r_hi[k] : r_lo[k]) : cfg.acc[k];
      const bool correct = rng.uniform() < rate;

      double* z = data.logits[k].row(i);
      for (std::size_t cls = 0; cls < c; ++cls) z[cls] = rng.uniform();
      std::size_t target = y;
      if (!correct) {  // uniformly random wrong argmax, as confident as a right one
        target = rng.index(c - 1);
        if (target >= y) ++target;
      }
      std::size_t runner = rng.index(c - 1);
      if (runner >= target) ++runner;
      z[runner] += 1.0;
      z[target] = z[runner] + cfg.margin;

      double* x = data.features[k].row(i);
      for (std::size_t d = 0; d < f; ++d) x[d] = rng.normal();
      if (cfg.cue_strength > 0.0) x[reliable] += cfg.cue_strength;
    }
  });
  return data;
}

}  // namespace

DatasetBundle synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  check_config(cfg);
  std::filesystem::create_directories(out_dir);

  struct SplitSpec {
    const char* name;
    std::uint64_t tag;
    std::size_t n;
  };
  std::vector<SplitSpec> splits = {{"train", 0, cfg.n_train}, {"test", 2, cfg.n_test}};
  if (cfg.n_val > 0) splits.insert(splits.begin() + 1, {"val", 1, cfg.n_val});

  DatasetBundle bundle;
  bundle.name = cfg.name;
  bundle.num_classes = cfg.classes;
  bundle.backbones.resize(cfg.backbones);
  for (std::size_t k = 0; k < cfg.backbones; ++k) {
    bundle.backbones[k].name = "bb" + std::to_string(k);
    bundle.backbones[k].gflops = 10.0 * static_cast<double>(k + 1);
    bundle.backbones[k].feature_dim = cfg.feature_dim;
  }

  for (const auto& split : splits) {
    bundle.splits.push_back(split.name);
    const SplitData data = generate_split(cfg, split.tag, split.n);
    const std::filesystem::path labels_path =
        out_dir / ("labels_" + std::string(split.name) + ".npy");
    save_npy(labels_path, data.labels);
    bundle.labels[split.name] = labels_path;
    for (std::size_t k = 0; k < cfg.backbones; ++k) {
      auto& backbone = bundle.backbones[k];
      const std::string stem = backbone.name + "_" + split.name;
      const std::filesystem::path logits_path = out_dir / (stem + "_logits.npy");
      const std::filesystem::path features_path = out_dir / (stem + "_features.npy");
      save_npy(logits_path, data.logits[k]);
      save_npy(features_path, data.features[k]);
      backbone.logits[split.name] = logits_path;
      backbone.features[split.name] = features_path;
    }
  }

  save_manifest(bundle, out_dir / "manifest.json");
  return load_manifest(out_dir / "manifest.json");
}

}  // namespace logitfuse
