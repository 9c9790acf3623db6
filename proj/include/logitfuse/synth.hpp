#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "logitfuse/manifest.hpp"

namespace logitfuse {

// Controllable toy bundle: per-backbone marginal accuracy p_b, and a routing
// knob rho that moves correctness from i.i.d. (rho=0) to "one designated
// reliable backbone per example" (rho=1). Feature blocks carry a noisy cue
// revealing the reliable backbone, which is what makes the controller
// learnable by construction.
struct SynthConfig {
  std::size_t classes = 10;
  std::size_t n_train = 5000;
  std::size_t n_test = 2000;
  std::size_t n_val = 0;  // 0 = no val split
  std::size_t backbones = 3;
  std::vector<double> acc;  // per-backbone target accuracy, each in (0,1)
  double rho = 0.0;         // routing strength in [0,1]
  double margin = 4.0;      // logit gap of the argmax over the runner-up
  double cue_strength = 2.0;
  std::size_t feature_dim = 5;  // per backbone; >= backbones when cue_strength > 0
  std::uint64_t seed = 0;
  std::string name = "synth";
};

// Writes labels/logits/features npy files plus manifest.json into out_dir and
// returns the loaded bundle. Byte-identical output for identical configs.
DatasetBundle synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace logitfuse
