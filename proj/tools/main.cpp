// logitfuse CLI. Thin orchestration over the library: every subcommand loads
// a bundle, calls one module, and prints a small fixed-precision summary so
// repeated runs can be diffed byte-for-byte.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "logitfuse/blob.hpp"
#include "logitfuse/calibration.hpp"
#include "logitfuse/cascade.hpp"
#include "logitfuse/ensembles.hpp"
#include "logitfuse/learned.hpp"
#include "logitfuse/manifest.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/nlc.hpp"
#include "logitfuse/npy.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/probe.hpp"
#include "logitfuse/report.hpp"
#include "logitfuse/rng.hpp"
#include "logitfuse/synth.hpp"
#include "logitfuse/types.hpp"

using namespace logitfuse;
namespace fs = std::filesystem;

namespace {

std::string fmt6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

void emit(const std::string& text, const std::string& out_path) {
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io_failure, "cannot write " + out_path);
    out << text;
  }
}

double best_single_accuracy(const LogitStack& stack) {
  double best = 0.0;
  for (const auto& logits : stack.logits) best = std::max(best, accuracy(logits, stack.labels));
  return best;
}

void write_report_row(const std::string& path, const std::string& dataset,
                      const std::string& method, const std::string& split, double acc,
                      double best_single, std::optional<double> avg_gflops = std::nullopt) {
  ReportRow row;
  row.dataset = dataset;
  row.method = method;
  row.split = split;
  row.accuracy = acc;
  row.delta_vs_best_single = acc - best_single;
  row.avg_gflops = avg_gflops;
  save_report_row(row, path);
}

LogitStack gather_stack(const LogitStack& stack, const std::vector<std::size_t>& idx) {
  LogitStack out;
  out.names = stack.names;
  for (const auto& logits : stack.logits) out.logits.push_back(gather_rows(logits, idx));
  out.labels = gather_labels(stack.labels, idx);
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

// Calibration source for c-* methods: an explicit temps file wins; otherwise
// fit on val when the bundle has one, else on a seeded stratified holdout of
// train (the seed is then mandatory).
TemperatureVector resolve_temps(const DatasetBundle& bundle, const std::vector<std::string>& names,
                                const std::string& temps_path, bool has_seed, std::uint64_t seed) {
  if (!temps_path.empty()) return align_temperatures(load_temperatures(temps_path), names);
  if (bundle.has_split("val")) {
    TemperatureVector temps = fit_temperatures(load_stack(bundle, "val"));
    temps.split = "val";
    return align_temperatures(temps, names);
  }
  if (!has_seed)
    throw Error(ErrorKind::usage,
                "bundle has no val split: pass --temps or --seed (train holdout calibration)");
  const LogitStack train = load_stack(bundle, "train");
  auto [fit_idx, hold_idx] =
      holdout_split(all_indices(train.labels.size()), train.labels, 0.1, seed);
  (void)fit_idx;
  TemperatureVector temps = fit_temperatures(gather_stack(train, hold_idx));
  temps.split = "train:holdout";
  return align_temperatures(temps, names);
}

std::string overlap_subset_name(const OverlapTable& table, std::size_t mask) {
  if (mask == 0) return "none";
  std::string out;
  for (std::size_t b = 0; b < table.names.size(); ++b) {
    if (!(mask & (std::size_t{1} << b))) continue;
    if (!out.empty()) out += "+";
    out += table.names[b];
  }
  return out;
}

int run_validate(const std::string& manifest_path, bool quiet) {
  const DatasetBundle bundle = load_manifest(manifest_path);
  const ValidationReport report = validate_bundle(bundle);
  if (report.ok()) {
    if (!quiet)
      std::cout << "valid: " << bundle.name << " (" << bundle.backbones.size() << " backbones, "
                << bundle.splits.size() << " splits)\n";
    return 0;
  }
  for (const auto& violation : report.violations) std::cout << violation << "\n";
  return 1;
}

void run_analyze(const std::string& manifest_path, const std::string& split,
                 const std::string& what, const std::string& format, const std::string& out_path) {
  const DatasetBundle bundle = load_manifest(manifest_path);
  const LogitStack stack = load_stack(bundle, split);
  std::vector<CorrectnessMask> masks;
  for (std::size_t b = 0; b < stack.logits.size(); ++b)
    masks.push_back(correctness_mask(stack.names[b], stack.logits[b], stack.labels));
  const bool csv = format == "csv";
  std::ostringstream os;
  nlohmann::json doc;

  if (what == "oracle") {
    const double oracle = oracle_accuracy(masks);
    const double n = static_cast<double>(stack.labels.size());
    for (const auto& mask : masks) {
      const double acc = static_cast<double>(mask.count_true()) / n;
      if (csv)
        os << mask.name << ";" << fmt6(acc) << "\n";
      else
        doc["per_backbone"][mask.name] = acc;
    }
    if (csv)
      os << "oracle;" << fmt6(oracle) << "\n";
    else
      doc["oracle_accuracy"] = oracle;
  } else if (what == "diversity") {
    const double d = diversity(masks);
    if (csv)
      os << "diversity;" << fmt6(d) << "\n";
    else {
      doc["diversity"] = d;
      doc["backbones"] = stack.names;
    }
  } else if (what == "overlap") {
    const OverlapTable table = overlap_table(masks);
    if (csv) {
      for (std::size_t mask = 0; mask < table.counts.size(); ++mask)
        os << overlap_subset_name(table, mask) << ";" << table.counts[mask] << "\n";
    } else {
      doc["backbones"] = table.names;
      for (std::size_t mask = 0; mask < table.counts.size(); ++mask)
        doc["counts"][overlap_subset_name(table, mask)] = table.counts[mask];
      for (std::size_t b = 0; b < table.names.size(); ++b)
        doc["per_backbone"][table.names[b]] = table.per_backbone[b];
      doc["union"] = table.union_count;
      doc["intersection"] = table.intersection_count;
    }
  } else if (what == "improvement") {
    const double best_single = best_single_accuracy(stack);
    std::vector<std::pair<std::string, double>> rows;
    rows.emplace_back("logavg", accuracy(log_avg(stack), stack.labels));
    rows.emplace_back("vote1", accuracy(vote_top1(stack), stack.labels));
    if (stack.num_classes() >= 3) rows.emplace_back("vote3", accuracy(vote_top3(stack), stack.labels));
    rows.emplace_back("conf", accuracy(confidence_select(stack), stack.labels));
    for (const auto& [method, acc] : rows) {
      const double rel = relative_improvement(acc, best_single);
      if (csv)
        os << method << ";" << fmt6(acc) << ";" << fmt6(acc - best_single) << ";" << fmt6(rel)
           << "\n";
      else
        doc["methods"][method] = {{"accuracy", acc},
                                  {"delta", acc - best_single},
                                  {"relative_improvement", rel}};
    }
    if (!csv) doc["best_single"] = best_single;
  } else {
    throw Error(ErrorKind::usage, "unknown --what: " + what);
  }

  emit(csv ? os.str() : doc.dump(2) + "\n", out_path);
}

void run_ensemble(const std::string& manifest_path, const std::string& method,
                  const std::string& split, const std::string& out_path,
                  const std::string& temps_path, bool zscore, bool has_seed, std::uint64_t seed,
                  const std::string& report_path) {
  const DatasetBundle bundle = load_manifest(manifest_path);
  LogitStack stack = load_stack(bundle, split);
  const double best_single = best_single_accuracy(stack);
  if (zscore) stack = zscore_stack(stack);

  LabelVector preds;
  if (method == "logavg") {
    preds = top1(log_avg(stack));
  } else if (method == "vote1") {
    preds = vote_top1(stack);
  } else if (method == "vote3") {
    preds = vote_top3(stack);
  } else if (method == "conf") {
    preds = confidence_select(stack);
  } else if (method == "c-logavg" || method == "c-conf") {
    const TemperatureVector temps =
        resolve_temps(bundle, stack.names, temps_path, has_seed, seed);
    preds = method == "c-logavg" ? top1(calibrated_log_avg(stack, temps))
                                 : calibrated_confidence(stack, temps);
  } else {
    throw Error(ErrorKind::usage, "unknown --method: " + method);
  }

  const double acc = accuracy(preds, stack.labels);
  std::cout << "accuracy=" << fmt6(acc) << "\n";
  save_npy(out_path, preds);
  if (!report_path.empty())
    write_report_row(report_path, bundle.name, method + (zscore ? "+zscore" : ""), split, acc,
                     best_single);
}

void run_calibrate(const std::string& manifest_path, const std::string& split,
                   const std::string& out_path, bool has_seed, std::uint64_t seed) {
  const DatasetBundle bundle = load_manifest(manifest_path);
  TemperatureVector temps;
  if (!split.empty()) {
    temps = fit_temperatures(load_stack(bundle, split));
    temps.split = split;
  } else {
    std::vector<std::string> names;
    for (const auto& bb : bundle.backbones) names.push_back(bb.name);
    temps = resolve_temps(bundle, names, "", has_seed, seed);
  }
  save_temperatures(temps, out_path);
  for (std::size_t b = 0; b < temps.names.size(); ++b)
    std::cout << temps.names[b] << ";t=" << fmt6(temps.temps[b]) << ";nll=" << fmt6(temps.nll[b])
              << "\n";
}

// --shots n restricts the stack (and features) to a per-class n-shot sample.
struct ShotFilter {
  bool active = false;
  std::vector<std::size_t> indices;
};

ShotFilter make_shot_filter(const LabelVector& labels, std::size_t shots, std::uint64_t seed) {
  ShotFilter filter;
  if (shots == 0) return filter;
  filter.active = true;
  filter.indices = sample_shots(labels, shots, seed).indices;
  return filter;
}

void run_train(const std::string& method, const std::string& manifest_path, std::string split,
               const std::string& out_path, std::uint64_t seed, std::size_t shots,
               const std::string& backbone_name, const GacConfig& gac_in, const SlConfig& sl_in,
               const NlcTrainConfig& nlc_in, const ProbeConfig& probe_in) {
  const DatasetBundle bundle = load_manifest(manifest_path);
  if (split.empty()) {
    // gac/sl fit few scalars and prefer val when present; nlc/probe learn
    // real weights and default to train.
    const bool scalar_fit = method == "gac" || method == "sl";
    split = scalar_fit && bundle.has_split("val") ? "val" : "train";
  }

  if (method == "gac" || method == "sl") {
    LogitStack stack = load_stack(bundle, split);
    const ShotFilter filter = make_shot_filter(stack.labels, shots, seed);
    if (filter.active) stack = gather_stack(stack, filter.indices);
    TemperatureVector temps;
    if (method == "gac") {
      GacConfig cfg = gac_in;
      cfg.seed = seed;
      temps = gac_fit(stack, cfg);
    } else {
      SlConfig cfg = sl_in;
      cfg.seed = seed;
      temps = sl_fit(stack, cfg);
    }
    save_fixed_temps(temps, out_path, method);
    std::cout << "loss=" << fmt6(stack_cross_entropy(stack, temps.temps)) << "\n";
    return;
  }

  if (method == "nlc") {
    LogitStack stack = load_stack(bundle, split);
    std::vector<Matrix2D> features = load_feature_stack(bundle, split);
    const ShotFilter filter = make_shot_filter(stack.labels, shots, seed);
    if (filter.active) {
      stack = gather_stack(stack, filter.indices);
      for (auto& block : features) block = gather_rows(block, filter.indices);
    }
    NlcTrainConfig cfg = nlc_in;
    cfg.seed = seed;
    NlcHistory history;
    const NlcModel model = nlc_train(stack, features, cfg, &history);
    nlc_save(model, out_path);
    std::cout << "best_epoch=" << history.best_epoch
              << " holdout_accuracy=" << fmt6(history.holdout_acc[history.best_epoch]) << "\n";
    return;
  }

  if (method == "probe") {
    if (backbone_name.empty())
      throw Error(ErrorKind::usage, "train --method probe requires --backbone");
    const BackboneEntry& entry = bundle.backbone(backbone_name);
    if (!entry.has_features(split))
      throw Error(ErrorKind::missing_features,
                  "backbone " + backbone_name + " has no features for split " + split);
    Matrix2D features = load_matrix(entry.features.at(split));
    LabelVector labels = load_labels(bundle.labels.at(split));
    const ShotFilter filter = make_shot_filter(labels, shots, seed);
    if (filter.active) {
      features = gather_rows(features, filter.indices);
      labels = gather_labels(labels, filter.indices);
    }
    Matrix2D init;
    const bool has_init = !entry.probe_init.empty();
    if (has_init) init = load_matrix(entry.probe_init);
    ProbeConfig cfg = probe_in;
    cfg.seed = seed;
    LinearProbe probe = probe_fit(features, labels, has_init ? &init : nullptr, cfg);
    probe.backbone = backbone_name;
    probe_save(probe, out_path);
    std::cout << "train_accuracy=" << fmt6(accuracy(probe_logits(probe, features), labels))
              << "\n";
    return;
  }

  throw Error(ErrorKind::usage, "unknown --method: " + method);
}

void run_predict(const std::string& model_path, const std::string& manifest_path,
                 const std::string& split, const std::string& out_path,
                 const std::string& report_path) {
  std::ifstream in(model_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + model_path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema_violation, std::string("model file: ") + e.what());
  }
  const std::string type = doc.value("type", "");

  const DatasetBundle bundle = load_manifest(manifest_path);
  const LogitStack stack = load_stack(bundle, split);
  const double best_single = best_single_accuracy(stack);

  LabelVector preds;
  std::string method = type;
  if (type == "fixed-temps") {
    const TemperatureVector temps =
        align_temperatures(load_fixed_temps(model_path), stack.names);
    preds = top1(combine_fixed(stack, temps.temps));
    if (doc.contains("config") && doc["config"].contains("method"))
      method = doc["config"]["method"].get<std::string>();
  } else if (type == "nlc") {
    const NlcModel model = nlc_load(model_path);
    const Matrix2D features = concat_features(load_feature_stack(bundle, split));
    check_model_matches(model, stack.names, features.cols);
    preds = top1(nlc_combine(stack, nlc_forward(model, features)));
  } else if (type == "probe") {
    const LinearProbe probe = probe_load(model_path);
    const BackboneEntry& entry = bundle.backbone(probe.backbone);
    if (!entry.has_features(split))
      throw Error(ErrorKind::missing_features,
                  "backbone " + probe.backbone + " has no features for split " + split);
    preds = top1(probe_logits(probe, load_matrix(entry.features.at(split))));
  } else {
    throw Error(ErrorKind::schema_violation, "model file has unknown type: " + type);
  }

  const double acc = accuracy(preds, stack.labels);
  std::cout << "accuracy=" << fmt6(acc) << "\n";
  save_npy(out_path, preds);
  if (!report_path.empty())
    write_report_row(report_path, bundle.name, method, split, acc, best_single);
}

void run_cascade(const std::string& manifest_path, const std::string& split,
                 const std::vector<double>& thresholds, const std::string& order_spec,
                 const std::string& combiner_name, const std::string& temps_path,
                 const std::string& models_dir, bool has_seed, std::uint64_t seed,
                 const std::string& out_path, const std::string& report_path) {
  const DatasetBundle bundle = load_manifest(manifest_path);

  std::vector<std::size_t> order;
  if (order_spec == "gflops") {
    order = order_backbones(bundle);
  } else {
    std::vector<std::string> names;
    std::stringstream ss(order_spec);
    std::string token;
    while (std::getline(ss, token, ',')) names.push_back(token);
    order = order_backbones(bundle, names);
  }

  const LogitStack stack = reorder_stack(load_stack(bundle, split), order);
  const double best_single = best_single_accuracy(stack);
  std::vector<double> gflops;
  for (std::size_t pos : order) gflops.push_back(bundle.backbones[pos].gflops);

  CascadeConfig cfg;
  std::vector<Matrix2D> features;
  if (combiner_name == "logavg") {
    cfg.combiner = CascadeCombiner::log_avg;
  } else if (combiner_name == "c-logavg") {
    cfg.combiner = CascadeCombiner::calibrated_log_avg;
    cfg.temps = resolve_temps(bundle, stack.names, temps_path, has_seed, seed);
  } else if (combiner_name == "nlc") {
    cfg.combiner = CascadeCombiner::nlc_per_prefix;
    std::vector<Matrix2D> raw = load_feature_stack(bundle, split);
    for (std::size_t pos : order) features.push_back(raw[pos]);
    if (!models_dir.empty()) {
      for (std::size_t k = 1; k <= order.size(); ++k)
        cfg.prefix_models.push_back(
            nlc_load(fs::path(models_dir) / ("prefix_" + std::to_string(k) + ".json")));
    } else {
      // no model directory: train one controller per prefix on the train split
      if (!has_seed)
        throw Error(ErrorKind::usage, "cascade --combiner nlc needs --models or --seed");
      const LogitStack train = reorder_stack(load_stack(bundle, "train"), order);
      std::vector<Matrix2D> train_features;
      {
        std::vector<Matrix2D> raw_train = load_feature_stack(bundle, "train");
        for (std::size_t pos : order) train_features.push_back(raw_train[pos]);
      }
      for (std::size_t k = 1; k <= order.size(); ++k) {
        LogitStack prefix;
        prefix.labels = train.labels;
        std::vector<Matrix2D> prefix_features;
        for (std::size_t b = 0; b < k; ++b) {
          prefix.names.push_back(train.names[b]);
          prefix.logits.push_back(train.logits[b]);
          prefix_features.push_back(train_features[b]);
        }
        NlcTrainConfig tc;
        tc.seed = mix_seed(seed, k);
        cfg.prefix_models.push_back(nlc_train(prefix, prefix_features, tc));
      }
    }
  } else {
    throw Error(ErrorKind::usage, "unknown --combiner: " + combiner_name);
  }

  nlohmann::json sweep = nlohmann::json::array();
  std::cout << "threshold,accuracy,avg_gflops\n";
  CascadeTrace last_trace;
  for (double threshold : thresholds) {
    cfg.threshold = threshold;
    last_trace = cascade_run(stack, gflops, cfg, features);
    const double acc = accuracy(last_trace.predictions, stack.labels);
    const double cost = cascade_cost(last_trace);
    std::cout << fmt6(threshold) << "," << fmt6(acc) << "," << fmt6(cost) << "\n";
    sweep.push_back({{"threshold", threshold}, {"accuracy", acc}, {"avg_gflops", cost}});
    if (!report_path.empty())
      write_report_row(report_path, bundle.name, "cascade-" + combiner_name + "@" + fmt6(threshold),
                       split, acc, best_single, cost);
  }

  if (!out_path.empty()) {
    nlohmann::json doc;
    doc["combiner"] = combiner_name;
    doc["order"] = stack.names;
    doc["sweep"] = sweep;
    if (thresholds.size() == 1) {
      // full per-example trace only makes sense for a single threshold
      doc["threshold"] = thresholds[0];
      doc["prefix_len"] = last_trace.prefix_len;
      doc["confidence"] = last_trace.confidence;
      doc["gflops"] = last_trace.gflops;
      doc["predictions"] = last_trace.predictions;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io_failure, "cannot write " + out_path);
    out << doc.dump(2) << "\n";
  }
}

void run_fewshot_split(const std::string& manifest_path, const std::string& split,
                       std::size_t shots, std::uint64_t seed, const std::string& out_path) {
  const DatasetBundle bundle = load_manifest(manifest_path);
  if (!bundle.has_split(split))
    throw Error(ErrorKind::empty_split, "manifest has no split named " + split);
  const LabelVector labels = load_labels(bundle.labels.at(split));
  const ShotSample sample = sample_shots(labels, shots, seed);
  LabelVector indices;
  for (std::size_t i : sample.indices) indices.push_back(static_cast<std::int64_t>(i));
  save_npy(out_path, indices);
  std::cout << "selected=" << indices.size() << "\n";
}

void run_synth(const SynthConfig& cfg, const std::string& out_dir) {
  const DatasetBundle bundle = synth_generate(cfg, out_dir);
  std::cout << "wrote " << (fs::path(out_dir) / "manifest.json").string() << " ("
            << bundle.backbones.size() << " backbones, " << bundle.splits.size() << " splits)\n";
}

void run_report(const std::string& in_dir, const std::string& format,
                const std::string& out_path) {
  const std::vector<ReportRow> rows = load_report_rows(in_dir);
  std::string text;
  if (format == "csv")
    text = format_csv(rows);
  else if (format == "json")
    text = format_json(rows);
  else if (format == "md")
    text = format_markdown(rows);
  else
    throw Error(ErrorKind::usage, "unknown --format: " + format);
  emit(text, out_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"logitfuse: combine frozen vision backbones from exported logits/features"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (0 = runtime default)");

  int exit_code = 0;

  // validate
  std::string v_manifest;
  bool v_quiet = false;
  auto* validate = app.add_subcommand("validate", "check a bundle's files against its manifest");
  validate->add_option("manifest", v_manifest, "manifest.json path")->required();
  validate->add_flag("--quiet", v_quiet, "suppress the ok line");
  validate->callback([&] {
    set_max_threads(threads);
    exit_code = run_validate(v_manifest, v_quiet);
  });

  // analyze
  std::string a_manifest, a_split = "test", a_what, a_format = "csv", a_out;
  auto* analyze = app.add_subcommand("analyze", "oracle / diversity / overlap / improvement");
  analyze->add_option("--manifest", a_manifest)->required();
  analyze->add_option("--split", a_split);
  analyze->add_option("--what", a_what, "oracle|diversity|overlap|improvement")->required();
  analyze->add_option("--format", a_format, "csv|json")
      ->check(CLI::IsMember({"csv", "json"}));
  analyze->add_option("--out", a_out, "also write the output here");
  analyze->callback([&] {
    set_max_threads(threads);
    run_analyze(a_manifest, a_split, a_what, a_format, a_out);
  });

  // ensemble
  std::string e_manifest, e_method, e_split = "test", e_out = "preds.npy", e_temps, e_report;
  bool e_zscore = false;
  std::uint64_t e_seed = 0;
  auto* ensemble = app.add_subcommand("ensemble", "run a training-free or calibrated combiner");
  ensemble->add_option("--manifest", e_manifest)->required();
  ensemble->add_option("--method", e_method, "logavg|vote1|vote3|conf|c-logavg|c-conf")
      ->required();
  ensemble->add_option("--split", e_split);
  ensemble->add_option("--out", e_out, "predictions npy (default preds.npy)");
  ensemble->add_option("--temps", e_temps, "temperature file for c-* methods");
  ensemble->add_flag("--zscore", e_zscore, "z-score logits per backbone first");
  auto* e_seed_opt = ensemble->add_option("--seed", e_seed, "for train-holdout calibration");
  ensemble->add_option("--report", e_report, "write a report row json here");
  ensemble->callback([&] {
    set_max_threads(threads);
    run_ensemble(e_manifest, e_method, e_split, e_out, e_temps, e_zscore, !e_seed_opt->empty(),
                 e_seed, e_report);
  });

  // calibrate
  std::string c_manifest, c_split, c_out;
  std::uint64_t c_seed = 0;
  auto* calibrate = app.add_subcommand("calibrate", "fit per-backbone temperatures");
  calibrate->add_option("--manifest", c_manifest)->required();
  calibrate->add_option("--split", c_split, "fit split (default: val, else train holdout)");
  calibrate->add_option("--out", c_out, "temperature json")->required();
  auto* c_seed_opt = calibrate->add_option("--seed", c_seed, "for train-holdout calibration");
  calibrate->callback([&] {
    set_max_threads(threads);
    run_calibrate(c_manifest, c_split, c_out, !c_seed_opt->empty(), c_seed);
  });

  // train
  std::string t_method, t_manifest, t_split, t_out, t_backbone;
  std::uint64_t t_seed = 0;
  std::size_t t_shots = 0;
  GacConfig gac_cfg;
  SlConfig sl_cfg;
  NlcTrainConfig nlc_cfg;
  ProbeConfig probe_cfg;
  bool t_coupled = false, t_no_normalize = false;
  auto* train = app.add_subcommand("train", "fit gac / sl / nlc / probe");
  train->add_option("--method", t_method, "gac|sl|nlc|probe")->required();
  train->add_option("--manifest", t_manifest)->required();
  train->add_option("--split", t_split, "default: val for gac/sl when present, else train");
  train->add_option("--out", t_out, "model json")->required();
  train->add_option("--seed", t_seed)->required();
  train->add_option("--shots", t_shots, "per-class n-shot subsample of the fit split");
  train->add_option("--backbone", t_backbone, "probe: which backbone's features");
  train->add_option("--population", gac_cfg.population);
  train->add_option("--generations", gac_cfg.generations);
  train->add_option("--tournament", gac_cfg.tournament_size);
  train->add_option("--sigma", gac_cfg.mutation_sigma);
  train->add_option("--elitism", gac_cfg.elitism);
  train->add_option("--steps", sl_cfg.steps);
  train->add_option("--lr", nlc_cfg.learning_rate, "nlc learning rate");
  train->add_option("--sl-lr", sl_cfg.learning_rate);
  train->add_option("--probe-lr", probe_cfg.learning_rate);
  train->add_option("--weight-decay", nlc_cfg.weight_decay);
  train->add_flag("--coupled-decay", t_coupled, "fold weight decay into the gradient");
  train->add_option("--hidden", nlc_cfg.hidden_dim);
  train->add_option("--epochs", nlc_cfg.epochs, "nlc epochs");
  train->add_option("--probe-epochs", probe_cfg.epochs);
  train->add_option("--batch", nlc_cfg.batch_size);
  train->add_option("--patience", nlc_cfg.patience);
  train->add_option("--holdout", nlc_cfg.holdout_fraction);
  train->add_flag("--no-normalize", t_no_normalize, "skip per-backbone feature L2");
  train->callback([&] {
    set_max_threads(threads);
    nlc_cfg.decoupled_decay = !t_coupled;
    nlc_cfg.normalize_features = !t_no_normalize;
    run_train(t_method, t_manifest, t_split, t_out, t_seed, t_shots, t_backbone, gac_cfg, sl_cfg,
              nlc_cfg, probe_cfg);
  });

  // predict
  std::string p_model, p_manifest, p_split = "test", p_out = "preds.npy", p_report;
  auto* predict = app.add_subcommand("predict", "apply a saved model to a split");
  predict->add_option("--model", p_model)->required();
  predict->add_option("--manifest", p_manifest)->required();
  predict->add_option("--split", p_split);
  predict->add_option("--out", p_out, "predictions npy (default preds.npy)");
  predict->add_option("--report", p_report, "write a report row json here");
  predict->callback([&] {
    set_max_threads(threads);
    run_predict(p_model, p_manifest, p_split, p_out, p_report);
  });

  // cascade
  std::string k_manifest, k_split = "test", k_order = "gflops", k_combiner = "logavg";
  std::string k_temps, k_models, k_out, k_report;
  std::vector<double> k_thresholds;
  std::uint64_t k_seed = 0;
  auto* cascade = app.add_subcommand("cascade", "cost-aware early-exit ensemble");
  cascade->add_option("--manifest", k_manifest)->required();
  cascade->add_option("--split", k_split);
  cascade->add_option("--threshold", k_thresholds, "one or more exit thresholds")
      ->delimiter(',');
  cascade->add_option("--order", k_order, "gflops | comma-separated backbone names");
  cascade->add_option("--combiner", k_combiner, "logavg|c-logavg|nlc");
  cascade->add_option("--temps", k_temps, "temperature file for c-logavg");
  cascade->add_option("--models", k_models, "dir with prefix_<k>.json nlc models");
  auto* k_seed_opt = cascade->add_option("--seed", k_seed, "for in-process fits");
  cascade->add_option("--out", k_out, "trace json");
  cascade->add_option("--report", k_report, "write report row jsons here (one per threshold)");
  cascade->callback([&] {
    set_max_threads(threads);
    if (k_thresholds.empty()) k_thresholds.push_back(0.9);
    if (!k_report.empty() && k_thresholds.size() > 1)
      throw Error(ErrorKind::usage, "--report expects a single --threshold");
    run_cascade(k_manifest, k_split, k_thresholds, k_order, k_combiner, k_temps, k_models,
                !k_seed_opt->empty(), k_seed, k_out, k_report);
  });

  // fewshot-split
  std::string f_manifest, f_split = "train", f_out;
  std::size_t f_shots = 0;
  std::uint64_t f_seed = 0;
  auto* fewshot = app.add_subcommand("fewshot-split", "sample per-class n-shot indices");
  fewshot->add_option("--manifest", f_manifest)->required();
  fewshot->add_option("--split", f_split);
  fewshot->add_option("--shots", f_shots)->required();
  fewshot->add_option("--seed", f_seed)->required();
  fewshot->add_option("--out", f_out, "indices npy")->required();
  fewshot->callback([&] {
    set_max_threads(threads);
    run_fewshot_split(f_manifest, f_split, f_shots, f_seed, f_out);
  });

  // synth
  SynthConfig s_cfg;
  std::string s_out;
  std::vector<double> s_acc;
  auto* synth = app.add_subcommand("synth", "generate a deterministic toy bundle");
  synth->add_option("--classes", s_cfg.classes);
  synth->add_option("--n", s_cfg.n_train, "train examples");
  synth->add_option("--n-test", s_cfg.n_test);
  synth->add_option("--n-val", s_cfg.n_val);
  synth->add_option("--backbones", s_cfg.backbones);
  synth->add_option("--acc", s_acc, "per-backbone accuracy, single value broadcasts")
      ->delimiter(',');
  synth->add_option("--rho", s_cfg.rho, "routing strength in [0,1]");
  synth->add_option("--margin", s_cfg.margin);
  synth->add_option("--cue", s_cfg.cue_strength);
  synth->add_option("--fdim", s_cfg.feature_dim, "feature dim per backbone");
  synth->add_option("--seed", s_cfg.seed)->required();
  synth->add_option("--name", s_cfg.name);
  synth->add_option("--out", s_out, "output directory")->required();
  synth->callback([&] {
    set_max_threads(threads);
    if (s_acc.size() == 1)
      s_cfg.acc.assign(s_cfg.backbones, s_acc[0]);
    else
      s_cfg.acc = s_acc;
    run_synth(s_cfg, s_out);
  });

  // report
  std::string r_in, r_format = "csv", r_out;
  auto* report = app.add_subcommand("report", "aggregate report rows from a run directory");
  report->add_option("--in", r_in, "directory of report row jsons")->required();
  report->add_option("--format", r_format, "csv|json|md")
      ->check(CLI::IsMember({"csv", "json", "md"}));
  report->add_option("--out", r_out, "also write the output here");
  report->callback([&] { run_report(r_in, r_format, r_out); });

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << error_kind_name(e.kind()) << ": " << e.what() << "\n";
    return e.kind() == ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
