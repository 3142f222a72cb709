/* Copyright (c) 2026 The pgcc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// pgcc: synth | pretrain | eval-unsup | reconstruct | gradcheck | report
//
// Exit codes: 0 success, 1 numeric failure, 2 user or input error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pgcc/pgcc.hpp"

namespace fs = std::filesystem;
using namespace pgcc;

namespace {

constexpr int kOk = 0;
constexpr int kNumeric = 1;
constexpr int kInput = 2;

fs::path sibling_with_extension(const fs::path& p, const std::string& ext) {
  fs::path out = p;
  if (out.extension() == ext) out += ext;
  else out.replace_extension(ext);
  return out;
}

void print_resolved(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "# pgcc " << cmd << "\n";
  for (const auto& [k, v] : kv) std::cout << "# " << k << " = " << v << "\n";
}

int run_synth(const std::string& spec_path, const fs::path& out, int scenes, std::uint64_t seed) {
  const SceneSpec spec = spec_path.empty() ? default_scene_spec() : load_scene_spec(spec_path);
  print_resolved("synth", {{"spec", spec_path.empty() ? "<default>" : spec_path},
                           {"out", out.string()},
                           {"scenes", std::to_string(scenes)},
                           {"seed", std::to_string(seed)}});
  std::cout << "# resolved spec " << to_json(spec).dump() << "\n";
  if (scenes < 0) throw InputError("--scenes must be nonnegative");
  fs::create_directories(out);
  if (scenes == 0) {
    std::cerr << "warning: --scenes 0, nothing generated\n";
    return kOk;
  }
  for (int i = 0; i < scenes; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d.pgcc", i);
    LabeledPointCloud c = generate_scene(spec, mix_seed(seed, static_cast<std::uint64_t>(i)));
    c.scene_id = fs::path(name).stem().string();
    save_cloud(c, out / name);
  }
  std::cout << "wrote " << scenes << " scenes to " << out.string() << "\n";
  return kOk;
}

int run_pretrain(const std::string& config_path, const fs::path& data, const fs::path& out,
                 const std::string& log_path, long long seed_override, int epochs_override) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (epochs_override >= 0) cfg.epochs = epochs_override;
  validate(cfg);
  const fs::path log = log_path.empty() ? sibling_with_extension(out, ".csv") : fs::path(log_path);
  std::cout << "# pgcc pretrain\n# data = " << data.string() << "\n# out = " << out.string()
            << "\n# log = " << log.string() << "\n";
  std::istringstream resolved(to_config_text(cfg));
  for (std::string line; std::getline(resolved, line);) std::cout << "# " << line << "\n";

  if (!fs::is_directory(data)) throw InputError("data directory not found: " + data.string());
  const auto scenes = load_dataset(data);
  std::cout << "# loaded " << scenes.size() << " scenes\n";
  TrainState state = pretrain(cfg, scenes, [](const TrainRecord& r) {
    std::printf("step %lld lr %.3e total %.4f pc %.4f pr %.5f clu %.5f oc %.4f entropy %.4f\n",
                static_cast<long long>(r.step), r.lr, r.total, r.parts.point_contrast, r.parts.reconstruct,
                r.parts.cluster, r.parts.object_contrast, r.entropy);
  });
  save_checkpoint({cfg, state}, out);
  save_train_log(state.log, log);
  std::cout << "wrote checkpoint " << out.string() << " and log " << log.string() << "\n";
  return kOk;
}

int run_eval(const fs::path& ckpt_path, const fs::path& data, const fs::path& out, int classes, int draws) {
  print_resolved("eval-unsup", {{"ckpt", ckpt_path.string()},
                                {"data", data.string()},
                                {"out", out.string()},
                                {"classes", classes > 0 ? std::to_string(classes) : "<inferred>"},
                                {"chance_draws", std::to_string(draws)}});
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (!fs::is_directory(data)) throw InputError("data directory not found: " + data.string());
  const auto clouds = load_dataset(data);
  const int k_gt = classes > 0 ? classes : std::max(1, infer_num_classes(clouds));
  const std::uint64_t hash_before = params_hash(ck.state.params);
  const DatasetSegmentation d = segment_dataset(ck.state.params, clouds, k_gt, ck.config.temperatures.cluster);
  if (params_hash(ck.state.params) != hash_before) throw Error("evaluation modified the parameters");

  std::ofstream txt(out);
  if (!txt) throw InputError("cannot write " + out.string());
  write_metrics_text(d, txt);
  if (d.overall && draws > 0) {
    const ChanceBand band = permutation_chance_band(d.all_pseudo, d.all_gt, d.num_pseudo, k_gt, draws, 0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "\nchance_draws: %d\nchance_mean: %.6f\nchance_lo: %.6f\nchance_hi: %.6f\n",
                  draws, band.mean, band.lo, band.hi);
    txt << buf;
  }
  const fs::path csv = sibling_with_extension(out, ".csv");
  std::ofstream c(csv);
  if (!c) throw InputError("cannot write " + csv.string());
  write_metrics_csv(d, c);
  for (const auto& s : d.scenes)
    if (!s.metrics) std::cerr << "warning: " << s.scene_id << " has no labels, metrics omitted\n";
  if (d.overall) std::printf("miou %.6f over %lld points\n", d.overall->miou, static_cast<long long>(d.overall->num_points));
  std::cout << "wrote " << out.string() << " and " << csv.string() << "\n";
  return kOk;
}

int run_reconstruct(const fs::path& ckpt_path, const fs::path& cloud_path, const fs::path& out) {
  print_resolved("reconstruct", {{"ckpt", ckpt_path.string()}, {"cloud", cloud_path.string()}, {"out", out.string()}});
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const LabeledPointCloud cloud = load_cloud(cloud_path);
  const ReconstructionSummary s = reconstruct_export(ck.state.params, cloud, out);
  char line[160];
  std::snprintf(line, sizeof line, "mse_geo %.9g mse_color %.9g\n", s.mse_geo, s.mse_color);
  std::ofstream summary(out / (cloud.scene_id + ".summary.txt"));
  summary << line;
  std::cout << s.geometry_file.string() << "\n" << s.color_file.string() << "\n" << line;
  return kOk;
}

int run_gradcheck(std::uint64_t seed, int prototypes, const std::string& corrupt) {
  GradcheckOptions o;
  o.seed = seed;
  o.shape.num_prototypes = prototypes;
  o.corrupt_term = corrupt;
  print_resolved("gradcheck", {{"seed", std::to_string(seed)},
                               {"num_prototypes", std::to_string(prototypes)},
                               {"step", "1e-05"},
                               {"tolerance", "1e-04"}});
  const GradcheckReport r = gradcheck(o);
  for (const auto& e : r.entries) {
    std::printf("%-16s max_rel_err %.3e over %zu params  %s%s%s\n", e.term.c_str(), e.max_rel_error, e.num_checked,
                e.passed ? "PASS" : "FAIL", e.note.empty() ? "" : "  ", e.note.c_str());
  }
  return r.ok() ? kOk : kNumeric;
}

int run_report(const fs::path& log_path, const fs::path& out) {
  print_resolved("report", {{"log", log_path.string()}, {"out", out.string()}});
  const TrainLog log = load_train_log(log_path);
  std::ofstream o(out);
  if (!o) throw InputError("cannot write " + out.string());
  char buf[256];
  o << "# pgcc training summary\nsteps: " << log.size() << "\n\n";
  std::snprintf(buf, sizeof buf, "%-8s %14s %8s %14s %14s\n", "term", "min", "min_step", "final", "first");
  o << buf;
  struct Column {
    const char* name;
    double (*get)(const TrainRecord&);
  };
  const Column cols[] = {
      {"L_pc", [](const TrainRecord& r) { return r.parts.point_contrast; }},
      {"L_pr", [](const TrainRecord& r) { return r.parts.reconstruct; }},
      {"L_clu", [](const TrainRecord& r) { return r.parts.cluster; }},
      {"L_oc", [](const TrainRecord& r) { return r.parts.object_contrast; }},
      {"total", [](const TrainRecord& r) { return r.total; }},
  };
  for (const auto& c : cols) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < log.size(); ++i)
      if (c.get(log[i]) <= c.get(log[arg])) arg = i;
    std::snprintf(buf, sizeof buf, "%-8s %14.6g %8lld %14.6g %14.6g\n", c.name, c.get(log[arg]),
                  static_cast<long long>(log[arg].step), c.get(log.back()), c.get(log.front()));
    o << buf;
  }
  double hmin = log.front().entropy, hmax = hmin;
  for (const auto& r : log) {
    hmin = std::min(hmin, r.entropy);
    hmax = std::max(hmax, r.entropy);
  }
  std::snprintf(buf, sizeof buf, "\nentropy_first: %.6g\nentropy_min: %.6g\nentropy_max: %.6g\nentropy_final: %.6g\n",
                log.front().entropy, hmin, hmax, log.back().entropy);
  o << buf;
  o << "\nentropy_trajectory:";
  const std::size_t stride = std::max<std::size_t>(1, log.size() / 10);
  for (std::size_t i = 0; i < log.size(); i += stride) {
    std::snprintf(buf, sizeof buf, " %lld:%.4f", static_cast<long long>(log[i].step), log[i].entropy);
    o << buf;
  }
  o << "\n";
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry-colour contrastive pre-training for point clouds"};
  app.require_subcommand(1);

  std::string spec_path, config_path, log_path, corrupt;
  fs::path out, data, ckpt, cloud, log_in;
  int scenes = 0, classes = 0, draws = 1000, prototypes = 4, epochs = -1;
  long long seed = -1;
  std::uint64_t synth_seed = 0, gc_seed = 0;

  auto* synth = app.add_subcommand("synth", "Generate synthetic labelled scenes");
  synth->add_option("--spec", spec_path, "Scene spec JSON (default layout when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--scenes", scenes, "Number of scenes")->required();
  synth->add_option("--seed", synth_seed, "Base seed");

  auto* pre = app.add_subcommand("pretrain", "Pre-train on a directory of clouds");
  pre->add_option("--config", config_path, "Config file (key = value)");
  pre->add_option("--data", data, "Directory of .pgcc clouds")->required();
  pre->add_option("--out", out, "Checkpoint path")->required();
  pre->add_option("--log", log_path, "Train log CSV (default: checkpoint with .csv)");
  pre->add_option("--seed", seed, "Override the config seed");
  pre->add_option("--epochs", epochs, "Override the config epoch count");

  auto* ev = app.add_subcommand("eval-unsup", "Unsupervised segmentation metrics");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Directory of labelled .pgcc clouds")->required();
  ev->add_option("--out", out, "Metrics text file; the CSV goes next to it")->required();
  ev->add_option("--classes", classes, "Ground-truth class count (default: inferred)");
  ev->add_option("--chance-draws", draws, "Label-permutation draws for the chance band (0 disables)");

  auto* rec = app.add_subcommand("reconstruct", "Export swapped reconstructions of one cloud");
  rec->add_option("--ckpt", ckpt, "Checkpoint")->required();
  rec->add_option("--cloud", cloud, "Input cloud")->required();
  rec->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--prototypes", prototypes, "Number of prototypes K");
  gc->add_option("--corrupt", corrupt, "Deliberately corrupt one term's gradient (self-test)");

  auto* rep = app.add_subcommand("report", "Summarise a train log");
  rep->add_option("--log", log_in, "Train log CSV")->required();
  rep->add_option("--out", out, "Summary file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*synth) return run_synth(spec_path, out, scenes, synth_seed);
    if (*pre) return run_pretrain(config_path, data, out, log_path, seed, epochs);
    if (*ev) return run_eval(ckpt, data, out, classes, draws);
    if (*rec) return run_reconstruct(ckpt, cloud, out);
    if (*gc) return run_gradcheck(gc_seed, prototypes, corrupt);
    if (*rep) return run_report(log_in, out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kInput;
}
