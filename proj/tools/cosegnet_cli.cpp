#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "cosegnet/checkpoint.hpp"
#include "cosegnet/grad_suite.hpp"
#include "cosegnet/inference.hpp"
#include "cosegnet/spectral_report.hpp"
#include "cosegnet/synthetic.hpp"
#include "cosegnet/train.hpp"

namespace fs = std::filesystem;
using namespace coseg;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config file)");
  cmd->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : load_config_file(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void print_warnings(const Dataset& ds) {
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
}

void write_report(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "group,stem,precision,jaccard\n" << std::setprecision(17);
  for (const auto& s : r.images) out << s.group << ',' << s.stem << ',' << s.precision << ',' << s.jaccard << '\n';
  for (const auto& g : r.groups) out << g.group << ",<group>," << g.precision << ',' << g.jaccard << '\n';
  out << "<all>,<all>," << r.precision << ',' << r.jaccard << '\n';
}

void print_summary(const MetricReport& r) {
  for (const auto& g : r.groups) std::cout << g.group << "  P " << g.precision << "  J " << g.jaccard << '\n';
  std::cout << "mean  P " << r.precision << "  J " << r.jaccard << '\n';
}

int run_synth(const Common& c, synth::SynthConfig sc) {
  const std::uint64_t seed = c.seed.value_or(0);
  synth::write_dataset(c.out, synth::generate(sc, seed));
  std::cout << "wrote " << sc.n_groups << " groups to " << c.out << '\n';
  return 0;
}

int run_train(const Common& c, const std::string& data, const std::string& resume, std::optional<std::size_t> steps) {
  TrainConfig cfg = resolve_config(c);
  if (steps) cfg.max_steps = *steps;
  Dataset ds = load_dataset(data, cfg.image_size, cfg.num_classes);
  print_warnings(ds);
  fs::create_directories(c.out);

  std::unique_ptr<Trainer> trainer = resume.empty() ? std::make_unique<Trainer>(cfg, ds.groups)
                                                    : std::make_unique<Trainer>(resume, ds.groups, cfg.max_steps);
  trainer->set_warning_stream(&std::cerr);
  const TrainConfig& active = trainer->config();
  std::ofstream(fs::path(c.out) / "config.txt") << to_text(active);

  const fs::path csv_path = fs::path(c.out) / "loss.csv";
  const bool append = !resume.empty() && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  if (!append) csv << kLossCsvHeader << '\n';

  const std::string ckpt = (fs::path(c.out) / "model.ckpt").string();
  const auto start = std::chrono::steady_clock::now();
  while (trainer->steps_done() < active.max_steps) {
    StepLog s = trainer->step();
    csv << csv_row(s) << '\n';
    if (s.step % 100 == 0 || s.step == active.max_steps) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "step " << s.step << "  loss " << s.total << "  seg " << s.segmentation << "  sem " << s.semantic
                << "  spa " << s.spatial << "  (" << std::fixed << std::setprecision(1) << secs << " s)"
                << std::defaultfloat << std::setprecision(6) << '\n';
    }
    if (active.checkpoint_interval && s.step % active.checkpoint_interval == 0) trainer->save(ckpt);
  }
  trainer->save(ckpt);
  std::cout << "checkpoint " << ckpt << '\n';
  return 0;
}

CoSegNet load_model(const std::string& path) {
  auto entries = checkpoint::read_file(path);
  TrainConfig cfg = checkpoint::config_of(entries);
  CoSegNet model(cfg, cfg.num_classes);
  checkpoint::restore(entries, model);
  return model;
}

int run_infer(const Common& c, const std::string& ckpt, const std::string& group_dir, const std::string& data) {
  if (group_dir.empty() == data.empty()) throw ConfigError("infer needs exactly one of --group or --data");
  CoSegNet model = load_model(ckpt);
  const std::size_t size = model.config().image_size;
  if (!group_dir.empty()) {
    ImageGroup g = load_group(group_dir, size);
    write_prediction(c.out, g, predict_group(model, g));
    std::cout << "wrote " << g.size() << " predictions to " << c.out << '\n';
    return 0;
  }
  Dataset ds = load_dataset(data, size);
  print_warnings(ds);
  for (const ImageGroup& g : ds.groups) write_prediction(fs::path(c.out) / g.name, g, predict_group(model, g));
  std::cout << "wrote predictions for " << ds.groups.size() << " groups to " << c.out << '\n';
  return 0;
}

// Predicted masks are looked up as <pred>/<group>/<stem>_mask.png, falling
// back to <pred>/<stem>_mask.png for a single-group prediction directory.
int run_eval(const Common& c, const std::string& data, const std::string& pred_dir, const std::string& ckpt) {
  if (pred_dir.empty() == ckpt.empty()) throw ConfigError("eval needs exactly one of --pred or --checkpoint");
  MetricReport report;
  if (!ckpt.empty()) {
    CoSegNet model = load_model(ckpt);
    Dataset ds = load_dataset(data, model.config().image_size);
    print_warnings(ds);
    report = evaluate_model(model, ds.groups);
  } else {
    Dataset ds = load_dataset(data, 32);
    print_warnings(ds);
    MetricAccumulator acc;
    for (const ImageGroup& g : ds.groups) {
      if (!g.has_masks()) continue;
      for (std::size_t n = 0; n < g.size(); ++n) {
        fs::path p = fs::path(pred_dir) / g.name / (g.stems[n] + "_mask.png");
        if (!fs::exists(p)) p = fs::path(pred_dir) / (g.stems[n] + "_mask.png");
        if (!fs::exists(p)) throw IoError("missing prediction " + p.string());
        acc.add(g.name, g.stems[n], binarize_mask(io::read_png(p.string(), 1)), g.original_masks[n]);
      }
    }
    report = acc.finish();
  }
  print_summary(report);
  if (!c.out.empty()) write_report(report, c.out);
  return 0;
}

int run_grad_check(const Common& c) {
  const auto start = std::chrono::steady_clock::now();
  auto cases = run_grad_suite(c.seed.value_or(0));
  double worst = 0.0;
  std::ostringstream table;
  table << "case,coordinates,max_relative_error\n";
  for (const auto& gc : cases) {
    std::cout << std::left << std::setw(26) << gc.name << std::right << std::setw(8) << gc.result.coordinates << "  "
              << std::scientific << std::setprecision(3) << gc.result.max_relative_error << std::defaultfloat << '\n';
    table << gc.name << ',' << gc.result.coordinates << ',' << gc.result.max_relative_error << '\n';
    worst = std::max(worst, gc.result.max_relative_error);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "worst " << std::scientific << worst << std::defaultfloat << " in " << secs << " s\n";
  if (!c.out.empty()) std::ofstream(c.out) << table.str();
  return worst < 1e-5 ? 0 : 3;
}

int run_check_spectral(const Common& c, std::size_t count) {
  std::mt19937_64 rng(c.seed.value_or(0));
  std::ostringstream table;
  table << std::setprecision(17) << "instance,n,d,lambda_max,residual,relaxed,bound,optimum,rounded,rounding_gap\n";
  std::size_t bound_ok = 0, residual_ok = 0, within = 0;
  for (std::size_t k = 0; k < count; ++k) {
    auto inst = spatial::solve_random_instance(rng);
    bound_ok += inst.relaxed <= inst.discrete_bound + 1e-12;
    residual_ok += inst.solution.residual <= 1e-8;
    within += inst.rounding_gap <= 0.10;
    table << k << ',' << inst.count << ',' << inst.channels << ',' << inst.solution.lambda_max << ','
          << inst.solution.residual << ',' << inst.relaxed << ',' << inst.discrete_bound << ',' << inst.optimum << ','
          << inst.rounded << ',' << inst.rounding_gap << '\n';
  }
  std::cout << "relaxation bound holds   " << bound_ok << "/" << count << '\n'
            << "residual <= 1e-8         " << residual_ok << "/" << count << '\n'
            << "rounding within 10%      " << within << "/" << count << '\n';
  if (!c.out.empty()) std::ofstream(c.out) << table.str();
  return bound_ok == count && residual_ok == count ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-wise object co-segmentation with spatial and semantic modulation"};
  app.require_subcommand(1);

  Common synth_c, train_c, infer_c, eval_c, grad_c, spec_c;

  synth::SynthConfig sc;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic co-segmentation dataset");
  add_common(synth_cmd, synth_c, true);
  synth_cmd->add_option("--groups", sc.n_groups, "Number of groups")->capture_default_str();
  synth_cmd->add_option("--images", sc.images_per_group, "Images per group")->capture_default_str();
  synth_cmd->add_option("--categories", sc.categories, "Number of categories")->capture_default_str();
  synth_cmd->add_option("--size", sc.image_size, "Image side length")->capture_default_str();
  synth_cmd->add_option("--clutter", sc.clutter_level, "Distractor shapes per image")->capture_default_str();

  std::string train_data, resume;
  std::optional<std::size_t> steps;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset; writes loss.csv and model.ckpt under --out");
  add_common(train_cmd, train_c, true);
  train_cmd->add_option("--data", train_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--steps", steps, "Override max_steps");

  std::string infer_ckpt, infer_group, infer_data;
  auto* infer_cmd = app.add_subcommand("infer", "Write probability, binary and heatmap PNGs for a group");
  add_common(infer_cmd, infer_c, true);
  infer_cmd->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--group", infer_group, "Group directory (with images/)")->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--data", infer_data, "Dataset root; writes one subdirectory per group")
      ->check(CLI::ExistingDirectory);

  std::string eval_data, eval_pred, eval_ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted masks (or a checkpoint) against ground truth");
  add_common(eval_cmd, eval_c, false);
  eval_cmd->add_option("--data", eval_data, "Dataset root with masks")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--pred", eval_pred, "Directory written by infer")->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Evaluate a checkpoint directly")->check(CLI::ExistingFile);

  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every op and the full loss");
  add_common(grad_cmd, grad_c, false);

  std::size_t spectral_count = 100;
  auto* spec_cmd = app.add_subcommand("check-spectral", "Relaxed solve against exhaustive enumeration");
  add_common(spec_cmd, spec_c, false);
  spec_cmd->add_option("--count", spectral_count, "Number of random instances")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth_c, sc);
    if (*train_cmd) return run_train(train_c, train_data, resume, steps);
    if (*infer_cmd) return run_infer(infer_c, infer_ckpt, infer_group, infer_data);
    if (*eval_cmd) return run_eval(eval_c, eval_data, eval_pred, eval_ckpt);
    if (*grad_cmd) return run_grad_check(grad_c);
    if (*spec_cmd) return run_check_spectral(spec_c, spectral_count);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.category()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
