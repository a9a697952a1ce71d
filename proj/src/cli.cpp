#include "rangeaug/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <utility>

#include "CLI11.hpp"
#include "rangeaug/config.hpp"
#include "rangeaug/dataio.hpp"
#include "rangeaug/gradcheck.hpp"
#include "rangeaug/policy.hpp"
#include "rangeaug/simloss.hpp"
#include "rangeaug/trainer.hpp"

namespace rangeaug {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct TrainingCommand {
  explicit TrainingCommand(CLI::App* a) : app(a) {}

  CLI::App* app;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_config_options(TrainingCommand& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "JSON config file");
  for (const auto& key : config_keys()) {
    const std::string name = key.name;
    cmd.app->add_option_function<std::string>(
        "--" + name, [&cmd, name](const std::string& v) { cmd.overrides.emplace_back(name, v); }, key.help);
  }
}

RunConfig resolve(const TrainingCommand& cmd) {
  RunConfig cfg = cmd.config_path.empty() ? RunConfig{} : load_config(cmd.config_path);
  for (const auto& [k, v] : cmd.overrides) apply_override(cfg, k, v);
  cfg.train.validate();
  return cfg;
}

void report(std::ostream& out, const TrainResult& r) {
  out << "val_acc=" << fmt("%.4f", r.val_acc) << " clean_val_acc=" << fmt("%.4f", r.clean_val_acc)
      << " mean_psnr_final=" << fmt("%.3f", r.mean_psnr_final) << '\n';
  for (auto kind : kCanonicalOrder) {
    const auto& range = r.policy.range(kind);
    out << op_name(kind) << " a=" << fmt("%.6g", range.a) << " b=" << fmt("%.6g", range.b) << '\n';
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned magnitude ranges for photometric augmentation", "rangeaug"};
  app.require_subcommand(1);

  TrainingCommand train_cmd{app.add_subcommand("train", "Train a classifier and its augmentation ranges")};
  TrainingCommand sweep_cmd{app.add_subcommand("sweep", "Train once per curriculum candidate and rank them")};
  TrainingCommand distill_cmd{app.add_subcommand("distill", "Train a student against a teacher checkpoint")};
  add_config_options(train_cmd);
  add_config_options(sweep_cmd);
  add_config_options(distill_cmd);

  CLI::App* augment = app.add_subcommand("augment", "Apply a saved policy to one PPM image");
  std::string policy_path, input_path, out_dir;
  std::size_t samples = 1;
  std::uint64_t aug_seed = 0;
  augment->add_option("--policy", policy_path, "policy JSON written by train")->required();
  augment->add_option("--input", input_path, "input .ppm image")->required();
  augment->add_option("--out", out_dir, "output directory")->required();
  augment->add_option("--samples", samples, "number of augmented copies")->capture_default_str();
  augment->add_option("--seed", aug_seed, "sampling seed")->capture_default_str();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable pipeline");
  std::uint64_t gc_seed = 0;
  double gc_h = 1e-3;
  double gc_tol = 1e-3;
  gradcheck->add_option("--seed", gc_seed, "seed for the random check points")->capture_default_str();
  gradcheck->add_option("--step", gc_h, "central-difference step")->capture_default_str();
  gradcheck->add_option("--tol", gc_tol, "largest accepted relative error")->capture_default_str();

  CLI::App* gen_data = app.add_subcommand("gen-data", "Write a synthetic shape dataset as .ratf");
  std::string data_out, split = "train";
  std::size_t n = 1000, classes = 4, size = 32;
  std::uint64_t data_seed = 7;
  gen_data->add_option("--out", data_out, "output .ratf path")->required();
  gen_data->add_option("--n", n, "number of images")->capture_default_str();
  gen_data->add_option("--classes", classes, "number of classes (1-4)")->capture_default_str();
  gen_data->add_option("--size", size, "image side length")->capture_default_str();
  gen_data->add_option("--seed", data_seed, "generator seed")->capture_default_str();
  gen_data->add_option("--split", split, "split name stored with the data")->capture_default_str();

  auto run_augment = [&](std::ostream& os) {
    const RangePolicy policy = load_policy(policy_path);
    const nd::Array image = load_ppm(input_path);
    std::filesystem::create_directories(out_dir);
    for (std::size_t k = 0; k < samples; ++k) {
      const SubPolicySample s = sample_subpolicy(policy, RngContext{aug_seed, Stream::Sampling, 0, k, 0}, image.shape());
      const nd::Array augmented = augment_image(image, s);
      char name[32];
      std::snprintf(name, sizeof name, "aug_%03zu.ppm", k);
      save_ppm((std::filesystem::path(out_dir) / name).string(), augmented);
      os << name << " psnr_db=" << fmt("%.4f", psnr_value(image, augmented)) << '\n';
    }
  };
  auto run_gradcheck = [&](std::ostream& os) {
    bool ok = true;
    for (const auto& entry : run_gradcheck_suite(gc_seed, gc_h)) {
      const bool pass = entry.report.max_rel_err <= gc_tol;
      ok = ok && pass;
      os << entry.pipeline << " max_rel_err=" << fmt("%.3e", entry.report.max_rel_err)
         << " coordinates=" << entry.report.coordinates << " excluded=" << entry.report.excluded
         << (pass ? "" : " FAIL") << '\n';
    }
    return ok ? kExitOk : kExitRuntime;
  };
  auto run_gen_data = [&](std::ostream& os) {
    if (classes < 1 || classes > 4) throw std::invalid_argument("--classes must be between 1 and 4");
    if (size < 4) throw std::invalid_argument("--size must be at least 4");
    const Dataset d = generate_synthetic(n, classes, data_seed, size, split);
    save_tensorfile(data_out, d);
    os << "wrote " << d.size() << " images to " << data_out << '\n';
  };

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }

  try {
    if (train_cmd.app->parsed()) {
      report(out, train(resolve(train_cmd).train));
    } else if (sweep_cmd.app->parsed()) {
      const RunConfig cfg = resolve(sweep_cmd);
      out << sweep_csv(sweep(cfg.train, cfg.sweep_candidates));
    } else if (distill_cmd.app->parsed()) {
      const RunConfig cfg = resolve(distill_cmd);
      if (!cfg.train.kd || cfg.train.kd->teacher_checkpoint.empty()) {
        throw std::invalid_argument("distill needs kd.teacher");
      }
      report(out, distill_train(cfg.train));
    } else if (augment->parsed()) {
      run_augment(out);
    } else if (gradcheck->parsed()) {
      return run_gradcheck(out);
    } else if (gen_data->parsed()) {
      run_gen_data(out);
    }
    return kExitOk;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace rangeaug
