#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rangeaug/cli.hpp"
#include "rangeaug/config.hpp"

using namespace rangeaug;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "rangeaug");
  std::ostringstream out;
  std::ostringstream err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig cfg;
  const std::string text = config_to_json(cfg);
  const RunConfig back = config_from_json(text);
  EXPECT_EQ(config_to_json(back), text);
  EXPECT_EQ(back.train.epochs, 30u);
  EXPECT_EQ(back.train.lambda, 0.0015);
  EXPECT_EQ(back.sweep_candidates.size(), 4u);
}

TEST(Config, ParsesNestedKeys) {
  const RunConfig cfg = config_from_json(R"({
    "epochs": 3, "lambda": 0.01, "joint_mode": false, "hidden": [16, 8],
    "curriculum": {"kind": "linear", "delta_start": 30, "delta_end": 12},
    "data": {"n_train": 40, "shift": {"brightness": [0.5, 1.5]}},
    "kd": {"teacher": "t.bin", "alpha": 1.0},
    "sweep": {"candidates": ["cosine_40_5", "fixed_20"]}
  })");
  EXPECT_EQ(cfg.train.epochs, 3u);
  EXPECT_EQ(cfg.train.lambda, 0.01);
  EXPECT_FALSE(cfg.train.joint_mode);
  EXPECT_EQ(cfg.train.hidden, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(cfg.train.curriculum.kind, CurriculumKind::Linear);
  EXPECT_EQ(cfg.train.curriculum.delta_end, 12.0);
  EXPECT_EQ(cfg.train.data.n_train, 40u);
  ASSERT_TRUE(cfg.train.data.val_shift);
  EXPECT_EQ(cfg.train.data.val_shift->brightness_factors, (std::vector<double>{0.5, 1.5}));
  ASSERT_TRUE(cfg.train.kd);
  EXPECT_EQ(cfg.train.kd->teacher_checkpoint, "t.bin");
  EXPECT_EQ(cfg.train.kd->alpha, 1.0);
  ASSERT_EQ(cfg.sweep_candidates.size(), 2u);
  EXPECT_EQ(cfg.sweep_candidates[1].kind, CurriculumKind::Fixed);
}

TEST(Config, UnknownKeyAndBadTypesAreNamed) {
  try {
    config_from_json(R"({"epoch": 3})");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
  try {
    config_from_json(R"({"lambda": "big"})");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("lambda"), std::string::npos);
  }
  EXPECT_THROW(config_from_json("[1, 2]"), std::invalid_argument);
  EXPECT_THROW(config_from_json("{"), std::invalid_argument);
}

TEST(Config, OverridesUseDottedKeys) {
  RunConfig cfg;
  apply_override(cfg, "curriculum.delta_end", "5");
  apply_override(cfg, "joint_mode", "false");
  apply_override(cfg, "out_dir", "runs/a");
  apply_override(cfg, "hidden", "[4,4]");
  EXPECT_EQ(cfg.train.curriculum.delta_end, 5.0);
  EXPECT_FALSE(cfg.train.joint_mode);
  EXPECT_EQ(cfg.train.out_dir, "runs/a");
  EXPECT_EQ(cfg.train.hidden, (std::vector<std::size_t>{4, 4}));
  EXPECT_THROW(apply_override(cfg, "nope", "1"), std::invalid_argument);
  EXPECT_THROW(apply_override(cfg, "epochs", "-3"), std::invalid_argument);
}

TEST(Config, EveryListedKeyIsAcceptedAsOverride) {
  const std::string text = config_to_json(RunConfig{});
  for (const auto& key : config_keys()) EXPECT_FALSE(key.help.empty()) << key.name;
  EXPECT_GT(config_keys().size(), 20u);
  EXPECT_FALSE(text.empty());
}

TEST(Config, CurriculumLabels) {
  const Curriculum c = parse_curriculum_label("cosine_40_10");
  EXPECT_EQ(c.kind, CurriculumKind::Cosine);
  EXPECT_EQ(c.delta_start, 40.0);
  EXPECT_EQ(c.delta_end, 10.0);
  EXPECT_EQ(parse_curriculum_label("fixed_20").delta_start, 20.0);
  EXPECT_EQ(parse_curriculum_label(c.label()).label(), c.label());
  EXPECT_THROW(parse_curriculum_label("cosine_40"), std::invalid_argument);
  EXPECT_THROW(parse_curriculum_label("warp_1_2"), std::invalid_argument);
}

TEST(Config, LoadConfigNamesMissingFile) {
  try {
    load_config("/nonexistent/cfg.json");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/cfg.json"), std::string::npos);
  }
}

TEST(Cli, HelpAndUsageErrors) {
  const CliRun help = run({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("train"), std::string::npos);
  EXPECT_EQ(run({}).code, kExitInvalid);
  EXPECT_EQ(run({"frobnicate"}).code, kExitInvalid);
  const CliRun train_help = run({"train", "--help"});
  EXPECT_EQ(train_help.code, kExitOk);
  EXPECT_NE(train_help.out.find("--curriculum.delta_end"), std::string::npos);
}

TEST(Cli, MissingConfigExitsOneNamingPath) {
  const CliRun r = run({"train", "--config", "/nonexistent/missing.json"});
  EXPECT_EQ(r.code, kExitInvalid);
  EXPECT_NE(r.err.find("/nonexistent/missing.json"), std::string::npos);
}

TEST(Cli, InvalidOverrideValueExitsOne) {
  EXPECT_EQ(run({"train", "--p_apply", "2.0"}).code, kExitInvalid);
  EXPECT_EQ(run({"distill", "--epochs", "0"}).code, kExitInvalid);  // no teacher
}

TEST(Cli, TrainWithOverridesWritesArtifacts) {
  const auto dir = fresh_dir("rangeaug_cli_train");
  write_file(dir / "cfg.json", R"({"epochs": 1, "batch_size": 8, "hidden": [4],
    "data": {"n_train": 16, "n_val": 8, "image_size": 8}})");
  const CliRun r = run({"train", "--config", (dir / "cfg.json").string(), "--out_dir", (dir / "out").string(),
                        "--seed", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("val_acc="), std::string::npos);
  EXPECT_NE(r.out.find("brightness a="), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "policy.json"));
  std::filesystem::remove_all(dir);
}

TEST(Cli, GenDataThenAugmentWithIdentityPolicy) {
  const auto dir = fresh_dir("rangeaug_cli_aug");
  const CliRun g = run({"gen-data", "--out", (dir / "d.ratf").string(), "--n", "4", "--size", "8"});
  ASSERT_EQ(g.code, kExitOk) << g.err;
  EXPECT_EQ(load_tensorfile((dir / "d.ratf").string()).size(), 4u);

  const Dataset ds = generate_synthetic(1, 1, 9, 8);
  save_ppm((dir / "in.ppm").string(), ds.image(0));
  save_policy((dir / "id.json").string(), RangePolicy::identity());
  const CliRun a = run({"augment", "--policy", (dir / "id.json").string(), "--input", (dir / "in.ppm").string(),
                        "--out", (dir / "aug").string(), "--samples", "2"});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  const nd::Array in = load_ppm((dir / "in.ppm").string());
  for (const char* name : {"aug_000.ppm", "aug_001.ppm"}) {
    const nd::Array out = load_ppm((dir / "aug" / name).string());
    for (std::size_t i = 0; i < in.size(); ++i) ASSERT_LE(std::abs(out[i] - in[i]), 1.0 / 510.0);
  }
  EXPECT_NE(a.out.find("psnr_db="), std::string::npos);

  EXPECT_EQ(run({"augment", "--policy", (dir / "missing.json").string(), "--input", (dir / "in.ppm").string(),
                 "--out", (dir / "aug").string()})
                .code,
            kExitInvalid);
  std::filesystem::remove_all(dir);
}

TEST(Cli, GradcheckPasses) {
  const CliRun r = run({"gradcheck", "--seed", "2"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("total_objective"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Config, ReductionKey) {
  RunConfig cfg;
  EXPECT_EQ(cfg.train.ra_reduction, PsnrReduction::PerImage);
  apply_override(cfg, "ra_reduction", "batch_mean");
  EXPECT_EQ(cfg.train.ra_reduction, PsnrReduction::BatchMean);
  EXPECT_EQ(config_from_json(config_to_json(cfg)).train.ra_reduction, PsnrReduction::BatchMean);
  EXPECT_THROW(apply_override(cfg, "ra_reduction", "median"), std::invalid_argument);
}
