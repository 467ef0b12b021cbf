#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "protoseg/config/run_config.hpp"

using namespace protoseg::config;

TEST(RunConfig, DefaultsAreDocumentedAndValid) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  const auto keys = documented_keys();
  EXPECT_GT(keys.size(), 30u);
  for (const auto& k : keys) {
    EXPECT_FALSE(k.help.empty()) << k.key;
    EXPECT_EQ(get_value(cfg, k.key), k.default_value);
  }
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  RunConfig cfg;
  apply_text(cfg, "# header\n  loss.lambda_j = 0   # off\n\nmodel.widths = 8, 16,24\nseed=42\n");
  EXPECT_EQ(cfg.train.loss.lambda_j, 0.0);
  EXPECT_EQ(cfg.backbone.widths, (std::vector<std::size_t>{8, 16, 24}));
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.train.seed, 42u);
}

TEST(RunConfig, UnknownKeyNamed) {
  RunConfig cfg;
  try {
    apply_text(cfg, "train.warmup_step = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.warmup_step"), std::string::npos);
  }
}

TEST(RunConfig, MalformedValuesRejected) {
  RunConfig cfg;
  EXPECT_THROW(set_value(cfg, "train.batch_size", "four"), ConfigError);
  EXPECT_THROW(set_value(cfg, "loss.lambda_j", "0.25x"), ConfigError);
  EXPECT_THROW(set_value(cfg, "loss.negate_distances", "maybe"), ConfigError);
  EXPECT_THROW(set_value(cfg, "model.backbone", "vgg"), ConfigError);
  EXPECT_THROW(apply_text(cfg, "just words\n"), ConfigError);
}

TEST(RunConfig, RenderRoundTrips) {
  RunConfig cfg;
  set_value(cfg, "loss.lambda_j", "0.125");
  set_value(cfg, "model.backbone", "skip-connection");
  set_value(cfg, "train.joint_head_lr", "0.1");
  set_value(cfg, "out_dir", "runs/a b");
  RunConfig back;
  apply_text(back, render(cfg));
  EXPECT_EQ(render(back), render(cfg));
  EXPECT_EQ(back.train.loss.lambda_j, 0.125);
  EXPECT_EQ(back.out_dir, "runs/a b");
}

TEST(RunConfig, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "protoseg_cfg_test.txt";
  std::ofstream(path) << "data.train_samples = 12\n";
  EXPECT_EQ(load_config(path).data.train_samples, 12u);
  EXPECT_THROW(load_config(path.string() + ".missing"), ConfigError);
}

TEST(RunConfig, ValidationCatchesBadCombos) {
  RunConfig cfg;
  set_value(cfg, "model.stride", "8");  // widths still has three entries
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
