#include <gtest/gtest.h>

#include <fstream>

#include "fccnn/config.hpp"
#include "test_support.hpp"

using namespace fccnn;
using namespace fccnn::config;

TEST(Config, DefaultsWhenEmpty) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.train.model.lambda, 1.0);
  EXPECT_EQ(c.train.superpixels, 256);
  EXPECT_EQ(c.train.learning_rate, 1e-2);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.mutation, fault::Mutation::None);
}

TEST(Config, SectionsCommentsAndDottedKeys) {
  const RunConfig c = parse_config(
      "# experiment\n"
      "seed = 7\n"
      "[arch]\n"
      "widths = 4, 8\n"
      "shared_blocks = 1\n"
      "[crf]\n"
      "lambda = 2.5   # trailing comment\n"
      "use_pairwise = false\n"
      "unary_backward = unscaled\n");
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.train.arch.widths, (std::vector<int>{4, 8}));
  EXPECT_EQ(c.train.arch.shared_blocks, 1);
  EXPECT_EQ(c.train.model.lambda, 2.5);
  EXPECT_FALSE(c.train.model.use_pairwise);
  EXPECT_EQ(c.train.model.unary_backward, pool::UnaryBackwardMode::Unscaled);
}

TEST(Config, DottedKeyInsideSectionIsPrefixed) {
  // Inside [crf], "train.epochs" becomes "crf.train.epochs", which is unknown.
  EXPECT_THROW(parse_config("[crf]\ntrain.epochs = 3\n"), ConfigError);
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
  try {
    parse_config("seed = 1\n\n[train]\nlearning_rat = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_EQ(e.key(), "train.learning_rat");
    EXPECT_NE(std::string(e.what()).find("train.learning_rat"), std::string::npos);
  }
}

TEST(Config, BadValuesReportLine) {
  try {
    parse_config("seed = 1\ntrain.epochs = many\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(parse_config("crf.use_pairwise = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_config("[broken\n"), ConfigError);
  EXPECT_THROW(parse_config("train.learning_rate = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("crf.lambda = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("gradcheck.mutation = sabotage\n"), ConfigError);
}

TEST(Config, PathsResolveAgainstBaseAndMustExist) {
  fccnn::testing::TempDir dir;
  std::ofstream(dir / "train.tsv") << "# classes: a,b\n";
  const RunConfig c = parse_config("data.train_manifest = train.tsv\noutput.dir = out\n", dir.path());
  EXPECT_EQ(c.train_manifest, dir / "train.tsv");
  EXPECT_EQ(c.out_dir, dir / "out");
  try {
    parse_config("data.test_manifest = nope.tsv\n", dir.path());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "data.test_manifest");
    EXPECT_NE(std::string(e.what()).find("nope.tsv"), std::string::npos);
  }
}

TEST(Config, EchoParsesBackToTheSameConfig) {
  fccnn::testing::TempDir dir;
  std::ofstream(dir / "m.tsv") << "# classes: a,b\n";
  RunConfig c = parse_config("seed = 9\ndata.train_manifest = m.tsv\narch.widths = 4,8,12\ncrf.lambda = 0.3\n"
                             "gradcheck.mutation = flip_w_sign\n",
                             dir.path());
  const std::string echo = echo_config(c);
  const RunConfig back = parse_config(echo);
  EXPECT_EQ(echo_config(back), echo);
  EXPECT_EQ(back.train.arch, c.train.arch);
  EXPECT_EQ(back.mutation, fault::Mutation::FlipWSign);
}

TEST(Config, LoadFileErrors) {
  EXPECT_THROW(load_config("/nonexistent/fccnn.cfg"), ConfigError);
}
