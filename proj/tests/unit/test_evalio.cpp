#include <gtest/gtest.h>

#include <array>
#include <fstream>
#include <random>

#include "fccnn/binary_io.hpp"
#include "fccnn/error.hpp"
#include "fccnn/evalio.hpp"
#include "test_support.hpp"

using namespace fccnn;
using namespace fccnn::eval;

namespace {

LabelMap row(std::vector<std::uint8_t> v) {
  LabelMap m(1, static_cast<int>(v.size()));
  m.labels = std::move(v);
  return m;
}

}  // namespace

TEST(FMeasure, PerfectPrediction) {
  const LabelMap gt = row({0, 1, 1, 2});
  const ClassScore s = f_measure(gt, gt, 1);
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.f, 1.0);
}

TEST(FMeasure, AbsentFromPrediction) {
  const ClassScore s = f_measure(row({0, 0, 0}), row({0, 1, 0}), 1);
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.f, 0.0);
  EXPECT_EQ(s.precision, 0.0);
}

TEST(FMeasure, HandArithmetic) {
  // TP=1, FP=1, FN=0 for class 1.
  const ClassScore s = f_measure(row({1, 1, 0}), row({1, 0, 0}), 1);
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
  EXPECT_DOUBLE_EQ(s.f, 2.0 / 3.0);
}

TEST(FMeasure, DimensionMismatch) {
  EXPECT_THROW(f_measure(row({0, 1}), row({0, 1, 1}), 1), InvalidArgument);
}

TEST(FMeasure, BoundsAndSymmetry) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    Confusion c{rng() % 20, rng() % 20, rng() % 20};
    const ClassScore s = score(c);
    EXPECT_GE(s.f, 0.0);
    EXPECT_LE(s.f, 1.0);
    if (s.precision + s.recall > 0) EXPECT_LE(s.f, 2 * std::min(s.precision, s.recall) / (s.precision + s.recall) + 1e-15);
    const ClassScore swapped = score(Confusion{c.tp, c.fn, c.fp});
    EXPECT_DOUBLE_EQ(s.f, swapped.f);
    EXPECT_DOUBLE_EQ(s.precision, swapped.recall);
  }
}

TEST(Evaluate, IdenticalIsPerfect) {
  const std::vector<LabelMap> gts{row({0, 1, 2}), row({2, 2, 0})};
  const EvalReport r = evaluate(gts, gts, 3);
  for (const auto& s : r.per_class) EXPECT_EQ(s.f, 1.0);
  EXPECT_EQ(r.overall_accuracy, 1.0);
}

TEST(Evaluate, MicroEqualsPooledCounts) {
  const std::vector<LabelMap> preds{row({1, 1, 0, 0}), row({1, 0, 0, 0, 0, 0})};
  const std::vector<LabelMap> gts{row({1, 0, 0, 0}), row({1, 1, 1, 1, 0, 0})};
  // Class 1 pooled: TP = 1 + 1, FP = 1 + 0, FN = 0 + 3.
  const EvalReport micro = evaluate(preds, gts, 2);
  const ClassScore pooled = score(Confusion{2, 1, 3});
  EXPECT_DOUBLE_EQ(micro.per_class[1].f, pooled.f);
  const EvalReport macro = evaluate(preds, gts, 2, Aggregation::Macro);
  const double per_image = (f_measure(preds[0], gts[0], 1).f + f_measure(preds[1], gts[1], 1).f) / 2;
  EXPECT_DOUBLE_EQ(macro.per_class[1].f, per_image);
  EXPECT_NE(micro.per_class[1].f, macro.per_class[1].f);
  EXPECT_DOUBLE_EQ(micro.overall_accuracy, 6.0 / 10.0);
}

TEST(Evaluate, AllBackgroundAccuracyIsBackgroundFraction) {
  const std::vector<LabelMap> gts{row({0, 1, 2, 0, 0})};
  const std::vector<LabelMap> preds{row({0, 0, 0, 0, 0})};
  EXPECT_DOUBLE_EQ(evaluate(preds, gts, 3).overall_accuracy, 3.0 / 5.0);
}

TEST(Evaluate, MismatchedLists) {
  const std::vector<LabelMap> one{row({0})};
  EXPECT_THROW(evaluate(one, std::vector<LabelMap>{}, 2), InvalidArgument);
  EXPECT_THROW(evaluate(std::vector<LabelMap>{}, std::vector<LabelMap>{}, 2), InvalidArgument);
}

TEST(Report, ParsesBackLosslessly) {
  EvalReport r;
  r.class_names = {"background", "skin", "hair"};
  r.per_class = {{0.1, 0.2, 0.3}, {1.0 / 3.0, 0.5, 0.4}, {0.0, 0.0, 0.0}};
  r.overall_accuracy = 0.95281234567;
  const EvalReport back = parse_report(format_report(r));
  ASSERT_EQ(back.classes(), 3);
  EXPECT_EQ(back.class_names, r.class_names);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(back.per_class[k].f, r.per_class[k].f);
    EXPECT_EQ(back.per_class[k].precision, r.per_class[k].precision);
    EXPECT_EQ(back.per_class[k].recall, r.per_class[k].recall);
  }
  EXPECT_EQ(back.overall_accuracy, r.overall_accuracy);
  EXPECT_NE(format_report(r).find("f_class_1"), std::string::npos);
  EXPECT_NE(format_table(r).find("F-skin"), std::string::npos);
}

TEST(Image, RoundTripAndNormalisation) {
  fccnn::testing::TempDir dir;
  Tensor img(3, 4, 5);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = (i % 256) / 255.0;
  img(0, 0, 0) = 1.0;
  save_image(img, dir / "a.ppm");
  const Tensor back = load_image(dir / "a.ppm");
  EXPECT_EQ(back(0, 0, 0), 1.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 1e-12);
  Tensor grey(1, 3, 3, 0.0);
  save_image(grey, dir / "g.pgm");
  EXPECT_EQ(load_image(dir / "g.pgm").channels(), 1);
}

TEST(Image, TruncatedAndMalformedFilesReportOffsets) {
  fccnn::testing::TempDir dir;
  save_image(Tensor(3, 8, 8, 0.5), dir / "a.ppm");
  auto bytes = io::read_file(dir / "a.ppm");
  bytes.resize(bytes.size() - 10);
  io::write_file(dir / "t.ppm", bytes);
  try {
    load_image(dir / "t.ppm");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("t.ppm"), std::string::npos);
  }
  std::ofstream(dir / "junk.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(load_image(dir / "junk.ppm"), FormatError);
  EXPECT_THROW(load_image(dir / "missing.ppm"), InvalidArgument);
}

TEST(Labels, RoundTripAndRangeCheck) {
  fccnn::testing::TempDir dir;
  LabelMap l(3, 4);
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<std::uint8_t>(i % 3);
  save_labelmap(l, dir / "l.pgm");
  EXPECT_EQ(load_labels(dir / "l.pgm", 3), l);
  EXPECT_THROW(load_labels(dir / "l.pgm", 2), InvalidArgument);
}

TEST(Manifest, RoundTripWithRelativePaths) {
  fccnn::testing::TempDir dir;
  DatasetManifest m;
  m.class_names = {"a", "b"};
  m.entries = {{dir / "x.ppm", dir / "x.pgm"}};
  write_manifest(m, dir / "m.tsv");
  const DatasetManifest back = read_manifest(dir / "m.tsv");
  EXPECT_EQ(back.class_names, m.class_names);
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.entries[0].image, dir / "x.ppm");

  std::ofstream(dir / "rel.tsv") << "# classes: a,b\nsub/x.ppm\tsub/x.pgm\n";
  EXPECT_EQ(read_manifest(dir / "rel.tsv").entries[0].image, dir / "sub/x.ppm");
  std::ofstream(dir / "bad.tsv") << "# classes: a,b\nonly_one_column\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), InvalidArgument);
}

TEST(ToyFaces, DeterministicAndCoversEveryClass) {
  fccnn::testing::TempDir dir;
  const DatasetManifest a = generate_toy_faces(5, 3, 32, dir / "a");
  generate_toy_faces(5, 3, 32, dir / "b");
  ASSERT_EQ(a.entries.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const auto name_img = a.entries[i].image.filename();
    const auto name_lab = a.entries[i].labels.filename();
    EXPECT_EQ(io::read_file(dir / "a" / name_img), io::read_file(dir / "b" / name_img));
    EXPECT_EQ(io::read_file(dir / "a" / name_lab), io::read_file(dir / "b" / name_lab));
  }
  EXPECT_EQ(read_manifest(dir / "a" / "manifest.tsv").classes(), 3);
}

TEST(ToyFaces, ClassHistogram) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 100; ++i) {
    const ToyFace f = generate_toy_face(rng, 64);
    std::array<int, 3> counts{};
    for (auto v : f.labels.labels) {
      ASSERT_LT(v, 3);
      ++counts[v];
    }
    for (int c : counts) EXPECT_GE(c, 0.02 * 64 * 64) << "image " << i;
  }
}

TEST(ToyFaces, RejectsIncompatibleSize) {
  fccnn::testing::TempDir dir;
  EXPECT_THROW(generate_toy_faces(1, 1, 36, dir.path()), InvalidArgument);
  EXPECT_THROW(generate_toy_faces(1, 0, 32, dir.path()), InvalidArgument);
}

TEST(BoundaryNoise, ConcentratedNearLabelEdges) {
  std::mt19937_64 rng(3);
  const ToyFace f = generate_toy_face(rng, 64, 0.0);
  const Tensor noisy = augment_boundary_noise(f.image, f.labels, 9);
  EXPECT_EQ(noisy, augment_boundary_noise(f.image, f.labels, 9));
  double near = 0, far = 0;
  int n_near = 0, n_far = 0;
  for (int y = 2; y < 62; ++y)
    for (int x = 2; x < 62; ++x) {
      bool edge = false;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) edge |= f.labels.at(y + dy, x + dx) != f.labels.at(y, x);
      double d = 0;
      for (int c = 0; c < 3; ++c) d += std::abs(noisy(c, y, x) - f.image(c, y, x));
      (edge ? near : far) += d;
      (edge ? n_near : n_far)++;
    }
  EXPECT_GT(near / n_near, 1.5 * far / n_far);
  for (double v : noisy.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}
