#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fccnn/tensor.hpp"

namespace fccnn::eval {

/// Per-pixel class ids, row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) noexcept { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const noexcept { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// ------------------------------------------------------------------ metrics

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// P = TP/(TP+FP), R = TP/(TP+FN), F = 2PR/(P+R); each is 0 when its
/// denominator is 0.
ClassScore score(const Confusion& counts) noexcept;

Confusion confusion(const LabelMap& pred, const LabelMap& gt, int class_id);
ClassScore f_measure(const LabelMap& pred, const LabelMap& gt, int class_id);

enum class Aggregation {
  Micro,  // sum TP/FP/FN over all images, then score
  Macro,  // score each image, then average
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<ClassScore> per_class;
  double overall_accuracy = 0.0;

  int classes() const noexcept { return static_cast<int>(per_class.size()); }
  double mean_f() const noexcept;
};

EvalReport evaluate(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int classes,
                    Aggregation aggregation = Aggregation::Micro);

/// Machine-readable block: one "key = value" line per field
/// (f_class_<k>, precision_<k>, recall_<k>, overall_accuracy).
std::string format_report(const EvalReport& report);
EvalReport parse_report(std::string_view text);

/// Human-readable table with one column per class.
std::string format_table(const EvalReport& report);

// ---------------------------------------------------------------------- I/O

/// Binary PGM (P5) or PPM (P6) with maxval <= 255, normalised to [0, 1].
Tensor load_image(const std::filesystem::path& path);
/// 1-channel tensors are written as PGM, 3-channel as PPM; values are
/// clamped to [0, 1] and rounded to 8 bits.
void save_image(const Tensor& image, const std::filesystem::path& path);

/// Label maps are 8-bit PGMs holding the class id as the grey value.
LabelMap load_labels(const std::filesystem::path& path, int classes = 256);
void save_labelmap(const LabelMap& labels, const std::filesystem::path& path);

/// Palette rendering of a label map (3 x H x W), optionally alpha-blended
/// over `image`.
Tensor colorize_labels(const LabelMap& labels, const Tensor* image = nullptr, double alpha = 0.5);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path labels;
};

/// Text manifest: "# classes: name0,name1,..." header, then one
/// "image_path<TAB>label_path" line per example. Relative paths are resolved
/// against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  int classes() const noexcept { return static_cast<int>(class_names.size()); }
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// -------------------------------------------------------- synthetic dataset

struct ToyFace {
  Tensor image;  // 3 x size x size in [0, 1]
  LabelMap labels;
};

inline constexpr int kToyClasses = 3;
inline const std::vector<std::string>& toy_class_names() {
  static const std::vector<std::string> names{"background", "skin", "hair"};
  return names;
}

/// Background gradient with a sinusoidal texture, a skin-toned ellipse and a
/// dark crescent of hair above it. Labels are the exact generating masks;
/// Gaussian noise (noise_sigma) is added to the image only.
ToyFace generate_toy_face(std::mt19937_64& rng, int size, double noise_sigma = 0.05);

/// Writes count images (image_NNNN.ppm) and labels (label_NNNN.pgm) plus
/// manifest.tsv into out_dir. size must be a positive multiple of
/// size_multiple and at least 16.
DatasetManifest generate_toy_faces(std::uint64_t seed, int count, int size, const std::filesystem::path& out_dir,
                                   int classes = kToyClasses, int size_multiple = 8);

/// Adds Gaussian noise of boundary_sigma to pixels within `band` (Chebyshev
/// distance) of a label change and base_sigma everywhere else; clamps to [0, 1].
Tensor augment_boundary_noise(const Tensor& image, const LabelMap& labels, std::uint64_t seed, int band = 2,
                              double boundary_sigma = 0.3, double base_sigma = 0.1);

}  // namespace fccnn::eval
