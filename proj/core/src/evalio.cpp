#include "fccnn/evalio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "fccnn/binary_io.hpp"
#include "fccnn/error.hpp"

namespace fccnn::eval {

namespace {

void check_same_extent(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width || a.labels.size() != b.labels.size()) {
    throw InvalidArgument("label maps differ in extent: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                          " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

// Minimal PNM header tokenizer: whitespace separated fields, '#' comments.
class PnmHeader {
 public:
  explicit PnmHeader(const std::vector<char>& bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1L << 24)) throw FormatError("PNM header value too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError("expected a number in PNM header", start);
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError("missing whitespace before PNM raster", pos_);
    }
    return pos_ + 1;
  }

  std::size_t offset() const noexcept { return pos_; }
  void advance(std::size_t n) noexcept { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size()) throw FormatError("truncated PNM header", pos_);
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

struct RawPnm {
  int channels = 0;
  int height = 0;
  int width = 0;
  int maxval = 255;
  std::vector<std::uint8_t> raster;
};

RawPnm read_pnm(const std::filesystem::path& path) {
  const std::vector<char> bytes = io::read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(path.string() + ": not a binary PGM/PPM file", 0);
  }
  RawPnm pnm;
  pnm.channels = bytes[1] == '5' ? 1 : 3;
  PnmHeader header(bytes);
  header.advance(2);
  pnm.width = header.next_int();
  pnm.height = header.next_int();
  const std::size_t maxval_at = header.offset();
  pnm.maxval = header.next_int();
  if (pnm.width < 1 || pnm.height < 1) throw FormatError(path.string() + ": empty image", maxval_at);
  if (pnm.maxval < 1 || pnm.maxval > 255) {
    throw FormatError(path.string() + ": only 8-bit PNM is supported, maxval " + std::to_string(pnm.maxval), maxval_at);
  }
  const std::size_t start = header.raster_start();
  const std::size_t need = static_cast<std::size_t>(pnm.width) * pnm.height * pnm.channels;
  if (bytes.size() < start + need) {
    throw FormatError(path.string() + ": raster truncated, expected " + std::to_string(need) + " bytes", bytes.size());
  }
  pnm.raster.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  return pnm;
}

void write_pnm(const std::filesystem::path& path, int channels, int height, int width,
               const std::vector<std::uint8_t>& raster) {
  std::ostringstream header;
  header << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
  std::vector<char> bytes;
  const std::string h = header.str();
  bytes.insert(bytes.end(), h.begin(), h.end());
  bytes.insert(bytes.end(), raster.begin(), raster.end());
  io::write_file(path, bytes);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

// ------------------------------------------------------------------ metrics

ClassScore score(const Confusion& c) noexcept {
  ClassScore s;
  s.precision = (c.tp + c.fp) == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fp);
  s.recall = (c.tp + c.fn) == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fn);
  s.f = (s.precision + s.recall) == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

Confusion confusion(const LabelMap& pred, const LabelMap& gt, int class_id) {
  check_same_extent(pred, gt);
  Confusion c;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const bool p = pred.labels[i] == class_id;
    const bool g = gt.labels[i] == class_id;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

ClassScore f_measure(const LabelMap& pred, const LabelMap& gt, int class_id) {
  if (class_id < 0 || class_id > 255) throw InvalidArgument("f_measure: class id out of range");
  return score(confusion(pred, gt, class_id));
}

double EvalReport::mean_f() const noexcept {
  if (per_class.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : per_class) s += c.f;
  return s / static_cast<double>(per_class.size());
}

EvalReport evaluate(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int classes,
                    Aggregation aggregation) {
  if (preds.empty() || preds.size() != gts.size()) {
    throw InvalidArgument("evaluate: need equally many (and at least one) predictions and ground truths, got " +
                          std::to_string(preds.size()) + " and " + std::to_string(gts.size()));
  }
  if (classes < 1) throw InvalidArgument("evaluate: classes must be positive");
  EvalReport report;
  report.per_class.resize(classes);
  std::vector<Confusion> pooled(classes);
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    check_same_extent(preds[n], gts[n]);
    for (std::size_t i = 0; i < gts[n].labels.size(); ++i) correct += preds[n].labels[i] == gts[n].labels[i];
    total += gts[n].labels.size();
    for (int k = 0; k < classes; ++k) {
      const Confusion c = confusion(preds[n], gts[n], k);
      if (aggregation == Aggregation::Micro) {
        pooled[k].tp += c.tp;
        pooled[k].fp += c.fp;
        pooled[k].fn += c.fn;
      } else {
        const ClassScore s = score(c);
        report.per_class[k].precision += s.precision;
        report.per_class[k].recall += s.recall;
        report.per_class[k].f += s.f;
      }
    }
  }
  for (int k = 0; k < classes; ++k) {
    if (aggregation == Aggregation::Micro) {
      report.per_class[k] = score(pooled[k]);
    } else {
      const double inv = 1.0 / static_cast<double>(preds.size());
      report.per_class[k].precision *= inv;
      report.per_class[k].recall *= inv;
      report.per_class[k].f *= inv;
    }
  }
  report.overall_accuracy = total == 0 ? 0.0 : double(correct) / double(total);
  for (int k = 0; k < classes; ++k) report.class_names.push_back("class" + std::to_string(k));
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "classes = " << report.classes() << '\n';
  for (int k = 0; k < report.classes(); ++k) {
    const std::string name = k < static_cast<int>(report.class_names.size()) ? report.class_names[k] : "";
    os << "class_name_" << k << " = " << name << '\n';
    os << "f_class_" << k << " = " << report.per_class[k].f << '\n';
    os << "precision_" << k << " = " << report.per_class[k].precision << '\n';
    os << "recall_" << k << " = " << report.per_class[k].recall << '\n';
  }
  os << "overall_accuracy = " << report.overall_accuracy << '\n';
  return os.str();
}

EvalReport parse_report(std::string_view text) {
  EvalReport report;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool have_accuracy = false;
  const auto ensure = [&](int k) {
    if (k < 0 || k > 255) throw InvalidArgument("report: class index out of range on line " + std::to_string(line_no));
    if (k >= report.classes()) {
      report.per_class.resize(k + 1);
      report.class_names.resize(k + 1);
    }
  };
  const auto to_double = [&](const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) {
      throw InvalidArgument("report: bad number '" + v + "' on line " + std::to_string(line_no));
    }
    return d;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw InvalidArgument("report: missing '=' on line " + std::to_string(line_no));
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    const auto indexed = [&](std::string_view prefix) -> int {
      if (key.rfind(prefix, 0) != 0) return -1;
      const std::string idx = key.substr(prefix.size());
      if (idx.empty() || !std::all_of(idx.begin(), idx.end(), [](char c) { return std::isdigit((unsigned char)c); })) {
        return -1;
      }
      return std::stoi(idx);
    };
    if (key == "overall_accuracy") {
      report.overall_accuracy = to_double(value);
      have_accuracy = true;
    } else if (key == "classes") {
      ensure(static_cast<int>(to_double(value)) - 1);
    } else if (int k = indexed("class_name_"); k >= 0) {
      ensure(k);
      report.class_names[k] = value;
    } else if (int k2 = indexed("f_class_"); k2 >= 0) {
      ensure(k2);
      report.per_class[k2].f = to_double(value);
    } else if (int k3 = indexed("precision_"); k3 >= 0) {
      ensure(k3);
      report.per_class[k3].precision = to_double(value);
    } else if (int k4 = indexed("recall_"); k4 >= 0) {
      ensure(k4);
      report.per_class[k4].recall = to_double(value);
    } else {
      throw InvalidArgument("report: unknown key '" + key + "' on line " + std::to_string(line_no));
    }
  }
  if (!have_accuracy) throw InvalidArgument("report: missing overall_accuracy");
  return report;
}

std::string format_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "";
  for (int k = 0; k < report.classes(); ++k) {
    const std::string name = k < static_cast<int>(report.class_names.size()) && !report.class_names[k].empty()
                                 ? report.class_names[k]
                                 : "class" + std::to_string(k);
    os << std::right << std::setw(14) << ("F-" + name);
  }
  os << std::setw(18) << "overall accuracy" << '\n';
  os << std::left << std::setw(10) << "model" << std::right << std::fixed << std::setprecision(2);
  for (int k = 0; k < report.classes(); ++k) os << std::setw(14) << 100.0 * report.per_class[k].f;
  os << std::setw(18) << 100.0 * report.overall_accuracy << '\n';
  return os.str();
}

// ---------------------------------------------------------------------- I/O

Tensor load_image(const std::filesystem::path& path) {
  const RawPnm pnm = read_pnm(path);
  Tensor image(pnm.channels, pnm.height, pnm.width);
  for (int y = 0; y < pnm.height; ++y) {
    for (int x = 0; x < pnm.width; ++x) {
      for (int c = 0; c < pnm.channels; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * pnm.width + x) * pnm.channels + c;
        image(c, y, x) = double(pnm.raster[i]) / pnm.maxval;
      }
    }
  }
  return image;
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw InvalidArgument("save_image: need 1 or 3 channels, got " + image.shape_string());
  }
  std::vector<std::uint8_t> raster(image.size());
  std::size_t i = 0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        const double v = std::clamp(image(c, y, x), 0.0, 1.0);
        raster[i++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  write_pnm(path, image.channels(), image.height(), image.width(), raster);
}

LabelMap load_labels(const std::filesystem::path& path, int classes) {
  const RawPnm pnm = read_pnm(path);
  if (pnm.channels != 1) throw FormatError(path.string() + ": label map must be a single-channel PGM", 1);
  LabelMap labels(pnm.height, pnm.width);
  labels.labels = pnm.raster;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] >= classes) {
      throw InvalidArgument(path.string() + ": label " + std::to_string(labels.labels[i]) + " at pixel " +
                            std::to_string(i) + " is not below the class count " + std::to_string(classes));
    }
  }
  return labels;
}

void save_labelmap(const LabelMap& labels, const std::filesystem::path& path) {
  if (labels.labels.size() != static_cast<std::size_t>(labels.height) * labels.width || labels.labels.empty()) {
    throw InvalidArgument("save_labelmap: inconsistent label map");
  }
  write_pnm(path, 1, labels.height, labels.width, labels.labels);
}

Tensor colorize_labels(const LabelMap& labels, const Tensor* image, double alpha) {
  static constexpr double kPalette[][3] = {
      {0.0, 0.0, 0.0}, {1.0, 0.8, 0.6}, {0.6, 0.2, 0.1}, {0.2, 0.6, 1.0},
      {0.3, 0.9, 0.3}, {0.9, 0.3, 0.9}, {1.0, 1.0, 0.2}, {0.5, 0.5, 0.5},
  };
  Tensor out(3, labels.height, labels.width);
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const double* col = kPalette[labels.at(y, x) % 8];
      for (int c = 0; c < 3; ++c) {
        double v = col[c];
        if (image) {
          const double base = (*image)(std::min(c, image->channels() - 1), y, x);
          v = alpha * v + (1.0 - alpha) * base;
        }
        out(c, y, x) = v;
      }
    }
  }
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open manifest " + path.string());
  DatasetManifest manifest;
  const auto base = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const std::string_view body = std::string_view(t).substr(1);
      const auto colon = body.find(':');
      if (colon != std::string_view::npos && trim(body.substr(0, colon)) == "classes") {
        manifest.class_names.clear();
        std::istringstream names{trim(body.substr(colon + 1))};
        std::string name;
        while (std::getline(names, name, ',')) manifest.class_names.push_back(trim(name));
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": expected image<TAB>labels");
    }
    std::filesystem::path image = trim(std::string_view(line).substr(0, tab));
    std::filesystem::path label = trim(std::string_view(line).substr(tab + 1));
    if (image.is_relative()) image = base / image;
    if (label.is_relative()) label = base / label;
    manifest.entries.push_back({image, label});
  }
  if (manifest.class_names.empty()) {
    throw InvalidArgument(path.string() + ": manifest lacks a '# classes: ...' header");
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  out << "# classes: ";
  for (std::size_t k = 0; k < manifest.class_names.size(); ++k) out << (k ? "," : "") << manifest.class_names[k];
  out << '\n';
  const auto base = path.parent_path();
  for (const auto& e : manifest.entries) {
    out << e.image.lexically_proximate(base).string() << '\t' << e.labels.lexically_proximate(base).string() << '\n';
  }
}

// -------------------------------------------------------- synthetic dataset

ToyFace generate_toy_face(std::mt19937_64& rng, int size, double noise_sigma) {
  if (size < 16) throw InvalidArgument("generate_toy_face: size must be at least 16");
  const double s = size;
  ToyFace face;
  face.image = Tensor(3, size, size);
  face.labels = LabelMap(size, size);

  double bg0[3];
  double bg1[3];
  for (double* bg : {bg0, bg1}) {
    bg[0] = uniform(rng, 0.15, 0.45);
    bg[1] = uniform(rng, 0.35, 0.70);
    bg[2] = uniform(rng, 0.55, 0.90);
  }
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  double tex_freq[3][2];
  double tex_phase[3];
  for (int k = 0; k < 3; ++k) {
    tex_freq[k][0] = uniform(rng, 0.1, 0.6);
    tex_freq[k][1] = uniform(rng, 0.1, 0.6);
    tex_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }

  const double cx = s * uniform(rng, 0.42, 0.58);
  const double cy = s * uniform(rng, 0.52, 0.62);
  const double ax = s * uniform(rng, 0.17, 0.23);
  const double ay = s * uniform(rng, 0.22, 0.28);
  const double skin[3] = {uniform(rng, 0.78, 0.95), uniform(rng, 0.55, 0.72), uniform(rng, 0.42, 0.58)};

  const double lift = s * uniform(rng, 0.04, 0.07);
  const double thick = s * uniform(rng, 0.07, 0.11);
  const double hair[3] = {uniform(rng, 0.10, 0.35), uniform(rng, 0.05, 0.25), uniform(rng, 0.02, 0.18)};

  std::normal_distribution<double> noise(0.0, noise_sigma);
  const double dir_x = std::cos(angle);
  const double dir_y = std::sin(angle);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const double in_skin = ((px - cx) / ax) * ((px - cx) / ax) + ((py - cy) / ay) * ((py - cy) / ay);
      const double hx = (px - cx) / (ax + thick);
      const double hy = (py - (cy - lift)) / (ay + thick);
      const bool is_skin = in_skin <= 1.0;
      const bool is_hair = !is_skin && hx * hx + hy * hy <= 1.0 && py < cy;

      double rgb[3];
      if (is_skin) {
        std::copy(skin, skin + 3, rgb);
        face.labels.at(y, x) = 1;
      } else if (is_hair) {
        std::copy(hair, hair + 3, rgb);
        face.labels.at(y, x) = 2;
      } else {
        const double t = std::clamp(0.5 + ((px / s - 0.5) * dir_x + (py / s - 0.5) * dir_y), 0.0, 1.0);
        double texture = 0.0;
        for (int k = 0; k < 3; ++k) texture += 0.03 * std::sin(tex_freq[k][0] * px + tex_freq[k][1] * py + tex_phase[k]);
        for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - t) * bg0[c] + t * bg1[c] + texture;
        face.labels.at(y, x) = 0;
      }
      for (int c = 0; c < 3; ++c) face.image(c, y, x) = std::clamp(rgb[c] + noise(rng), 0.0, 1.0);
    }
  }
  return face;
}

DatasetManifest generate_toy_faces(std::uint64_t seed, int count, int size, const std::filesystem::path& out_dir,
                                   int classes, int size_multiple) {
  if (count < 1) throw InvalidArgument("generate_toy_faces: count must be at least 1");
  if (classes != kToyClasses) throw InvalidArgument("generate_toy_faces: the toy task has exactly 3 classes");
  if (size_multiple < 1 || size < 16 || size % size_multiple != 0) {
    throw InvalidArgument("generate_toy_faces: size " + std::to_string(size) + " must be >= 16 and divisible by " +
                          std::to_string(size_multiple));
  }
  std::filesystem::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  DatasetManifest manifest;
  manifest.class_names = toy_class_names();
  for (int n = 0; n < count; ++n) {
    const ToyFace face = generate_toy_face(rng, size);
    std::ostringstream stem;
    stem << std::setw(4) << std::setfill('0') << n;
    const auto image_path = out_dir / ("image_" + stem.str() + ".ppm");
    const auto label_path = out_dir / ("label_" + stem.str() + ".pgm");
    save_image(face.image, image_path);
    save_labelmap(face.labels, label_path);
    manifest.entries.push_back({image_path, label_path});
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

Tensor augment_boundary_noise(const Tensor& image, const LabelMap& labels, std::uint64_t seed, int band,
                              double boundary_sigma, double base_sigma) {
  if (image.height() != labels.height || image.width() != labels.width) {
    throw InvalidArgument("augment_boundary_noise: image and labels differ in extent");
  }
  const int h = labels.height;
  const int w = labels.width;
  std::vector<std::uint8_t> near(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool edge = (x + 1 < w && labels.at(y, x + 1) != labels.at(y, x)) ||
                        (y + 1 < h && labels.at(y + 1, x) != labels.at(y, x));
      if (!edge) continue;
      for (int yy = std::max(0, y - band); yy <= std::min(h - 1, y + 1 + band); ++yy)
        for (int xx = std::max(0, x - band); xx <= std::min(w - 1, x + 1 + band); ++xx)
          near[static_cast<std::size_t>(yy) * w + xx] = 1;
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Tensor out = image;
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double sigma = near[static_cast<std::size_t>(y) * w + x] ? boundary_sigma : base_sigma;
        out(c, y, x) = std::clamp(out(c, y, x) + sigma * unit(rng), 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace fccnn::eval
