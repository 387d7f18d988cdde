#include "fccnn_cli/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fccnn/config.hpp"
#include "fccnn/error.hpp"
#include "fccnn/evalio.hpp"
#include "fccnn/fault.hpp"
#include "fccnn/featnet.hpp"
#include "fccnn/gradcheck.hpp"
#include "fccnn/pipeline.hpp"
#include "fccnn/sp_graph.hpp"

namespace fccnn::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool verbose = false;
};

config::RunConfig resolve_config(const Globals& g) {
  config::RunConfig rc = g.config_path.empty() ? config::RunConfig{} : config::load_config(g.config_path);
  if (g.seed) rc.train.seed = *g.seed;
  if (!g.out_dir.empty()) rc.out_dir = g.out_dir;
  rc.train.validate();
  return rc;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + suffix);
  return out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw InvalidArgument("cannot open " + path.string() + " for writing");
  f << text;
}

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_%03d.fcnn", epoch);
  return buf;
}

// --------------------------------------------------------------- commands

struct GenerateArgs {
  int count = 20;
  int size = 64;
};

int cmd_generate(const Globals& g, const GenerateArgs& a, std::ostream& out) {
  const config::RunConfig rc = resolve_config(g);
  const eval::DatasetManifest m = eval::generate_toy_faces(rc.train.seed, a.count, a.size, rc.out_dir, eval::kToyClasses,
                                                           rc.train.arch.size_multiple());
  out << "wrote " << m.entries.size() << " images to " << rc.out_dir.string() << "\n";
  return kSuccess;
}

struct OversegmentArgs {
  std::string image;
  std::optional<int> superpixels;
  std::optional<double> compactness;
  std::string out;
};

int cmd_oversegment(const Globals& g, const OversegmentArgs& a, std::ostream& out) {
  const config::RunConfig rc = resolve_config(g);
  const Tensor image = eval::load_image(a.image);
  sp::SlicOptions opts;
  opts.compactness = a.compactness.value_or(rc.train.compactness);
  const sp::SuperpixelMap map = sp::oversegment(image, a.superpixels.value_or(rc.train.superpixels), opts);
  const fs::path map_path = a.out.empty() ? rc.out_dir / "superpixels.fcsp" : fs::path(a.out);
  const fs::path overlay = sibling(map_path, "_overlay.ppm");
  ensure_parent(map_path);
  sp::write_map(map, map_path);
  eval::save_image(sp::render_boundaries(image, map), overlay);
  out << "regions=" << map.region_count << "\nmap=" << map_path.string() << "\noverlay=" << overlay.string() << "\n";
  return kSuccess;
}

int cmd_train(const Globals& g, std::ostream& out) {
  if (g.config_path.empty()) throw InvalidArgument("train: --config is required");
  const config::RunConfig rc = resolve_config(g);
  if (rc.train_manifest.empty()) throw InvalidArgument("train: config lacks data.train_manifest");
  const eval::DatasetManifest manifest = eval::read_manifest(rc.train_manifest);
  if (manifest.classes() != rc.train.classes()) {
    throw InvalidArgument("train: manifest has " + std::to_string(manifest.classes()) + " classes, arch.classes is " +
                          std::to_string(rc.train.classes()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<pipeline::Example> data =
      pipeline::load_dataset(manifest, rc.train.superpixels, rc.train.compactness);
  if (g.verbose) out << "loaded " << data.size() << " training images from " << rc.train_manifest.string() << "\n";

  fs::create_directories(rc.out_dir);
  write_text(rc.out_dir / "config.txt", config::echo_config(rc));
  std::ofstream log(rc.out_dir / "metrics.log");
  if (!log) throw InvalidArgument("cannot open " + (rc.out_dir / "metrics.log").string());

  const pipeline::TrainResult result =
      pipeline::train(data, rc.train, [&](const pipeline::EpochMetrics& m, const net::NetParams& params) {
        const std::string line = pipeline::format_metrics(m);
        log << line << "\n";
        log.flush();
        out << line << "\n";
        net::save_checkpoint(params, rc.out_dir / checkpoint_name(m.epoch));
      });
  net::save_checkpoint(result.params, rc.out_dir / "final.fcnn");
  if (g.verbose) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "training took " << secs << " s\n";
  }

  if (!rc.test_manifest.empty()) {
    const eval::DatasetManifest tm = eval::read_manifest(rc.test_manifest);
    const auto test = pipeline::load_dataset(tm, rc.train.superpixels, rc.train.compactness);
    const eval::EvalReport report = pipeline::evaluate_model(test, result.params, rc.train.model, tm.class_names);
    write_text(rc.out_dir / "test_report.txt", eval::format_report(report));
    out << eval::format_table(report);
  }
  return kSuccess;
}

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
};

int cmd_infer(const Globals& g, const InferArgs& a, std::ostream& out) {
  const config::RunConfig rc = resolve_config(g);
  const net::NetParams params = net::load_checkpoint(a.checkpoint, rc.train.arch);
  const Tensor image = eval::load_image(a.image);
  const eval::LabelMap labels = pipeline::infer(image, params, rc.train);
  const fs::path label_path = a.out.empty() ? rc.out_dir / "prediction.pgm" : fs::path(a.out);
  const fs::path overlay = sibling(label_path, "_overlay.ppm");
  ensure_parent(label_path);
  eval::save_labelmap(labels, label_path);
  eval::save_image(eval::colorize_labels(labels, &image), overlay);
  out << "labels=" << label_path.string() << "\noverlay=" << overlay.string() << "\n";
  return kSuccess;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string predictions;
  bool macro = false;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const config::RunConfig rc = resolve_config(g);
  const fs::path manifest_path = a.manifest.empty() ? rc.test_manifest : fs::path(a.manifest);
  if (manifest_path.empty()) throw InvalidArgument("eval: no --manifest given and config lacks data.test_manifest");
  const eval::DatasetManifest manifest = eval::read_manifest(manifest_path);
  const int k = manifest.classes();

  std::vector<eval::LabelMap> gts;
  std::vector<eval::LabelMap> preds;
  if (!a.predictions.empty()) {
    // Predictions manifest: the label column holds predicted maps, aligned
    // entry by entry with the ground-truth manifest.
    const eval::DatasetManifest pm = eval::read_manifest(a.predictions);
    if (pm.entries.size() != manifest.entries.size()) {
      throw InvalidArgument("eval: predictions list " + std::to_string(pm.entries.size()) + " entries, manifest " +
                            std::to_string(manifest.entries.size()));
    }
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      gts.push_back(eval::load_labels(manifest.entries[i].labels, k));
      preds.push_back(eval::load_labels(pm.entries[i].labels, k));
    }
  } else {
    if (a.checkpoint.empty()) throw InvalidArgument("eval: need --checkpoint or --predictions");
    if (k != rc.train.classes()) {
      throw InvalidArgument("eval: manifest has " + std::to_string(k) + " classes, arch.classes is " +
                            std::to_string(rc.train.classes()));
    }
    const net::NetParams params = net::load_checkpoint(a.checkpoint, rc.train.arch);
    const auto data = pipeline::load_dataset(manifest, rc.train.superpixels, rc.train.compactness);
    for (const auto& ex : data) {
      gts.push_back(ex.labels);
      preds.push_back(pipeline::infer(ex, params, rc.train.model));
    }
  }
  eval::EvalReport report =
      eval::evaluate(preds, gts, k, a.macro ? eval::Aggregation::Macro : eval::Aggregation::Micro);
  report.class_names = manifest.class_names;
  out << eval::format_table(report) << "\n" << eval::format_report(report);
  return kSuccess;
}

struct GradcheckArgs {
  std::string mutation;
};

int cmd_gradcheck(const Globals& g, const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  const config::RunConfig rc = resolve_config(g);
  fault::Mutation mutation = rc.mutation;
  if (!a.mutation.empty()) {
    const auto m = fault::parse(a.mutation);
    if (!m) throw InvalidArgument("gradcheck: unknown mutation '" + a.mutation + "'");
    mutation = *m;
  }
  gradcheck::SuiteOptions opts;
  if (g.seed) opts.seed = *g.seed;
  const fault::ScopedMutation guard(mutation);
  if (mutation != fault::Mutation::None) out << "mutation=" << fault::name(mutation) << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<gradcheck::CheckResult> results = gradcheck::run_suite(opts);
  out << gradcheck::format_results(results);
  if (g.verbose) {
    out << "elapsed " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  }
  if (gradcheck::all_passed(results)) {
    out << "all " << results.size() << " checks passed\n";
    return kSuccess;
  }
  err << "failing checks:";
  for (const auto& r : results) {
    if (!r.passed) err << " " << r.name;
  }
  err << "\n";
  return kCheckFailed;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Superpixel C-CRF face parsing toolkit", "fccnn"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Run configuration file (key = value)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--out-dir", g.out_dir, "Override the output directory");
  app.add_flag("-v,--verbose", g.verbose, "Print extra progress information");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic toy-face dataset to --out-dir");
  generate->add_option("--count", gen.count, "Number of images")->check(CLI::PositiveNumber);
  generate->add_option("--size", gen.size, "Image side length")->check(CLI::PositiveNumber);

  OversegmentArgs ov;
  auto* overseg = app.add_subcommand("oversegment", "SLIC superpixels for one image");
  overseg->add_option("image", ov.image, "PGM/PPM image")->required();
  overseg->add_option("-n,--superpixels", ov.superpixels, "Target region count");
  overseg->add_option("--compactness", ov.compactness, "SLIC compactness");
  overseg->add_option("-o,--out", ov.out, "Map file to write (overlay goes next to it)");

  auto* train = app.add_subcommand("train", "Train a model from --config");

  InferArgs inf;
  auto* infer = app.add_subcommand("infer", "Label one image with a trained checkpoint");
  infer->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  infer->add_option("image", inf.image, "PGM/PPM image")->required();
  infer->add_option("-o,--out", inf.out, "Label map to write (overlay goes next to it)");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "Score a checkpoint or saved predictions on a manifest");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  evaluate->add_option("--manifest", ev.manifest, "Ground-truth manifest (default: data.test_manifest)");
  evaluate->add_option("--predictions", ev.predictions, "Manifest whose label column holds predicted maps");
  evaluate->add_flag("--macro", ev.macro, "Average per image instead of pooling counts");

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference and oracle checks of every backward pass");
  grad->add_option("--mutation", gc.mutation,
                   "Inject a fault: flip_phi_sign, flip_w_sign or drop_boundary_factor");


  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*generate) return cmd_generate(g, gen, out);
    if (*overseg) return cmd_oversegment(g, ov, out);
    if (*train) return cmd_train(g, out);
    if (*infer) return cmd_infer(g, inf, out);
    if (*evaluate) return cmd_eval(g, ev, out);
    if (*grad) return cmd_gradcheck(g, gc, out, err);
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUsage;
}

}  // namespace fccnn::cli
