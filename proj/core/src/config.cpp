#include "fccnn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fccnn/error.hpp"

namespace fccnn::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

struct Field {
  int line;
  const std::string& key;
  const std::string& value;

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("line " + std::to_string(line) + ": " + key + ": " + why, line, key);
  }

  double as_double() const {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) fail("expected a number, got '" + value + "'");
    return v;
  }

  long long as_int() const {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) fail("expected an integer, got '" + value + "'");
    return v;
  }

  bool as_bool() const {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    fail("expected true or false, got '" + value + "'");
  }

  std::vector<int> as_int_list() const {
    std::vector<int> out;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
      const std::string t = trim(item);
      int v = 0;
      const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) fail("expected a comma-separated integer list");
      out.push_back(v);
    }
    if (out.empty()) fail("empty list");
    return out;
  }
};

using Setter = std::function<void(RunConfig&, const Field&, const std::filesystem::path&)>;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  if (value.empty()) return {};
  std::filesystem::path p = value;
  return p.is_relative() && !base.empty() ? base / p : p;
}

// Input files must exist when the configuration is read.
std::filesystem::path existing_file(const Field& f, const std::filesystem::path& base) {
  std::filesystem::path p = resolve(base, f.value);
  if (!p.empty() && !std::filesystem::is_regular_file(p)) f.fail("no such file: " + p.string());
  return p;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const Field& f, auto&) { c.train.seed = static_cast<std::uint64_t>(f.as_int()); }},
      {"data.train_manifest", [](RunConfig& c, const Field& f, auto& b) { c.train_manifest = existing_file(f, b); }},
      {"data.test_manifest", [](RunConfig& c, const Field& f, auto& b) { c.test_manifest = existing_file(f, b); }},
      {"output.dir", [](RunConfig& c, const Field& f, auto& b) { c.out_dir = resolve(b, f.value); }},
      {"arch.in_channels", [](RunConfig& c, const Field& f, auto&) { c.train.arch.in_channels = int(f.as_int()); }},
      {"arch.classes", [](RunConfig& c, const Field& f, auto&) { c.train.arch.classes = int(f.as_int()); }},
      {"arch.widths", [](RunConfig& c, const Field& f, auto&) { c.train.arch.widths = f.as_int_list(); }},
      {"arch.shared_blocks", [](RunConfig& c, const Field& f, auto&) { c.train.arch.shared_blocks = int(f.as_int()); }},
      {"arch.pairwise_width",
       [](RunConfig& c, const Field& f, auto&) { c.train.arch.pairwise_width = int(f.as_int()); }},
      {"arch.pairwise_blocks",
       [](RunConfig& c, const Field& f, auto&) { c.train.arch.pairwise_blocks = int(f.as_int()); }},
      {"crf.lambda", [](RunConfig& c, const Field& f, auto&) { c.train.model.lambda = f.as_double(); }},
      {"crf.tolerance", [](RunConfig& c, const Field& f, auto&) { c.train.model.solver.tolerance = f.as_double(); }},
      {"crf.max_sweeps",
       [](RunConfig& c, const Field& f, auto&) { c.train.model.solver.max_sweeps = int(f.as_int()); }},
      {"crf.use_pairwise", [](RunConfig& c, const Field& f, auto&) { c.train.model.use_pairwise = f.as_bool(); }},
      {"crf.unary_backward",
       [](RunConfig& c, const Field& f, auto&) {
         if (f.value == "adjoint") {
           c.train.model.unary_backward = pool::UnaryBackwardMode::Adjoint;
         } else if (f.value == "unscaled") {
           c.train.model.unary_backward = pool::UnaryBackwardMode::Unscaled;
         } else {
           f.fail("expected adjoint or unscaled");
         }
       }},
      {"superpixels.target", [](RunConfig& c, const Field& f, auto&) { c.train.superpixels = int(f.as_int()); }},
      {"superpixels.compactness", [](RunConfig& c, const Field& f, auto&) { c.train.compactness = f.as_double(); }},
      {"train.learning_rate", [](RunConfig& c, const Field& f, auto&) { c.train.learning_rate = f.as_double(); }},
      {"train.momentum", [](RunConfig& c, const Field& f, auto&) { c.train.momentum = f.as_double(); }},
      {"train.epochs", [](RunConfig& c, const Field& f, auto&) { c.train.epochs = int(f.as_int()); }},
      {"train.batch_size", [](RunConfig& c, const Field& f, auto&) { c.train.batch_size = int(f.as_int()); }},
      {"train.lr_decay_every", [](RunConfig& c, const Field& f, auto&) { c.train.lr_decay_every = int(f.as_int()); }},
      {"train.lr_decay", [](RunConfig& c, const Field& f, auto&) { c.train.lr_decay = f.as_double(); }},
      {"gradcheck.mutation",
       [](RunConfig& c, const Field& f, auto&) {
         const auto m = fault::parse(f.value);
         if (!m) f.fail("unknown mutation '" + f.value + "'");
         c.mutation = *m;
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig config;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string t = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError("line " + std::to_string(line) + ": malformed section header '" + t + "'", line);
      }
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line) + ": expected 'key = value', got '" + t + "'", line);
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'", line, key);
    }
    it->second(config, Field{line, key, value}, base_dir);
  }
  try {
    config.train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what(), 0);
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string(), 0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.parent_path());
}

namespace {

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string echo_config(const RunConfig& c) {
  std::ostringstream os;
  const auto& t = c.train;
  os << "seed = " << t.seed << '\n';
  os << "data.train_manifest = " << c.train_manifest.string() << '\n';
  os << "data.test_manifest = " << c.test_manifest.string() << '\n';
  os << "output.dir = " << c.out_dir.string() << '\n';
  os << "arch.in_channels = " << t.arch.in_channels << '\n';
  os << "arch.classes = " << t.arch.classes << '\n';
  os << "arch.widths = ";
  for (std::size_t i = 0; i < t.arch.widths.size(); ++i) os << (i ? "," : "") << t.arch.widths[i];
  os << '\n';
  os << "arch.shared_blocks = " << t.arch.shared_blocks << '\n';
  os << "arch.pairwise_width = " << t.arch.pairwise_width << '\n';
  os << "arch.pairwise_blocks = " << t.arch.pairwise_blocks << '\n';
  os << "crf.lambda = " << num(t.model.lambda) << '\n';
  os << "crf.tolerance = " << num(t.model.solver.tolerance) << '\n';
  os << "crf.max_sweeps = " << t.model.solver.max_sweeps << '\n';
  os << "crf.use_pairwise = " << (t.model.use_pairwise ? "true" : "false") << '\n';
  os << "crf.unary_backward = "
     << (t.model.unary_backward == pool::UnaryBackwardMode::Adjoint ? "adjoint" : "unscaled") << '\n';
  os << "superpixels.target = " << t.superpixels << '\n';
  os << "superpixels.compactness = " << num(t.compactness) << '\n';
  os << "train.learning_rate = " << num(t.learning_rate) << '\n';
  os << "train.momentum = " << num(t.momentum) << '\n';
  os << "train.epochs = " << t.epochs << '\n';
  os << "train.batch_size = " << t.batch_size << '\n';
  os << "train.lr_decay_every = " << t.lr_decay_every << '\n';
  os << "train.lr_decay = " << num(t.lr_decay) << '\n';
  os << "gradcheck.mutation = " << fault::name(c.mutation) << '\n';
  return os.str();
}

}  // namespace fccnn::config
