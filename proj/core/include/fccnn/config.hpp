#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "fccnn/error.hpp"
#include "fccnn/fault.hpp"
#include "fccnn/pipeline.hpp"

namespace fccnn::config {

/// Configuration problem tied to a line of the source file (0 if none).
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& what, int line, std::string key = {})
      : InvalidArgument(what), line_(line), key_(std::move(key)) {}

  int line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  int line_;
  std::string key_;
};

/// Everything a CLI run can be configured with.
struct RunConfig {
  pipeline::TrainConfig train;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path out_dir = "fccnn_out";
  fault::Mutation mutation = fault::Mutation::None;
};

/// Flat "key = value" lines; keys use dotted sections ("train.epochs").
/// A "[section]" line prefixes the keys that follow it. '#' starts a comment.
/// Relative paths are resolved against `base_dir`.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Canonical listing of every key, parseable by parse_config.
std::string echo_config(const RunConfig& config);

}  // namespace fccnn::config
