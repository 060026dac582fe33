#pragma once

#include <stdexcept>
#include <string>

namespace pgrpo {

/// Malformed serialized document (snapshot, checkpoint, metrics line).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Invalid experiment configuration. `path` is the dotted config path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace pgrpo
