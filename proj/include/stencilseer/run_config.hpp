#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stencilseer/datagen.hpp"
#include "stencilseer/model.hpp"

namespace stencilseer {

/// Flat key=value run configuration. Every key has a default; "auto" values
/// resolve against the family (widths, depth, coupling, lambda_zf,
/// amplitude).
class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::string>& keys();
  static bool known(const std::string& key);

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_auto(const std::string& key) const { return get(key) == "auto"; }

  /// Reads `key = value` lines; `#` starts a comment. Unknown keys and
  /// malformed lines throw ConfigError.
  void load_file(const std::filesystem::path& path);

  double number(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> list(const std::string& key) const;

  Family family() const;
  GenConfig gen_config() const;
  ModelConfig model_config() const;
  TrainOptions train_options() const;
  std::filesystem::path out_dir() const;

  /// Copy with every "auto" replaced by its concrete value.
  RunConfig resolved() const;
  /// Writes the resolved values, one `key=value` line per key.
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

/// zlib CRC32 of a file's bytes.
std::uint32_t file_crc32(const std::filesystem::path& path);

struct ManifestEntry {
  std::string name;
  std::uintmax_t size = 0;
  std::uint32_t crc = 0;
};

/// Writes `manifest.txt` listing every regular file in `dir` except the
/// manifest and lock files.
std::vector<ManifestEntry> write_manifest(const std::filesystem::path& dir);

/// Re-reads the manifest and reports every mismatch; empty when the run
/// directory is intact. Throws FormatError when the manifest is unreadable.
std::vector<std::string> check_manifest(const std::filesystem::path& dir);

}  // namespace stencilseer
