#include "stencilseer/run_config.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stencilseer/errors.hpp"

namespace stencilseer {
namespace {

const std::vector<std::pair<std::string, std::string>>& default_values() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"family", "hyperbolic"},
      {"W", "50"},
      {"H", "50"},
      {"n_samples", "101"},
      {"seed", "0"},
      {"depth", "auto"},
      {"widths", "auto"},
      {"coupling", "auto"},
      {"lambda_zs", "0.01"},
      {"lambda_rec", "0"},
      {"lambda_zf", "auto"},
      {"decoder", "0"},
      {"epochs", "150"},
      {"steps_per_epoch", "2000"},
      {"stop_threshold", "1e-11"},
      {"alpha", "1e-4"},
      {"cfl", "0.5"},
      {"a", "1"},
      {"b", "1"},
      {"dx", "1"},
      {"dt", "1"},
      {"out_dir", "run"},
      {"dataset", ""},
      {"weights", ""},
      {"sample", "0"},
      {"factor", "1000"},
      {"base_scale", "1e-3"},
      {"amplitude", "auto"},
      {"perturb", "additive"},
      {"depths", "1,2,3"},
      {"k1", "1,2,3"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i]);
  }
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : default_values()) values_[k] = v;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& kv : default_values()) out.push_back(kv.first);
    return out;
  }();
  return k;
}

bool RunConfig::known(const std::string& key) {
  const auto& k = keys();
  return std::find(k.begin(), k.end(), key) != k.end();
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!known(key)) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    }
    values_[key] = trim(line.substr(eq + 1));
  }
}

double RunConfig::number(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

std::uint64_t RunConfig::unsigned_integer(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s +
                      "' is not a non-negative integer");
  }
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
}

std::vector<std::size_t> RunConfig::list(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError("config key '" + key + "': bad list '" + get(key) + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

Family RunConfig::family() const { return parse_family(get("family")); }

GenConfig RunConfig::gen_config() const {
  GenConfig g;
  g.family = family();
  g.W = unsigned_integer("W");
  g.H = unsigned_integer("H");
  g.n_samples = unsigned_integer("n_samples");
  g.seed = unsigned_integer("seed");
  g.alpha = number("alpha");
  g.cfl = number("cfl");
  g.a = number("a");
  g.b = number("b");
  g.dx = number("dx");
  g.dt = number("dt");
  g.validate();
  if (g.n_samples < 2) throw ConfigError("n_samples must be >= 2");
  return g;
}

ModelConfig RunConfig::model_config() const {
  const Family fam = family();
  ModelConfig m = ModelConfig::defaults(fam);
  if (!is_auto("widths")) {
    m.widths = list("widths");
    if (!is_auto("depth") && unsigned_integer("depth") != m.widths.size()) {
      throw ConfigError("depth does not match the number of widths");
    }
  } else if (!is_auto("depth")) {
    const std::size_t depth = unsigned_integer("depth");
    if (depth == 0) throw ConfigError("depth must be >= 1");
    if (depth != m.depth()) m.widths.assign(depth, family_channels(fam));
  }
  if (!is_auto("coupling")) m.coupling = flag("coupling");
  if (!is_auto("lambda_zf")) m.lambda_zf = number("lambda_zf");
  m.lambda_zs = number("lambda_zs");
  m.lambda_rec = number("lambda_rec");
  m.decoder = flag("decoder");
  m.validate();
  return m;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.epochs = unsigned_integer("epochs");
  t.steps_per_epoch = unsigned_integer("steps_per_epoch");
  t.stop_threshold = number("stop_threshold");
  t.seed = unsigned_integer("seed");
  if (t.steps_per_epoch == 0) throw ConfigError("steps_per_epoch must be >= 1");
  return t;
}

std::filesystem::path RunConfig::out_dir() const {
  const std::string& d = get("out_dir");
  if (d.empty()) throw ConfigError("out_dir must not be empty");
  return d;
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  const ModelConfig m = model_config();
  r.values_["widths"] = join(m.widths);
  r.values_["depth"] = std::to_string(m.depth());
  r.values_["coupling"] = m.coupling ? "1" : "0";
  r.values_["lambda_zf"] = format_double(m.lambda_zf);
  r.values_["family"] = std::string(family_name(family()));
  if (r.is_auto("amplitude")) r.values_["amplitude"] = format_double(10.0 * number("alpha"));
  return r;
}

void RunConfig::write(const std::filesystem::path& path) const {
  const RunConfig r = resolved();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (const auto& k : keys()) out << k << '=' << r.values_.at(k) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    const auto n = in.gcount();
    if (n > 0) {
      crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()),
                  static_cast<uInt>(n));
    }
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {
constexpr const char* kManifest = "manifest.txt";
constexpr const char* kLock = ".lock";
}  // namespace

std::vector<ManifestEntry> write_manifest(const std::filesystem::path& dir) {
  std::vector<ManifestEntry> entries;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == kManifest || name == kLock) continue;
    entries.push_back({name, e.file_size(), file_crc32(e.path())});
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  std::ofstream out(dir / kManifest);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << "# crc32 size name\n";
  for (const auto& e : entries) {
    std::array<char, 9> hex{};
    std::snprintf(hex.data(), hex.size(), "%08x", e.crc);
    out << hex.data() << ' ' << e.size << ' ' << e.name << '\n';
  }
  return entries;
}

std::vector<std::string> check_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw FormatError("no manifest in " + dir.string());
  std::vector<std::string> problems;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string hex, name;
    std::uintmax_t size = 0;
    if (!(ls >> hex >> size >> name) || hex.size() != 8) {
      throw FormatError("malformed manifest line: " + line);
    }
    const auto expected = static_cast<std::uint32_t>(std::stoul(hex, nullptr, 16));
    const auto path = dir / name;
    if (!std::filesystem::is_regular_file(path)) {
      problems.push_back(name + ": missing");
      continue;
    }
    if (std::filesystem::file_size(path) != size) {
      problems.push_back(name + ": size mismatch");
      continue;
    }
    if (file_crc32(path) != expected) problems.push_back(name + ": CRC32 mismatch");
  }
  return problems;
}

}  // namespace stencilseer
