#include "config.h"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

namespace resflow::cli {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::string Format(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  } else {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
  }
}

template <typename T>
T ParseValue(const std::string& key, const std::string& text) {
  auto bad = [&] { return ConfigError("bad value for '" + key + "': '" + text + "'"); };
  if constexpr (std::is_same_v<T, std::string>) {
    if (text.find_first_of(" \t") != std::string::npos) throw bad();
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw bad();
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(ParseValue<int>(key, Trim(item)));
    return out;
  } else {
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) throw bad();
    return v;
  }
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
std::pair<std::string, Field> Bind(const char* name, T RunConfig::*member) {
  return {name,
          {[member](const RunConfig& c) { return Format(c.*member); },
           [member, name](RunConfig& c, const std::string& v) {
             c.*member = ParseValue<T>(name, v);
           }}};
}

// Emission order.
const std::vector<std::pair<std::string, Field>>& Fields() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      Bind("work_dir", &RunConfig::work_dir),
      Bind("manifest", &RunConfig::manifest),
      Bind("output_dir", &RunConfig::output_dir),
      Bind("tile_px", &RunConfig::tile_px),
      Bind("overlap_px", &RunConfig::overlap_px),
      Bind("feature_dim", &RunConfig::feature_dim),
      Bind("n_bits", &RunConfig::n_bits),
      Bind("k", &RunConfig::k),
      Bind("k_min", &RunConfig::k_min),
      Bind("k_max", &RunConfig::k_max),
      Bind("knee_threshold", &RunConfig::knee_threshold),
      Bind("cluster_method", &RunConfig::cluster_method),
      Bind("hash_candidates", &RunConfig::hash_candidates),
      Bind("workers", &RunConfig::workers),
      Bind("devices", &RunConfig::devices),
      Bind("tickets_per_device", &RunConfig::tickets_per_device),
      Bind("simulate", &RunConfig::simulate),
      Bind("cost_base_ms", &RunConfig::cost_base_ms),
      Bind("cost_ms_per_megapixel", &RunConfig::cost_ms_per_megapixel),
      Bind("cost_ms_per_megabyte", &RunConfig::cost_ms_per_megabyte),
      Bind("cost_merge_ms_per_megapixel", &RunConfig::cost_merge_ms_per_megapixel),
      Bind("batch", &RunConfig::batch),
      Bind("baseline_s_per_scene", &RunConfig::baseline_s_per_scene),
      Bind("scheduler_seed", &RunConfig::scheduler_seed),
      Bind("ticket_timeout_ms", &RunConfig::ticket_timeout_ms),
      Bind("seed", &RunConfig::seed),
      Bind("task", &RunConfig::task),
      Bind("epochs", &RunConfig::epochs),
      Bind("learning_rate", &RunConfig::learning_rate),
      Bind("max_pixels", &RunConfig::max_pixels),
      Bind("val_fraction", &RunConfig::val_fraction),
      Bind("train_mono", &RunConfig::train_mono),
      Bind("mono", &RunConfig::mono),
      Bind("synth_scenes", &RunConfig::synth_scenes),
      Bind("synth_distributions", &RunConfig::synth_distributions),
      Bind("synth_tiles_x", &RunConfig::synth_tiles_x),
      Bind("synth_tiles_y", &RunConfig::synth_tiles_y),
      Bind("synth_bands", &RunConfig::synth_bands),
      Bind("synth_dtype", &RunConfig::synth_dtype),
      Bind("synth_gsd_m", &RunConfig::synth_gsd_m),
      Bind("synth_buildings", &RunConfig::synth_buildings),
      Bind("bench_workers", &RunConfig::bench_workers),
      Bind("bench_scenes", &RunConfig::bench_scenes),
      Bind("bench_scene_px", &RunConfig::bench_scene_px),
      Bind("bench_baseline", &RunConfig::bench_baseline),
  };
  return fields;
}

const Field* FindField(const std::string& key) {
  for (const auto& [name, field] : Fields()) {
    if (name == key) return &field;
  }
  return nullptr;
}

}  // namespace

std::filesystem::path RunConfig::ManifestPath() const {
  return manifest.empty() ? std::filesystem::path(work_dir) / "manifest.txt"
                          : std::filesystem::path(manifest);
}

std::filesystem::path RunConfig::OutputDir() const {
  return output_dir.empty() ? std::filesystem::path(work_dir) / "out"
                            : std::filesystem::path(output_dir);
}

void SetConfigValue(RunConfig* config, const std::string& key, const std::string& value) {
  const Field* f = FindField(key);
  if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
  f->set(*config, value);
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const auto& [name, field] : Fields()) keys.push_back(name);
  return keys;
}

RunConfig ParseConfig(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = Trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'");
    SetConfigValue(&base, key, Trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str());
}

std::string EmitConfig(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : Fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

void ApplyEnvironment(RunConfig* config) {
  if (const char* s = std::getenv("RESFLOW_SEED"); s != nullptr && *s != '\0') {
    config->seed = ParseValue<uint64_t>("RESFLOW_SEED", s);
  }
}

void ValidateConfig(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(!c.work_dir.empty(), "work_dir must be set");
  require(c.tile_px > 0, "tile_px must be positive");
  require(c.overlap_px >= 0 && c.overlap_px < c.tile_px, "overlap_px must lie in [0, tile_px)");
  require(c.feature_dim > 0, "feature_dim must be positive");
  require(c.n_bits > 0, "n_bits must be positive");
  require(c.k >= 0, "k must be non-negative");
  require(c.k > 0 || (c.k_min >= 1 && c.k_max >= c.k_min), "empty k range");
  require(c.knee_threshold > 0.0 && c.knee_threshold < 1.0, "knee_threshold must lie in (0, 1)");
  require(c.cluster_method == "kmeans" || c.cluster_method == "agglomerative",
          "cluster_method must be kmeans or agglomerative");
  require(c.hash_candidates > 0, "hash_candidates must be positive");
  require(c.workers > 0 && c.devices > 0 && c.tickets_per_device > 0,
          "workers, devices and tickets_per_device must be positive");
  require(c.cost_base_ms >= 0 && c.cost_ms_per_megapixel >= 0 && c.cost_ms_per_megabyte >= 0 &&
              c.cost_merge_ms_per_megapixel >= 0,
          "cost coefficients must be non-negative");
  require(c.batch > 0, "batch must be positive");
  require(c.baseline_s_per_scene > 0, "baseline_s_per_scene must be positive");
  require(c.ticket_timeout_ms > 0, "ticket_timeout_ms must be positive");
  require(!c.task.empty(), "task must be set");
  require(c.epochs > 0 && c.learning_rate > 0 && c.max_pixels > 0, "bad training parameters");
  require(c.val_fraction >= 0.0 && c.val_fraction < 1.0, "val_fraction must lie in [0, 1)");
  require(c.synth_scenes > 0 && c.synth_distributions > 0 && c.synth_tiles_x > 0 &&
              c.synth_tiles_y > 0 && c.synth_bands > 0 && c.synth_gsd_m > 0 &&
              c.synth_buildings >= 0,
          "bad synth parameters");
  require(c.synth_dtype == "u8" || c.synth_dtype == "u16" || c.synth_dtype == "f32",
          "synth_dtype must be u8, u16 or f32");
  for (int w : c.bench_workers) require(w > 0, "bench_workers entries must be positive");
  for (int s : c.bench_scenes) require(s > 0, "bench_scenes entries must be positive");
  require(c.bench_scene_px > 0, "bench_scene_px must be positive");
  require(c.bench_baseline == "measured" || c.bench_baseline == "config",
          "bench_baseline must be measured or config");
}

}  // namespace resflow::cli
