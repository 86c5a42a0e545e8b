#include "ramreid/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ramreid/error.hpp"

namespace ramreid {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view text, char separator) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(separator, start);
    parts.push_back(trim(text.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source) {
  KeyValueConfig config;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    const std::string line = trim(text.substr(start, end == std::string_view::npos ? end : end - start));
    ++line_no;
    if (!line.empty() && line[0] != '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": expected `key = value`");
      }
      const std::string key = trim(std::string_view(line).substr(0, eq));
      if (key.empty() || key.find('.') == std::string::npos) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": key `" + key +
                         "` must have the form section.key");
      }
      config.values_[key] = trim(std::string_view(line).substr(eq + 1));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string& KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key " + key);
  return it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  const std::string& text = get_string(key);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key " + key + " expects an integer, got `" + text + "`");
  }
  return value;
}

std::size_t KeyValueConfig::get_size(const std::string& key) const {
  const std::int64_t value = get_int(key);
  if (value < 0) throw ConfigError("config key " + key + " must be non-negative");
  return static_cast<std::size_t>(value);
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string& text = get_string(key);
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::logic_error&) {
    throw ConfigError("config key " + key + " expects a number, got `" + text + "`");
  }
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string& text = get_string(key);
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key " + key + " expects a boolean, got `" + text + "`");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key, char separator) const {
  const std::string& text = get_string(key);
  if (text.empty()) return {};
  return split(text, separator);
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [key, value] : other.values_) values_[key] = value;
}

std::string KeyValueConfig::to_string() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
  return out.str();
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_string();
}

KeyValueConfig default_run_config() {
  KeyValueConfig c;
  // Synthetic region-cue dataset.
  c.set("synthetic.num_ids", "20");
  c.set("synthetic.images_per_id", "10");
  c.set("synthetic.height", "32");
  c.set("synthetic.width", "32");
  c.set("synthetic.num_colors", "4");
  c.set("synthetic.num_types", "3");
  c.set("synthetic.cue_region", "cycle");
  c.set("synthetic.patch_h", "6");
  c.set("synthetic.patch_w", "10");
  c.set("synthetic.noise_std", "0.25");
  c.set("synthetic.test_ids", "10");
  c.set("synthetic.queries_per_id", "2");
  c.set("synthetic.seed", "1");
  // Manifest-backed data.
  c.set("data.manifest", "");
  c.set("data.resize", "nearest");
  // Model.
  c.set("model.input_c", "3");
  c.set("model.input_h", "32");
  c.set("model.input_w", "32");
  c.set("model.stem", "conv:8:3:1:0,relu,maxpool:2:2,conv:8:3:1:0,relu");
  c.set("model.pool_kernel", "3");
  c.set("model.pool_stride", "2");
  c.set("model.regions", "3");
  c.set("model.region_h", "7");
  c.set("model.region_overlap", "4");
  c.set("model.fc_dim", "64");
  c.set("model.bn_momentum", "0.9");
  c.set("model.bn_epsilon", "1e-5");
  c.set("model.normalize_features", "true");
  c.set("model.attributes", "color,type");
  // Training.
  c.set("train.learning_rate", "0.001");
  c.set("train.lr_decay", "0.1");
  c.set("train.lr_decay_epochs", "10");
  c.set("train.momentum", "0");
  c.set("train.batch_size", "16");
  c.set("train.epochs_per_stage", "30");
  c.set("train.lambda1", "1");
  c.set("train.lambda2", "1");
  c.set("train.lambda3", "1");
  c.set("train.region_loss", "mean");
  c.set("train.stages", "conv,bn,region,attribute");
  c.set("train.seed", "1");
  // Evaluation.
  c.set("eval.checkpoint", "");
  c.set("eval.protocol", "fixed_split");
  c.set("eval.trials", "10");
  c.set("eval.seed", "1");
  c.set("eval.exclude_same_camera", "true");
  c.set("eval.distance", "euclidean");
  c.set("eval.k_max", "10");
  c.set("eval.subset_ids", "0");
  c.set("eval.selections", "f_c,f_c+f_b,f_c+f_b+f_r,f_c+f_b+f_r+f_a");
  return c;
}

KeyValueConfig resolve_run_config(const KeyValueConfig& file, const KeyValueConfig& overrides) {
  KeyValueConfig resolved = default_run_config();
  for (const KeyValueConfig* layer : {&file, &overrides}) {
    for (const auto& [key, value] : layer->entries()) {
      if (!resolved.contains(key)) throw ConfigError("unknown config key " + key);
      resolved.set(key, value);
    }
  }
  return resolved;
}

}  // namespace ramreid
