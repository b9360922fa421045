#include "focalforge/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace focalforge {

ConfigError::ConfigError(const std::string& origin, int line, const std::string& what)
    : ValidationError(origin + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_int(const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("expects a number, got '" + v + "'");
  return d;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expects true or false, got '" + v + "'");
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
    return v.substr(1, v.size() - 2);
  return v;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

// Lens focus <= 0 means "sample per image"; validate the rest.
void validate_lens(const LensParams& lens) {
  LensParams l = lens;
  if (l.focus_distance_m <= 0.0) l.focus_distance_m = 2.0;
  l.validate();
}

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"lens",
       {
           {"focal_length", [](RunConfig& c, const std::string& v) { c.lens.focal_length_mm = parse_double(v); }},
           {"aperture_diameter", [](RunConfig& c, const std::string& v) { c.lens.aperture_mm = parse_double(v); }},
           {"focus_distance", [](RunConfig& c, const std::string& v) { c.lens.focus_distance_m = parse_double(v); }},
           {"pixels_per_mm", [](RunConfig& c, const std::string& v) { c.lens.pixels_per_mm = parse_double(v); }},
           {"coc_to_sigma", [](RunConfig& c, const std::string& v) { c.lens.coc_to_sigma = parse_double(v); }},
           {"sigma_max", [](RunConfig& c, const std::string& v) { c.lens.sigma_max = parse_double(v); }},
       }},
      {"degrade",
       {
           {"scale_factor", [](RunConfig& c, const std::string& v) { c.degrade.scale_factor = parse_int<int>(v); }},
           {"kernel_size", [](RunConfig& c, const std::string& v) { c.degrade.kernel_size = parse_int<int>(v); }},
           {"noise_sigma", [](RunConfig& c, const std::string& v) { c.degrade.noise_sigma = parse_double(v); }},
           {"lut_bins", [](RunConfig& c, const std::string& v) { c.degrade.lut_bins = parse_int<int>(v); }},
           {"mode",
            [](RunConfig& c, const std::string& v) {
              if (v == "exact")
                c.degrade.mode = BlurMode::kExact;
              else if (v == "lut")
                c.degrade.mode = BlurMode::kLut;
              else
                throw std::invalid_argument("expects exact or lut, got '" + v + "'");
            }},
           {"decimation_offset",
            [](RunConfig& c, const std::string& v) { c.degrade.decimation_offset = parse_int<int>(v); }},
           {"sigma_max", [](RunConfig& c, const std::string& v) { c.degrade.sigma_max = parse_double(v); }},
       }},
      {"dataset",
       {
           {"name", [](RunConfig& c, const std::string& v) { c.dataset.name = v; }},
           {"preset",
            [](RunConfig& c, const std::string& v) {
              const std::uint64_t seed = c.dataset.seed;
              if (v == "nyuv2") {
                c.dataset = DatasetSpec::nyuv2();
                c.splits = {795, 0, 654};
              } else if (v == "cityscapes") {
                c.dataset = DatasetSpec::cityscapes();
                c.splits = {2975, 500, 1525};
              } else {
                throw std::invalid_argument("expects nyuv2 or cityscapes, got '" + v + "'");
              }
              c.dataset.seed = seed;
            }},
           {"sigma_max", [](RunConfig& c, const std::string& v) { c.dataset.sigma_max = parse_double(v); }},
           {"kernel_size", [](RunConfig& c, const std::string& v) { c.dataset.kernel_size = parse_int<int>(v); }},
           {"scale_factor", [](RunConfig& c, const std::string& v) { c.dataset.scale_factor = parse_int<int>(v); }},
           {"invariant_fraction",
            [](RunConfig& c, const std::string& v) { c.dataset.invariant_fraction = parse_double(v); }},
           {"groups", [](RunConfig& c, const std::string& v) { c.dataset.groups = parse_int<int>(v); }},
           {"image_height", [](RunConfig& c, const std::string& v) { c.dataset.image_height = parse_int<int>(v); }},
           {"image_width", [](RunConfig& c, const std::string& v) { c.dataset.image_width = parse_int<int>(v); }},
           {"train", [](RunConfig& c, const std::string& v) { c.splits.train = parse_int<int>(v); }},
           {"val", [](RunConfig& c, const std::string& v) { c.splits.val = parse_int<int>(v); }},
           {"test", [](RunConfig& c, const std::string& v) { c.splits.test = parse_int<int>(v); }},
       }},
      {"model",
       {
           {"widths",
            [](RunConfig& c, const std::string& v) {
              std::array<std::int64_t, kLevels> w{};
              std::stringstream ss(v);
              std::string item;
              int n = 0;
              while (std::getline(ss, item, ',')) {
                if (n == kLevels) throw std::invalid_argument("expects 4 comma-separated widths");
                w[n++] = parse_int<std::int64_t>(trim(item));
              }
              if (n != kLevels) throw std::invalid_argument("expects 4 comma-separated widths");
              c.model.widths = w;
            }},
           {"classes", [](RunConfig& c, const std::string& v) { c.model.classes = parse_int<int>(v); }},
           {"scale", [](RunConfig& c, const std::string& v) { c.model.scale = parse_int<int>(v); }},
           {"sigma_max", [](RunConfig& c, const std::string& v) { c.model.sigma_max = parse_double(v); }},
       }},
      {"gia",
       {
           {"window", [](RunConfig& c, const std::string& v) { c.model.gia.window = parse_int<int>(v); }},
           {"channel_groups",
            [](RunConfig& c, const std::string& v) { c.model.gia.channel_groups = parse_int<int>(v); }},
           {"use_flow_align",
            [](RunConfig& c, const std::string& v) { c.model.gia.use_flow_align = parse_bool(v); }},
           {"attn_squash", [](RunConfig& c, const std::string& v) { c.model.gia.attn_squash = squash_from_string(v); }},
       }},
      {"train",
       {
           {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_int<int>(v); }},
           {"batch", [](RunConfig& c, const std::string& v) { c.train.batch = parse_int<int>(v); }},
           {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_double(v); }},
           {"warmup", [](RunConfig& c, const std::string& v) { c.train.warmup = parse_int<int>(v); }},
           {"beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = parse_double(v); }},
           {"beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = parse_double(v); }},
           {"flip_prob", [](RunConfig& c, const std::string& v) { c.train.flip_prob = parse_double(v); }},
           {"scale_augment", [](RunConfig& c, const std::string& v) { c.train.scale_augment = parse_bool(v); }},
           {"crop", [](RunConfig& c, const std::string& v) { c.train.crop = parse_int<int>(v); }},
           {"use_aux", [](RunConfig& c, const std::string& v) { c.train.use_aux = parse_bool(v); }},
       }},
      {"run",
       {
           {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_int<std::uint64_t>(v); }},
           {"threads",
            [](RunConfig& c, const std::string& v) {
              c.threads = parse_int<int>(v);
              if (c.threads < 0) throw std::invalid_argument("must be >= 0");
            }},
       }},
  };
  return table;
}

// Single-section checks run after every assignment so the error points at the
// line that broke the invariant. Cross-section checks run at the end.
void validate_section(const std::string& section, const RunConfig& c) {
  if (section == "lens") validate_lens(c.lens);
  if (section == "degrade") c.degrade.validate();
  if (section == "dataset") {
    c.dataset.validate();
    if (c.splits.train < 0 || c.splits.val < 0 || c.splits.test < 0)
      throw ValidationError("split sizes must be >= 0");
  }
  if (section == "model" || section == "gia") {
    if (c.model.gia.window < 1) throw ValidationError("window must be >= 1");
    if (c.model.gia.channel_groups < 1) throw ValidationError("channel_groups must be >= 1");
    if (c.model.classes < 1 || c.model.classes > 255) throw ValidationError("classes must be in [1, 255]");
    if (c.model.scale < 1) throw ValidationError("scale must be >= 1");
    if (!(c.model.sigma_max > 0.0)) throw ValidationError("sigma_max must be > 0");
    for (auto w : c.model.widths)
      if (w < 1) throw ValidationError("widths must be positive");
  }
  if (section == "train") {
    TrainConfig t = c.train;
    t.warmup = 0;  // warmup < epochs is checked once the whole file is read
    t.validate();
    if (c.train.warmup < 0) throw ValidationError("warmup must be >= 0");
  }
}

}  // namespace

RunConfig parse_config_text(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::string section = "run";
  std::map<std::string, int> last_line;  // per section
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin, lineno, "malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!setters().count(section)) throw ConfigError(origin, lineno, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin, lineno, "expected key = value, got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    for (std::size_t i = 0; i < value.size(); ++i)
      if ((value[i] == '#' || value[i] == ';') && (i == 0 || value[i - 1] == ' ' || value[i - 1] == '\t')) {
        value = trim(std::string_view(value).substr(0, i));
        break;
      }
    value = unquote(value);
    const auto& keys = setters().at(section);
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(origin, lineno, "unknown key '" + key + "' in [" + section + "]");
    try {
      it->second(cfg, value);
      validate_section(section, cfg);
    } catch (const std::exception& e) {
      throw ConfigError(origin, lineno, section + "." + key + ": " + e.what());
    }
    last_line[section] = lineno;
  }
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(origin, last_line.count("train") ? last_line["train"] : 0, std::string("train: ") + e.what());
  }
  try {
    cfg.model.validate();
  } catch (const std::exception& e) {
    const int l = std::max(last_line.count("model") ? last_line["model"] : 0, last_line.count("gia") ? last_line["gia"] : 0);
    throw ConfigError(origin, l, std::string("model: ") + e.what());
  }
  cfg.dataset.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["lens"] = {{"focal_length", c.lens.focal_length_mm},    {"aperture_diameter", c.lens.aperture_mm},
               {"focus_distance", c.lens.focus_distance_m}, {"pixels_per_mm", c.lens.pixels_per_mm},
               {"coc_to_sigma", c.lens.coc_to_sigma},       {"sigma_max", c.lens.sigma_max}};
  j["degrade"] = {{"scale_factor", c.degrade.scale_factor},
                  {"kernel_size", c.degrade.kernel_size},
                  {"noise_sigma", c.degrade.noise_sigma},
                  {"lut_bins", c.degrade.lut_bins},
                  {"mode", c.degrade.mode == BlurMode::kExact ? "exact" : "lut"},
                  {"decimation_offset", c.degrade.decimation_offset},
                  {"sigma_max", c.degrade.sigma_max}};
  j["dataset"] = {{"name", c.dataset.name},
                  {"sigma_max", c.dataset.sigma_max},
                  {"kernel_size", c.dataset.kernel_size},
                  {"scale_factor", c.dataset.scale_factor},
                  {"invariant_fraction", c.dataset.invariant_fraction},
                  {"groups", c.dataset.groups},
                  {"image_height", c.dataset.image_height},
                  {"image_width", c.dataset.image_width},
                  {"train", c.splits.train},
                  {"val", c.splits.val},
                  {"test", c.splits.test}};
  j["model"] = c.model;
  j["train"] = {{"epochs", c.train.epochs},     {"batch", c.train.batch},       {"lr", c.train.lr},
                {"warmup", c.train.warmup},     {"beta1", c.train.beta1},       {"beta2", c.train.beta2},
                {"flip_prob", c.train.flip_prob}, {"scale_augment", c.train.scale_augment},
                {"crop", c.train.crop},         {"use_aux", c.train.use_aux}};
  j["run"] = {{"seed", c.seed}, {"threads", c.threads}};
  return j;
}

}  // namespace focalforge
