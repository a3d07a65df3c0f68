#include "dabf/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dabf {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"input_size", "64"},
      {"stem_width", "4"},
      {"stage_widths", "8,16,24,32"},
      {"neck_channels", "24"},
      {"num_levels", "3"},
      {"neck", "bwfpn"},
      {"neck_layers", "1"},
      {"head", "dahead"},
      {"num_classes", "2"},
      {"dahead_blocks", "2"},
      {"dahead_samples", "9"},
      {"dahead_reduction", "4"},
      {"sppf", "false"},
      {"size_cutoff_base", "16"},
      {"box_loss", "wiou3"},
      {"wiou2_gamma", "0.5"},
      {"wiou3_alpha", "1.9"},
      {"wiou3_delta", "3"},
      {"wiou_momentum", "0.01"},
      {"batch_size", "16"},
      {"epochs", "60"},
      {"lr", "0.01"},
      {"momentum", "0.9"},
      {"weight_decay", "0.0005"},
      {"seed", "42"},
      {"lambda_box", "1"},
      {"lambda_cls", "1"},
      {"conf_thresh", "0.25"},
      {"nms_iou", "0.5"},
      {"synth_seed", "42"},
      {"synth_min_targets", "1"},
      {"synth_max_targets", "4"},
      {"synth_overlap_prob", "0.25"},
      {"synth_min_size", "18"},
      {"synth_max_size", "40"},
      {"synth_clutter", "3"},
      {"synth_noise", "0.03"},
      {"train_dir", "data/train"},
      {"val_dir", "data/val"},
      {"out_dir", "runs/out"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " has no '='");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!default_values().count(key)) {
    throw ConfigError("config: unknown key '" + key + "'");
  }
  values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::logic_error&) {
    throw ConfigError("config: key '" + key + "' is not an integer: " + get(key));
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::logic_error&) {
    throw ConfigError("config: key '" + key + "' is not a number: " + get(key));
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean: " + v);
}

uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::logic_error&) {
    throw ConfigError("config: key '" + key + "' is not an unsigned integer: " + get(key));
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.input_size = get_int("input_size");
  m.stem_width = get_int("stem_width");
  m.stage_widths.clear();
  {
    std::istringstream ss(get("stage_widths"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        m.stage_widths.push_back(std::stoi(trim(tok)));
      } catch (const std::logic_error&) {
        throw ConfigError("config: stage_widths entry is not an integer: " + tok);
      }
    }
  }
  m.neck_channels = get_int("neck_channels");
  m.num_levels = get_int("num_levels");
  try {
    m.neck = parse_neck(get("neck"));
    m.head = parse_head(get("head"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  m.neck_layers = get_int("neck_layers");
  m.num_classes = get_int("num_classes");
  m.dahead.num_blocks = get_int("dahead_blocks");
  m.dahead.sample_count = get_int("dahead_samples");
  m.dahead.reduction = get_int("dahead_reduction");
  m.sppf = get_bool("sppf");
  m.size_cutoff_base = get_double("size_cutoff_base");
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.batch_size = get_int("batch_size");
  t.epochs = get_int("epochs");
  t.lr = get_double("lr");
  t.momentum = get_double("momentum");
  t.weight_decay = get_double("weight_decay");
  t.seed = get_u64("seed");
  t.lambda_box = get_double("lambda_box");
  t.lambda_cls = get_double("lambda_cls");
  t.conf_thresh = get_double("conf_thresh");
  t.nms_iou = get_double("nms_iou");
  try {
    t.loss_state.variant = parse_box_loss(get("box_loss"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  t.loss_state.v2_gamma = get_double("wiou2_gamma");
  t.loss_state.v3_alpha = get_double("wiou3_alpha");
  t.loss_state.v3_delta = get_double("wiou3_delta");
  t.loss_state.momentum = get_double("wiou_momentum");
  return t;
}

SceneSpec RunConfig::scene_spec() const {
  SceneSpec s;
  s.seed = get_u64("synth_seed");
  s.image_size = get_int("input_size");
  s.min_targets = get_int("synth_min_targets");
  s.max_targets = get_int("synth_max_targets");
  s.overlap_prob = get_double("synth_overlap_prob");
  s.min_size = get_double("synth_min_size");
  s.max_size = get_double("synth_max_size");
  s.clutter = get_int("synth_clutter");
  s.noise = get_double("synth_noise");
  return s;
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

void RunConfig::write_resolved(const std::string& dir) const {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config_resolved.cfg", std::ios::binary);
  if (!out) throw ConfigError("config: cannot write resolved config under " + dir);
  out << resolved();
}

}  // namespace dabf
