#include "msaunet/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

using Getter = std::function<std::string(const RunConfig&)>;
using Setter = std::function<void(RunConfig&, const std::string&)>;

struct Field {
  const char* section;
  const char* key;
  const char* help;
  Getter get;
  Setter set;
};

std::string qualified(const Field& f) { return std::string(f.section) + "." + f.key; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

std::string format_double(double v) {
  char buf[64];
  for (int precision : {15, 17}) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

double to_double(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) bad_value(key, s, "a number");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) bad_value(key, s, "a non-negative integer");
  return v;
}

std::size_t to_size(const std::string& key, const std::string& s) { return static_cast<std::size_t>(to_u64(key, s)); }

std::int32_t to_i32(const std::string& key, const std::string& s) {
  std::int32_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) bad_value(key, s, "an integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  bad_value(key, s, "true or false");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    parts.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return parts;
}

template <class T, class F>
std::string join(const T& values, F format) {
  std::string s;
  for (const auto& v : values) s += (s.empty() ? "" : ",") + format(v);
  return s;
}

std::string size_str(std::size_t v) { return std::to_string(v); }

std::array<double, 3> to_triple(const std::string& key, const std::string& s) {
  const auto parts = split_list(s);
  if (parts.size() != 3) bad_value(key, s, "three comma-separated numbers");
  return {to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2])};
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& p : split_list(s)) out.push_back(to_size(key, p));
  return out;
}

// Registry of every accepted key. Parsing applies fields in this order, so
// the encoder preset lands before any channel override.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"model", "num_classes", "number of output classes",
       [](const RunConfig& c) { return size_str(c.train.model.num_classes); },
       [](RunConfig& c, const std::string& v) { c.train.model.num_classes = to_size("model.num_classes", v); }},
      {"model", "input_height", "network input height (multiple of 32)",
       [](const RunConfig& c) { return size_str(c.train.model.input_h); },
       [](RunConfig& c, const std::string& v) { c.train.model.input_h = to_size("model.input_height", v); }},
      {"model", "input_width", "network input width (multiple of 32)",
       [](const RunConfig& c) { return size_str(c.train.model.input_w); },
       [](RunConfig& c, const std::string& v) { c.train.model.input_w = to_size("model.input_width", v); }},
      {"model", "decoder_channels", "five strictly decreasing decoder widths",
       [](const RunConfig& c) { return join(c.train.model.decoder_channels, size_str); },
       [](RunConfig& c, const std::string& v) {
         const auto sizes = to_sizes("model.decoder_channels", v);
         if (sizes.size() != 5) bad_value("model.decoder_channels", v, "five comma-separated integers");
         std::copy(sizes.begin(), sizes.end(), c.train.model.decoder_channels.begin());
       }},
      {"encoder", "preset", "tiny or densenet169",
       [](const RunConfig& c) { return c.train.model.encoder.name; },
       [](RunConfig& c, const std::string& v) {
         if (v == "tiny") {
           c.train.model.encoder = EncoderSpec::tiny();
         } else if (v == "densenet169") {
           c.train.model.encoder = EncoderSpec::densenet_shaped();
         } else {
           bad_value("encoder.preset", v, "tiny or densenet169");
         }
       }},
      {"encoder", "stage_channels", "six encoder widths, last is the bottleneck",
       [](const RunConfig& c) { return join(c.train.model.encoder.stage_channels, size_str); },
       [](RunConfig& c, const std::string& v) {
         c.train.model.encoder.stage_channels = to_sizes("encoder.stage_channels", v);
       }},
      {"loss", "w_iou", "soft-IoU weight", [](const RunConfig& c) { return format_double(c.train.loss.w_iou); },
       [](RunConfig& c, const std::string& v) { c.train.loss.w_iou = to_double("loss.w_iou", v); }},
      {"loss", "w_dice", "Dice weight", [](const RunConfig& c) { return format_double(c.train.loss.w_dice); },
       [](RunConfig& c, const std::string& v) { c.train.loss.w_dice = to_double("loss.w_dice", v); }},
      {"loss", "w_wce", "weighted cross-entropy weight",
       [](const RunConfig& c) { return format_double(c.train.loss.w_wce); },
       [](RunConfig& c, const std::string& v) { c.train.loss.w_wce = to_double("loss.w_wce", v); }},
      {"loss", "dice_alpha", "Dice smoothing constant",
       [](const RunConfig& c) { return format_double(c.train.loss.dice_alpha); },
       [](RunConfig& c, const std::string& v) { c.train.loss.dice_alpha = to_double("loss.dice_alpha", v); }},
      {"loss", "eps1", "boundary pixel bonus", [](const RunConfig& c) { return format_double(c.train.loss.eps1); },
       [](RunConfig& c, const std::string& v) { c.train.loss.eps1 = to_double("loss.eps1", v); }},
      {"loss", "eps2", "background pixel bonus", [](const RunConfig& c) { return format_double(c.train.loss.eps2); },
       [](RunConfig& c, const std::string& v) { c.train.loss.eps2 = to_double("loss.eps2", v); }},
      {"loss", "background_class", "class index receiving the background bonus",
       [](const RunConfig& c) { return std::to_string(c.train.loss.background_class); },
       [](RunConfig& c, const std::string& v) { c.train.loss.background_class = to_i32("loss.background_class", v); }},
      {"loss", "wce_reduction", "mean or sum over pixels",
       [](const RunConfig& c) { return std::string(c.train.loss.wce_reduction == WceReduction::Mean ? "mean" : "sum"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "mean") {
           c.train.loss.wce_reduction = WceReduction::Mean;
         } else if (v == "sum") {
           c.train.loss.wce_reduction = WceReduction::Sum;
         } else {
           bad_value("loss.wce_reduction", v, "mean or sum");
         }
       }},
      {"optimizer", "kind", "sgd, rmsprop or adam", [](const RunConfig& c) { return to_string(c.train.optimizer); },
       [](RunConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); }},
      {"optimizer", "learning_rate", "constant step size",
       [](const RunConfig& c) { return format_double(c.train.learning_rate); },
       [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_double("optimizer.learning_rate", v); }},
      {"training", "epochs", "passes over the training set",
       [](const RunConfig& c) { return size_str(c.train.epochs); },
       [](RunConfig& c, const std::string& v) { c.train.epochs = to_size("training.epochs", v); }},
      {"training", "batch_size", "samples per optimizer step",
       [](const RunConfig& c) { return size_str(c.train.batch_size); },
       [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size("training.batch_size", v); }},
      {"training", "seed", "weight initialization and shuffle seed",
       [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& v) { c.train.seed = to_u64("training.seed", v); }},
      {"training", "checkpoint_every", "epochs between intermediate checkpoints (0 = final only)",
       [](const RunConfig& c) { return size_str(c.train.checkpoint_every); },
       [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = to_size("training.checkpoint_every", v); }},
      {"training", "shuffle", "reshuffle the training set every epoch",
       [](const RunConfig& c) { return std::string(c.train.shuffle ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.shuffle = to_bool("training.shuffle", v); }},
      {"dataset", "kind", "synthetic or directory",
       [](const RunConfig& c) {
         return std::string(c.train.dataset.kind == DatasetKind::Synthetic ? "synthetic" : "directory");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "synthetic") {
           c.train.dataset.kind = DatasetKind::Synthetic;
         } else if (v == "directory") {
           c.train.dataset.kind = DatasetKind::Directory;
         } else {
           bad_value("dataset.kind", v, "synthetic or directory");
         }
       }},
      {"dataset", "synthetic_train_samples", "generated training images",
       [](const RunConfig& c) { return size_str(c.train.dataset.synthetic.train_samples); },
       [](RunConfig& c, const std::string& v) {
         c.train.dataset.synthetic.train_samples = to_size("dataset.synthetic_train_samples", v);
       }},
      {"dataset", "synthetic_val_samples", "generated validation images (0 = validate on training set)",
       [](const RunConfig& c) { return size_str(c.train.dataset.synthetic.val_samples); },
       [](RunConfig& c, const std::string& v) {
         c.train.dataset.synthetic.val_samples = to_size("dataset.synthetic_val_samples", v);
       }},
      {"dataset", "synthetic_seed", "generator seed",
       [](const RunConfig& c) { return std::to_string(c.train.dataset.synthetic.seed); },
       [](RunConfig& c, const std::string& v) { c.train.dataset.synthetic.seed = to_u64("dataset.synthetic_seed", v); }},
      {"dataset", "root", "dataset root directory",
       [](const RunConfig& c) { return c.train.dataset.layout.root.string(); },
       [](RunConfig& c, const std::string& v) { c.train.dataset.layout.root = v; }},
      {"dataset", "image_dir", "image folder under root",
       [](const RunConfig& c) { return c.train.dataset.layout.image_dir; },
       [](RunConfig& c, const std::string& v) { c.train.dataset.layout.image_dir = v; }},
      {"dataset", "mask_dir", "mask folder under root",
       [](const RunConfig& c) { return c.train.dataset.layout.mask_dir; },
       [](RunConfig& c, const std::string& v) { c.train.dataset.layout.mask_dir = v; }},
      {"dataset", "split_list", "training stems file under root (empty = every image)",
       [](const RunConfig& c) { return c.train.dataset.layout.split_list; },
       [](RunConfig& c, const std::string& v) { c.train.dataset.layout.split_list = v; }},
      {"dataset", "val_split_list", "validation stems file under root (empty = training split)",
       [](const RunConfig& c) { return c.train.dataset.val_split_list; },
       [](RunConfig& c, const std::string& v) { c.train.dataset.val_split_list = v; }},
      {"dataset", "mask_encoding", "indexed-palette, ade-rg-channels or raw-class-index",
       [](const RunConfig& c) { return to_string(c.train.dataset.layout.mask_encoding); },
       [](RunConfig& c, const std::string& v) {
         try {
           c.train.dataset.layout.mask_encoding = parse_mask_encoding(v);
         } catch (const UnsupportedError&) {
           bad_value("dataset.mask_encoding", v, "indexed-palette, ade-rg-channels or raw-class-index");
         }
       }},
      {"dataset", "void_label", "ignored mask value, or none",
       [](const RunConfig& c) {
         const auto& v = c.train.dataset.layout.void_label;
         return v ? std::to_string(*v) : std::string("none");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "none") {
           c.train.dataset.layout.void_label.reset();
         } else {
           c.train.dataset.layout.void_label = to_i32("dataset.void_label", v);
         }
       }},
      {"dataset", "norm_mean", "per-channel normalization mean",
       [](const RunConfig& c) { return join(c.train.dataset.norm.mean, format_double); },
       [](RunConfig& c, const std::string& v) { c.train.dataset.norm.mean = to_triple("dataset.norm_mean", v); }},
      {"dataset", "norm_std", "per-channel normalization std",
       [](const RunConfig& c) { return join(c.train.dataset.norm.std, format_double); },
       [](RunConfig& c, const std::string& v) { c.train.dataset.norm.std = to_triple("dataset.norm_std", v); }},
      {"output", "dir", "directory receiving run artifacts",
       [](const RunConfig& c) { return c.output_dir.string(); },
       [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
  };
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return &f;
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const auto& f : fields()) {
    if (section == f.section) return true;
  }
  return false;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("malformed config (line " + std::to_string(e.line()) + "): " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("unknown key '" + section + "' outside any section");
    }
    if (!known_section(section)) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!find_field(section, key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
    }
  }
  RunConfig config;
  for (const auto& f : fields()) {
    if (const auto v = tree.get_optional<std::string>(boost::property_tree::ptree::path_type(
            std::string(f.section) + '\x1f' + f.key, '\x1f'))) {
      f.set(config, *v);
    }
  }
  auto& root = config.train.dataset.layout.root;
  if (!base_dir.empty() && !root.empty() && root.is_relative()) root = (base_dir / root).lexically_normal();
  config.train.dataset.layout.num_classes = config.train.model.num_classes;
  try {
    config.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

std::string to_ini(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string describe_config_keys() {
  const RunConfig defaults;
  std::string out = "Config keys (section.key = default: meaning):\n";
  for (const auto& f : fields()) {
    out += "  " + qualified(f) + " = " + f.get(defaults) + ": " + f.help + "\n";
  }
  return out;
}

}  // namespace msaunet
