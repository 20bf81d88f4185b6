#include "vpgc/app/run_config.hpp"

#include "vpgc/net/checkpoint.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vpgc::app {

namespace {

std::string number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

ConfigError bad(const std::string& key, const std::string& value, const std::string& why) {
  return ConfigError("config key '" + key + "': " + why + " (got '" + value + "')");
}

int64_t to_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw bad(key, v, "expected an integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) throw bad(key, v, "expected a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw bad(key, v, "expected true or false");
}

std::string one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (v == a) return v;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  throw bad(key, v, "expected one of " + list);
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    const auto last = item.find_last_not_of(' ');
    if (first == std::string::npos) throw bad(key, v, "empty list item");
    out.push_back(static_cast<int>(to_int(key, item.substr(first, last - first + 1))));
  }
  return out;
}

std::string int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

net::OptimizerKind to_optimizer(const std::string& key, const std::string& v) {
  try {
    return net::parse_optimizer_kind(v);
  } catch (const std::invalid_argument&) {
    throw bad(key, v, "expected sgd, adam or adamw");
  }
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
  bool required = false;
};

using Schema = std::map<std::string, Field>;

#define VPGC_INT(key, member, lo)                                                                   \
  {key, {[](RunConfig& c, const std::string& k, const std::string& v) {                             \
           const auto x = to_int(k, v);                                                             \
           if (x < (lo)) throw bad(k, v, "must be at least " + std::to_string(lo));                 \
           c.member = static_cast<decltype(c.member)>(x);                                           \
         },                                                                                         \
         [](const RunConfig& c) { return std::to_string(c.member); }}}
#define VPGC_DOUBLE(key, member)                                                                    \
  {key, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
         [](const RunConfig& c) { return number(c.member); }}}
#define VPGC_BOOL(key, member)                                                                      \
  {key, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
         [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define VPGC_PATH(key, member)                                                                      \
  {key, {[](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },              \
         [](const RunConfig& c) { return c.member.string(); }}}

const Schema& schema() {
  static const Schema s{
      VPGC_INT("run.seed", seed, 0),
      VPGC_PATH("run.out", out),
      {"data.kind",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.data.kind = one_of(k, v, {"mnist67-180", "colormnist", "digits"});
        },
        [](const RunConfig& c) { return c.data.kind; }, true}},
      {"data.source",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.data.source = one_of(k, v, {"glyphs", "idx", "file"}); },
        [](const RunConfig& c) { return c.data.source; }}},
      VPGC_INT("data.glyphs_train_per_digit", data.glyphs_train_per_digit, 1),
      VPGC_INT("data.glyphs_test_per_digit", data.glyphs_test_per_digit, 1),
      VPGC_PATH("data.train_images", data.train_images),
      VPGC_PATH("data.train_labels", data.train_labels),
      VPGC_PATH("data.test_images", data.test_images),
      VPGC_PATH("data.test_labels", data.test_labels),
      VPGC_INT("data.max_per_digit", data.max_per_digit, -1),
      VPGC_INT("data.colors", data.colors, 1),
      VPGC_INT("data.classes", data.classes, 1),
      VPGC_DOUBLE("data.exponent", data.exponent),
      VPGC_INT("data.head", data.head, 1),
      VPGC_INT("data.test_head", data.test_head, 1),
      {"model.recipe",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.recipe = one_of(k, v, {"se2", "hue"}); },
        [](const RunConfig& c) { return c.model.recipe; }, true}},
      VPGC_INT("model.elements", model.elements, 1),
      VPGC_INT("model.channels", model.channels, 1),
      {"model.dist",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.dist = one_of(k, v, {"continuous", "density", "discrete", "gumbel"});
        },
        [](const RunConfig& c) { return c.model.dist; }}},
      {"model.partial",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.partial = v.empty() ? std::vector<int>{} : to_int_list(k, v);
        },
        [](const RunConfig& c) { return int_list(c.model.partial); }}},
      {"model.partial_mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.partial_mode = one_of(k, v, {"variational", "static"});
        },
        [](const RunConfig& c) { return c.model.partial_mode; }}},
      VPGC_DOUBLE("model.eta", model.eta),
      VPGC_DOUBLE("model.gumbel_temperature", model.gumbel_temperature),
      VPGC_DOUBLE("model.siren_omega0", model.siren_omega0),
      VPGC_INT("train.epochs", train.epochs, 0),
      VPGC_INT("train.batch_size", train.batch_size, 1),
      VPGC_DOUBLE("train.lambda", train.lambda),
      VPGC_BOOL("train.include_kl", train.include_kl),
      {"train.model_optimizer",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.model_optimizer.kind = to_optimizer(k, v); },
        [](const RunConfig& c) { return net::to_string(c.train.model_optimizer.kind); }}},
      VPGC_DOUBLE("train.model_lr", train.model_optimizer.lr),
      VPGC_DOUBLE("train.model_weight_decay", train.model_optimizer.weight_decay),
      {"train.encoder_optimizer",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.encoder_optimizer.kind = to_optimizer(k, v); },
        [](const RunConfig& c) { return net::to_string(c.train.encoder_optimizer.kind); }}},
      VPGC_DOUBLE("train.encoder_lr", train.encoder_optimizer.lr),
      VPGC_DOUBLE("train.encoder_weight_decay", train.encoder_optimizer.weight_decay),
      VPGC_INT("train.recalibrate_batches", train.recalibrate_batches, 0),
      VPGC_INT("train.stability_layer", train.stability_layer, -1),
      VPGC_INT("train.stability_probes", train.stability_probes, 1),
      VPGC_INT("train.stability_draws", train.stability_draws, 1),
      VPGC_BOOL("train.evaluate_each_epoch", train.evaluate_each_epoch),
      VPGC_BOOL("eval.deterministic", eval.deterministic),
      VPGC_INT("eval.samples", eval.samples, 1),
  };
  return s;
}

#undef VPGC_INT
#undef VPGC_DOUBLE
#undef VPGC_BOOL
#undef VPGC_PATH

void check_ranges(const RunConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); };
  if (c.train.lambda < 0 || c.train.lambda > 1) fail("train.lambda", "must lie in [0, 1]");
  if (c.train.model_optimizer.lr < 0) fail("train.model_lr", "must be non-negative");
  if (c.train.encoder_optimizer.lr < 0) fail("train.encoder_lr", "must be non-negative");
  if (c.model.gumbel_temperature <= 0) fail("model.gumbel_temperature", "must be positive");
  if (c.model.eta >= 1) fail("model.eta", "must be below 1");
  if (c.data.exponent <= 0) fail("data.exponent", "must be positive");
  if (c.data.source == "idx" && (c.data.train_images.empty() || c.data.train_labels.empty())) {
    fail("data.train_images", "idx source needs data.train_images and data.train_labels");
  }
  if (c.data.source == "file" && c.data.train_images.empty()) fail("data.train_images", "file source needs a path");
  if (c.model.recipe == "se2" && (c.model.dist == "discrete" || c.model.dist == "gumbel")) {
    fail("model.dist", "rotation models use continuous or density distributions");
  }
  if (c.model.recipe == "hue" && (c.model.dist == "continuous" || c.model.dist == "density")) {
    fail("model.dist", "hue models use discrete or gumbel distributions");
  }
}

}  // namespace

RunConfig RunConfig::parse(const std::string& ini_text) {
  boost::property_tree::ptree tree;
  std::istringstream in(ini_text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    std::istringstream lines(ini_text);
    std::string text;
    for (unsigned long i = 0; i < e.line() && std::getline(lines, text);) ++i;
    throw ConfigError("config: malformed INI at line " + std::to_string(e.line()) + ": " + e.message() + " ('" + text +
                      "')");
  }
  RunConfig c;
  const auto& fields = schema();
  std::map<std::string, bool> seen;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "': keys must sit inside a [section]");
    for (const auto& [name, leaf] : body) {
      const std::string key = section + "." + name;
      const auto it = fields.find(key);
      if (it == fields.end()) throw ConfigError("config key '" + key + "': unknown key");
      if (!leaf.empty()) throw ConfigError("config key '" + key + "': nested values are not allowed");
      it->second.set(c, key, leaf.data());
      seen[key] = true;
    }
  }
  for (const auto& [key, field] : fields) {
    if (field.required && !seen.count(key)) throw ConfigError("config key '" + key + "': required key is missing");
  }
  check_ranges(c);
  c.model_config(c.data.kind == "colormnist" ? c.data.classes : 3, c.model.recipe == "hue" ? 3 : 1);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

net::KeyValues RunConfig::to_kv() const {
  net::KeyValues kv;
  for (const auto& [key, field] : schema()) kv[key] = field.get(*this);
  return kv;
}

std::string RunConfig::to_ini() const {
  std::string out, section;
  for (const auto& [key, value] : to_kv()) {
    const auto dot = key.find('.');
    const auto s = key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      section = s;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

net::ModelConfig RunConfig::model_config(int classes, int image_channels) const {
  try {
    net::ModelConfig c;
    if (model.recipe == "se2") {
      if (image_channels != 1) throw ConfigError("config key 'model.recipe': se2 expects grayscale images");
      c = net::se2_recipe(model.elements, model.channels, classes);
    } else {
      if (image_channels != 3) throw ConfigError("config key 'model.recipe': hue expects RGB images");
      c = net::hue_recipe(model.elements, classes, model.channels, {});
    }
    const auto mode = model.partial_mode == "static" ? conv::PartialMode::StaticPartial : conv::PartialMode::VariationalPartial;
    for (auto& l : c.layers) {
      l.partial = conv::PartialMode::Full;
      l.siren.omega0 = model.siren_omega0;
    }
    for (int p : model.partial) {
      if (p < 0 || p >= static_cast<int>(c.layers.size())) {
        throw ConfigError("config key 'model.partial': layer " + std::to_string(p) + " does not exist");
      }
      c.layers[p].partial = mode;
    }
    c.dist = net::parse_dist_kind(model.dist);
    c.eta = model.eta;
    c.gumbel_temperature = model.gumbel_temperature;
    c.validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config section 'model': ") + e.what());
  }
}

DatasetPair make_datasets(const DataSpec& spec, uint64_t seed) {
  data::ImageDataset train, test;
  if (spec.source == "file") {
    train = load_dataset(spec.train_images);
    if (!spec.test_images.empty()) test = load_dataset(spec.test_images);
    return {std::move(train), std::move(test)};
  }
  if (spec.source == "glyphs") {
    train = data::render_digits(spec.glyphs_train_per_digit, Rng::stream(seed, "glyphs-train").bits());
    test = data::render_digits(spec.glyphs_test_per_digit, Rng::stream(seed, "glyphs-test").bits());
  } else {
    train = data::load_mnist(spec.train_images, spec.train_labels);
    if (!spec.test_images.empty()) test = data::load_mnist(spec.test_images, spec.test_labels);
  }
  if (spec.kind == "mnist67-180") {
    train = data::make_mnist67_180(train, seed, spec.max_per_digit);
    if (test.size() > 0) test = data::make_mnist67_180(test, seed);
  } else if (spec.kind == "colormnist") {
    data::ColorMnistOptions o{spec.colors, spec.classes, spec.exponent, spec.head, 0.1};
    train = data::make_longtailed_colormnist(train, seed, o);
    if (test.size() > 0) {
      o.head = spec.test_head;
      test = data::make_longtailed_colormnist(test, seed + 1, o);
    }
  }
  train.validate();
  if (test.size() > 0) test.validate();
  return {std::move(train), std::move(test)};
}

void save_dataset(const data::ImageDataset& d, const std::filesystem::path& path) {
  d.validate();
  net::Container c;
  c.tag = "dataset";
  std::string names;
  for (size_t i = 0; i < d.class_names.size(); ++i) names += (i ? ";" : "") + d.class_names[i];
  std::string sources;
  for (size_t i = 0; i < d.provenance.sources.size(); ++i) sources += (i ? ";" : "") + d.provenance.sources[i];
  c.config = {{"dataset.class_names", names},
              {"provenance.generator", d.provenance.generator},
              {"provenance.parameters", d.provenance.parameters},
              {"provenance.seed", std::to_string(d.provenance.seed)},
              {"provenance.sources", sources},
              {"provenance.version", d.provenance.version}};
  c.blocks.push_back(net::Block::of("pixels", {d.size(), d.channels, d.height, d.width}, d.pixels));
  c.blocks.push_back(net::Block::of("labels", {d.size()}, std::vector<int32_t>(d.labels.begin(), d.labels.end())));
  net::write_container(path, c);
}

data::ImageDataset load_dataset(const std::filesystem::path& path) {
  const auto c = net::read_container(path);
  if (c.tag != "dataset") throw net::FormatError(path.string() + ": not a dataset container (tag '" + c.tag + "')");
  auto get = [&](const std::string& key) {
    const auto it = c.config.find(key);
    if (it == c.config.end()) throw net::FormatError(path.string() + ": missing " + key);
    return it->second;
  };
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ';')) out.push_back(item);
    return out;
  };
  data::ImageDataset d;
  const auto& px = c.block("pixels");
  if (px.shape.size() != 4) throw net::FormatError(path.string() + ": pixels must be (n, c, h, w)");
  d.channels = px.shape[1];
  d.height = px.shape[2];
  d.width = px.shape[3];
  d.pixels = px.as<float>();
  const auto labels = c.block("labels").as<int32_t>();
  d.labels.assign(labels.begin(), labels.end());
  d.class_names = split(get("dataset.class_names"));
  d.provenance.generator = get("provenance.generator");
  d.provenance.parameters = get("provenance.parameters");
  d.provenance.seed = std::stoull(get("provenance.seed"));
  d.provenance.sources = split(get("provenance.sources"));
  d.provenance.version = get("provenance.version");
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw net::FormatError(path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace vpgc::app
