#include "stretchtime/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stretchtime::experiment {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
struct Field {
  std::function<std::string(const T&)> get;
  std::function<void(T&, const std::string&, const std::string&)> set;
};

template <class T, class M>
Field<T> size_field(M T::*member) {
  return {[member](const T& c) { return std::to_string(c.*member); },
          [member](T& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<M>(parse_unsigned(k, v));
          }};
}

template <class T>
Field<T> double_field(double T::*member) {
  return {[member](const T& c) { return fmt(c.*member); },
          [member](T& c, const std::string& k, const std::string& v) { c.*member = parse_double(k, v); }};
}

using ModelFields = std::vector<std::pair<std::string, Field<model::ModelConfig>>>;

const ModelFields& model_fields() {
  using MC = model::ModelConfig;
  static const ModelFields fields = {
      {"model.lookback", size_field(&MC::lookback)},
      {"model.horizon", size_field(&MC::horizon)},
      {"model.d_model", size_field(&MC::d_model)},
      {"model.d_global", size_field(&MC::d_global)},
      {"model.n_layers", size_field(&MC::n_layers)},
      {"model.n_heads", size_field(&MC::n_heads)},
      {"model.pe_mode",
       {[](const MC& c) { return std::string(attention::to_string(c.pe_mode)); },
        [](MC& c, const std::string& k, const std::string& v) {
          try {
            c.pe_mode = attention::parse_pe_mode(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }}},
      {"model.warp_mode",
       {[](const MC& c) { return std::string(attention::to_string(c.warp_mode)); },
        [](MC& c, const std::string& k, const std::string& v) {
          try {
            c.warp_mode = attention::parse_warp_mode(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(k + ": " + e.what());
          }
        }}},
      {"model.use_mlp",
       {[](const MC& c) { return std::string(c.use_mlp ? "true" : "false"); },
        [](MC& c, const std::string& k, const std::string& v) { c.use_mlp = parse_bool(k, v); }}},
      {"model.dropout_rate", double_field(&MC::dropout_rate)},
      {"model.channel_dropout_min_keep", double_field(&MC::channel_dropout_min_keep)},
  };
  return fields;
}

using Fields = std::vector<std::pair<std::string, Field<ExperimentConfig>>>;

template <class Sub>
Field<ExperimentConfig> lift(Sub ExperimentConfig::*part, Field<Sub> f) {
  return {[part, f](const ExperimentConfig& c) { return f.get(c.*part); },
          [part, f](ExperimentConfig& c, const std::string& k, const std::string& v) { f.set(c.*part, k, v); }};
}

const Fields& fields() {
  using EC = ExperimentConfig;
  using SC = data::SyntheticConfig;
  using TC = train::TrainConfig;
  using SR = data::SplitRatios;
  static const Fields table = [] {
    Fields f;
    f.push_back({"data.path",
                 {[](const EC& c) { return c.data_path; },
                  [](EC& c, const std::string&, const std::string& v) { c.data_path = v; }}});
    f.push_back({"synthetic.length", lift(&EC::synthetic, size_field(&SC::length))});
    f.push_back({"synthetic.channels", lift(&EC::synthetic, size_field(&SC::channels))});
    f.push_back({"synthetic.phi", lift(&EC::synthetic, double_field(&SC::phi))});
    f.push_back({"synthetic.amplitude", lift(&EC::synthetic, double_field(&SC::amplitude))});
    f.push_back({"synthetic.omega0", lift(&EC::synthetic, double_field(&SC::omega0))});
    f.push_back({"synthetic.sigma", lift(&EC::synthetic, double_field(&SC::sigma))});
    f.push_back({"synthetic.warp_amplitude", lift(&EC::synthetic, double_field(&SC::warp_amplitude))});
    f.push_back({"synthetic.warp_period", lift(&EC::synthetic, double_field(&SC::warp_period))});
    f.push_back({"synthetic.phases",
                 {[](const EC& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.synthetic.phases.size(); ++i) {
                      s += (i ? "," : "") + fmt(c.synthetic.phases[i]);
                    }
                    return s;
                  },
                  [](EC& c, const std::string& k, const std::string& v) {
                    c.synthetic.phases.clear();
                    for (const auto& item : split_list(v)) c.synthetic.phases.push_back(parse_double(k, item));
                  }}});
    f.push_back({"synthetic.seed", lift(&EC::synthetic, size_field(&SC::seed))});
    f.push_back({"split.train", lift(&EC::split, double_field(&SR::train))});
    f.push_back({"split.val", lift(&EC::split, double_field(&SR::val))});
    f.push_back({"split.test", lift(&EC::split, double_field(&SR::test))});
    for (const auto& [key, field] : model_fields()) f.push_back({key, lift(&EC::model, field)});
    f.push_back({"train.learning_rate", lift(&EC::train, double_field(&TC::learning_rate))});
    f.push_back({"train.effective_batch", lift(&EC::train, size_field(&TC::effective_batch))});
    f.push_back({"train.physical_batch", lift(&EC::train, size_field(&TC::physical_batch))});
    f.push_back({"train.max_epochs", lift(&EC::train, size_field(&TC::max_epochs))});
    f.push_back({"train.patience", lift(&EC::train, size_field(&TC::patience))});
    f.push_back({"train.seed", lift(&EC::train, size_field(&TC::seed))});
    f.push_back({"train.weight_decay", lift(&EC::train, double_field(&TC::weight_decay))});
    f.push_back({"train.beta1", lift(&EC::train, double_field(&TC::beta1))});
    f.push_back({"train.beta2", lift(&EC::train, double_field(&TC::beta2))});
    f.push_back({"train.eps", lift(&EC::train, double_field(&TC::eps))});
    f.push_back({"train.lr_floor", lift(&EC::train, double_field(&TC::lr_floor))});
    f.push_back({"train.total_steps", lift(&EC::train, size_field(&TC::total_steps))});
    f.push_back({"train.train_stride", lift(&EC::train, size_field(&TC::train_stride))});
    f.push_back({"train.eval_stride", lift(&EC::train, size_field(&TC::eval_stride))});
    f.push_back({"eval.horizons",
                 {[](const EC& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.horizons.size(); ++i) {
                      s += (i ? "," : "") + std::to_string(c.horizons[i]);
                    }
                    return s;
                  },
                  [](EC& c, const std::string& k, const std::string& v) {
                    c.horizons.clear();
                    for (const auto& item : split_list(v)) {
                      const auto h = parse_unsigned(k, item);
                      if (h == 0) throw ConfigError(k + ": horizons must be >= 1");
                      c.horizons.push_back(h);
                    }
                  }}});
    f.push_back({"output.dir",
                 {[](const EC& c) { return c.output_dir; },
                  [](EC& c, const std::string&, const std::string& v) { c.output_dir = v; }}});
    return f;
  }();
  return table;
}

const Field<ExperimentConfig>& find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::resolved_horizons() const {
  return horizons.empty() ? std::vector<std::size_t>{model.horizon} : horizons;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, f] : fields()) k.push_back(key);
    return k;
  }();
  return keys;
}

void set_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_field(key).set(config, key, value);
}

std::string get_value(const ExperimentConfig& config, const std::string& key) {
  return find_field(key).get(config);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  finalize(config, origin);
  return config;
}

void finalize(ExperimentConfig& config, const std::string& origin) {
  try {
    config.synthetic.validate();
    config.model.channels = config.synthetic.channels;
    config.model.validate();
    config.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.string());
}

std::string to_text(const ExperimentConfig& config) {
  std::string out = "# resolved experiment config\n";
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(config) + "\n";
  return out;
}

void write_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_text(config);
}

data::SeriesDataset resolve_dataset(const ExperimentConfig& config) {
  data::SeriesDataset ds =
      config.data_path.empty() ? data::generate_warped_seasonal(config.synthetic) : data::load_csv(config.data_path);
  std::size_t longest = 0;
  for (auto h : config.resolved_horizons()) longest = std::max(longest, h);
  return data::split(std::move(ds), config.split, config.model.lookback + longest);
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << "# stretchtime checkpoint v1\n";
  out << "model.channels = " << checkpoint.config.channels << "\n";
  for (const auto& [key, f] : model_fields()) out << key << " = " << f.get(checkpoint.config) << "\n";
  out << "epoch = " << checkpoint.epoch << "\n";
  for (const auto& [name, t] : checkpoint.params.named_tensors()) {
    out << "tensor " << name << " " << t.rank();
    for (auto d : t.shape()) out << " " << d;
    out << "\n";
    for (double v : t.values()) out << fmt(v) << "\n";
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Checkpoint cp;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  std::map<std::string, std::pair<numcore::Shape, std::vector<double>>> tensors;
  std::string current;
  std::size_t remaining = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (remaining > 0) {
      try {
        tensors[current].second.push_back(parse_double(current, line));
      } catch (const ConfigError& e) {
        fail(e.what());
      }
      --remaining;
      continue;
    }
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ss(line.substr(7));
      std::size_t rank = 0;
      ss >> current >> rank;
      numcore::Shape shape(rank);
      for (auto& d : shape) ss >> d;
      if (!ss || current.empty()) fail("malformed tensor header");
      remaining = numcore::element_count(shape);
      tensors[current] = {shape, {}};
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("unexpected line '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "model.channels") {
        cp.config.channels = parse_unsigned(key, value);
      } else if (key == "epoch") {
        cp.epoch = parse_unsigned(key, value);
      } else {
        bool found = false;
        for (const auto& [k, f] : model_fields()) {
          if (k == key) {
            f.set(cp.config, key, value);
            found = true;
          }
        }
        if (!found) fail("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  if (remaining > 0) fail("truncated tensor " + current);

  cp.params = model::init_params(cp.config, 0);
  for (auto& [name, t] : cp.params.named_tensors()) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error(path.string() + ": missing tensor " + name);
    if (it->second.first != t.shape()) {
      throw std::runtime_error(path.string() + ": tensor " + name + " has shape " +
                               numcore::shape_string(it->second.first) + ", config expects " +
                               numcore::shape_string(t.shape()));
    }
    numcore::Tensor handle = t;
    std::copy(it->second.second.begin(), it->second.second.end(), handle.mutable_values().begin());
  }
  if (tensors.size() != cp.params.named_tensors().size()) {
    throw std::runtime_error(path.string() + ": unexpected extra tensors");
  }
  return cp;
}

}  // namespace stretchtime::experiment
