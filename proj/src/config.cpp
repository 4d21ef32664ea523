#include "retedit/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "retedit/eval.hpp"

namespace retedit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad value for " + key + ": '" + text + "' (expected true or false)");
}

std::string format_real(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// A settable/gettable field of some struct S.
template <typename S>
struct Field {
  std::string key;
  std::function<void(S&, const std::string&)> set;
  std::function<std::string(const S&)> get;
};

template <typename S, typename T>
Field<S> field(std::string key, T S::*member) {
  Field<S> f;
  f.key = key;
  if constexpr (std::is_same_v<T, bool>) {
    f.set = [member, key](S& s, const std::string& v) { s.*member = parse_bool(key, v); };
    f.get = [member](const S& s) { return std::string(s.*member ? "true" : "false"); };
  } else if constexpr (std::is_same_v<T, double>) {
    f.set = [member, key](S& s, const std::string& v) { s.*member = parse_real(key, v); };
    f.get = [member](const S& s) { return format_real(s.*member); };
  } else if constexpr (std::is_same_v<T, std::string>) {
    f.set = [member](S& s, const std::string& v) { s.*member = v; };
    f.get = [member](const S& s) { return s.*member; };
  } else {
    f.set = [member, key](S& s, const std::string& v) { s.*member = parse_number<T>(key, v); };
    f.get = [member](const S& s) { return std::to_string(s.*member); };
  }
  return f;
}

// Lifts a field of a nested struct into the enclosing one.
template <typename Outer, typename Inner>
Field<Outer> nested(const std::string& prefix, Inner Outer::*member, const Field<Inner>& f) {
  return {prefix + f.key, [member, s = f.set](Outer& o, const std::string& v) { s(o.*member, v); },
          [member, g = f.get](const Outer& o) { return g(o.*member); }};
}

const std::vector<Field<RetrieverConfig>>& retriever_fields() {
  using R = RetrieverConfig;
  static const std::vector<Field<R>> f = {
      field("embed_dim", &R::embed_dim),   field("hidden", &R::hidden),
      field("latent", &R::latent),         field("encoder_layers", &R::encoder_layers),
      field("decoder_layers", &R::decoder_layers), field("kappa", &R::kappa),
      field("iterations", &R::iterations), field("batch_size", &R::batch_size),
      field("lr", &R::lr),                 field("clip_norm", &R::clip_norm),
      field("init_scale", &R::init_scale), field("seed", &R::seed),
      field("log_every", &R::log_every)};
  return f;
}

const std::vector<Field<EditorConfig>>& editor_fields() {
  using E = EditorConfig;
  static const std::vector<Field<E>> f = {
      field("embed_dim", &E::embed_dim),   field("copy_dim", &E::copy_dim),
      field("hidden", &E::hidden),         field("encoder_layers", &E::encoder_layers),
      field("decoder_layers", &E::decoder_layers), field("num_copy", &E::num_copy),
      field("use_retrieval", &E::use_retrieval), field("identity_prob", &E::identity_prob),
      field("iterations", &E::iterations), field("batch_size", &E::batch_size),
      field("lr", &E::lr),                 field("clip_norm", &E::clip_norm),
      field("init_scale", &E::init_scale), field("seed", &E::seed),
      field("log_every", &E::log_every),   field("max_len", &E::max_len)};
  return f;
}

const std::vector<Field<Config>>& config_fields() {
  using C = Config;
  static const std::vector<Field<C>> f = [] {
    std::vector<Field<C>> v = {field("task", &C::task), field("work_dir", &C::work_dir)};
    v.push_back(nested("synth.", &C::synth, field("templates", &SynthOptions::templates)));
    v.push_back(nested("synth.", &C::synth, field("instances", &SynthOptions::instances)));
    v.push_back(nested("synth.", &C::synth, field("seed", &SynthOptions::seed)));
    for (auto&& x : {field("data.seed", &C::data_seed), field("data.split", &C::split),
                     field("data.train_ratio", &C::train_ratio), field("data.valid_ratio", &C::valid_ratio),
                     field("data.test_ratio", &C::test_ratio), field("data.max_output_tokens", &C::max_output_tokens),
                     field("data.min_count", &C::min_count)})
      v.push_back(x);
    for (const auto& r : retriever_fields()) v.push_back(nested("retriever.", &C::retriever, r));
    for (const auto& e : editor_fields()) v.push_back(nested("editor.", &C::editor, e));
    for (auto&& x : {field("use_lsh", &IndexOptions::use_lsh), field("num_trees", &IndexOptions::num_trees),
                     field("max_leaf_size", &IndexOptions::max_leaf_size), field("search_k", &IndexOptions::search_k),
                     field("seed", &IndexOptions::seed)})
      v.push_back(nested("index.", &C::index, x));
    for (auto&& x : {field("eval.beam_width", &C::beam_width), field("eval.workers", &C::eval_workers),
                     field("eval.max_examples", &C::eval_max_examples),
                     field("eval.dev_eval_every", &C::dev_eval_every)})
      v.push_back(x);
    return v;
  }();
  return f;
}

template <typename S>
const Field<S>& find_field(const std::vector<Field<S>>& fields, const std::string& key) {
  for (const auto& f : fields)
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

template <typename S>
std::string fields_to_text(const std::vector<Field<S>>& fields, const S& s) {
  std::ostringstream out;
  for (const auto& f : fields) out << f.key << " = " << f.get(s) << "\n";
  return out.str();
}

template <typename S>
void fields_from_text(const std::vector<Field<S>>& fields, S& s, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    find_field(fields, trim(line.substr(0, eq))).set(s, trim(line.substr(eq + 1)));
  }
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) { find_field(config_fields(), key).set(*this, value); }

std::string Config::get(const std::string& key) const { return find_field(config_fields(), key).get(*this); }

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : config_fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

void Config::validate() const {
  auto positive = [](const std::string& key, double v) {
    if (!(v > 0)) throw ConfigError(key + " must be positive");
  };
  positive("synth.templates", synth.templates);
  positive("synth.instances", synth.instances);
  if (split != "group" && split != "instance") throw ConfigError("data.split must be 'group' or 'instance'");
  positive("data.train_ratio", train_ratio);
  positive("data.valid_ratio", valid_ratio);
  positive("data.test_ratio", test_ratio);
  if (std::abs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9) throw ConfigError("data ratios must sum to 1");
  positive("data.max_output_tokens", max_output_tokens);
  positive("data.min_count", min_count);
  for (const auto& [key, v] : std::vector<std::pair<std::string, double>>{
           {"retriever.embed_dim", retriever.embed_dim},
           {"retriever.hidden", retriever.hidden},
           {"retriever.latent", retriever.latent - 1},
           {"retriever.encoder_layers", retriever.encoder_layers},
           {"retriever.decoder_layers", retriever.decoder_layers},
           {"retriever.batch_size", retriever.batch_size},
           {"retriever.lr", retriever.lr},
           {"retriever.init_scale", retriever.init_scale},
           {"editor.embed_dim", editor.embed_dim},
           {"editor.copy_dim", editor.copy_dim},
           {"editor.hidden", editor.hidden},
           {"editor.encoder_layers", editor.encoder_layers},
           {"editor.decoder_layers", editor.decoder_layers},
           {"editor.num_copy", editor.num_copy},
           {"editor.batch_size", editor.batch_size},
           {"editor.lr", editor.lr},
           {"editor.init_scale", editor.init_scale},
           {"editor.max_len", editor.max_len},
           {"index.num_trees", index.num_trees},
           {"index.max_leaf_size", index.max_leaf_size},
           {"eval.beam_width", beam_width},
           {"eval.workers", eval_workers}})
    positive(key, v);
  if (retriever.latent < 2) throw ConfigError("retriever.latent must be >= 2");
  if (!(retriever.kappa >= 0)) throw ConfigError("retriever.kappa must be >= 0");
  if (retriever.iterations < 0 || editor.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(editor.identity_prob >= 0 && editor.identity_prob <= 1))
    throw ConfigError("editor.identity_prob must be in [0, 1]");
  if (index.search_k < 0 || eval_max_examples < 0 || dev_eval_every < 0)
    throw ConfigError("index.search_k, eval.max_examples and eval.dev_eval_every must be >= 0");
}

std::string Config::to_text() const { return fields_to_text(config_fields(), *this); }

Config Config::from_text(const std::string& text) {
  Config c;
  fields_from_text(config_fields(), c, text);
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_text();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string Config::hash() const {
  Config c = *this;
  c.work_dir.clear();
  return hex64(fnv1a64(c.to_text()));
}

void Config::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  data_seed = seed;
  retriever.seed = seed;
  editor.seed = seed;
  index.seed = seed;
}

std::string retriever_config_text(const RetrieverConfig& cfg) { return fields_to_text(retriever_fields(), cfg); }

RetrieverConfig retriever_config_from_text(const std::string& text) {
  RetrieverConfig c;
  fields_from_text(retriever_fields(), c, text);
  return c;
}

std::string editor_config_text(const EditorConfig& cfg) { return fields_to_text(editor_fields(), cfg); }

EditorConfig editor_config_from_text(const std::string& text) {
  EditorConfig c;
  fields_from_text(editor_fields(), c, text);
  return c;
}

}  // namespace retedit
