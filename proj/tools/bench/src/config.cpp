#include "tak_bench/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tak/errors.hpp"
#include "tak/serialize.hpp"

namespace tak::bench {

using nlohmann::json;

std::string to_string(PenaltySource s) {
  switch (s) {
    case PenaltySource::none: return "none";
    case PenaltySource::merged: return "merged";
    case PenaltySource::per_task: return "per_task";
    case PenaltySource::diagonal: return "diagonal";
  }
  return "none";
}

std::string to_string(Compression c) {
  switch (c) {
    case Compression::none: return "none";
    case Compression::block: return "block";
    case Compression::lowrank: return "lowrank";
    case Compression::prune: return "prune";
    case Compression::quant8: return "quant8";
  }
  return "none";
}

std::string to_string(AlphaPolicy p) {
  switch (p) {
    case AlphaPolicy::fixed: return "fixed";
    case AlphaPolicy::best: return "best";
    case AlphaPolicy::both: return "both";
  }
  return "both";
}

std::vector<double> linspace_step(double lo, double hi, double step) {
  std::vector<double> out;
  if (step == 0.0) return {lo};
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 0.5));
  for (long i = 0; i <= n; ++i) {
    // Snap to 12 decimals so 0.1-steps print as typed.
    out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
  }
  return out;
}

BenchConfig::BenchConfig() {
  alpha.grid = linspace_step(0.1, 2.0, 0.1);
  sweep.grid = linspace_step(0.2, 1.6, 0.2);
  negation.grid = linspace_step(0.0, -8.0, -0.25);
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path + "/" + key; }

/// Walks `user` against the default tree: every key must exist there and
/// leaf kinds must agree. Arrays replace the default wholesale.
void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = join(path, it.key());
    if (!base.contains(it.key())) throw ConfigError(p, "unknown key");
    json& slot = base[it.key()];
    const json& v = it.value();
    if (slot.is_object()) {
      merge_strict(slot, v, p);
    } else if (slot.is_number()) {
      if (!v.is_number()) throw ConfigError(p, "expected a number");
      slot = v;
    } else if (slot.is_boolean()) {
      if (!v.is_boolean()) throw ConfigError(p, "expected a boolean");
      slot = v;
    } else if (slot.is_string()) {
      if (!v.is_string()) throw ConfigError(p, "expected a string");
      slot = v;
    } else if (slot.is_array()) {
      if (!v.is_array()) throw ConfigError(p, "expected an array");
      slot = v;
    } else {
      slot = v;
    }
  }
}

class Decoder {
 public:
  explicit Decoder(const json& root) : root_(root) {}

  const json& at(const std::string& ptr) const { return root_.at(json::json_pointer(ptr)); }

  double real(const std::string& ptr) const {
    const json& v = at(ptr);
    if (!v.is_number()) throw ConfigError(ptr, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(ptr, "must be finite");
    return d;
  }

  double positive(const std::string& ptr) const {
    const double d = real(ptr);
    if (!(d > 0.0)) throw ConfigError(ptr, "must be positive");
    return d;
  }

  std::size_t count(const std::string& ptr, std::size_t min = 0) const {
    const json& v = at(ptr);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(ptr, "expected a non-negative integer");
    const auto n = static_cast<std::size_t>(v.get<long long>());
    if (n < min) throw ConfigError(ptr, "must be at least " + std::to_string(min));
    return n;
  }

  long integer(const std::string& ptr) const {
    const json& v = at(ptr);
    if (!v.is_number_integer()) throw ConfigError(ptr, "expected an integer");
    return v.get<long>();
  }

  bool flag(const std::string& ptr) const { return at(ptr).get<bool>(); }
  std::string text(const std::string& ptr) const { return at(ptr).get<std::string>(); }

  template <typename F>
  auto choice(const std::string& ptr, F&& parse) const {
    try {
      return parse(text(ptr));
    } catch (const ParameterError& e) {
      throw ConfigError(ptr, e.what());
    }
  }

  std::vector<double> reals(const std::string& ptr, bool nonempty = true) const {
    const json& v = at(ptr);
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(real(ptr + "/" + std::to_string(i)));
    if (nonempty && out.empty()) throw ConfigError(ptr, "must not be empty");
    return out;
  }

 private:
  const json& root_;
};

template <typename E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table) {
  std::string names;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ParameterError("unknown value '" + s + "' (expected one of " + names + ")");
}

KfacVariant variant_from_string(const std::string& s) {
  return enum_from<KfacVariant>(s, {{"exact", KfacVariant::exact}, {"mc", KfacVariant::mc}});
}

json sample_to_json(const SampleSpec& s) {
  const char* mode = s.mode == SampleSpec::Mode::all ? "all" : s.mode == SampleSpec::Mode::fraction ? "fraction" : "count";
  return {{"mode", mode}, {"fraction", s.fraction}, {"count", s.count}};
}

json canonical(const BenchConfig& c) {
  json j;
  j["schema"] = kSchemaVersion;
  j["seed"] = c.seed;
  const auto& s = c.suite;
  j["suite"] = {{"n_tasks", s.n_tasks},
                {"input_dim", s.input_dim},
                {"classes_per_task", s.classes_per_task},
                {"clusters_per_class", s.clusters_per_class},
                {"sigma", s.sigma},
                {"n_train", s.n_train},
                {"n_val", s.n_val},
                {"n_test", s.n_test},
                {"n_pretrain", s.n_pretrain},
                {"geometry", to_string(s.geometry)},
                {"region_radius", s.region_radius},
                {"cluster_radius", s.cluster_radius}};
  j["network"] = {{"hidden", c.network.hidden}, {"activation", to_string(c.network.activation)}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"criterion", to_string(c.pretrain.criterion)}};
  const auto& k = c.curvature.kfac;
  j["curvature"] = {{"criterion", to_string(k.criterion)},
                    {"variant", to_string(k.variant)},
                    {"mc_samples", k.mc_samples},
                    {"bias_mode", to_string(k.bias_mode)},
                    {"sample", sample_to_json(k.sample)}};
  const auto& p = c.penalty;
  j["penalty"] = {{"source", to_string(p.source)},
                  {"beta", p.beta},
                  {"merge_mode", to_string(p.merge_mode)},
                  {"compression",
                   {{"scheme", to_string(p.compression)},
                    {"blocks", p.blocks},
                    {"rank", p.rank},
                    {"rank_fraction", p.rank_fraction},
                    {"keep", p.keep}}},
                  {"apply_every", p.apply_every},
                  {"compensate", p.compensate},
                  {"last_layer_scale", p.last_layer_scale}};
  const auto& f = c.finetune;
  j["finetune"] = {{"regime", to_string(f.regime)},
                   {"optimizer", f.optimizer},
                   {"lr", f.lr},
                   {"momentum", f.momentum},
                   {"weight_decay", f.weight_decay},
                   {"epochs", f.epochs},
                   {"batch_size", f.batch_size},
                   {"schedule", to_string(f.schedule)},
                   {"criterion", to_string(f.criterion)},
                   {"trainable", f.trainable}};
  j["alpha"] = {{"policy", to_string(c.alpha.policy)}, {"fixed", c.alpha.fixed}, {"grid", c.alpha.grid}};
  j["sweep"] = {{"enabled", c.sweep.enabled}, {"grid", c.sweep.grid}};
  j["negation"] = {{"enabled", c.negation.enabled},
                   {"control", c.negation.control},
                   {"grid", c.negation.grid},
                   {"keep_fraction", c.negation.keep_fraction}};
  j["disentangle"] = {{"enabled", c.disentangle.enabled},
                      {"task_a", c.disentangle.task_a},
                      {"task_b", c.disentangle.task_b},
                      {"grid_size", c.disentangle.grid_size},
                      {"max_alpha", c.disentangle.max_alpha}};
  j["localize"] = {{"enabled", c.localize.enabled}};
  return j;
}

BenchConfig decode(const json& j) {
  const Decoder d(j);
  BenchConfig c;
  if (d.integer("/schema") != kSchemaVersion) throw ConfigError("/schema", "unsupported schema version");
  c.seed = d.count("/seed");

  auto& s = c.suite;
  s.seed = c.seed;
  s.n_tasks = d.count("/suite/n_tasks", 1);
  s.input_dim = d.count("/suite/input_dim", 1);
  s.classes_per_task = d.count("/suite/classes_per_task", 2);
  s.clusters_per_class = d.count("/suite/clusters_per_class", 1);
  s.sigma = d.positive("/suite/sigma");
  s.n_train = d.count("/suite/n_train", 1);
  s.n_val = d.count("/suite/n_val", 1);
  s.n_test = d.count("/suite/n_test", 1);
  s.n_pretrain = d.count("/suite/n_pretrain", 1);
  s.geometry = d.choice("/suite/geometry", geometry_from_string);
  s.region_radius = d.positive("/suite/region_radius");
  s.cluster_radius = d.positive("/suite/cluster_radius");
  try {
    s.validate();
  } catch (const GenerationError& e) {
    throw ConfigError("/suite", e.what());
  }

  c.network.hidden.clear();
  const json& hidden = d.at("/network/hidden");
  for (std::size_t i = 0; i < hidden.size(); ++i) c.network.hidden.push_back(d.count("/network/hidden/" + std::to_string(i), 1));
  c.network.activation = d.choice("/network/activation", activation_from_string);

  c.pretrain.epochs = d.count("/pretrain/epochs");
  c.pretrain.lr = d.positive("/pretrain/lr");
  c.pretrain.batch_size = d.count("/pretrain/batch_size", 1);
  c.pretrain.criterion = d.choice("/pretrain/criterion", criterion_from_string);
  c.pretrain.seed = c.seed;

  auto& k = c.curvature.kfac;
  k.criterion = d.choice("/curvature/criterion", criterion_from_string);
  k.variant = d.choice("/curvature/variant", variant_from_string);
  k.mc_samples = d.count("/curvature/mc_samples", 1);
  k.bias_mode = d.choice("/curvature/bias_mode", bias_mode_from_string);
  k.sample.mode = d.choice("/curvature/sample/mode", [](const std::string& v) {
    return enum_from<SampleSpec::Mode>(
        v, {{"all", SampleSpec::Mode::all}, {"fraction", SampleSpec::Mode::fraction}, {"count", SampleSpec::Mode::count}});
  });
  k.sample.fraction = d.positive("/curvature/sample/fraction");
  if (k.sample.fraction > 1.0) throw ConfigError("/curvature/sample/fraction", "must not exceed 1");
  k.sample.count = d.count("/curvature/sample/count", 1);

  auto& p = c.penalty;
  p.source = d.choice("/penalty/source", [](const std::string& v) {
    return enum_from<PenaltySource>(v, {{"none", PenaltySource::none},
                                        {"merged", PenaltySource::merged},
                                        {"per_task", PenaltySource::per_task},
                                        {"diagonal", PenaltySource::diagonal}});
  });
  p.beta = d.real("/penalty/beta");
  if (p.beta < 0.0) throw ConfigError("/penalty/beta", "must be non-negative");
  p.merge_mode = d.choice("/penalty/merge_mode", merge_mode_from_string);
  p.compression = d.choice("/penalty/compression/scheme", [](const std::string& v) {
    return enum_from<Compression>(v, {{"none", Compression::none},
                                      {"block", Compression::block},
                                      {"lowrank", Compression::lowrank},
                                      {"prune", Compression::prune},
                                      {"quant8", Compression::quant8}});
  });
  p.blocks = d.count("/penalty/compression/blocks", 1);
  p.rank = d.count("/penalty/compression/rank");
  p.rank_fraction = d.positive("/penalty/compression/rank_fraction");
  if (p.rank_fraction > 1.0) throw ConfigError("/penalty/compression/rank_fraction", "must not exceed 1");
  p.keep = d.positive("/penalty/compression/keep");
  if (p.keep > 1.0) throw ConfigError("/penalty/compression/keep", "must not exceed 1");
  p.apply_every = d.count("/penalty/apply_every", 1);
  p.compensate = d.flag("/penalty/compensate");
  p.last_layer_scale = d.real("/penalty/last_layer_scale");
  if (p.last_layer_scale < 0.0) throw ConfigError("/penalty/last_layer_scale", "must be non-negative");
  if (p.active() && p.source != PenaltySource::diagonal && s.n_tasks < 2)
    throw ConfigError("/penalty/source", "a curvature penalty needs at least two tasks");

  auto& f = c.finetune;
  f.regime = d.choice("/finetune/regime", regime_from_string);
  f.optimizer = d.choice("/finetune/optimizer", [](const std::string& v) {
    if (v != "adam" && v != "sgd") throw ParameterError("unknown optimizer '" + v + "' (expected adam or sgd)");
    return v;
  });
  f.lr = d.positive("/finetune/lr");
  f.momentum = d.real("/finetune/momentum");
  f.weight_decay = d.real("/finetune/weight_decay");
  f.epochs = d.count("/finetune/epochs");
  f.batch_size = d.count("/finetune/batch_size", 1);
  f.schedule = d.choice("/finetune/schedule", schedule_from_string);
  f.criterion = d.choice("/finetune/criterion", criterion_from_string);
  f.trainable.clear();
  const json& mask = d.at("/finetune/trainable");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::string ptr = "/finetune/trainable/" + std::to_string(i);
    if (!mask[i].is_boolean()) throw ConfigError(ptr, "expected a boolean");
    f.trainable.push_back(mask[i].get<bool>());
  }
  if (!f.trainable.empty() && f.trainable.size() != c.network.hidden.size() + 1)
    throw ConfigError("/finetune/trainable", "needs one flag per layer");

  c.alpha.policy = d.choice("/alpha/policy", [](const std::string& v) {
    return enum_from<AlphaPolicy>(v, {{"fixed", AlphaPolicy::fixed}, {"best", AlphaPolicy::best}, {"both", AlphaPolicy::both}});
  });
  c.alpha.fixed = d.real("/alpha/fixed");
  c.alpha.grid = d.reals("/alpha/grid");

  c.sweep.enabled = d.flag("/sweep/enabled");
  c.sweep.grid = d.reals("/sweep/grid");

  c.negation.enabled = d.flag("/negation/enabled");
  c.negation.control = d.integer("/negation/control");
  c.negation.grid = d.reals("/negation/grid");
  c.negation.keep_fraction = d.real("/negation/keep_fraction");
  if (c.negation.enabled) {
    if (s.n_tasks < 2) throw ConfigError("/negation/enabled", "negation needs a control task besides the targets");
    if (c.negation.control >= static_cast<long>(s.n_tasks)) throw ConfigError("/negation/control", "out of range");
  }

  auto& dis = c.disentangle;
  dis.enabled = d.flag("/disentangle/enabled");
  dis.task_a = d.count("/disentangle/task_a");
  dis.task_b = d.count("/disentangle/task_b");
  dis.grid_size = d.count("/disentangle/grid_size", 1);
  dis.max_alpha = d.real("/disentangle/max_alpha");
  if (dis.enabled) {
    if (dis.task_a >= s.n_tasks) throw ConfigError("/disentangle/task_a", "out of range");
    if (dis.task_b >= s.n_tasks) throw ConfigError("/disentangle/task_b", "out of range");
    if (dis.task_a == dis.task_b) throw ConfigError("/disentangle/task_b", "must differ from task_a");
  }

  c.localize.enabled = d.flag("/localize/enabled");
  if (c.localize.enabled && s.n_tasks < 2) throw ConfigError("/localize/enabled", "localization needs at least two tasks");
  return c;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON: ") + e.what());
  }
}

json value_from_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

BenchConfig BenchConfig::from_json(const std::string& text) {
  json base = canonical(BenchConfig{});
  merge_strict(base, parse_json(text), "");
  return decode(base);
}

BenchConfig BenchConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/", "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string BenchConfig::to_json() const { return canonical(*this).dump(2); }

std::string BenchConfig::hash() const {
  const std::string text = canonical(*this).dump();
  return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

void BenchConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("/", "override '" + assignment + "' is not key=value");
  json patch = json::object();
  json* node = &patch;
  std::stringstream walk(assignment.substr(0, eq));
  std::vector<std::string> parts;
  for (std::string part; std::getline(walk, part, '.');) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value_from_text(assignment.substr(eq + 1));

  json base = canonical(*this);
  merge_strict(base, patch, "");
  *this = decode(base);
}

TrainConfig BenchConfig::train_config(std::size_t task_index) const {
  TrainConfig tc;
  tc.regime = finetune.regime;
  if (finetune.optimizer == "sgd") {
    tc.optimizer = SgdMomentum{finetune.lr, finetune.momentum};
  } else {
    AdamLike a;
    a.lr = finetune.lr;
    a.weight_decay = finetune.weight_decay;
    tc.optimizer = a;
  }
  tc.schedule = finetune.schedule;
  tc.batch_size = finetune.batch_size;
  tc.epochs = finetune.epochs;
  tc.seed = seed * 100 + task_index;
  tc.trainable_mask = finetune.trainable;
  tc.criterion = finetune.criterion;
  return tc;
}

NetSpec BenchConfig::network_spec() const { return suite_network(suite, network.hidden, network.activation); }

}  // namespace tak::bench
