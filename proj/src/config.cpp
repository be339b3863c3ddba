#include "mdseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mdseg/error.hpp"

namespace mdseg {

using Json = nlohmann::ordered_json;

namespace {

// Reads the object's fields through get<T>() while tracking which keys were consumed.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path(key) + ": wrong type");
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown key");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json shadow_to_json(const ShadowParams& s) {
  return {{"factor_min", s.factor_min},
          {"factor_max", s.factor_max},
          {"half_width_min_deg", s.half_width_min_deg},
          {"half_width_max_deg", s.half_width_max_deg},
          {"max_tilt_deg", s.max_tilt_deg}};
}

ShadowParams shadow_from_json(const Json& j, const std::string& where) {
  ShadowParams s;
  Reader r(j, where);
  r.get("factor_min", s.factor_min);
  r.get("factor_max", s.factor_max);
  r.get("half_width_min_deg", s.half_width_min_deg);
  r.get("half_width_max_deg", s.half_width_max_deg);
  r.get("max_tilt_deg", s.max_tilt_deg);
  r.finish();
  return s;
}

Json domain_to_json(const DomainConfig& d) {
  const auto& s = d.spec;
  return {{"name", s.name},
          {"family", to_string(s.family)},
          {"size_min", s.size_min},
          {"size_max", s.size_max},
          {"eccentricity_min", s.eccentricity_min},
          {"eccentricity_max", s.eccentricity_max},
          {"interior_mean", s.interior_mean},
          {"exterior_mean", s.exterior_mean},
          {"shadow_probability", s.shadow_probability},
          {"speckle_strength", s.speckle_strength},
          {"blur_sigma", s.blur_sigma},
          {"shadow", shadow_to_json(s.shadow)},
          {"n_train", d.n_train},
          {"n_test", d.n_test}};
}

DomainConfig domain_from_json(const Json& j, const std::string& where) {
  DomainConfig d;
  auto& s = d.spec;
  Reader r(j, where);
  r.get("name", s.name);
  std::string family = to_string(s.family);
  r.get("family", family);
  try {
    s.family = parse_shape_family(family);
  } catch (const ConfigError& e) {
    throw ConfigError(r.path("family") + ": " + e.what());
  }
  r.get("size_min", s.size_min);
  r.get("size_max", s.size_max);
  r.get("eccentricity_min", s.eccentricity_min);
  r.get("eccentricity_max", s.eccentricity_max);
  r.get("interior_mean", s.interior_mean);
  r.get("exterior_mean", s.exterior_mean);
  r.get("shadow_probability", s.shadow_probability);
  r.get("speckle_strength", s.speckle_strength);
  r.get("blur_sigma", s.blur_sigma);
  if (const Json* sh = r.child("shadow")) s.shadow = shadow_from_json(*sh, r.path("shadow"));
  r.get("n_train", d.n_train);
  r.get("n_test", d.n_test);
  r.finish();
  return d;
}

Json to_json(const RunConfig& c) {
  Json domains = Json::array();
  for (const auto& d : c.data.domains) domains.push_back(domain_to_json(d));
  const auto& t = c.train;
  return {{"data", {{"resolution", c.data.resolution}, {"domains", domains}}},
          {"train",
           {{"lambda", t.lambda},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"working_resolution", t.working_resolution},
            {"rng_seed", t.rng_seed},
            {"domain_schedule", t.domain_schedule},
            {"preset", t.preset}}},
          {"refine",
           {{"context_fraction", c.refine.context_fraction},
            {"refine_resolution", c.refine.refine_resolution},
            {"stop_dice", c.refine.stop_dice},
            {"max_iterations", c.refine.max_iterations},
            {"min_component_area", c.refine.min_component_area}}},
          {"crops",
           {{"margin_low", c.crops.margin_low},
            {"margin_high", c.crops.margin_high},
            {"max_jitter", c.crops.max_jitter}}}};
}

RunConfig from_json(const Json& j) {
  RunConfig c;
  Reader top(j, "");
  if (const Json* data = top.child("data")) {
    Reader r(*data, "data");
    r.get("resolution", c.data.resolution);
    if (const Json* domains = r.child("domains")) {
      if (!domains->is_array()) throw ConfigError("data.domains: expected an array");
      c.data.domains.clear();
      for (std::size_t i = 0; i < domains->size(); ++i)
        c.data.domains.push_back(domain_from_json((*domains)[i], "data.domains." + std::to_string(i)));
    }
    r.finish();
  }
  if (const Json* train = top.child("train")) {
    auto& t = c.train;
    Reader r(*train, "train");
    r.get("lambda", t.lambda);
    r.get("learning_rate", t.learning_rate);
    r.get("momentum", t.momentum);
    r.get("batch_size", t.batch_size);
    r.get("epochs", t.epochs);
    r.get("working_resolution", t.working_resolution);
    r.get("rng_seed", t.rng_seed);
    r.get("domain_schedule", t.domain_schedule);
    r.get("preset", t.preset);
    r.finish();
  }
  if (const Json* refine = top.child("refine")) {
    Reader r(*refine, "refine");
    r.get("context_fraction", c.refine.context_fraction);
    r.get("refine_resolution", c.refine.refine_resolution);
    r.get("stop_dice", c.refine.stop_dice);
    r.get("max_iterations", c.refine.max_iterations);
    r.get("min_component_area", c.refine.min_component_area);
    r.finish();
  }
  if (const Json* crops = top.child("crops")) {
    Reader r(*crops, "crops");
    r.get("margin_low", c.crops.margin_low);
    r.get("margin_high", c.crops.margin_high);
    r.get("max_jitter", c.crops.max_jitter);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  train.validate(ArchPreset::by_name(train.preset).downsampling_factor());
  refine.validate();
  crops.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

std::string dump_run_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FilesystemError("cannot open config file", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FilesystemError("cannot write config file", path);
  out << dump_run_config(config);
  if (!out) throw FilesystemError("write failed", path);
}

RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& assignments) {
  Json j = to_json(config);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not of the form key=value");
    const std::string key = a.substr(0, eq), text = a.substr(eq + 1);
    Json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (node->is_array()) {
        std::size_t idx = 0;
        try {
          std::size_t used = 0;
          idx = std::stoul(part, &used);
          if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
          throw ConfigError(key + ": '" + part + "' is not a list index");
        }
        if (idx >= node->size()) throw ConfigError(key + ": index " + part + " out of range");
        node = &(*node)[idx];
      } else if (node->is_object()) {
        if (!node->contains(part)) throw ConfigError(key + ": unknown key");
        node = &(*node)[part];
      } else {
        throw ConfigError(key + ": '" + part + "' does not name a field");
      }
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_object() || node->is_array()) throw ConfigError(key + ": cannot override a whole section");
    Json value;
    try {
      value = Json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      value = text;
    }
    *node = value;
  }
  return from_json(j);
}

}  // namespace mdseg
