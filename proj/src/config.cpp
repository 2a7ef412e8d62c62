// SPDX-License-Identifier: Apache-2.0
#include "bdmae/config.hpp"

#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <map>
#include <memory>

#include <json.hpp>

#include "bdmae/external_oracle.hpp"
#include "bdmae/image_io.hpp"
#include "bdmae/oracles.hpp"

namespace bdmae {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& why) {
  throw ConfigError("config: '" + where + "' " + why);
}

const json& object_at(const json& doc, const std::string& where) {
  if (!doc.is_object()) fail(where, "must be an object");
  return doc;
}

void allow_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> keys) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) {
      fail(where.empty() ? it.key() : where + "." + it.key(), "is not a known key");
    }
  }
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

void read_int(const json& obj, const std::string& where, const char* key, int& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_integer()) fail(join(where, key), "must be an integer");
  const auto v = it->get<long long>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    fail(join(where, key), "is out of range");
  }
  out = static_cast<int>(v);
}

void read_u64(const json& obj, const std::string& where, const char* key,
              std::uint64_t& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (it->is_number_unsigned()) {
    out = it->get<std::uint64_t>();
  } else if (it->is_number_integer() && it->get<long long>() >= 0) {
    out = static_cast<std::uint64_t>(it->get<long long>());
  } else {
    fail(join(where, key), "must be a non-negative integer");
  }
}

void read_double(const json& obj, const std::string& where, const char* key, double& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number()) fail(join(where, key), "must be a number");
  out = it->get<double>();
}

void read_string(const json& obj, const std::string& where, const char* key,
                 std::string& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_string()) fail(join(where, key), "must be a string");
  out = it->get<std::string>();
}

void read_rgb(const json& obj, const std::string& where, const char* key, Rgb& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_array() || it->size() != 3) fail(join(where, key), "must be an [r, g, b] array");
  for (int c = 0; c < 3; ++c) {
    if (!(*it)[c].is_number()) fail(join(where, key), "must hold numbers");
    out[c] = (*it)[c].get<double>();
  }
}

void apply_trigger(const json& doc, CliConfig& cfg, double& tokens, bool& has_tokens) {
  const std::string where = "trigger";
  const json& t = object_at(doc, where);
  allow_keys(t, where,
             {"pattern", "tokens", "size", "thickness", "cell", "color", "color2",
              "placement", "target", "curve_seed"});
  TriggerSpec& spec = cfg.trigger;
  if (const auto it = t.find("pattern"); it != t.end()) {
    if (!it->is_string()) fail("trigger.pattern", "must be a string");
    try {
      spec.pattern = trigger_pattern_from_string(it->get<std::string>());
    } catch (const InvalidArgument& e) {
      fail("trigger.pattern", e.what());
    }
  }
  if (const auto it = t.find("tokens"); it != t.end()) {
    if (!it->is_number() || !(it->get<double>() >= 0.0)) {
      fail("trigger.tokens", "must be a non-negative number");
    }
    tokens = it->get<double>();
    has_tokens = true;
  } else if (t.contains("size")) {
    has_tokens = false;
  }
  read_int(t, where, "size", spec.size);
  read_int(t, where, "thickness", spec.thickness);
  read_int(t, where, "cell", spec.cell);
  read_rgb(t, where, "color", spec.color);
  read_rgb(t, where, "color2", spec.color2);
  read_int(t, where, "target", spec.target.id);
  read_u64(t, where, "curve_seed", spec.curve_seed);
  if (const auto it = t.find("placement"); it != t.end()) {
    if (it->is_string() && it->get<std::string>() == "random") {
      spec.placement = Placement{true, 0, 0};
    } else if (it->is_object()) {
      allow_keys(*it, "trigger.placement", {"row", "col"});
      Placement p{false, 0, 0};
      read_int(*it, "trigger.placement", "row", p.row);
      read_int(*it, "trigger.placement", "col", p.col);
      spec.placement = p;
    } else {
      fail("trigger.placement", "must be \"random\" or {\"row\", \"col\"}");
    }
  }
}

json rgb_json(const Rgb& c) { return json::array({c[0], c[1], c[2]}); }

}  // namespace

TriggerSpec CliConfig::default_trigger() {
  TriggerSpec spec;
  spec.pattern = TriggerPattern::kSolidPatch;
  spec.size = token_equivalent_size(2, CorpusOptions{}.image_size);
  spec.placement = Placement{true, 0, 0};
  spec.target = Label{0};
  return spec;
}

void CliConfig::validate() const {
  try {
    defense.validate();
    LaplaceInpaintRestorer probe(laplace_max_iters, laplace_tol);
    (void)probe;
    trigger.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (num_classes < 2 || num_classes > SyntheticWorld::kMaxClasses) {
    throw ConfigError("config: num_classes must be in [2, " +
                      std::to_string(SyntheticWorld::kMaxClasses) + "]");
  }
  if (trigger.target.id >= num_classes) {
    throw ConfigError("config: trigger target must be below num_classes");
  }
  if (corpus.n_per_class < 1) throw ConfigError("config: corpus.n_per_class must be >= 1");
  if (corpus.image_size < 14 || corpus.image_size > 4096) {
    throw ConfigError("config: corpus.image_size must be in [14, 4096]");
  }
  if (jobs < 1 || jobs > 1024) throw ConfigError("config: jobs must be in [1, 1024]");
  if (oracle_timeout_ms < 1) throw ConfigError("config: oracle_timeout_ms must be >= 1");
  if (classifier.rfind("builtin:", 0) == 0 && classifier != "builtin:clean" &&
      classifier != "builtin:backdoored") {
    throw ConfigError("config: unknown classifier '" + classifier +
                      "' (builtin:clean, builtin:backdoored, exec:<cmd>, tcp:<host>:<port>)");
  }
  if (restorer.rfind("builtin:", 0) == 0 && restorer != "builtin:laplace" &&
      restorer != "builtin:echo") {
    throw ConfigError("config: unknown restorer '" + restorer +
                      "' (builtin:laplace, builtin:echo, exec:<cmd>, tcp:<host>:<port>)");
  }
  for (const std::string* spec : {&classifier, &restorer}) {
    if (spec->rfind("builtin:", 0) == 0) continue;
    try {
      OracleEndpoint::parse(*spec, oracle_timeout_ms).validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
}

CliConfig apply_config_json(CliConfig cfg, std::string_view json_text) {
  const json doc = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ConfigError("config: not valid JSON");
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  allow_keys(doc, "",
             {"seed", "jobs", "oracle_timeout_ms", "classifier", "restorer", "num_classes",
              "scoregen", "ssim", "refine", "restore", "laplace", "corpus", "trigger"});

  read_u64(doc, "", "seed", cfg.seed);
  read_int(doc, "", "jobs", cfg.jobs);
  read_int(doc, "", "oracle_timeout_ms", cfg.oracle_timeout_ms);
  read_string(doc, "", "classifier", cfg.classifier);
  read_string(doc, "", "restorer", cfg.restorer);
  read_int(doc, "", "num_classes", cfg.num_classes);

  if (const auto it = doc.find("scoregen"); it != doc.end()) {
    const json& s = object_at(*it, "scoregen");
    allow_keys(s, "scoregen", {"outer_rounds", "inner_masks", "masked_count"});
    auto& sg = cfg.defense.scoregen;
    read_int(s, "scoregen", "outer_rounds", sg.outer_rounds);
    read_int(s, "scoregen", "inner_masks", sg.inner_masks);
    read_int(s, "scoregen", "masked_count", sg.masked_count);
  }
  if (const auto it = doc.find("ssim"); it != doc.end()) {
    const json& s = object_at(*it, "ssim");
    allow_keys(s, "ssim", {"window", "sigma", "c1", "c2"});
    auto& ss = cfg.defense.scoregen.ssim;
    read_int(s, "ssim", "window", ss.window);
    read_double(s, "ssim", "sigma", ss.sigma);
    read_double(s, "ssim", "c1", ss.c1);
    read_double(s, "ssim", "c2", ss.c2);
  }
  if (const auto it = doc.find("refine"); it != doc.end()) {
    const json& s = object_at(*it, "refine");
    allow_keys(s, "refine", {"steps", "beta0", "adjacency_bonus", "image_threshold"});
    auto& rf = cfg.defense.refine;
    read_int(s, "refine", "steps", rf.steps);
    read_double(s, "refine", "beta0", rf.beta0);
    read_double(s, "refine", "adjacency_bonus", rf.adjacency_bonus);
    read_double(s, "refine", "image_threshold", rf.image_threshold);
  }
  if (const auto it = doc.find("restore"); it != doc.end()) {
    const json& s = object_at(*it, "restore");
    allow_keys(s, "restore", {"thresholds", "step", "coverage_cap"});
    auto& rs = cfg.defense.restore;
    if (const auto th = s.find("thresholds"); th != s.end()) {
      if (!th->is_array()) fail("restore.thresholds", "must be an array of numbers");
      rs.base_thresholds.clear();
      for (const json& v : *th) {
        if (!v.is_number()) fail("restore.thresholds", "must be an array of numbers");
        rs.base_thresholds.push_back(v.get<double>());
      }
    }
    read_double(s, "restore", "step", rs.step);
    read_double(s, "restore", "coverage_cap", rs.coverage_cap);
  }
  if (const auto it = doc.find("laplace"); it != doc.end()) {
    const json& s = object_at(*it, "laplace");
    allow_keys(s, "laplace", {"max_iters", "tol"});
    read_int(s, "laplace", "max_iters", cfg.laplace_max_iters);
    read_double(s, "laplace", "tol", cfg.laplace_tol);
  }
  // "tokens" is resolved after the corpus size is known.
  double tokens = 2.0;
  bool has_tokens = false;
  if (const auto it = doc.find("trigger"); it != doc.end()) {
    apply_trigger(*it, cfg, tokens, has_tokens);
  }
  if (const auto it = doc.find("corpus"); it != doc.end()) {
    const json& s = object_at(*it, "corpus");
    allow_keys(s, "corpus", {"n_per_class", "image_size"});
    read_int(s, "corpus", "n_per_class", cfg.corpus.n_per_class);
    read_int(s, "corpus", "image_size", cfg.corpus.image_size);
  }
  if (has_tokens) cfg.trigger.size = token_equivalent_size(tokens, cfg.corpus.image_size);
  return cfg;
}

CliConfig load_config(const std::filesystem::path& path, CliConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return apply_config_json(std::move(base), text);
}

std::string config_to_json(const CliConfig& c) {
  const auto& sg = c.defense.scoregen;
  const auto& rf = c.defense.refine;
  const auto& rs = c.defense.restore;
  const auto& t = c.trigger;
  json placement = t.placement.random ? json("random")
                                      : json{{"row", t.placement.row}, {"col", t.placement.col}};
  json doc = {
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"oracle_timeout_ms", c.oracle_timeout_ms},
      {"classifier", c.classifier},
      {"restorer", c.restorer},
      {"num_classes", c.num_classes},
      {"scoregen",
       {{"outer_rounds", sg.outer_rounds},
        {"inner_masks", sg.inner_masks},
        {"masked_count", sg.masked_count}}},
      {"ssim",
       {{"window", sg.ssim.window}, {"sigma", sg.ssim.sigma}, {"c1", sg.ssim.c1},
        {"c2", sg.ssim.c2}}},
      {"refine",
       {{"steps", rf.steps},
        {"beta0", rf.beta0},
        {"adjacency_bonus", rf.adjacency_bonus},
        {"image_threshold", rf.image_threshold}}},
      {"restore",
       {{"thresholds", rs.base_thresholds}, {"step", rs.step}, {"coverage_cap", rs.coverage_cap}}},
      {"laplace", {{"max_iters", c.laplace_max_iters}, {"tol", c.laplace_tol}}},
      {"corpus", {{"n_per_class", c.corpus.n_per_class}, {"image_size", c.corpus.image_size}}},
      {"trigger",
       {{"pattern", to_string(t.pattern)},
        {"size", t.size},
        {"thickness", t.thickness},
        {"cell", t.cell},
        {"color", rgb_json(t.color)},
        {"color2", rgb_json(t.color2)},
        {"placement", placement},
        {"target", t.target.id},
        {"curve_seed", t.curve_seed}}},
  };
  return doc.dump(2);
}

Oracles make_oracles(const CliConfig& cfg) {
  auto world = std::make_shared<SyntheticWorld>(cfg.num_classes);
  std::map<std::string, std::shared_ptr<OracleConnection>> connections;
  auto connect = [&](const std::string& spec) {
    auto& slot = connections[spec];
    if (!slot) slot = OracleConnection::open(OracleEndpoint::parse(spec, cfg.oracle_timeout_ms));
    return slot;
  };
  Oracles o;
  if (cfg.classifier == "builtin:clean") {
    o.classifier = std::make_shared<SyntheticCleanClassifier>(world);
  } else if (cfg.classifier == "builtin:backdoored") {
    o.classifier =
        std::make_shared<SyntheticBackdooredClassifier>(world, cfg.trigger, cfg.trigger.target);
  } else {
    o.classifier = std::make_shared<ExternalClassifier>(connect(cfg.classifier));
  }
  if (cfg.restorer == "builtin:laplace") {
    o.restorer = std::make_shared<LaplaceInpaintRestorer>(cfg.laplace_max_iters, cfg.laplace_tol);
  } else if (cfg.restorer == "builtin:echo") {
    o.restorer = std::make_shared<EchoRestorer>();
  } else {
    o.restorer = std::make_shared<ExternalRestorer>(connect(cfg.restorer));
  }
  return o;
}

}  // namespace bdmae
