#include "rangeaug/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rangeaug {
namespace {

using Json = nlohmann::ordered_json;

struct Entry {
  ConfigKey key;
  std::function<Json(const RunConfig&)> get;
  std::function<void(RunConfig&, const Json&)> set;
};

[[noreturn]] void type_error(const std::string& key, const char* want) {
  throw std::invalid_argument("config key '" + key + "' expects " + want);
}

double as_double(const std::string& key, const Json& v) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

std::size_t as_count(const std::string& key, const Json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) type_error(key, "a non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t as_u64(const std::string& key, const Json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    type_error(key, "a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool as_bool(const std::string& key, const Json& v) {
  if (!v.is_boolean()) type_error(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const Json& v) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

std::vector<double> as_doubles(const std::string& key, const Json& v) {
  if (!v.is_array()) type_error(key, "an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(as_double(key, x));
  return out;
}

Curriculum as_candidate(const std::string& key, const Json& v) {
  if (v.is_string()) return parse_curriculum_label(v.get<std::string>());
  if (!v.is_object()) type_error(key, "curriculum labels or objects");
  Curriculum c;
  for (const auto& [k, x] : v.items()) {
    if (k == "kind") {
      auto kind = parse_curriculum(as_string(key, x));
      if (!kind) throw std::invalid_argument("config key '" + key + "': unknown curriculum kind");
      c.kind = *kind;
    } else if (k == "delta_start") {
      c.delta_start = as_double(key, x);
    } else if (k == "delta_end") {
      c.delta_end = as_double(key, x);
    } else {
      throw std::invalid_argument("config key '" + key + "': unknown candidate field '" + k + "'");
    }
  }
  if (c.kind == CurriculumKind::Fixed && !v.contains("delta_start")) c.delta_start = c.delta_end;
  return c;
}

KdSettings& kd_of(RunConfig& c) {
  if (!c.train.kd) c.train.kd = KdSettings{};
  return *c.train.kd;
}

ShiftSpec& shift_of(RunConfig& c) {
  if (!c.train.data.val_shift) c.train.data.val_shift = ShiftSpec{};
  return *c.train.data.val_shift;
}

#define NUM_KEY(name, field, help)                                                   \
  Entry {                                                                            \
    {name, help}, [](const RunConfig& c) { return Json(c.field); },                 \
        [](RunConfig& c, const Json& v) { c.field = as_double(name, v); }            \
  }
#define COUNT_KEY(name, field, help)                                                 \
  Entry {                                                                            \
    {name, help}, [](const RunConfig& c) { return Json(c.field); },                 \
        [](RunConfig& c, const Json& v) { c.field = as_count(name, v); }             \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      COUNT_KEY("epochs", train.epochs, "training epochs"),
      COUNT_KEY("batch_size", train.batch_size, "images per optimizer step"),
      NUM_KEY("model_lr", train.model_lr, "SGD learning rate for the classifier"),
      NUM_KEY("policy_lr", train.policy_lr, "SGD learning rate for the magnitude ranges"),
      NUM_KEY("momentum", train.momentum, "SGD momentum, shared by both parameter groups"),
      NUM_KEY("lambda", train.lambda, "weight of the augmentation loss"),
      NUM_KEY("beta", train.beta, "smooth-L1 transition in dB"),
      Entry{{"ra_reduction", "augmentation loss per_image (mean of per-image losses) or batch_mean (loss of mean PSNR)"},
            [](const RunConfig& c) { return Json(std::string(reduction_name(c.train.ra_reduction))); },
            [](RunConfig& c, const Json& v) {
              auto r = parse_reduction(as_string("ra_reduction", v));
              if (!r) throw std::invalid_argument("config key 'ra_reduction': expected per_image or batch_mean");
              c.train.ra_reduction = *r;
            }},
      Entry{{"curriculum.kind", "target PSNR schedule: fixed, linear or cosine"},
            [](const RunConfig& c) { return Json(std::string(curriculum_name(c.train.curriculum.kind))); },
            [](RunConfig& c, const Json& v) {
              auto kind = parse_curriculum(as_string("curriculum.kind", v));
              if (!kind) throw std::invalid_argument("config key 'curriculum.kind': unknown curriculum kind");
              c.train.curriculum.kind = *kind;
            }},
      NUM_KEY("curriculum.delta_start", train.curriculum.delta_start, "target PSNR at the first step (dB)"),
      NUM_KEY("curriculum.delta_end", train.curriculum.delta_end, "target PSNR at the last step (dB)"),
      NUM_KEY("p_apply", train.p_apply, "probability that each op is applied"),
      Entry{{"joint_mode", "false stops task-loss gradients reaching the policy"},
            [](const RunConfig& c) { return Json(c.train.joint_mode); },
            [](RunConfig& c, const Json& v) { c.train.joint_mode = as_bool("joint_mode", v); }},
      Entry{{"hidden", "hidden layer widths of the classifier"},
            [](const RunConfig& c) { return Json(c.train.hidden); },
            [](RunConfig& c, const Json& v) {
              if (!v.is_array()) type_error("hidden", "an array of widths");
              c.train.hidden.clear();
              for (const auto& x : v) {
                const std::size_t w = as_count("hidden", x);
                if (w == 0) type_error("hidden", "positive widths");
                c.train.hidden.push_back(w);
              }
            }},
      Entry{{"seed", "run seed: initialization, sampling and shuffling"},
            [](const RunConfig& c) { return Json(c.train.seed); },
            [](RunConfig& c, const Json& v) { c.train.seed = as_u64("seed", v); }},
      Entry{{"out_dir", "directory for checkpoint, policy and CSV outputs"},
            [](const RunConfig& c) { return Json(c.train.out_dir); },
            [](RunConfig& c, const Json& v) { c.train.out_dir = as_string("out_dir", v); }},
      Entry{{"track_policy_grads", "record task and augmentation policy gradients separately"},
            [](const RunConfig& c) { return Json(c.train.track_policy_grads); },
            [](RunConfig& c, const Json& v) { c.train.track_policy_grads = as_bool("track_policy_grads", v); }},
      Entry{{"kd.teacher", "teacher checkpoint; enables distillation"},
            [](const RunConfig& c) { return c.train.kd ? Json(c.train.kd->teacher_checkpoint) : Json(nullptr); },
            [](RunConfig& c, const Json& v) {
              if (v.is_null()) {
                c.train.kd.reset();
                return;
              }
              kd_of(c).teacher_checkpoint = as_string("kd.teacher", v);
            }},
      Entry{{"kd.alpha", "weight of the softened teacher term"},
            [](const RunConfig& c) { return Json(c.train.kd ? c.train.kd->alpha : KdSettings{}.alpha); },
            [](RunConfig& c, const Json& v) { kd_of(c).alpha = as_double("kd.alpha", v); }},
      Entry{{"kd.temperature", "softmax temperature for distillation"},
            [](const RunConfig& c) { return Json(c.train.kd ? c.train.kd->temperature : KdSettings{}.temperature); },
            [](RunConfig& c, const Json& v) { kd_of(c).temperature = as_double("kd.temperature", v); }},
      COUNT_KEY("data.n_train", train.data.n_train, "generated training images"),
      COUNT_KEY("data.n_val", train.data.n_val, "generated validation images"),
      COUNT_KEY("data.num_classes", train.data.num_classes, "classes in the generated task (1-4)"),
      COUNT_KEY("data.image_size", train.data.image_size, "side length of generated images"),
      Entry{{"data.seed", "seed of the generated data and the validation shift"},
            [](const RunConfig& c) { return Json(c.train.data.seed); },
            [](RunConfig& c, const Json& v) { c.train.data.seed = as_u64("data.seed", v); }},
      Entry{{"data.train_path", ".ratf file replacing the generated training split"},
            [](const RunConfig& c) { return Json(c.train.data.train_path); },
            [](RunConfig& c, const Json& v) { c.train.data.train_path = as_string("data.train_path", v); }},
      Entry{{"data.val_path", ".ratf file replacing the generated validation split"},
            [](const RunConfig& c) { return Json(c.train.data.val_path); },
            [](RunConfig& c, const Json& v) { c.train.data.val_path = as_string("data.val_path", v); }},
      Entry{{"data.shift.brightness", "brightness factors of the shifted validation split"},
            [](const RunConfig& c) {
              return c.train.data.val_shift ? Json(c.train.data.val_shift->brightness_factors) : Json(nullptr);
            },
            [](RunConfig& c, const Json& v) {
              shift_of(c).brightness_factors = as_doubles("data.shift.brightness", v);
            }},
      Entry{{"data.shift.contrast", "contrast factors of the shifted validation split"},
            [](const RunConfig& c) {
              return c.train.data.val_shift ? Json(c.train.data.val_shift->contrast_factors) : Json(nullptr);
            },
            [](RunConfig& c, const Json& v) { shift_of(c).contrast_factors = as_doubles("data.shift.contrast", v); }},
      Entry{{"data.shift.noise", "noise standard deviations of the shifted validation split"},
            [](const RunConfig& c) {
              return c.train.data.val_shift ? Json(c.train.data.val_shift->noise_stds) : Json(nullptr);
            },
            [](RunConfig& c, const Json& v) { shift_of(c).noise_stds = as_doubles("data.shift.noise", v); }},
      Entry{{"sweep.candidates", "curricula tried by sweep, as labels like cosine_40_10"},
            [](const RunConfig& c) {
              Json out = Json::array();
              for (const auto& cand : c.sweep_candidates) out.push_back(cand.label());
              return out;
            },
            [](RunConfig& c, const Json& v) {
              if (!v.is_array()) type_error("sweep.candidates", "an array");
              c.sweep_candidates.clear();
              for (const auto& x : v) c.sweep_candidates.push_back(as_candidate("sweep.candidates", x));
            }},
  };
  return table;
}

#undef NUM_KEY
#undef COUNT_KEY

const Entry* find_entry(const std::string& name) {
  for (const auto& e : entries()) {
    if (e.key.name == name) return &e;
  }
  return nullptr;
}

bool has_prefix(const std::string& name) {
  for (const auto& e : entries()) {
    if (e.key.name.size() > name.size() && e.key.name.compare(0, name.size(), name) == 0 &&
        e.key.name[name.size()] == '.') {
      return true;
    }
  }
  return false;
}

void apply_tree(RunConfig& cfg, const Json& node, const std::string& prefix) {
  for (const auto& [k, v] : node.items()) {
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    if (const Entry* e = find_entry(name)) {
      e->set(cfg, v);
    } else if (v.is_object() && has_prefix(name)) {
      apply_tree(cfg, v, name);
    } else {
      throw std::invalid_argument("unknown config key '" + name + "'");
    }
  }
}

void set_path(Json& root, const std::string& dotted, Json value) {
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

std::vector<Curriculum> default_sweep_candidates() {
  return {{CurriculumKind::Cosine, 40.0, 5.0, 1},
          {CurriculumKind::Cosine, 40.0, 10.0, 1},
          {CurriculumKind::Cosine, 40.0, 20.0, 1},
          Curriculum::fixed(20.0)};
}

RunConfig config_from_json(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");
  RunConfig cfg;
  apply_tree(cfg, doc, "");
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  Json doc = Json::object();
  for (const auto& e : entries()) {
    Json v = e.get(cfg);
    if (v.is_null()) continue;
    if (e.key.name.rfind("kd.", 0) == 0 && !cfg.train.kd) continue;
    set_path(doc, e.key.name, std::move(v));
  }
  return doc.dump(2) + "\n";
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return config_from_json(os.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry* e = find_entry(key);
  if (!e) throw std::invalid_argument("unknown config key '" + key + "'");
  Json v = Json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  e->set(cfg, v);
}

Curriculum parse_curriculum_label(const std::string& label) {
  std::vector<std::string> parts;
  std::stringstream ss(label);
  for (std::string part; std::getline(ss, part, '_');) parts.push_back(part);
  auto bad = [&]() -> std::invalid_argument {
    return std::invalid_argument("bad curriculum label '" + label + "'");
  };
  if (parts.empty()) throw bad();
  auto kind = parse_curriculum(parts[0]);
  if (!kind) throw bad();
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != s.size()) throw bad();
    return v;
  };
  if (*kind == CurriculumKind::Fixed) {
    if (parts.size() != 2) throw bad();
    return Curriculum::fixed(number(parts[1]));
  }
  if (parts.size() != 3) throw bad();
  return {*kind, number(parts[1]), number(parts[2]), 1};
}

}  // namespace rangeaug
