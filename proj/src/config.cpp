#include "unadapt/config.hpp"

#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "unadapt/error.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kKeys = {
    {"run", {"manifest", "corpus", "output", "seed", "split", "stratified", "parallel"}},
    {"encoders",
     {"text", "visual", "toy_seed", "toy_hidden", "toy_channels", "toy_image_height", "toy_image_width", "toy_patch",
      "toy_activation", "toy_normalize", "toy_lexical_weight", "toy_injection", "toy_append_tokens"}},
    {"stage1", {"optimizer", "learning_rate", "momentum", "weight_decay", "epochs", "batch_size", "holdout_fraction", "bias"}},
    {"stage2",
     {"optimizer", "learning_rate", "momentum", "weight_decay", "epochs", "batch_size", "prompt_init",
      "prompt_init_std", "prompt_lr_scale", "joint_update"}},
    {"loss", {"kind", "smoothing_alpha", "lambda_entropy", "entropy", "confidence_threshold", "soft_pseudo_labels"}},
    {"augment",
     {"hflip_probability", "crop_min_scale", "max_rotation_deg", "jitter", "erase_probability", "erase_max_area"}},
};

class Reader {
 public:
  Reader(const pt::ptree& tree, std::string source) : tree_(tree), source_(std::move(source)) {
    for (const auto& [section, body] : tree_) {
      auto it = kKeys.find(section);
      if (it == kKeys.end()) throw ValidationError(source_ + ": unknown section [" + section + "]");
      for (const auto& [key, value] : body) {
        if (!it->second.count(key)) throw ValidationError(source_ + ": unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    auto v = tree_.get_optional<std::string>(pt::ptree::path_type(section + "." + key, '.'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string str(const std::string& s, const std::string& k, const std::string& def) const {
    return raw(s, k).value_or(def);
  }

  double num(const std::string& s, const std::string& k, double def) const {
    auto v = raw(s, k);
    if (!v) return def;
    try {
      std::size_t pos = 0;
      const double d = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw ValidationError(where(s, k) + ": expected a number, got '" + *v + "'");
    }
  }

  std::uint64_t count(const std::string& s, const std::string& k, std::uint64_t def) const {
    auto v = raw(s, k);
    if (!v) return def;
    try {
      std::size_t pos = 0;
      if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
      const auto n = std::stoull(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing");
      return n;
    } catch (const std::exception&) {
      throw ValidationError(where(s, k) + ": expected a non-negative integer, got '" + *v + "'");
    }
  }

  bool flag(const std::string& s, const std::string& k, bool def) const {
    auto v = raw(s, k);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ValidationError(where(s, k) + ": expected true or false, got '" + *v + "'");
  }

  std::string where(const std::string& s, const std::string& k) const { return source_ + ": [" + s + "] " + k; }

 private:
  const pt::ptree& tree_;
  std::string source_;
};

OptimizerConfig read_optimizer(const Reader& r, const std::string& s, OptimizerConfig o) {
  o.kind = optimizer_kind_from_string(r.str(s, "optimizer", to_string(o.kind)));
  o.learning_rate = r.num(s, "learning_rate", o.learning_rate);
  o.momentum = r.num(s, "momentum", o.momentum);
  o.weight_decay = r.num(s, "weight_decay", o.weight_decay);
  return o;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string b(bool v) { return v ? "true" : "false"; }

}  // namespace

RunConfig parse_run_config(const std::string& ini_text, const std::filesystem::path& base_dir,
                           const std::string& source) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  const Reader r(tree, source);
  RunConfig c;
  c.manifest = resolve(base_dir, r.str("run", "manifest", ""));
  c.corpus = resolve(base_dir, r.str("run", "corpus", ""));
  c.output_dir = resolve(base_dir, r.str("run", "output", "run"));
  c.seed = r.count("run", "seed", 0);
  c.stratified = r.flag("run", "stratified", true);
  c.parallel = r.flag("run", "parallel", true);
  if (auto split = r.raw("run", "split")) {
    std::vector<double> parts;
    std::stringstream ss(*split);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        parts.push_back(std::stod(trim(tok)));
      } catch (const std::exception&) {
        throw ValidationError(r.where("run", "split") + ": bad fraction '" + tok + "'");
      }
    }
    if (parts.size() != 3) throw ValidationError(r.where("run", "split") + ": expected three fractions");
    c.split = {parts[0], parts[1], parts[2]};
  }

  auto& e = c.encoders;
  e.text = r.str("encoders", "text", e.text);
  e.visual = r.str("encoders", "visual", e.visual);
  auto& t = e.toy;
  t.seed = r.count("encoders", "toy_seed", t.seed);
  t.hidden_size = r.count("encoders", "toy_hidden", t.hidden_size);
  t.channels = r.count("encoders", "toy_channels", t.channels);
  t.image_height = r.count("encoders", "toy_image_height", t.image_height);
  t.image_width = r.count("encoders", "toy_image_width", t.image_width);
  t.patch = r.count("encoders", "toy_patch", t.patch);
  t.normalize = r.flag("encoders", "toy_normalize", t.normalize);
  t.lexical_weight = r.num("encoders", "toy_lexical_weight", t.lexical_weight);
  t.append_tokens = r.count("encoders", "toy_append_tokens", t.append_tokens);
  const std::string act = r.str("encoders", "toy_activation", "identity");
  if (act != "identity" && act != "tanh") throw ValidationError(r.where("encoders", "toy_activation") + ": identity or tanh");
  t.activation = act == "tanh" ? Activation::kTanh : Activation::kIdentity;
  const std::string inj = r.str("encoders", "toy_injection", "add");
  if (inj != "add" && inj != "append") throw ValidationError(r.where("encoders", "toy_injection") + ": add or append");
  t.injection = inj == "append" ? InjectionMode::kAppend : InjectionMode::kAdd;

  auto& s1 = c.stage1;
  s1.optimizer = read_optimizer(r, "stage1", s1.optimizer);
  s1.epochs = r.count("stage1", "epochs", s1.epochs);
  s1.batch_size = r.count("stage1", "batch_size", s1.batch_size);
  s1.holdout_fraction = r.num("stage1", "holdout_fraction", s1.holdout_fraction);
  s1.bias = r.flag("stage1", "bias", s1.bias);

  auto& s2 = c.stage2;
  s2.optimizer = read_optimizer(r, "stage2", s2.optimizer);
  s2.epochs = r.count("stage2", "epochs", s2.epochs);
  s2.batch_size = r.count("stage2", "batch_size", s2.batch_size);
  s2.prompt_init = prompt_init_from_string(r.str("stage2", "prompt_init", to_string(s2.prompt_init)));
  s2.prompt_init_std = r.num("stage2", "prompt_init_std", s2.prompt_init_std);
  s2.prompt_lr_scale = r.num("stage2", "prompt_lr_scale", s2.prompt_lr_scale);
  s2.joint_update = r.flag("stage2", "joint_update", s2.joint_update);

  auto& l = s2.loss;
  l.kind = loss_kind_from_string(r.str("loss", "kind", to_string(l.kind)));
  l.smoothing_alpha = r.num("loss", "smoothing_alpha", l.smoothing_alpha);
  l.lambda_entropy = r.num("loss", "lambda_entropy", l.lambda_entropy);
  l.entropy_enabled = r.flag("loss", "entropy", l.entropy_enabled);
  l.confidence_threshold = r.num("loss", "confidence_threshold", l.confidence_threshold);
  l.soft_pseudo_labels = r.flag("loss", "soft_pseudo_labels", l.soft_pseudo_labels);

  auto& a = s2.augment;
  a.hflip_probability = r.num("augment", "hflip_probability", a.hflip_probability);
  a.crop_min_scale = r.num("augment", "crop_min_scale", a.crop_min_scale);
  a.max_rotation_deg = r.num("augment", "max_rotation_deg", a.max_rotation_deg);
  a.jitter = r.num("augment", "jitter", a.jitter);
  a.erase_probability = r.num("augment", "erase_probability", a.erase_probability);
  a.erase_max_area = r.num("augment", "erase_max_area", a.erase_max_area);

  c.derive_stage_seeds();
  c.validate(false);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path(), path.string());
}

void RunConfig::derive_stage_seeds() {
  stage1.seed = derive_seed(seed, "stage1");
  stage2.seed = derive_seed(seed, "stage2");
  stage2.parallel = parallel;
}

void RunConfig::validate(bool check_paths) const {
  if (manifest.empty()) throw ValidationError("config: [run] manifest is required");
  if (corpus.empty()) throw ValidationError("config: [run] corpus is required");
  split.validate();
  stage1.validate();
  stage2.validate();
  if (check_paths) {
    for (const auto* p : {&manifest, &corpus}) {
      if (!std::filesystem::is_regular_file(*p)) throw ValidationError("config: file not found: " + p->string());
    }
  }
}

std::string RunConfig::to_ini(bool include_output) const {
  const auto& t = encoders.toy;
  const auto& l = stage2.loss;
  const auto& a = stage2.augment;
  std::string out;
  out += "[run]\n";
  out += fmt::format("manifest = {}\ncorpus = {}\n", manifest.string(), corpus.string());
  if (include_output) out += fmt::format("output = {}\n", output_dir.string());
  out += fmt::format("seed = {}\nsplit = {},{},{}\nstratified = {}\nparallel = {}\n\n", seed, split.train, split.val,
                     split.test, b(stratified), b(parallel));
  out += "[encoders]\n";
  out += fmt::format("text = {}\nvisual = {}\ntoy_seed = {}\ntoy_hidden = {}\ntoy_channels = {}\n", encoders.text,
                     encoders.visual, t.seed, t.hidden_size, t.channels);
  out += fmt::format("toy_image_height = {}\ntoy_image_width = {}\ntoy_patch = {}\ntoy_activation = {}\n",
                     t.image_height, t.image_width, t.patch, t.activation == Activation::kTanh ? "tanh" : "identity");
  out += fmt::format("toy_normalize = {}\ntoy_lexical_weight = {}\ntoy_injection = {}\ntoy_append_tokens = {}\n\n",
                     b(t.normalize), t.lexical_weight, t.injection == InjectionMode::kAppend ? "append" : "add",
                     t.append_tokens);
  auto optim = [](const OptimizerConfig& o) {
    return fmt::format("optimizer = {}\nlearning_rate = {}\nmomentum = {}\nweight_decay = {}\n", to_string(o.kind),
                       o.learning_rate, o.momentum, o.weight_decay);
  };
  out += "[stage1]\n" + optim(stage1.optimizer);
  out += fmt::format("epochs = {}\nbatch_size = {}\nholdout_fraction = {}\nbias = {}\n\n", stage1.epochs,
                     stage1.batch_size, stage1.holdout_fraction, b(stage1.bias));
  out += "[stage2]\n" + optim(stage2.optimizer);
  out += fmt::format("epochs = {}\nbatch_size = {}\nprompt_init = {}\nprompt_init_std = {}\nprompt_lr_scale = {}\n",
                     stage2.epochs, stage2.batch_size, to_string(stage2.prompt_init), stage2.prompt_init_std,
                     stage2.prompt_lr_scale);
  out += fmt::format("joint_update = {}\n\n", b(stage2.joint_update));
  out += fmt::format("[loss]\nkind = {}\nsmoothing_alpha = {}\nlambda_entropy = {}\nentropy = {}\n", to_string(l.kind),
                     l.smoothing_alpha, l.lambda_entropy, b(l.entropy_enabled));
  out += fmt::format("confidence_threshold = {}\nsoft_pseudo_labels = {}\n\n", l.confidence_threshold,
                     b(l.soft_pseudo_labels));
  out += fmt::format("[augment]\nhflip_probability = {}\ncrop_min_scale = {}\nmax_rotation_deg = {}\n",
                     a.hflip_probability, a.crop_min_scale, a.max_rotation_deg);
  out += fmt::format("jitter = {}\nerase_probability = {}\nerase_max_area = {}\n", a.jitter, a.erase_probability,
                     a.erase_max_area);
  return out;
}

std::string RunConfig::section_ini(const std::string& name) const {
  const std::string text = to_ini(false);
  const std::string head = "[" + name + "]\n";
  const auto start = text.find(head);
  if (start == std::string::npos) throw ValidationError("config: no section [" + name + "]");
  const auto end = text.find("\n[", start + head.size());
  return text.substr(start, end == std::string::npos ? std::string::npos : end + 1 - start);
}

std::string RunConfig::hash() const { return hex64(fnv1a(to_ini(false))); }

}  // namespace unadapt
