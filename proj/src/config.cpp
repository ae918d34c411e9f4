#include <charconv>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vcm/copy_synth.hpp"
#include "vcm/experiment.hpp"

namespace vcm {

namespace {

using Section = boost::property_tree::ptree;

std::vector<std::string> split_list(const std::string &s)
{
  std::vector<std::string> out;
  std::stringstream        ss(s);
  std::string              item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos)
      out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

std::string join(const std::vector<std::string> &v)
{
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out += (i ? "," : "") + v[i];
  return out;
}

template <class T> T parse_number(const std::string &key, const std::string &v)
{
  T          out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw UsageError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string &key, const std::string &v)
{
  if (v == "true" || v == "1" || v == "yes" || v == "on")
    return true;
  if (v == "false" || v == "0" || v == "no" || v == "off")
    return false;
  throw UsageError("config: '" + key + "' expects true/false, got '" + v + "'");
}

CfLevels parse_levels(const std::string &v)
{
  if (v == "sequence")
    return CfLevels::Sequence;
  if (v == "utterance")
    return CfLevels::Utterance;
  if (v == "both")
    return CfLevels::Both;
  throw UsageError("config: cf levels must be sequence, utterance or both");
}

std::string_view levels_name(CfLevels l)
{
  switch (l) {
  case CfLevels::Sequence:
    return "sequence";
  case CfLevels::Utterance:
    return "utterance";
  case CfLevels::Both:
    return "both";
  }
  return "?";
}

// Calls fn(key, value) for each entry, rejecting keys outside `known`.
template <class Fn>
void each_key(const std::string &section, const Section &sec, const std::set<std::string> &known,
              Fn fn)
{
  for (const auto &[key, node] : sec) {
    if (!known.count(key))
      throw UsageError("config: unknown key '" + key + "' in [" + section + "]");
    fn(key, node.data());
  }
}

void apply_system(SystemSpec &s, const std::string &key, const std::string &v)
{
  if (key == "loss")
    s.loss = parse_loss_mode(v);
  else if (key == "pairing")
    s.pairing = parse_pairing(v);
  else if (key == "augment")
    s.augment = parse_bool(key, v);
  else if (key == "roundtrip")
    s.roundtrip = parse_bool(key, v);
}

} // namespace

SystemSpec builtin_system(const std::string &name)
{
  if (name == "ce")
    return {name, LossMode::CE, Pairing::Paired, false, false};
  if (name == "ce_aug")
    return {name, LossMode::CE, Pairing::Paired, true, false};
  if (name == "cf_paired")
    return {name, LossMode::CE_CF, Pairing::Paired, true, false};
  if (name == "cf_random")
    return {name, LossMode::CE_CF, Pairing::Random, true, false};
  if (name == "cf_paired_rs")
    return {name, LossMode::CE_CF, Pairing::Paired, true, true};
  throw UsageError("unknown system '" + name + "' (define it in a [system:" + name +
                   "] section)");
}

ExperimentConfig default_experiment_config()
{
  ExperimentConfig cfg;
  cfg.train.frontend.excitation = true;
  cfg.train.shape.input = cfg.train.frontend.dim();
  cfg.train.loss.mode = LossMode::CE_CF;
  cfg.systems = {builtin_system("ce_aug"), builtin_system("cf_paired"),
                 builtin_system("cf_paired_rs")};
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path &path)
{
  Section root;
  try {
    boost::property_tree::read_ini(path.string(), root);
  } catch (const boost::property_tree::ini_parser_error &e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg = default_experiment_config();
  const auto       base = path.parent_path();
  auto             resolve = [&](const std::string &v) {
    if (v.empty())
      return std::filesystem::path();
    const std::filesystem::path p(v);
    return p.is_absolute() ? p : base / p;
  };

  std::vector<std::string>          system_names;
  bool                              systems_set = false;
  std::map<std::string, SystemSpec> custom;

  for (const auto &[name, sec] : root) {
    if (sec.empty() && !sec.data().empty())
      throw UsageError("config: key '" + name + "' outside any section");
    if (name == "data") {
      each_key(name, sec,
               {"train_manifest", "dev_manifest", "eval_manifest", "corpus_trials", "corpus_seed"},
               [&](const std::string &k, const std::string &v) {
                 if (k == "train_manifest")
                   cfg.train_manifest = resolve(v);
                 else if (k == "dev_manifest")
                   cfg.dev_manifest = resolve(v);
                 else if (k == "eval_manifest")
                   cfg.eval_manifest = resolve(v);
                 else if (k == "corpus_trials")
                   cfg.corpus_trials = parse_number<int>(k, v);
                 else
                   cfg.corpus_seed = parse_number<std::uint64_t>(k, v);
               });
    } else if (name == "channels") {
      each_key(name, sec, {"list", "roundtrip_rate"},
               [&](const std::string &k, const std::string &v) {
                 if (k == "list")
                   cfg.channels = split_list(v);
                 else
                   cfg.roundtrip_rate = parse_number<int>(k, v);
               });
    } else if (name == "augment") {
      each_key(name, sec, {"ops", "views"}, [&](const std::string &k, const std::string &v) {
        if (k == "ops") {
          cfg.augment_ops.clear();
          for (const auto &op : split_list(v))
            cfg.augment_ops.push_back(parse_augment_kind(op));
        } else {
          cfg.train.views = parse_number<int>(k, v);
        }
      });
    } else if (name == "features") {
      each_key(name, sec, {"scale", "n_filters", "excitation"},
               [&](const std::string &k, const std::string &v) {
                 auto &fe = cfg.train.frontend;
                 if (k == "scale") {
                   if (v != "linear" && v != "mel")
                     throw UsageError("config: features scale must be linear or mel");
                   fe.scale = v == "mel" ? FilterScale::Mel : FilterScale::Linear;
                 } else if (k == "n_filters") {
                   fe.n_filters = parse_number<int>(k, v);
                 } else {
                   fe.excitation = parse_bool(k, v);
                 }
               });
    } else if (name == "train") {
      each_key(name, sec,
               {"lr0", "lr_decay", "decay_every", "batch_size", "max_segment", "patience",
                "max_epochs", "spoofs_per_batch"},
               [&](const std::string &k, const std::string &v) {
                 auto &t = cfg.train;
                 if (k == "lr0")
                   t.lr0 = parse_number<double>(k, v);
                 else if (k == "lr_decay")
                   t.lr_decay = parse_number<double>(k, v);
                 else if (k == "decay_every")
                   t.decay_every = parse_number<int>(k, v);
                 else if (k == "batch_size")
                   t.batch_size = parse_number<int>(k, v);
                 else if (k == "max_segment")
                   t.max_segment = parse_number<double>(k, v);
                 else if (k == "patience")
                   t.patience = parse_number<int>(k, v);
                 else if (k == "max_epochs")
                   t.max_epochs = parse_number<int>(k, v);
                 else
                   t.spoofs_per_batch = parse_number<int>(k, v);
               });
    } else if (name == "loss") {
      each_key(name, sec, {"tau", "levels"}, [&](const std::string &k, const std::string &v) {
        if (k == "tau")
          cfg.train.loss.cf.tau = parse_number<double>(k, v);
        else
          cfg.train.loss.cf.levels = parse_levels(v);
      });
    } else if (name == "run") {
      each_key(name, sec, {"seeds", "systems", "alpha", "trim_db", "out", "workers"},
               [&](const std::string &k, const std::string &v) {
                 if (k == "seeds") {
                   cfg.seeds.clear();
                   for (const auto &s : split_list(v))
                     cfg.seeds.push_back(parse_number<std::uint64_t>(k, s));
                 } else if (k == "systems") {
                   system_names = split_list(v);
                   systems_set = true;
                 } else if (k == "alpha") {
                   cfg.alpha = parse_number<double>(k, v);
                 } else if (k == "trim_db") {
                   cfg.trim.threshold_db = parse_number<double>(k, v);
                 } else if (k == "out") {
                   cfg.out_dir = resolve(v);
                 } else {
                   cfg.workers = parse_number<unsigned>(k, v);
                 }
               });
    } else if (name.starts_with("system:")) {
      SystemSpec s;
      s.name = name.substr(7);
      if (s.name.empty())
        throw UsageError("config: empty system name");
      each_key(name, sec, {"loss", "pairing", "augment", "roundtrip"},
               [&](const std::string &k, const std::string &v) { apply_system(s, k, v); });
      custom[s.name] = s;
    } else {
      throw UsageError("config: unknown section [" + name + "]");
    }
  }

  cfg.train.shape.input = cfg.train.frontend.dim();
  if (systems_set) {
    cfg.systems.clear();
    for (const auto &n : system_names) {
      const auto it = custom.find(n);
      cfg.systems.push_back(it != custom.end() ? it->second : builtin_system(n));
    }
  } else {
    for (const auto &[n, s] : custom)
      cfg.systems.push_back(s);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config_or_default(const std::filesystem::path &path)
{
  return path.empty() ? default_experiment_config() : load_experiment_config(path);
}

void validate(const ExperimentConfig &cfg)
{
  if (cfg.corpus_trials < 20)
    throw UsageError("config: corpus_trials must be at least 20");
  if (cfg.channels.empty())
    throw UsageError("config: no channels");
  for (const auto &c : cfg.channels)
    parse_channel(c);
  if (cfg.roundtrip_rate <= 0)
    throw UsageError("config: roundtrip_rate must be positive");
  if (cfg.augment_ops.empty())
    throw UsageError("config: augmentation needs at least one op");
  if (cfg.seeds.empty())
    throw UsageError("config: no seeds");
  if (cfg.systems.empty())
    throw UsageError("config: no systems");
  std::set<std::string> names;
  for (const auto &s : cfg.systems)
    if (!names.insert(s.name).second)
      throw UsageError("config: system '" + s.name + "' listed twice");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw UsageError("config: alpha must lie in (0, 1)");
  if (cfg.train.frontend.n_filters < 1)
    throw UsageError("config: n_filters must be positive");
  for (const auto &s : cfg.systems) {
    validate(train_config_for(cfg, s));
    if (s.loss != LossMode::CE && s.pairing == Pairing::Paired &&
        cfg.train.spoofs_per_batch > int(cfg.channels.size()))
      throw UsageError("config: paired batches need spoofs_per_batch <= number of channels");
  }
}

std::string to_ini(const ExperimentConfig &cfg)
{
  const auto        &t = cfg.train;
  std::ostringstream o;
  o << "[data]\n"
    << "train_manifest = " << cfg.train_manifest.string() << '\n'
    << "dev_manifest = " << cfg.dev_manifest.string() << '\n'
    << "eval_manifest = " << cfg.eval_manifest.string() << '\n'
    << "corpus_trials = " << cfg.corpus_trials << '\n'
    << "corpus_seed = " << cfg.corpus_seed << "\n\n"
    << "[channels]\n"
    << "list = " << join(cfg.channels) << '\n'
    << "roundtrip_rate = " << cfg.roundtrip_rate << "\n\n"
    << "[augment]\n"
    << "ops = ";
  for (std::size_t i = 0; i < cfg.augment_ops.size(); ++i)
    o << (i ? "," : "") << to_string(cfg.augment_ops[i]);
  o << "\nviews = " << t.views << "\n\n"
    << "[features]\n"
    << "scale = " << (t.frontend.scale == FilterScale::Mel ? "mel" : "linear") << '\n'
    << "n_filters = " << t.frontend.n_filters << '\n'
    << "excitation = " << (t.frontend.excitation ? "true" : "false") << "\n\n"
    << "[train]\n"
    << "lr0 = " << format_number(t.lr0) << '\n'
    << "lr_decay = " << format_number(t.lr_decay) << '\n'
    << "decay_every = " << t.decay_every << '\n'
    << "batch_size = " << t.batch_size << '\n'
    << "max_segment = " << format_number(t.max_segment) << '\n'
    << "patience = " << t.patience << '\n'
    << "max_epochs = " << t.max_epochs << '\n'
    << "spoofs_per_batch = " << t.spoofs_per_batch << "\n\n"
    << "[loss]\n"
    << "tau = " << format_number(t.loss.cf.tau) << '\n'
    << "levels = " << levels_name(t.loss.cf.levels) << "\n\n"
    << "[run]\n"
    << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    o << (i ? "," : "") << cfg.seeds[i];
  o << "\nsystems = ";
  for (std::size_t i = 0; i < cfg.systems.size(); ++i)
    o << (i ? "," : "") << cfg.systems[i].name;
  o << "\nalpha = " << format_number(cfg.alpha) << '\n'
    << "trim_db = " << format_number(cfg.trim.threshold_db) << '\n'
    << "out = " << cfg.out_dir.string() << '\n'
    << "workers = " << cfg.workers << '\n';
  for (const auto &s : cfg.systems)
    o << "\n[system:" << s.name << "]\n"
      << "loss = " << to_string(s.loss) << '\n'
      << "pairing = " << to_string(s.pairing) << '\n'
      << "augment = " << (s.augment ? "true" : "false") << '\n'
      << "roundtrip = " << (s.roundtrip ? "true" : "false") << '\n';
  return o.str();
}

std::string config_hash(const ExperimentConfig &cfg)
{
  // The output location does not change results.
  ExperimentConfig c = cfg;
  c.out_dir.clear();
  c.workers = 0;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_ini(c))));
  return buf;
}

AugmentPlan augment_plan(const ExperimentConfig &cfg, std::uint64_t seed)
{
  AugmentPlan plan;
  plan.master_seed = derive_seed(seed, "augment");
  for (auto k : cfg.augment_ops) {
    switch (k) {
    case AugmentKind::RawBoostLike:
      plan.ops.push_back(AugmentOp::rawboost());
      break;
    case AugmentKind::FreqMask:
      plan.ops.push_back(AugmentOp::freq_mask());
      break;
    case AugmentKind::CodecSim:
      plan.ops.push_back(AugmentOp::codec());
      break;
    }
  }
  return plan;
}

TrainConfig train_config_for(const ExperimentConfig &cfg, const SystemSpec &sys)
{
  TrainConfig t = cfg.train;
  t.loss.mode = sys.loss;
  t.pairing = sys.pairing;
  t.augment = sys.augment;
  t.shape.input = t.frontend.dim();
  return t;
}

} // namespace vcm
