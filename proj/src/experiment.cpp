#include "safetynet/experiment.hpp"

#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "safetynet/dataset.hpp"
#include "safetynet/error.hpp"
#include "safetynet/eval.hpp"

namespace safetynet {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double to_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "'" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "'" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

std::vector<std::size_t> to_dims(const std::string& key, const std::string& v) {
  std::vector<std::size_t> dims;
  std::istringstream in(v);
  std::string cell;
  while (std::getline(in, cell, ',')) dims.push_back(static_cast<std::size_t>(to_seed(key, trim(cell))));
  return dims;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, "'" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

AttackSpec parse_attack_spec(const std::string& text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  AttackSpec spec;
  spec.method = parse_attack_method(trim(t.substr(0, colon)));
  spec.budget = AttackBudget::with_epsilon(0.1);
  if (spec.method == AttackMethod::IterL2) spec.budget.norm = Norm::L2;
  bool alpha_set = false;
  if (colon != std::string::npos) {
    std::istringstream in(t.substr(colon + 1));
    std::string kv;
    while (std::getline(in, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail(ErrorKind::Config, "attack option '" + kv + "' needs key=value");
      const std::string k = trim(kv.substr(0, eq));
      const std::string v = trim(kv.substr(eq + 1));
      if (k == "eps") spec.budget.epsilon = to_number(k, v);
      else if (k == "alpha") spec.budget.alpha = to_number(k, v), alpha_set = true;
      else if (k == "iters") spec.budget.max_iters = static_cast<std::size_t>(to_seed(k, v));
      else if (k == "overshoot") spec.budget.overshoot = to_number(k, v);
      else if (k == "topk") spec.budget.top_k = static_cast<std::size_t>(to_seed(k, v));
      else fail(ErrorKind::Config, "unknown attack option '" + k + "'");
    }
  }
  if (!alpha_set) spec.budget.alpha = spec.budget.epsilon / 10.0;
  spec.budget.validate();
  return spec;
}

std::vector<AttackSpec> parse_attack_list(const std::string& text) {
  std::vector<AttackSpec> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';'))
    if (!trim(item).empty()) out.push_back(parse_attack_spec(item));
  return out;
}

void ExperimentConfig::validate() const {
  if (data.source == "blobs" && !data.seed) fail(ErrorKind::Config, "data.seed is required");
  if (!data.split_seed) fail(ErrorKind::Config, "data.split_seed is required");
  if (!model.init_seed) fail(ErrorKind::Config, "model.init_seed is required");
  if (!model.train_seed) fail(ErrorKind::Config, "model.train_seed is required");
  if (transfer.enabled && !transfer.substitute_seed) fail(ErrorKind::Config, "transfer.substitute_seed is required");
  if (data.source == "csv" && !std::filesystem::exists(data.path))
    fail(ErrorKind::Config, "data.path does not exist: " + data.path.string());
  if (data.source == "idx" && (!std::filesystem::exists(data.images) || !std::filesystem::exists(data.labels)))
    fail(ErrorKind::Config, "data.images / data.labels do not exist");
  if (data.source != "blobs" && data.source != "csv" && data.source != "idx")
    fail(ErrorKind::Config, "data.source must be blobs, csv or idx");
  if (train_attacks.empty()) fail(ErrorKind::Config, "attack.train lists no attacks");
  if (test_attacks.empty()) fail(ErrorKind::Config, "attack.test lists no attacks");
  if (detector.layers.empty()) fail(ErrorKind::Config, "detector.layers is empty");
  model.train.validate();
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::Config, std::string("config parse error: ") + e.what());
  }

  ExperimentConfig cfg;
  for (const auto& [section, body] : tree)
    for (const auto& [key, value] : body) cfg.raw[section + "." + key] = trim(value.data());

  const auto get = [&](const std::string& k) -> std::optional<std::string> {
    if (auto it = cfg.raw.find(k); it != cfg.raw.end()) return it->second;
    return std::nullopt;
  };
  static const char* known[] = {
      "data.source", "data.classes", "data.per_class", "data.spread", "data.seed", "data.path", "data.images",
      "data.labels", "data.split", "data.split_seed", "data.max_test", "model.dims", "model.init_seed",
      "model.learning_rate", "model.weight_decay", "model.epochs", "model.batch_size", "model.train_seed",
      "attack.train", "attack.test", "detector.layers", "detector.mode", "detector.sigma_scale", "detector.sigma",
      "detector.C", "detector.combinator", "detector.rejection_ratio", "type2.enabled", "type2.style", "type2.eps",
      "type2.norm", "type2.overshoot", "type2.lambda", "type2.sigma_scale", "type2.step", "type2.iters",
      "type2.detect_weight", "transfer.enabled", "transfer.substitute_seed", "transfer.substitute_dims",
      "transfer.method", "output.dir"};
  for (const auto& [k, v] : cfg.raw)
    if (std::find(std::begin(known), std::end(known), k) == std::end(known))
      fail(ErrorKind::Config, "unknown config key '" + k + "'");

  if (auto v = get("data.source")) cfg.data.source = *v;
  if (auto v = get("data.classes")) cfg.data.classes = static_cast<std::size_t>(to_seed("data.classes", *v));
  if (auto v = get("data.per_class")) cfg.data.per_class = static_cast<std::size_t>(to_seed("data.per_class", *v));
  if (auto v = get("data.spread")) cfg.data.spread = to_number("data.spread", *v);
  if (auto v = get("data.seed")) cfg.data.seed = to_seed("data.seed", *v);
  if (auto v = get("data.path")) cfg.data.path = *v;
  if (auto v = get("data.images")) cfg.data.images = *v;
  if (auto v = get("data.labels")) cfg.data.labels = *v;
  if (auto v = get("data.split")) {
    std::istringstream in(*v);
    std::string a, b, c;
    std::getline(in, a, ',');
    std::getline(in, b, ',');
    std::getline(in, c, ',');
    cfg.data.train_frac = to_number("data.split", trim(a));
    cfg.data.val_frac = to_number("data.split", trim(b));
    cfg.data.test_frac = to_number("data.split", trim(c));
  }
  if (auto v = get("data.split_seed")) cfg.data.split_seed = to_seed("data.split_seed", *v);
  if (auto v = get("data.max_test")) cfg.data.max_test = static_cast<std::size_t>(to_seed("data.max_test", *v));

  if (auto v = get("model.dims")) cfg.model.dims = to_dims("model.dims", *v);
  if (auto v = get("model.init_seed")) cfg.model.init_seed = to_seed("model.init_seed", *v);
  if (auto v = get("model.learning_rate")) cfg.model.train.learning_rate = to_number("model.learning_rate", *v);
  if (auto v = get("model.weight_decay")) cfg.model.train.weight_decay = to_number("model.weight_decay", *v);
  if (auto v = get("model.epochs")) cfg.model.train.epochs = static_cast<std::size_t>(to_seed("model.epochs", *v));
  if (auto v = get("model.batch_size"))
    cfg.model.train.batch_size = static_cast<std::size_t>(to_seed("model.batch_size", *v));
  if (auto v = get("model.train_seed")) {
    cfg.model.train_seed = to_seed("model.train_seed", *v);
    cfg.model.train.seed = *cfg.model.train_seed;
  }

  if (auto v = get("attack.train")) cfg.train_attacks = parse_attack_list(*v);
  if (auto v = get("attack.test")) cfg.test_attacks = parse_attack_list(*v);

  cfg.detector.layers = {cfg.model.dims.size() >= 3 ? cfg.model.dims.size() - 3 : 0};
  if (auto v = get("detector.layers")) cfg.detector.layers = to_dims("detector.layers", *v);
  if (auto v = get("detector.mode")) cfg.detector.mode = parse_code_mode(*v);
  if (auto v = get("detector.sigma_scale")) cfg.detector.sigma_rule = {SigmaRule::Kind::MedianScale, to_number("detector.sigma_scale", *v)};
  if (auto v = get("detector.sigma")) cfg.detector.sigma_rule = {SigmaRule::Kind::Fixed, to_number("detector.sigma", *v)};
  if (auto v = get("detector.C")) cfg.detector.C = to_number("detector.C", *v);
  if (auto v = get("detector.combinator")) cfg.detector.combinator = parse_combinator(*v);
  if (auto v = get("detector.rejection_ratio"); v && *v != "none")
    cfg.detector.rejection_ratio = to_number("detector.rejection_ratio", *v);

  if (auto v = get("type2.enabled")) cfg.type2.enabled = to_bool("type2.enabled", *v);
  if (auto v = get("type2.style")) {
    if (*v == "deepfool") cfg.type2.style = Type2Style::DeepFool;
    else if (*v == "iterative") cfg.type2.style = Type2Style::Iterative;
    else fail(ErrorKind::Config, "type2.style must be deepfool or iterative");
  }
  if (auto v = get("type2.eps")) cfg.type2.budget = AttackBudget::with_epsilon(to_number("type2.eps", *v));
  if (auto v = get("type2.norm")) {
    if (*v == "linf") cfg.type2.budget.norm = Norm::Linf;
    else if (*v == "l2") cfg.type2.budget.norm = Norm::L2;
    else fail(ErrorKind::Config, "type2.norm must be linf or l2");
  }
  if (auto v = get("type2.overshoot")) cfg.type2.budget.overshoot = to_number("type2.overshoot", *v);
  if (auto v = get("type2.lambda")) cfg.type2.smoothing.lambda = to_number("type2.lambda", *v);
  if (auto v = get("type2.sigma_scale")) cfg.type2.smoothing.sigma_scale = to_number("type2.sigma_scale", *v);
  if (auto v = get("type2.step")) cfg.type2.smoothing.step_size = to_number("type2.step", *v);
  if (auto v = get("type2.iters")) cfg.type2.smoothing.max_iters = static_cast<std::size_t>(to_seed("type2.iters", *v));
  if (auto v = get("type2.detect_weight")) cfg.type2.smoothing.detect_weight = to_number("type2.detect_weight", *v);

  if (auto v = get("transfer.enabled")) cfg.transfer.enabled = to_bool("transfer.enabled", *v);
  if (auto v = get("transfer.substitute_seed")) cfg.transfer.substitute_seed = to_seed("transfer.substitute_seed", *v);
  cfg.transfer.substitute_dims = cfg.model.dims;
  if (auto v = get("transfer.substitute_dims")) cfg.transfer.substitute_dims = to_dims("transfer.substitute_dims", *v);
  cfg.transfer.attack = parse_attack_spec("fastsign:eps=0.1");
  if (auto v = get("transfer.method")) cfg.transfer.attack = parse_attack_spec(*v);

  if (auto v = get("output.dir")) cfg.output_dir = *v;
  if (const char* env = std::getenv("SAFETYNET_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string budget_text(const AttackBudget& b) {
  return "eps=" + format_double(b.epsilon) + ",norm=" + (b.norm == Norm::L2 ? "l2" : "linf") +
         ",alpha=" + format_double(b.alpha) + ",iters=" + std::to_string(b.max_iters) +
         ",overshoot=" + format_double(b.overshoot) + ",topk=" + std::to_string(b.top_k);
}

// Every setting the run used, defaults included, so a report alone is
// enough to reproduce it.
std::map<std::string, std::string> effective_settings(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> m;
  const auto& d = cfg.data;
  m["data.source"] = d.source;
  if (d.source == "blobs") {
    m["data.classes"] = std::to_string(d.classes);
    m["data.per_class"] = std::to_string(d.per_class);
    m["data.spread"] = format_double(d.spread);
    m["data.seed"] = std::to_string(*d.seed);
  }
  m["data.split"] = format_double(d.train_frac) + "," + format_double(d.val_frac) + "," + format_double(d.test_frac);
  m["data.split_seed"] = std::to_string(*d.split_seed);
  m["data.max_test"] = std::to_string(d.max_test);
  const auto& md = cfg.model;
  m["model.dims"] = join(md.dims);
  m["model.init_seed"] = std::to_string(*md.init_seed);
  m["model.train_seed"] = std::to_string(*md.train_seed);
  m["model.learning_rate"] = format_double(md.train.learning_rate);
  m["model.weight_decay"] = format_double(md.train.weight_decay);
  m["model.epochs"] = std::to_string(md.train.epochs);
  m["model.batch_size"] = std::to_string(md.train.batch_size);
  for (std::size_t i = 0; i < cfg.train_attacks.size(); ++i)
    m["attack.train." + std::to_string(i)] =
        std::string(to_string(cfg.train_attacks[i].method)) + ":" + budget_text(cfg.train_attacks[i].budget);
  for (std::size_t i = 0; i < cfg.test_attacks.size(); ++i)
    m["attack.test." + std::to_string(i)] =
        std::string(to_string(cfg.test_attacks[i].method)) + ":" + budget_text(cfg.test_attacks[i].budget);
  const auto& dt = cfg.detector;
  m["detector.layers"] = join(dt.layers);
  m["detector.mode"] = std::string(to_string(dt.mode));
  m["detector.sigma_rule"] = (dt.sigma_rule.kind == SigmaRule::Kind::Fixed ? "fixed:" : "median_scale:") +
                             format_double(dt.sigma_rule.value);
  m["detector.C"] = format_double(dt.C);
  m["detector.combinator"] = std::string(to_string(dt.combinator));
  m["detector.rejection_ratio"] = dt.rejection_ratio ? format_double(*dt.rejection_ratio) : "none";
  m["detector.smo_tolerance"] = format_double(dt.smo.tolerance);
  m["detector.smo_max_passes"] = std::to_string(dt.smo.max_passes);
  if (cfg.type2.enabled) {
    const auto& t = cfg.type2;
    m["type2.style"] = t.style == Type2Style::DeepFool ? "deepfool" : "iterative";
    m["type2.budget"] = budget_text(t.budget);
    m["type2.lambda"] = format_double(t.smoothing.lambda);
    m["type2.sigma_scale"] = format_double(t.smoothing.sigma_scale);
    m["type2.step"] = format_double(t.smoothing.step_size);
    m["type2.iters"] = std::to_string(t.smoothing.max_iters);
    m["type2.detect_weight"] = format_double(t.smoothing.detect_weight);
  }
  if (cfg.transfer.enabled) {
    m["transfer.substitute_seed"] = std::to_string(*cfg.transfer.substitute_seed);
    m["transfer.substitute_dims"] = join(cfg.transfer.substitute_dims);
    m["transfer.attack"] =
        std::string(to_string(cfg.transfer.attack.method)) + ":" + budget_text(cfg.transfer.attack.budget);
  }
  return m;
}

}  // namespace

int run_config(const ExperimentConfig& cfg, std::ostream& log) {
  std::string stage = "validate";
  try {
    cfg.validate();

    stage = "data";
    Dataset all;
    if (cfg.data.source == "blobs") all = synth_blobs(cfg.data.classes, cfg.data.per_class, cfg.data.spread, *cfg.data.seed);
    else if (cfg.data.source == "csv") all = load_csv(cfg.data.path);
    else all = load_idx(cfg.data.images, cfg.data.labels);
    all.validate();
    Split parts = split(all, cfg.data.train_frac, cfg.data.val_frac, cfg.data.test_frac, *cfg.data.split_seed);
    Dataset test = parts.test;
    if (cfg.data.max_test > 0 && test.size() > cfg.data.max_test) {
      std::vector<std::size_t> idx(cfg.data.max_test);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      test = test.subset(idx);
    }
    log << "[data] " << all.size() << " examples, train " << parts.train.size() << ", test " << test.size() << "\n";

    stage = "train";
    if (cfg.model.dims.front() != all.width() || cfg.model.dims.back() != all.num_classes)
      fail(ErrorKind::Config, "model.dims must start at the feature width and end at the class count");
    const Network net = train(make_network(cfg.model.dims, *cfg.model.init_seed), parts.train, cfg.model.train);
    const double train_acc = accuracy(net, parts.train);
    const double test_acc = accuracy(net, test);
    log << "[train] train accuracy " << train_acc << ", test accuracy " << test_acc << "\n";

    stage = "attack-generate";
    std::vector<Vector> adversarials;
    for (const auto& spec : cfg.train_attacks)
      for (std::size_t i = 0; i < parts.train.size(); ++i) {
        AttackOutcome o = run_attack(net, parts.train.features[i], parts.train.labels[i], spec);
        if (o.success) adversarials.push_back(std::move(o.x_adv));
      }
    log << "[attack-generate] " << adversarials.size() << " successful training adversarials\n";

    stage = "fit-detector";
    const SafetyNetPipeline pipeline = build_detector_pipeline_from(net, parts.train, adversarials, cfg.detector);
    log << "[fit-detector] " << pipeline.detectors.size() << " detector(s)\n";

    stage = "evaluate";
    EvalMatrix m = attack_detect_matrix(pipeline, cfg.test_attacks, test);
    std::map<std::string, std::string> meta;
    for (const auto& [k, v] : cfg.raw)
      if (k != "output.dir") meta["config." + k] = v;
    for (const auto& [k, v] : effective_settings(cfg)) meta["effective." + k] = v;
    meta["result.train_accuracy"] = format_double(train_acc);
    meta["result.test_accuracy"] = format_double(test_acc);
    meta["result.training_adversarials"] = std::to_string(adversarials.size());
    for (std::size_t d = 0; d < pipeline.detectors.size(); ++d) {
      const auto& st = pipeline.detectors[d];
      const std::string p = "result.detector" + std::to_string(d) + ".";
      meta[p + "layer"] = std::to_string(st.thresholds.layer_index);
      meta[p + "sigma"] = format_double(st.svm.sigma);
      meta[p + "support_vectors"] = std::to_string(st.svm.support_codes.size());
    }
    if (cfg.type2.enabled) {
      double gap = 0.0;
      auto recs = type2_records(pipeline, test, cfg.type2.budget, cfg.type2.smoothing, cfg.type2.style,
                                cfg.type2.style == Type2Style::DeepFool ? "type2-deepfool" : "type2-iterative", &gap);
      m.records.insert(m.records.end(), recs.begin(), recs.end());
      m.table = tabulate(m.records);
      meta["result.type2.surrogate_gap"] = format_double(gap);
    }
    std::vector<ReportFile> extra;
    if (cfg.transfer.enabled) {
      const Network sub = train(make_network(cfg.transfer.substitute_dims, *cfg.transfer.substitute_seed),
                                parts.train, [&] {
                                  TrainConfig t = cfg.model.train;
                                  t.seed = *cfg.transfer.substitute_seed;
                                  return t;
                                }());
      SafetyNetPipeline bare = pipeline;
      bare.detectors.clear();
      bare.rejection_ratio.reset();
      const auto rows = transfer_attack(sub, pipeline, test, cfg.transfer.attack);
      const auto bare_rows = transfer_attack(sub, bare, test, cfg.transfer.attack);
      std::size_t s = 0, mis = 0, mu = 0;
      for (const auto& r : rows) {
        s += r.success_on_substitute;
        mis += r.misclassified_on_target;
        mu += r.misclassified_on_target && !r.rejected_on_target;
      }
      const auto n = static_cast<double>(rows.size());
      meta["result.transfer.substitute_success"] = format_double(s / n);
      meta["result.transfer.target_misclassified"] = format_double(mis / n);
      meta["result.transfer.target_misclassified_undetected"] = format_double(mu / n);
      std::size_t bare_mis = 0;
      for (const auto& r : bare_rows) bare_mis += r.misclassified_on_target;
      meta["result.transfer.bare_target_misclassified"] = format_double(bare_mis / n);
      std::ostringstream t;
      write_transfer_csv(t, rows);
      extra.push_back({"transfer.csv", t.str()});
    }

    stage = "report";
    std::ostringstream records;
    write_records_csv(records, m.records);
    extra.push_back({"records.csv", records.str()});
    {
      const auto bytes = checkpoint_bytes(net);
      extra.push_back({"model.snet", std::string(bytes.begin(), bytes.end())});
    }
    const std::vector<NamedTable> tables{{"detection", m.table}};
    emit_report(tables, m.curves, meta, cfg.output_dir, extra);
    save_pipeline(pipeline, cfg.output_dir / "pipeline.txt");
    log << "[report] written to " << cfg.output_dir.string() << "\n";
    return 0;
  } catch (const Error& e) {
    log << "[" << stage << "] failed: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  }
}

}  // namespace safetynet
