#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "safetynet/bars.hpp"
#include "safetynet/dataset.hpp"
#include "safetynet/error.hpp"
#include "safetynet/eval.hpp"
#include "safetynet/experiment.hpp"
#include "safetynet/train.hpp"

namespace fs = std::filesystem;
using namespace safetynet;

namespace {

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::istringstream in(text);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    try {
      dims.push_back(std::stoul(cell));
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "bad dimension list '" + text + "'");
    }
  }
  return dims;
}

// Labels in a held-out CSV may not reach the top class; trust the model.
Dataset load_for(const Network& net, const fs::path& path) {
  Dataset ds = load_csv(path);
  if (ds.width() != net.input_width()) fail(ErrorKind::Shape, "data width does not match the model input");
  ds.num_classes = std::max(ds.num_classes, net.num_classes());
  return ds;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

struct Budget {
  std::string method = "fastsign";
  double eps = 0.1;
  double alpha = -1.0;
  std::size_t iters = 50;
  double overshoot = 0.02;
  std::size_t topk = 1;

  void bind(CLI::App* cmd) {
    cmd->add_option("--method", method, "fastsign | iter-linf | iter-l2 | deepfool | deepfool-k");
    cmd->add_option("--eps", eps, "perturbation budget");
    cmd->add_option("--alpha", alpha, "step size, defaults to eps/10");
    cmd->add_option("--iters", iters, "iteration cap");
    cmd->add_option("--overshoot", overshoot, "DeepFool overshoot");
    cmd->add_option("--topk", topk, "DeepFool-k rank target");
  }

  AttackSpec spec() const {
    AttackSpec s;
    s.method = parse_attack_method(method);
    s.budget = AttackBudget::with_epsilon(eps, s.method == AttackMethod::IterL2 ? Norm::L2 : Norm::Linf);
    if (alpha >= 0.0) s.budget.alpha = alpha;
    s.budget.max_iters = iters;
    s.budget.overshoot = overshoot;
    s.budget.top_k = topk;
    s.budget.validate();
    return s;
  }
};

std::string components_svg_title(double eps) { return "two bars, eps=" + format_double(eps); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SafetyNet adversary detection lab"};
  app.require_subcommand(1);

  // data
  auto* data = app.add_subcommand("data", "synthesise or convert a dataset to CSV");
  data->require_subcommand(1);
  auto* synth = data->add_subcommand("synth", "Gaussian blobs on a circle");
  std::size_t classes = 4, per_class = 200;
  double spread = 0.08;
  std::optional<std::uint64_t> data_seed;
  fs::path data_out;
  synth->add_option("--classes", classes);
  synth->add_option("--per-class", per_class);
  synth->add_option("--spread", spread);
  synth->add_option("--seed", data_seed)->required();
  synth->add_option("--out", data_out)->required();
  auto* load = data->add_subcommand("load", "read IDX or CSV and write normalised CSV");
  fs::path in_csv, in_images, in_labels;
  load->add_option("--csv", in_csv);
  load->add_option("--images", in_images);
  load->add_option("--labels", in_labels);
  load->add_option("--out", data_out)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train an MLP classifier");
  fs::path train_data, model_path;
  std::string dims_text = "2,64,32,4";
  std::optional<std::uint64_t> init_seed, train_seed;
  TrainConfig tc;
  train_cmd->add_option("--data", train_data)->required();
  train_cmd->add_option("--dims", dims_text, "comma-separated layer widths");
  train_cmd->add_option("--init-seed", init_seed)->required();
  train_cmd->add_option("--seed", train_seed)->required();
  train_cmd->add_option("--lr", tc.learning_rate);
  train_cmd->add_option("--weight-decay", tc.weight_decay);
  train_cmd->add_option("--epochs", tc.epochs);
  train_cmd->add_option("--batch", tc.batch_size);
  train_cmd->add_option("--out", model_path)->required();

  // attack
  auto* attack = app.add_subcommand("attack", "craft adversarial examples against a model");
  Budget budget;
  budget.bind(attack);
  fs::path model_in, data_in, out_path;
  attack->add_option("--model", model_in)->required();
  attack->add_option("--data", data_in)->required();
  attack->add_option("--out", out_path)->required();

  // fit-detector
  auto* fit = app.add_subcommand("fit-detector", "fit RBF-SVM detectors on activation codes");
  std::string layers_text = "0", mode_text = "quaternary", train_attacks = "fastsign:eps=0.1", combinator = "any";
  double sigma_scale = 0.1, C = 1.0;
  std::optional<double> sigma_fixed, rejection_ratio;
  fit->add_option("--model", model_in)->required();
  fit->add_option("--data", data_in)->required();
  fit->add_option("--layer,--layers", layers_text, "hidden layer indices, comma-separated");
  fit->add_option("--mode", mode_text, "binary | quaternary");
  fit->add_option("--train-attacks", train_attacks, "';'-separated attack specs");
  fit->add_option("--sigma-scale", sigma_scale, "sigma = scale * median pairwise code distance");
  fit->add_option("--sigma", sigma_fixed, "fixed sigma, overrides --sigma-scale");
  fit->add_option("--C", C);
  fit->add_option("--combinator", combinator, "any | all");
  fit->add_option("--rejection-ratio", rejection_ratio);
  fit->add_option("--out", out_path)->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "attack/detect matrix and report");
  fs::path pipeline_in;
  std::string test_attacks = "fastsign:eps=0.1";
  evaluate->add_option("--model", model_in)->required();
  evaluate->add_option("--pipeline", pipeline_in)->required();
  evaluate->add_option("--data", data_in)->required();
  evaluate->add_option("--attacks", test_attacks, "';'-separated attack specs");
  evaluate->add_option("--out", out_path)->required();

  // type2
  auto* type2 = app.add_subcommand("type2", "attack classifier and detector together");
  SmoothingParams sp;
  double t2_eps = 0.1, t2_overshoot = 0.02;
  std::string t2_style = "deepfool", t2_norm = "linf";
  type2->add_option("--model", model_in)->required();
  type2->add_option("--pipeline", pipeline_in)->required();
  type2->add_option("--data", data_in)->required();
  type2->add_option("--style", t2_style, "deepfool | iterative");
  type2->add_option("--eps", t2_eps);
  type2->add_option("--norm", t2_norm, "linf | l2");
  type2->add_option("--overshoot", t2_overshoot);
  type2->add_option("--detect-weight", sp.detect_weight);
  type2->add_option("--lambda", sp.lambda);
  type2->add_option("--sigma-scale", sp.sigma_scale);
  type2->add_option("--step", sp.step_size);
  type2->add_option("--iters", sp.max_iters);
  type2->add_option("--out", out_path)->required();

  // transfer
  auto* transfer = app.add_subcommand("transfer", "black-box transfer from a substitute network");
  Budget tbudget;
  tbudget.bind(transfer);
  std::optional<std::uint64_t> substitute_seed;
  std::string substitute_dims;
  fs::path substitute_data;
  transfer->add_option("--model", model_in)->required();
  transfer->add_option("--pipeline", pipeline_in)->required();
  transfer->add_option("--train-data", substitute_data, "data the substitute is trained on")->required();
  transfer->add_option("--data", data_in)->required();
  transfer->add_option("--substitute-seed", substitute_seed)->required();
  transfer->add_option("--substitute-dims", substitute_dims, "defaults to the target's widths");
  transfer->add_option("--epochs", tc.epochs);
  transfer->add_option("--out", out_path)->required();

  // bars
  auto* bars = app.add_subcommand("bars", "bar-function constructions");
  bars->require_subcommand(1);
  auto* demo = bars->add_subcommand("demo", "component count of two bars across widths");
  std::vector<double> bar_eps{0.1, 0.2, 0.25, 0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.9, 1.0};
  double threshold = 0.5;
  std::size_t grid_points = 2000;
  demo->add_option("--eps", bar_eps, "bar widths to sweep");
  demo->add_option("--threshold", threshold);
  demo->add_option("--grid", grid_points, "lattice points per axis");
  demo->add_option("--out", out_path, "output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "rebuild tables from a per-example records CSV");
  fs::path records_in;
  report->add_option("--records", records_in)->required();
  report->add_option("--out", out_path)->required();

  // run
  auto* run = app.add_subcommand("run", "run a full experiment config");
  fs::path config_path;
  run->add_option("config", config_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      save_csv(synth_blobs(classes, per_class, spread, *data_seed), data_out);
      std::cout << "wrote " << classes * per_class << " examples to " << data_out.string() << "\n";
    } else if (*load) {
      Dataset ds;
      std::size_t clipped = 0;
      if (!in_csv.empty()) ds = load_csv(in_csv, &clipped);
      else if (!in_images.empty() && !in_labels.empty()) ds = load_idx(in_images, in_labels);
      else fail(ErrorKind::Config, "data load needs --csv or --images with --labels");
      save_csv(ds, data_out);
      std::cout << "wrote " << ds.size() << " examples (" << clipped << " values clipped) to " << data_out.string()
                << "\n";
    } else if (*train_cmd) {
      const Dataset ds = load_csv(train_data);
      tc.seed = *train_seed;
      tc.validate();
      const Network net = train(make_network(parse_dims(dims_text), *init_seed), ds, tc);
      checkpoint_save(net, model_path);
      std::cout << "train accuracy " << accuracy(net, ds) << "\n";
    } else if (*attack) {
      const Network net = checkpoint_load(model_in);
      const Dataset ds = load_for(net, data_in);
      const AttackSpec spec = budget.spec();
      Dataset adv;
      adv.num_classes = ds.num_classes;
      std::size_t successes = 0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const AttackOutcome o = run_attack(net, ds.features[i], ds.labels[i], spec);
        successes += o.success;
        adv.features.push_back(o.x_adv);
        adv.labels.push_back(ds.labels[i]);
      }
      save_csv(adv, out_path);
      std::cout << attack_label(spec) << " success " << static_cast<double>(successes) / ds.size() << "\n";
    } else if (*fit) {
      const Network net = checkpoint_load(model_in);
      const Dataset ds = load_for(net, data_in);
      DetectorSpec spec;
      spec.layers = parse_dims(layers_text);
      spec.mode = parse_code_mode(mode_text);
      spec.sigma_rule = sigma_fixed ? SigmaRule{SigmaRule::Kind::Fixed, *sigma_fixed}
                                    : SigmaRule{SigmaRule::Kind::MedianScale, sigma_scale};
      spec.C = C;
      spec.combinator = parse_combinator(combinator);
      spec.rejection_ratio = rejection_ratio;
      const auto attacks = parse_attack_list(train_attacks);
      const SafetyNetPipeline p = build_detector_pipeline(net, ds, attacks, spec);
      save_pipeline(p, out_path);
      for (const auto& st : p.detectors)
        std::cout << "layer " << st.thresholds.layer_index << " sigma " << st.svm.sigma << " support "
                  << st.svm.support_codes.size() << "\n";
    } else if (*evaluate) {
      const Network net = checkpoint_load(model_in);
      const SafetyNetPipeline p = load_pipeline(pipeline_in, net);
      const Dataset ds = load_for(net, data_in);
      const auto attacks = parse_attack_list(test_attacks);
      const EvalMatrix m = attack_detect_matrix(p, attacks, ds);
      std::ostringstream records;
      write_records_csv(records, m.records);
      const std::vector<NamedTable> tables{{"detection", m.table}};
      const std::vector<ReportFile> extra{{"records.csv", records.str()}};
      emit_report(tables, m.curves, {{"attacks", test_attacks}}, out_path, extra);
      std::cout << "report written to " << out_path.string() << "\n";
    } else if (*type2) {
      const Network net = checkpoint_load(model_in);
      const SafetyNetPipeline p = load_pipeline(pipeline_in, net);
      const Dataset ds = load_for(net, data_in);
      AttackBudget b = AttackBudget::with_epsilon(t2_eps, t2_norm == "l2" ? Norm::L2 : Norm::Linf);
      if (t2_norm != "l2" && t2_norm != "linf") fail(ErrorKind::Config, "--norm must be linf or l2");
      b.overshoot = t2_overshoot;
      Type2Style style = Type2Style::DeepFool;
      if (t2_style == "iterative") style = Type2Style::Iterative;
      else if (t2_style != "deepfool") fail(ErrorKind::Config, "--style must be deepfool or iterative");
      double gap = 0.0;
      const auto recs = type2_records(p, ds, b, sp, style, "type2-" + t2_style, &gap);
      std::ostringstream records;
      write_records_csv(records, recs);
      const std::vector<NamedTable> tables{{"type2", tabulate(recs)}};
      const std::vector<ReportFile> extra{{"records.csv", records.str()}};
      const std::map<std::string, std::string> meta{{"style", t2_style},
                                                    {"eps", format_double(t2_eps)},
                                                    {"lambda", format_double(sp.lambda)},
                                                    {"sigma_scale", format_double(sp.sigma_scale)},
                                                    {"detect_weight", format_double(sp.detect_weight)},
                                                    {"surrogate_gap", format_double(gap)}};
      emit_report(tables, {}, meta, out_path, extra);
      std::cout << "surrogate gap " << gap << "\n";
    } else if (*transfer) {
      const Network target = checkpoint_load(model_in);
      const SafetyNetPipeline p = load_pipeline(pipeline_in, target);
      const Dataset sub_train = load_for(target, substitute_data);
      const Dataset ds = load_for(target, data_in);
      const auto dims = substitute_dims.empty() ? target.layer_dims() : parse_dims(substitute_dims);
      tc.seed = *substitute_seed;
      const Network sub = train(make_network(dims, *substitute_seed), sub_train, tc);
      const auto rows = transfer_attack(sub, p, ds, tbudget.spec());
      std::ostringstream out;
      write_transfer_csv(out, rows);
      write_text(out_path, out.str());
      std::size_t mis = 0, mu = 0;
      for (const auto& r : rows) {
        mis += r.misclassified_on_target;
        mu += r.misclassified_on_target && !r.rejected_on_target;
      }
      std::cout << "target misclassified " << static_cast<double>(mis) / rows.size() << ", undetected "
                << static_cast<double>(mu) / rows.size() << "\n";
    } else if (*demo) {
      Grid grid;
      grid.lo = -1.0;
      grid.hi = 2.0;
      grid.points = grid_points;
      std::ostringstream csv;
      csv << "eps,threshold,components\n";
      for (double e : bar_eps) {
        const BarSpec left{{0}, {0.0}, {e}};
        const BarSpec right{{0}, {1.0}, {e}};
        const ScalarField f = [&](std::span<const double> x) { return bar(x, left) + bar(x, right); };
        csv << format_double(e) << ',' << format_double(threshold) << ',' << count_components(f, threshold, grid)
            << '\n';
      }
      fs::create_directories(out_path);
      write_text(out_path / "components.csv", csv.str());

      // 2-D surface for the smallest width, coarse enough for an SVG
      const double e = bar_eps.empty() ? 0.25 : *std::min_element(bar_eps.begin(), bar_eps.end());
      const BarSpec a{{0, 1}, {0.0, 0.0}, {e, e}};
      const BarSpec b{{0, 1}, {1.0, 1.0}, {e, e}};
      constexpr std::size_t side = 120;
      std::vector<double> values;
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
          const double x[2] = {-1.0 + 3.0 * c / (side - 1), 2.0 - 3.0 * r / (side - 1)};
          values.push_back(bar(x, a) + bar(x, b));
        }
      write_text(out_path / "bars_heatmap.svg", heatmap_svg(values, side, side, components_svg_title(e)));
      std::cout << csv.str();
    } else if (*report) {
      std::ifstream in(records_in);
      if (!in) fail(ErrorKind::Io, "cannot open " + records_in.string());
      const auto recs = read_records_csv(in);
      const std::vector<NamedTable> tables{{"detection", tabulate(recs)}};
      emit_report(tables, {}, {{"records", records_in.filename().string()}}, out_path);
      std::cout << "report written to " << out_path.string() << "\n";
    } else if (*run) {
      return run_config(load_config(config_path), std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
