// One PASS/FAIL line per acceptance criterion; exits non-zero if any fail.
// Usage: acceptance <config.ini>   (the config is rerun for criterion 9)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "safetynet/bars.hpp"
#include "safetynet/eval.hpp"
#include "safetynet/experiment.hpp"
#include "safetynet/train.hpp"
#include "svm_oracle.hpp"

using namespace safetynet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("criterion %d %s: %s (%s; %.2fs)\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Vector uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector x(n);
  for (double& v : x) v = u(rng);
  return x;
}

double min_preactivation(const Network& net, const Vector& x) {
  double m = std::numeric_limits<double>::infinity();
  Vector cur = x;
  for (std::size_t s = 0; s + 1 < net.layers().size(); ++s) {
    const Layer& l = net.layers()[s];
    Vector out(l.bias);
    for (std::size_t r = 0; r < out.size(); ++r) {
      for (std::size_t c = 0; c < cur.size(); ++c) out[r] += l.weight(r, c) * cur[c];
      m = std::min(m, std::abs(out[r]));
      out[r] = std::max(out[r], 0.0);
    }
    cur = out;
  }
  return m;
}

Network binary_linear(const Vector& w, double b) {
  Layer l{Matrix(2, w.size()), Vector{0.0, b}};
  for (std::size_t c = 0; c < w.size(); ++c) l.weight(1, c) = w[c];
  return Network({l});
}

Outcome gradient_check() {
  std::mt19937_64 rng(101);
  const Network net = make_network(std::vector<std::size_t>{10, 32, 16, 5}, 17);
  const double h = 1e-4;
  double worst = 0.0;
  std::size_t cases = 0;
  while (cases < 120) {
    const Vector x = uniform(rng, 10, 0.0, 1.0);
    if (min_preactivation(net, x) < 1e-2) continue;
    const LossSpec loss = LossSpec::cross_entropy(rng() % 5);
    const Vector g = input_gradient(net, x, loss);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Vector up = x, down = x;
      up[i] += h;
      down[i] -= h;
      const double fd = (loss_value(forward(net, up), loss) - loss_value(forward(net, down), loss)) / (2 * h);
      num += (fd - g[i]) * (fd - g[i]);
      den = std::max(den, std::max(std::abs(fd), std::abs(g[i])));
    }
    worst = std::max(worst, std::sqrt(num) / std::max(den, 1e-300));
    ++cases;
  }
  return {worst <= 1e-5, fmt("max relative error %.3g over %.0f cases", worst, static_cast<double>(cases))};
}

Outcome attack_oracles() {
  const Vector w{0.8, -1.3, 0.6, 2.1, -0.4};
  const double b = -0.35;
  const Network net = binary_linear(w, b);
  std::mt19937_64 rng(5);
  double fs_err = 0.0, df_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Vector x = uniform(rng, w.size(), 0.2, 0.8);
    double f = b, wn2 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) f += w[i] * x[i], wn2 += w[i] * w[i];
    const std::size_t y = f > 0 ? 1 : 0;  // predicted label
    const double eps = 0.01 + 0.1 * (t % 10) / 10.0;
    const AttackOutcome o = fast_sign(net, x, y, AttackBudget::with_epsilon(eps));
    const double dir = y == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      fs_err = std::max(fs_err, std::abs(o.x_adv[i] - x[i] - eps * dir * (w[i] > 0 ? 1.0 : -1.0)));

    AttackBudget db = AttackBudget::with_epsilon(0.1);
    db.overshoot = 0.02 * (1 + t % 5);
    const AttackOutcome d = deepfool(net, x, db);
    const double expected = std::abs(f) / std::sqrt(wn2) * (1.0 + db.overshoot);
    // skip the rare case where the box clip cuts the step short
    bool clipped = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double step = -(1.0 + db.overshoot) * f / wn2 * w[i];
      clipped |= x[i] + step < 0.0 || x[i] + step > 1.0;
    }
    if (clipped) continue;
    df_err = std::max(df_err, std::abs(d.l2_norm - expected));
    if (d.iterations_used != 1) df_err = std::max(df_err, 1.0);
  }
  return {fs_err <= 1e-9 && df_err <= 1e-9,
          fmt("fast_sign max error %.3g, DeepFool step max error %.3g", fs_err, df_err)};
}

Outcome smo_oracle() {
  std::mt19937_64 rng(33);
  double worst_obj = 0.0, worst_eq = 0.0;
  bool bounds = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t npos = 3 + trial % 4, nneg = 3 + (trial / 4) % 4;  // up to 12 codes
    std::vector<Code> pos, neg;
    const auto fresh = [&](std::vector<Code>& into) {
      for (;;) {
        Code c;
        for (int i = 0; i < 6; ++i) c.levels.push_back(static_cast<int>(rng() % 4));
        if (std::find(pos.begin(), pos.end(), c) == pos.end() && std::find(neg.begin(), neg.end(), c) == neg.end()) {
          into.push_back(c);
          return;
        }
      }
    };
    while (pos.size() < npos) fresh(pos);
    while (neg.size() < nneg) fresh(neg);
    const double sigma = 0.8 + 0.4 * (trial % 5);
    const double C = trial % 3 == 0 ? 0.3 : (trial % 3 == 1 ? 1.0 : 50.0);
    SvmFitReport rep;
    fit_rbf_svm(pos, neg, sigma, C, {}, &rep);
    std::vector<Code> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    const double oracle = svm_oracle::brute_force_dual(all, rep.labels, sigma, C);
    worst_obj = std::max(worst_obj, std::abs(svm_oracle::objective(rep.alphas, rep.labels, all, sigma) - oracle));
    double eq = 0.0;
    for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
      eq += rep.alphas[i] * rep.labels[i];
      bounds &= rep.alphas[i] >= 0.0 && rep.alphas[i] <= C;
    }
    worst_eq = std::max(worst_eq, std::abs(eq));
  }
  return {worst_obj <= 1e-3 && worst_eq <= 1e-6 && bounds,
          fmt("max objective gap %.3g, max |sum alpha y| %.3g, bounds ", worst_obj, worst_eq) +
              (bounds ? "ok" : "violated")};
}

Outcome decision_cases() {
  double err = 0.0;
  RbfSvmDetector one;
  one.support_codes = {Code{{1, 3, 0}}};
  one.dual_coeffs = {1.7};
  one.bias = -0.4;
  one.sigma = 0.9;
  // |(2,1,1) - (1,3,0)|^2 = 6
  err = std::max(err, std::abs(svm_decide(one, Code{{2, 1, 1}}) - (1.7 * std::exp(-6.0 / (2 * 0.81)) - 0.4)));
  err = std::max(err, std::abs(svm_decide(one, Code{{1, 3, 0}}) - 1.3));

  RbfSvmDetector pair;
  pair.support_codes = {Code{{0, 0}}, Code{{2, 2}}};
  pair.dual_coeffs = {0.8, -0.8};
  pair.sigma = 1.0;
  err = std::max(err, std::abs(svm_decide(pair, Code{{1, 1}})));
  err = std::max(err, std::abs(svm_decide(pair, Code{{0, 0}}) - 0.8 * (1.0 - std::exp(-4.0))));
  err = std::max(err, std::abs(svm_decide(pair, Code{{0, 0}}) + svm_decide(pair, Code{{2, 2}})));

  // a fitted detector with the default sigma rule, probed far from its support codes
  std::mt19937_64 rng(9);
  std::vector<Code> pos, neg;
  for (int i = 0; i < 60; ++i) {
    Code a, b;
    for (int j = 0; j < 10; ++j) {
      a.levels.push_back(static_cast<int>(rng() % 2));
      b.levels.push_back(static_cast<int>(2 + rng() % 2));
    }
    pos.push_back(a);
    neg.push_back(b);
  }
  const double median = median_pairwise_distance(pos);
  const double sigma = SigmaRule{}.resolve(pos);
  const RbfSvmDetector det = fit_rbf_svm(pos, neg, sigma, 1.0);
  Vector far(10);
  for (double& v : far) v = 3.0 + 5.0 * median;
  double min_dist = std::numeric_limits<double>::infinity();
  for (const auto& c : det.support_codes) {
    double d = 0.0;
    for (std::size_t j = 0; j < far.size(); ++j) d += (far[j] - c.levels[j]) * (far[j] - c.levels[j]);
    min_dist = std::min(min_dist, std::sqrt(d));
  }
  double gn = 0.0;
  for (double g : svm_decide_gradient(det, far)) gn += g * g;
  gn = std::sqrt(gn);
  return {err <= 1e-12 && gn <= 1e-12 && min_dist >= 5.0 * median,
          fmt("max decision error %.3g; |grad| %.3g at %.3g median distances", err, gn, min_dist / median)};
}

Outcome confidence_cases() {
  const double r = confidence_ratio(Vector{0.60, 0.15, 0.10, 0.10, 0.05});
  const double onehot = confidence_ratio(Vector{0.0, 1.0, 0.0});
  const double uniform4 = confidence_ratio(Vector{0.25, 0.25, 0.25, 0.25});
  return {r == 0.25 && onehot == 0.0 && uniform4 == 1.0, fmt("ratio %.17g, one-hot %.3g, uniform %.3g", r, onehot, uniform4)};
}

struct Scenario {
  Split parts;
  Network net;
};

const Scenario& blobs_scenario() {
  static const Scenario s = [] {
    Scenario sc;
    sc.parts = split(synth_blobs(4, 500, 0.08, 7), 0.6, 0.2, 0.2, 11);
    TrainConfig tc;
    tc.epochs = 60;
    tc.seed = 3;
    sc.net = train(make_network(std::vector<std::size_t>{2, 64, 32, 4}, 5), sc.parts.train, tc);
    return sc;
  }();
  return s;
}

DetectorSpec scenario_detector() {
  DetectorSpec spec;
  spec.layers = {0};
  spec.mode = CodeMode::Quaternary;
  spec.rejection_ratio = 0.25;
  return spec;
}

double auc_of(const EvalMatrix& m, const AttackSpec& a) {
  const EvalRow* r = m.table.find(attack_label(a), "det");
  return r ? r->auc : std::nan("");
}

Outcome type1_detection() {
  const Scenario& sc = blobs_scenario();
  const AttackSpec fsign = parse_attack_spec("fastsign:eps=0.1");
  const AttackSpec il = parse_attack_spec("iter-linf:eps=0.1");
  const AttackSpec l2 = parse_attack_spec("iter-l2:eps=0.14142");

  const auto same = attack_detect_matrix(build_detector_pipeline(sc.net, sc.parts.train, std::vector{fsign}, scenario_detector()),
                                         std::vector{fsign}, sc.parts.test);
  const double auc_fs = auc_of(same, fsign);

  const auto cross = attack_detect_matrix(build_detector_pipeline(sc.net, sc.parts.train, std::vector{il}, scenario_detector()),
                                          std::vector{il, fsign, l2}, sc.parts.test);
  const double auc_il = auc_of(cross, il), auc_il_fs = auc_of(cross, fsign), auc_il_l2 = auc_of(cross, l2);
  const double drop = auc_il - std::min(auc_il_fs, auc_il_l2);
  const bool ok = auc_fs >= 0.90 && auc_il_fs >= 0.80 && auc_il_l2 >= 0.80 && drop <= 0.15;
  return {ok, fmt("AUC fast_sign->fast_sign %.3f; iter-Linf->fast_sign %.3f, ->iter-L2 %.3f; drop %.3f", auc_fs,
                  auc_il_fs, auc_il_l2, drop)};
}

Outcome type2_ordering() {
  const Scenario& sc = blobs_scenario();
  const Dataset& test = sc.parts.test;
  const AttackSpec fsign = parse_attack_spec("fastsign:eps=0.1");
  const SafetyNetPipeline p = build_detector_pipeline(sc.net, sc.parts.train, std::vector{fsign}, scenario_detector());

  // Type I misclassification against the bare classifier at the same budgets
  const AttackBudget budget = AttackBudget::with_epsilon(0.1);
  const auto bare_rate = [&](const AttackSpec& spec) {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
      wrong += run_attack(sc.net, test.features[i], test.labels[i], spec).label_adv != test.labels[i];
    return static_cast<double>(wrong) / static_cast<double>(test.size());
  };
  AttackSpec df{AttackMethod::DeepFool, budget};
  AttackSpec it{AttackMethod::IterLinf, budget};
  const double bare_df = bare_rate(df), bare_it = bare_rate(it);

  SmoothingParams sp;
  const auto df_recs = type2_records(p, test, budget, sp, Type2Style::DeepFool, "type2-deepfool");
  const auto it_recs = type2_records(p, test, budget, sp, Type2Style::Iterative, "type2-iterative");
  std::vector<EvalRecord> all = evaluate_inputs(p, "none", "det+R", test.features, test.labels, true);
  all.insert(all.end(), df_recs.begin(), df_recs.end());
  all.insert(all.end(), it_recs.begin(), it_recs.end());
  const EvalTable t = tabulate(all);
  const EvalRow* df_det = t.find("type2-deepfool", "det");
  const EvalRow* df_detr = t.find("type2-deepfool", "det+R");
  const EvalRow* it_det = t.find("type2-iterative", "det");
  if (!df_det || !df_detr || !it_det) return {false, "missing Type II rows"};

  std::size_t clean_rejected = 0, clean = 0;
  for (const auto& r : all)
    if (r.natural && r.condition == "det+R") clean_rejected += r.rejected, ++clean;
  const double clean_rate = static_cast<double>(clean_rejected) / static_cast<double>(clean);

  const bool ok = df_det->misclassified_undetected <= bare_df && it_det->misclassified_undetected <= bare_it &&
                  df_detr->misclassified_undetected < df_det->misclassified_undetected && clean_rate <= 0.15;
  return {ok, fmt("DeepFool-style %.3f vs bare %.3f; iterative %.3f vs bare %.3f", df_det->misclassified_undetected,
                  bare_df, it_det->misclassified_undetected, bare_it) +
                  fmt("; with ratio rejection %.3f, clean rejected %.3f", df_detr->misclassified_undetected,
                      clean_rate)};
}

Outcome bar_checks() {
  const double peak = phi(Vector{0.25}, 0, 0.25, 0.25);
  const double lo = phi(Vector{0.0}, 0, 0.25, 0.25);
  const double hi = phi(Vector{0.5}, 0, 0.25, 0.25);

  const BarSpec spec{{0, 2}, {0.4, 0.6}, {0.2, 0.3}};
  const Network net = build_bar_network(spec, 3);
  std::mt19937_64 rng(8);
  double err = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const Vector x = uniform(rng, 3, -0.5, 1.5);
    const double tri = std::max(0.0, 1.0 - std::abs(x[0] - 0.4) / 0.2) + std::max(0.0, 1.0 - std::abs(x[2] - 0.6) / 0.3);
    err = std::max(err, std::abs(forward(net, x).logits[0] - std::max(0.0, tri - 1.0)));
  }

  const Grid g{1, -1.0, 2.0, 3001};
  const auto two = [](double eps) {
    return [eps](std::span<const double> x) {
      return bar(x, BarSpec{{0}, {0.0}, {eps}}) + bar(x, BarSpec{{0}, {1.0}, {eps}});
    };
  };
  const std::size_t c25 = count_components(two(0.25), 0.5, g);
  const std::size_t c75 = count_components(two(0.75), 0.5, g);
  const bool ok = peak == 1.0 && lo == 0.0 && hi == 0.0 && err <= 1e-12 && c25 == 2 && c75 == 1;
  return {ok, fmt("peak %.17g, edges %.3g/%.3g, network error %.3g", peak, lo, hi, err) +
                  fmt(", components %.0f at eps 0.25 and %.0f at eps 0.75", static_cast<double>(c25),
                      static_cast<double>(c75))};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility(const fs::path& config) {
  ExperimentConfig cfg = load_config(config);
  const fs::path base = fs::temp_directory_path() / "safetynet_acceptance";
  fs::remove_all(base);
  std::ostringstream log;
  cfg.output_dir = base / "a";
  if (run_config(cfg, log) != 0) return {false, "first run failed: " + log.str()};
  cfg.output_dir = base / "b";
  if (run_config(cfg, log) != 0) return {false, "second run failed: " + log.str()};
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(base / "a")) {
    ++files;
    differing += slurp(e.path()) != slurp(base / "b" / e.path().filename());
  }

  const Network net = make_network(std::vector<std::size_t>{7, 13, 5, 3}, 99);
  const auto bytes = checkpoint_bytes(net);
  const Network back = checkpoint_parse(bytes);
  const bool ckpt = back == net && checkpoint_bytes(back) == bytes;
  return {files > 0 && differing == 0 && ckpt,
          fmt("%.0f report files, %.0f differ; checkpoint round trip ", static_cast<double>(files),
              static_cast<double>(differing)) +
              (ckpt ? "bit-exact" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <config.ini>\n");
    return 2;
  }
  criterion(1, "gradient correctness", gradient_check);
  criterion(2, "closed-form attack oracles", attack_oracles);
  criterion(3, "SMO correctness", smo_oracle);
  criterion(4, "RBF decision analytic cases", decision_cases);
  criterion(5, "confidence ratio", confidence_cases);
  criterion(6, "desk-scale Type I detection", type1_detection);
  criterion(7, "Type II hardness ordering", type2_ordering);
  criterion(8, "bar functions", bar_checks);
  criterion(9, "reproducibility", [&] { return reproducibility(argv[1]); });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
