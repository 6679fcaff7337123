#include "safetynet/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "safetynet/error.hpp"

namespace safetynet {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? kNaN : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::Shape, "scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) ++pos;
    else if (l == -1) ++neg;
    else fail(ErrorKind::Domain, "ROC labels must be +1 or -1");
  }
  if (pos == 0 || neg == 0) fail(ErrorKind::Domain, "ROC needs both positive and negative examples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    for (; k < order.size() && scores[order[k]] == s; ++k) (labels[order[k]] == 1 ? tp : fp) += 1;
    const RocPoint p{static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)};
    r.auc += (p.fpr - r.points.back().fpr) * (p.tpr + r.points.back().tpr) / 2.0;
    r.points.push_back(p);
  }
  return r;
}

const EvalRow* EvalTable::find(const std::string& attack, const std::string& condition) const {
  for (const auto& r : rows)
    if (r.attack == attack && r.condition == condition) return &r;
  return nullptr;
}

EvalTable tabulate(std::span<const EvalRecord> records) {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : records) {
    std::pair<std::string, std::string> k{r.natural ? "none" : r.attack, r.condition};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }

  EvalTable table;
  for (const auto& [attack, condition] : keys) {
    std::vector<const EvalRecord*> naturals, rows;
    for (const auto& r : records) {
      if (r.condition != condition) continue;
      if (r.natural) naturals.push_back(&r);
      if (attack == "none" ? r.natural : (!r.natural && r.attack == attack)) rows.push_back(&r);
    }

    EvalRow row;
    row.attack = attack;
    row.condition = condition;
    row.count = rows.size();
    std::size_t wrong = 0, wrong_flagged = 0, cu = 0, cd = 0, wu = 0, wd = 0, conf = 0;
    double ratio_sum = 0.0;
    for (const auto* r : rows) {
      const bool w = r->label != r->true_label;
      wrong += w;
      wrong_flagged += w && r->detector_flag;
      (w ? (r->rejected ? wd : wu) : (r->rejected ? cd : cu)) += 1;
      conf += r->confidence_flag && !r->detector_flag;
      ratio_sum += r->confidence_ratio;
    }
    std::size_t nat_flagged = 0;
    for (const auto* r : naturals) nat_flagged += r->detector_flag;

    row.adversary_success = ratio(wrong, rows.size());
    row.detector_fpr = ratio(nat_flagged, naturals.size());
    if (attack == "none") {
      row.detector_tpr = kNaN;
      row.balanced_accuracy = kNaN;
      row.auc = kNaN;
    } else {
      row.detector_tpr = ratio(wrong_flagged, wrong);
      row.balanced_accuracy = (row.detector_tpr + (1.0 - row.detector_fpr)) / 2.0;
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto* r : naturals) scores.push_back(r->detector_score), labels.push_back(1);
      for (const auto* r : rows)
        if (r->label != r->true_label) scores.push_back(r->detector_score), labels.push_back(-1);
      row.auc = (wrong > 0 && !naturals.empty()) ? roc_auc(scores, labels).auc : kNaN;
    }
    row.correct_undetected = ratio(cu, rows.size());
    row.correct_detected = ratio(cd, rows.size());
    row.wrong_undetected = ratio(wu, rows.size());
    row.wrong_detected = ratio(wd, rows.size());
    row.misclassified_undetected = row.wrong_undetected;
    row.mean_confidence_ratio = rows.empty() ? kNaN : ratio_sum / static_cast<double>(rows.size());
    row.rejection_rate = ratio(conf, rows.size());
    table.rows.push_back(row);
  }
  return table;
}

std::vector<EvalRecord> evaluate_inputs(const SafetyNetPipeline& p, const std::string& attack,
                                        const std::string& condition, std::span<const Vector> inputs,
                                        std::span<const std::size_t> true_labels, bool natural) {
  if (inputs.size() != true_labels.size()) fail(ErrorKind::Shape, "inputs and labels differ in length");
  std::vector<EvalRecord> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Verdict v = safetynet_classify(p, inputs[i]);
    EvalRecord r;
    r.attack = natural ? "none" : attack;
    r.condition = condition;
    r.example = i;
    r.natural = natural;
    r.true_label = true_labels[i];
    r.label = v.label;
    r.detector_score = combined_score(v.detector_scores, p.combinator);
    r.detector_flag = detectors_flag(v.detector_scores, p.combinator);
    r.confidence_ratio = v.confidence_ratio;
    r.confidence_flag = p.rejection_ratio && v.confidence_ratio > *p.rejection_ratio;
    r.rejected = v.rejected;
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string attack_label(const AttackSpec& spec) {
  const auto& b = spec.budget;
  switch (spec.method) {
    case AttackMethod::DeepFool: return "deepfool(os=" + format_double(b.overshoot) + ")";
    case AttackMethod::DeepFoolTopK:
      return "deepfool-" + std::to_string(b.top_k) + "(os=" + format_double(b.overshoot) + ")";
    default: return std::string(to_string(spec.method)) + "(eps=" + format_double(b.epsilon) + ")";
  }
}

namespace {

std::vector<std::pair<std::string, SafetyNetPipeline>> conditions_for(const SafetyNetPipeline& pipeline) {
  std::vector<std::pair<std::string, SafetyNetPipeline>> c;
  SafetyNetPipeline det = pipeline;
  det.rejection_ratio.reset();
  c.emplace_back("det", std::move(det));
  if (pipeline.rejection_ratio) c.emplace_back("det+R", pipeline);
  return c;
}

}  // namespace

EvalMatrix attack_detect_matrix(const SafetyNetPipeline& pipeline, std::span<const AttackSpec> attacks,
                                const Dataset& test_data) {
  EvalMatrix m;
  const auto conditions = conditions_for(pipeline);
  for (const auto& [name, p] : conditions) {
    auto recs = evaluate_inputs(p, "none", name, test_data.features, test_data.labels, true);
    m.records.insert(m.records.end(), recs.begin(), recs.end());
  }
  std::vector<std::string> labels;
  for (const auto& spec : attacks) {
    std::vector<Vector> adv;
    adv.reserve(test_data.size());
    for (std::size_t i = 0; i < test_data.size(); ++i)
      adv.push_back(run_attack(pipeline.classifier, test_data.features[i], test_data.labels[i], spec).x_adv);
    const std::string label = attack_label(spec);
    labels.push_back(label);
    for (const auto& [name, p] : conditions) {
      auto recs = evaluate_inputs(p, label, name, adv, test_data.labels, false);
      m.records.insert(m.records.end(), recs.begin(), recs.end());
    }
  }
  m.table = tabulate(m.records);

  Curve sva{"success_vs_accuracy", "adversary success", "detector accuracy", {}};
  for (const auto& label : labels) {
    std::vector<double> scores;
    std::vector<int> y;
    for (const auto& r : m.records) {
      if (r.condition != "det") continue;
      if (r.natural) scores.push_back(r.detector_score), y.push_back(1);
      else if (r.attack == label && r.label != r.true_label) scores.push_back(r.detector_score), y.push_back(-1);
    }
    const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), -1) > 0;
    if (both) {
      Curve roc{"roc_" + label, "false positive rate", "true positive rate", {}};
      for (const auto& p : roc_auc(scores, y).points) roc.points.emplace_back(p.fpr, p.tpr);
      m.curves.push_back(std::move(roc));
    }
    if (const EvalRow* row = m.table.find(label, "det"); row && std::isfinite(row->detector_tpr))
      sva.points.emplace_back(row->adversary_success, row->detector_tpr);
  }
  m.curves.push_back(std::move(sva));
  return m;
}

std::vector<EvalRecord> type2_records(const SafetyNetPipeline& pipeline, const Dataset& test_data,
                                      const AttackBudget& budget, const SmoothingParams& sp, Type2Style style,
                                      const std::string& name, double* surrogate_gap) {
  const auto conditions = conditions_for(pipeline);
  std::vector<Vector> adv;
  std::size_t iterates = 0, gap = 0;
  for (std::size_t i = 0; i < test_data.size(); ++i) {
    Type2Result r = type2_attack(conditions.front().second, test_data.features[i], test_data.labels[i], budget, sp,
                                 style);
    iterates += r.iterates;
    gap += r.surrogate_evaded_real_rejected;
    adv.push_back(std::move(r.outcome.x_adv));
  }
  if (surrogate_gap) *surrogate_gap = ratio(gap, iterates);
  std::vector<EvalRecord> out;
  for (const auto& [cname, p] : conditions) {
    auto recs = evaluate_inputs(p, name, cname, adv, test_data.labels, false);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

namespace {

const char* kTableHeader =
    "attack,condition,count,adversary_success,detector_tpr,detector_fpr,balanced_accuracy,auc,"
    "misclassified_undetected,correct_undetected,correct_detected,wrong_undetected,wrong_detected,"
    "mean_confidence_ratio,rejection_rate";

const char* kRecordHeader =
    "attack,condition,example,natural,true_label,label,detector_score,detector_flag,confidence_ratio,"
    "confidence_flag,rejected";

// Attack labels contain no commas; quote anyway so the CSV stays valid.
std::string quote(const std::string& s) { return "\"" + s + "\""; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    else if (ch == ',' && !quoted) cells.push_back(std::move(cur)), cur.clear();
    else cur.push_back(ch);
  }
  cells.push_back(std::move(cur));
  return cells;
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail(ErrorKind::Format, "bad numeric cell '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_double(s)); }

void expect_header(std::istream& in, const char* header) {
  std::string line;
  if (!std::getline(in, line) || line != header) fail(ErrorKind::Format, "unexpected CSV header");
}

}  // namespace

void write_table_csv(std::ostream& out, const EvalTable& table) {
  out << kTableHeader << '\n';
  for (const auto& r : table.rows) {
    out << quote(r.attack) << ',' << quote(r.condition) << ',' << r.count;
    for (double v : {r.adversary_success, r.detector_tpr, r.detector_fpr, r.balanced_accuracy, r.auc,
                     r.misclassified_undetected, r.correct_undetected, r.correct_detected, r.wrong_undetected,
                     r.wrong_detected, r.mean_confidence_ratio, r.rejection_rate})
      out << ',' << format_double(v);
    out << '\n';
  }
}

EvalTable read_table_csv(std::istream& in) {
  expect_header(in, kTableHeader);
  EvalTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 15) fail(ErrorKind::Format, "table row has " + std::to_string(c.size()) + " cells");
    EvalRow r;
    r.attack = c[0];
    r.condition = c[1];
    r.count = to_size(c[2]);
    double* fields[] = {&r.adversary_success, &r.detector_tpr, &r.detector_fpr, &r.balanced_accuracy, &r.auc,
                        &r.misclassified_undetected, &r.correct_undetected, &r.correct_detected,
                        &r.wrong_undetected, &r.wrong_detected, &r.mean_confidence_ratio, &r.rejection_rate};
    for (std::size_t k = 0; k < 12; ++k) *fields[k] = to_double(c[3 + k]);
    t.rows.push_back(std::move(r));
  }
  return t;
}

void write_records_csv(std::ostream& out, std::span<const EvalRecord> records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records)
    out << quote(r.attack) << ',' << quote(r.condition) << ',' << r.example << ',' << r.natural << ','
        << r.true_label << ',' << r.label << ',' << format_double(r.detector_score) << ',' << r.detector_flag << ','
        << format_double(r.confidence_ratio) << ',' << r.confidence_flag << ',' << r.rejected << '\n';
}

std::vector<EvalRecord> read_records_csv(std::istream& in) {
  expect_header(in, kRecordHeader);
  std::vector<EvalRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 11) fail(ErrorKind::Format, "record row has " + std::to_string(c.size()) + " cells");
    EvalRecord r;
    r.attack = c[0];
    r.condition = c[1];
    r.example = to_size(c[2]);
    r.natural = c[3] == "1";
    r.true_label = to_size(c[4]);
    r.label = to_size(c[5]);
    r.detector_score = to_double(c[6]);
    r.detector_flag = c[7] == "1";
    r.confidence_ratio = to_double(c[8]);
    r.confidence_flag = c[9] == "1";
    r.rejected = c[10] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

void write_transfer_csv(std::ostream& out, std::span<const TransferRecord> rows) {
  out << "example,true_label,success_on_substitute,misclassified_on_target,rejected_on_target\n";
  for (const auto& r : rows)
    out << r.index << ',' << r.true_label << ',' << r.success_on_substitute << ',' << r.misclassified_on_target
        << ',' << r.rejected_on_target << '\n';
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace

std::string curve_svg(const Curve& curve) {
  constexpr double size = 400.0, margin = 40.0, span = size - 2 * margin;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  for (const auto& [x, y] : curve.points) {
    xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  }
  const auto px = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * span; };
  const auto py = [&](double y) { return size - margin - (y - ymin) / (ymax - ymin) * span; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  s << "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
  s << "<text x=\"200\" y=\"20\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(curve.name) << "</text>\n";
  s << "<line x1=\"40\" y1=\"360\" x2=\"360\" y2=\"360\" stroke=\"black\"/>\n";
  s << "<line x1=\"40\" y1=\"40\" x2=\"40\" y2=\"360\" stroke=\"black\"/>\n";
  s << "<text x=\"200\" y=\"390\" text-anchor=\"middle\" font-size=\"11\">" << xml_escape(curve.x_label)
    << "</text>\n";
  s << "<text x=\"12\" y=\"200\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 12 200)\">"
    << xml_escape(curve.y_label) << "</text>\n";
  if (!curve.points.empty()) {
    s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curve.points.size(); ++i)
      s << (i ? " " : "") << fixed(px(curve.points[i].first)) << ',' << fixed(py(curve.points[i].second));
    s << "\"/>\n";
    for (const auto& [x, y] : curve.points)
      s << "<circle cx=\"" << fixed(px(x)) << "\" cy=\"" << fixed(py(y)) << "\" r=\"2\" fill=\"steelblue\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string heatmap_svg(std::span<const double> values, std::size_t cols, std::size_t rows, const std::string& title) {
  if (values.size() != cols * rows) fail(ErrorKind::Shape, "heatmap dimensions do not match the data");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values) lo = std::min(lo, v), hi = std::max(hi, v);
  const double range = hi > lo ? hi - lo : 1.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * 4 << "\" height=\"" << rows * 4 + 20
    << "\">\n";
  s << "<text x=\"4\" y=\"14\" font-size=\"12\">" << xml_escape(title) << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const int g = static_cast<int>(std::lround(255.0 * (values[r * cols + c] - lo) / range));
      // row 0 is the lowest y, drawn at the bottom
      s << "<rect x=\"" << c * 4 << "\" y=\"" << 20 + (rows - 1 - r) * 4 << "\" width=\"4\" height=\"4\" fill=\"rgb("
        << g << ',' << g << ',' << g << ")\"/>\n";
    }
  s << "</svg>\n";
  return s.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << contents;
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void emit_report(std::span<const NamedTable> tables, std::span<const Curve> curves,
                 const std::map<std::string, std::string>& metadata, const std::filesystem::path& out_dir,
                 std::span<const ReportFile> extra) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  nlohmann::json summary;
  summary["metadata"] = nlohmann::json::object();
  for (const auto& [k, v] : metadata) summary["metadata"][k] = v;
  summary["tables"] = nlohmann::json::object();
  for (const auto& t : tables) {
    std::ostringstream csv;
    write_table_csv(csv, t.table);
    write_file(out_dir / (t.name + ".csv"), csv.str());
    auto rows = nlohmann::json::array();
    for (const auto& r : t.table.rows)
      rows.push_back({{"attack", r.attack},
                      {"condition", r.condition},
                      {"count", r.count},
                      {"adversary_success", number(r.adversary_success)},
                      {"detector_tpr", number(r.detector_tpr)},
                      {"detector_fpr", number(r.detector_fpr)},
                      {"balanced_accuracy", number(r.balanced_accuracy)},
                      {"auc", number(r.auc)},
                      {"misclassified_undetected", number(r.misclassified_undetected)},
                      {"cells", {{"eq_undetected", number(r.correct_undetected)},
                                 {"eq_detected", number(r.correct_detected)},
                                 {"ne_undetected", number(r.wrong_undetected)},
                                 {"ne_detected", number(r.wrong_detected)}}},
                      {"mean_confidence_ratio", number(r.mean_confidence_ratio)},
                      {"rejection_rate", number(r.rejection_rate)}});
    summary["tables"][t.name] = std::move(rows);
  }
  auto curve_names = nlohmann::json::array();
  for (const auto& c : curves) {
    std::string file = c.name;
    for (char& ch : file)
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
    write_file(out_dir / (file + ".svg"), curve_svg(c));
    curve_names.push_back(file + ".svg");
  }
  summary["curves"] = std::move(curve_names);
  auto extra_names = nlohmann::json::array();
  for (const auto& f : extra) {
    write_file(out_dir / f.name, f.contents);
    extra_names.push_back(f.name);
  }
  summary["files"] = std::move(extra_names);
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace safetynet
