#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "safetynet/attacks.hpp"
#include "safetynet/dataset.hpp"
#include "safetynet/detector.hpp"
#include "safetynet/type2.hpp"

namespace safetynet {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

/// labels are +1 / -1; larger scores vote +1. Tied scores are swept as one
/// threshold so they earn half credit under the trapezoid rule.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);

/// One example seen by the pipeline under one condition.
struct EvalRecord {
  std::string attack;     // "none" for natural examples
  std::string condition;  // e.g. "det" or "det+R"
  std::size_t example = 0;
  bool natural = true;
  std::size_t true_label = 0;
  std::size_t label = 0;
  double detector_score = 0.0;  // combined score, positive = natural
  bool detector_flag = false;
  double confidence_ratio = 0.0;
  bool confidence_flag = false;
  bool rejected = false;
};

struct EvalRow {
  std::string attack;
  std::string condition;
  std::size_t count = 0;
  double adversary_success = 0.0;
  double detector_tpr = 0.0;  // flagged fraction of successful adversarials
  double detector_fpr = 0.0;  // flagged fraction of natural examples
  double balanced_accuracy = 0.0;
  double auc = 0.0;
  double misclassified_undetected = 0.0;
  double correct_undetected = 0.0;
  double correct_detected = 0.0;
  double wrong_undetected = 0.0;
  double wrong_detected = 0.0;
  double mean_confidence_ratio = 0.0;
  double rejection_rate = 0.0;  // rejected for confidence alone
};

struct EvalTable {
  std::vector<EvalRow> rows;

  const EvalRow* find(const std::string& attack, const std::string& condition) const;
};

/// Rows keyed by (attack, condition) in order of first appearance. Natural
/// records of a condition serve as the reference set for that condition's
/// attack rows.
EvalTable tabulate(std::span<const EvalRecord> records);

/// Run the pipeline on each input and record the verdict.
std::vector<EvalRecord> evaluate_inputs(const SafetyNetPipeline& p, const std::string& attack,
                                        const std::string& condition, std::span<const Vector> inputs,
                                        std::span<const std::size_t> true_labels, bool natural);

struct Curve {
  std::string name;
  std::string x_label;
  std::string y_label;
  std::vector<std::pair<double, double>> points;
};

struct EvalMatrix {
  std::vector<EvalRecord> records;
  EvalTable table;
  std::vector<Curve> curves;
};

/// Label for an attack spec used as a table key.
std::string attack_label(const AttackSpec& spec);

/// Natural row plus one row per attack. Conditions: "det" (detectors only)
/// and, when the pipeline has a rejection ratio, "det+R".
EvalMatrix attack_detect_matrix(const SafetyNetPipeline& pipeline, std::span<const AttackSpec> attacks,
                                const Dataset& test_data);

/// Type II attack rows under the same two conditions; the adversarials are
/// searched against the pipeline without confidence rejection.
std::vector<EvalRecord> type2_records(const SafetyNetPipeline& pipeline, const Dataset& test_data,
                                      const AttackBudget& budget, const SmoothingParams& sp, Type2Style style,
                                      const std::string& name, double* surrogate_gap = nullptr);

void write_table_csv(std::ostream& out, const EvalTable& table);
EvalTable read_table_csv(std::istream& in);
void write_records_csv(std::ostream& out, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_records_csv(std::istream& in);
void write_transfer_csv(std::ostream& out, std::span<const TransferRecord> rows);

/// Shortest decimal string that round-trips.
std::string format_double(double v);

std::string curve_svg(const Curve& curve);
/// Grayscale heatmap of row-major values (black = min, white = max).
std::string heatmap_svg(std::span<const double> values, std::size_t cols, std::size_t rows, const std::string& title);

struct NamedTable {
  std::string name;
  EvalTable table;
};

struct ReportFile {
  std::string name;
  std::string contents;
};

/// CSV per table, SVG per curve, extra files verbatim, and summary.json
/// holding the metadata and every table. Byte-stable for identical inputs.
void emit_report(std::span<const NamedTable> tables, std::span<const Curve> curves,
                 const std::map<std::string, std::string>& metadata, const std::filesystem::path& out_dir,
                 std::span<const ReportFile> extra = {});

}  // namespace safetynet
