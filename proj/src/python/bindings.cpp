#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "safetynet/bars.hpp"
#include "safetynet/dataset.hpp"
#include "safetynet/error.hpp"
#include "safetynet/eval.hpp"
#include "safetynet/experiment.hpp"
#include "safetynet/train.hpp"

namespace py = pybind11;
using namespace safetynet;

namespace {

py::dict outcome_dict(const AttackOutcome& o) {
  py::dict d;
  d["x_adv"] = o.x_adv;
  d["label_orig"] = o.label_orig;
  d["label_adv"] = o.label_adv;
  d["linf_norm"] = o.linf_norm;
  d["l2_norm"] = o.l2_norm;
  d["iterations"] = o.iterations_used;
  d["success"] = o.success;
  return d;
}

py::dict verdict_dict(const Verdict& v) {
  py::dict d;
  d["label"] = v.label;
  d["rejected"] = v.rejected;
  d["reason"] = std::string(to_string(v.reject_reason));
  d["detector_scores"] = v.detector_scores;
  d["confidence_ratio"] = v.confidence_ratio;
  d["probs"] = v.probs;
  return d;
}

py::dict row_dict(const EvalRow& r) {
  py::dict d;
  d["attack"] = r.attack;
  d["condition"] = r.condition;
  d["count"] = r.count;
  d["adversary_success"] = r.adversary_success;
  d["detector_tpr"] = r.detector_tpr;
  d["detector_fpr"] = r.detector_fpr;
  d["balanced_accuracy"] = r.balanced_accuracy;
  d["auc"] = r.auc;
  d["misclassified_undetected"] = r.misclassified_undetected;
  d["correct_undetected"] = r.correct_undetected;
  d["correct_detected"] = r.correct_detected;
  d["wrong_undetected"] = r.wrong_undetected;
  d["wrong_detected"] = r.wrong_detected;
  d["mean_confidence_ratio"] = r.mean_confidence_ratio;
  d["rejection_rate"] = r.rejection_rate;
  return d;
}

Type2Style parse_style(const std::string& s) {
  if (s == "deepfool") return Type2Style::DeepFool;
  if (s == "iterative") return Type2Style::Iterative;
  fail(ErrorKind::Config, "style must be deepfool or iterative");
}

}  // namespace

PYBIND11_MODULE(_safetynet, m) {
  m.doc() = "SafetyNet adversary detection lab";

  py::register_exception<Error>(m, "SafetyNetError", PyExc_ValueError);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def(py::init([](std::vector<Vector> x, std::vector<std::size_t> y, std::size_t k) {
             Dataset ds{std::move(x), std::move(y), k};
             ds.validate();
             return ds;
           }),
           py::arg("features"), py::arg("labels"), py::arg("num_classes"))
      .def_readonly("features", &Dataset::features)
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def("__len__", &Dataset::size)
      .def_property_readonly("width", &Dataset::width);

  m.def("synth_blobs", &synth_blobs, py::arg("num_classes"), py::arg("per_class"), py::arg("spread"),
        py::arg("seed"));
  m.def("load_csv", [](const std::filesystem::path& p) { return load_csv(p); });
  m.def("load_idx", &load_idx, py::arg("images"), py::arg("labels"));
  m.def("save_csv", &save_csv);
  m.def(
      "split",
      [](const Dataset& ds, double a, double b, double c, std::uint64_t seed) {
        Split s = split(ds, a, b, c, seed);
        return py::make_tuple(s.train, s.val, s.test);
      },
      py::arg("data"), py::arg("train"), py::arg("val"), py::arg("test"), py::arg("seed"));

  py::class_<Network>(m, "Network")
      .def_property_readonly("layer_dims", &Network::layer_dims)
      .def_property_readonly("parameter_count", &Network::parameter_count)
      .def("predict", [](const Network& n, const Vector& x) { return predict(n, x); })
      .def("probs", [](const Network& n, const Vector& x) { return forward(n, x).probs; })
      .def("logits", [](const Network& n, const Vector& x) { return forward(n, x).logits; })
      .def("hidden", [](const Network& n, const Vector& x) { return forward(n, x).hidden; })
      .def("input_gradient",
           [](const Network& n, const Vector& x, std::size_t label) {
             return input_gradient(n, x, LossSpec::cross_entropy(label));
           })
      .def("__eq__", [](const Network& a, const Network& b) { return a == b; });

  m.def("make_network", [](const std::vector<std::size_t>& dims, std::uint64_t seed) { return make_network(dims, seed); },
        py::arg("dims"), py::arg("seed"));
  m.def(
      "train",
      [](const Network& net, const Dataset& ds, double lr, double wd, std::size_t epochs, std::size_t batch,
         std::uint64_t seed) {
        TrainConfig cfg{lr, wd, epochs, batch, seed};
        py::gil_scoped_release release;
        return train(net, ds, cfg);
      },
      py::arg("net"), py::arg("data"), py::arg("learning_rate") = 0.1, py::arg("weight_decay") = 0.0,
      py::arg("epochs") = 50, py::arg("batch_size") = 16, py::arg("seed"));
  m.def("accuracy", &accuracy);
  m.def("checkpoint_bytes", [](const Network& n) {
    const auto b = checkpoint_bytes(n);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("checkpoint_parse", [](const py::bytes& b) {
    const std::string s = b;
    return checkpoint_parse(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
  });
  m.def("checkpoint_save", &checkpoint_save);
  m.def("checkpoint_load", &checkpoint_load);

  m.def(
      "attack",
      [](const Network& n, const Vector& x, std::size_t y, const std::string& spec) {
        return outcome_dict(run_attack(n, x, y, parse_attack_spec(spec)));
      },
      py::arg("net"), py::arg("x"), py::arg("label"), py::arg("spec") = "fastsign:eps=0.1",
      "spec is 'method[:eps=..,alpha=..,iters=..,overshoot=..,topk=..]'");

  m.def("confidence_ratio", [](const Vector& p) { return confidence_ratio(p); });

  py::class_<SafetyNetPipeline>(m, "Pipeline")
      .def_property_readonly("num_detectors", [](const SafetyNetPipeline& p) { return p.detectors.size(); })
      .def_property_readonly("sigmas",
                             [](const SafetyNetPipeline& p) {
                               std::vector<double> s;
                               for (const auto& d : p.detectors) s.push_back(d.svm.sigma);
                               return s;
                             })
      .def_property_readonly("rejection_ratio", [](const SafetyNetPipeline& p) { return p.rejection_ratio; })
      .def("classify", [](const SafetyNetPipeline& p, const Vector& x) { return verdict_dict(safetynet_classify(p, x)); })
      .def("save", [](const SafetyNetPipeline& p, const std::filesystem::path& path) { save_pipeline(p, path); });

  m.def(
      "build_detector",
      [](const Network& net, const Dataset& train_data, const std::string& attacks, std::vector<std::size_t> layers,
         const std::string& mode, double sigma_scale, double C, std::optional<double> rejection_ratio,
         const std::string& combinator) {
        DetectorSpec spec;
        spec.layers = std::move(layers);
        spec.mode = parse_code_mode(mode);
        spec.sigma_rule = {SigmaRule::Kind::MedianScale, sigma_scale};
        spec.C = C;
        spec.rejection_ratio = rejection_ratio;
        spec.combinator = parse_combinator(combinator);
        const auto specs = parse_attack_list(attacks);
        py::gil_scoped_release release;
        return build_detector_pipeline(net, train_data, specs, spec);
      },
      py::arg("net"), py::arg("train_data"), py::arg("attacks") = "fastsign:eps=0.1",
      py::arg("layers") = std::vector<std::size_t>{0}, py::arg("mode") = "quaternary", py::arg("sigma_scale") = 0.1,
      py::arg("C") = 1.0, py::arg("rejection_ratio") = std::optional<double>{}, py::arg("combinator") = "any");
  m.def("load_pipeline", &load_pipeline, py::arg("path"), py::arg("classifier"));

  m.def(
      "evaluate",
      [](const SafetyNetPipeline& p, const std::string& attacks, const Dataset& test) {
        const auto specs = parse_attack_list(attacks);
        EvalMatrix mtx;
        {
          py::gil_scoped_release release;
          mtx = attack_detect_matrix(p, specs, test);
        }
        py::list rows;
        for (const auto& r : mtx.table.rows) rows.append(row_dict(r));
        return rows;
      },
      py::arg("pipeline"), py::arg("attacks"), py::arg("test_data"));

  m.def(
      "type2_attack",
      [](const SafetyNetPipeline& p, const Vector& x, std::size_t y, double eps, const std::string& style,
         double lambda, double sigma_scale, double detect_weight, std::size_t iters) {
        SmoothingParams sp;
        sp.lambda = lambda;
        sp.sigma_scale = sigma_scale;
        sp.detect_weight = detect_weight;
        sp.max_iters = iters;
        const Type2Result r = type2_attack(p, x, y, AttackBudget::with_epsilon(eps), sp, parse_style(style));
        py::dict d = outcome_dict(r.outcome);
        d["verdict"] = verdict_dict(r.verdict);
        d["evaded"] = r.evaded();
        d["surrogate_gap"] = r.surrogate_gap();
        return d;
      },
      py::arg("pipeline"), py::arg("x"), py::arg("label"), py::arg("eps") = 0.1, py::arg("style") = "deepfool",
      py::arg("lambda_") = 20.0, py::arg("sigma_scale") = 10.0, py::arg("detect_weight") = 1.0,
      py::arg("iters") = 50);

  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        const RocResult r = roc_auc(scores, labels);
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : r.points) pts.emplace_back(p.fpr, p.tpr);
        return py::make_tuple(pts, r.auc);
      },
      py::arg("scores"), py::arg("labels"));

  py::class_<BarSpec>(m, "BarSpec")
      .def(py::init([](std::vector<std::size_t> idx, Vector c, Vector w) {
             BarSpec s{std::move(idx), std::move(c), std::move(w)};
             s.validate();
             return s;
           }),
           py::arg("index_set"), py::arg("centers"), py::arg("widths"));
  m.def("phi", [](const Vector& x, std::size_t i, double s, double e) { return phi(x, i, s, e); });
  m.def("bar", [](const Vector& x, const BarSpec& s) { return bar(x, s); });
  m.def("build_bar_network", &build_bar_network, py::arg("spec"), py::arg("input_width"));
  m.def(
      "count_components",
      [](const std::function<double(const Vector&)>& f, double t, std::size_t dims, double lo, double hi,
         std::size_t points) {
        const ScalarField field = [&f](std::span<const double> x) { return f(Vector(x.begin(), x.end())); };
        return count_components(field, t, Grid{dims, lo, hi, points});
      },
      py::arg("f"), py::arg("threshold"), py::arg("dims") = 1, py::arg("lo") = 0.0, py::arg("hi") = 1.0,
      py::arg("points") = 2000);

  m.def(
      "run_config",
      [](const std::filesystem::path& path) {
        std::ostringstream log;
        const int rc = run_config(load_config(path), log);
        return py::make_tuple(rc, log.str());
      },
      py::arg("path"));
}
