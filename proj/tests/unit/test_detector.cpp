#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "safetynet/detector.hpp"
#include "svm_oracle.hpp"
#include "test_util.hpp"

using namespace safetynet;
using svm_oracle::brute_force_dual;
using svm_oracle::objective;

namespace {

Code random_code(std::mt19937_64& rng, std::size_t width, int levels) {
  Code c;
  for (std::size_t i = 0; i < width; ++i) c.levels.push_back(static_cast<int>(rng() % levels));
  return c;
}

}  // namespace

TEST_CASE("two opposite codes give the closed-form hard-margin solution") {
  const Code pos{{0, 0, 1}};
  const Code neg{{1, 1, 1}};
  for (double sigma : {0.5, 1.0, 2.0}) {
    const double k = std::exp(-2.0 / (2 * sigma * sigma));
    SvmFitReport rep;
    const auto det = fit_rbf_svm(std::vector{pos}, std::vector{neg}, sigma, 1e6, {1e-10, 1000}, &rep);
    CHECK(rep.converged);
    CHECK(rep.alphas[0] == doctest::Approx(1.0 / (1.0 - k)).epsilon(1e-8));
    CHECK(rep.alphas[1] == doctest::Approx(1.0 / (1.0 - k)).epsilon(1e-8));
    CHECK(std::abs(det.bias) <= 1e-8);
    CHECK(svm_decide(det, pos) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(svm_decide(det, neg) == doctest::Approx(-1.0).epsilon(1e-8));
  }
}

TEST_CASE("SMO reaches the brute-force dual optimum") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<Code> pos, neg;
    while (pos.size() < 4) {
      Code c = random_code(rng, 5, 4);
      if (std::find(pos.begin(), pos.end(), c) == pos.end()) pos.push_back(c);
    }
    while (neg.size() < 4) {
      Code c = random_code(rng, 5, 4);
      if (std::find(pos.begin(), pos.end(), c) == pos.end() && std::find(neg.begin(), neg.end(), c) == neg.end())
        neg.push_back(c);
    }
    const double sigma = trial % 2 ? 1.5 : 3.0;
    const double C = trial % 3 == 0 ? 0.5 : 10.0;
    SvmFitReport rep;
    fit_rbf_svm(pos, neg, sigma, C, {1e-9, 1000}, &rep);
    std::vector<Code> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    const double oracle = brute_force_dual(all, rep.labels, sigma, C);
    CHECK(objective(rep.alphas, rep.labels, all, sigma) == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("dual feasibility holds after fitting") {
  std::mt19937_64 rng(4);
  std::vector<Code> pos, neg;
  for (int i = 0; i < 40; ++i) pos.push_back(random_code(rng, 8, 2));
  for (int i = 0; i < 30; ++i) neg.push_back(random_code(rng, 8, 4));
  const double C = 2.0;
  SvmFitReport rep;
  const auto det = fit_rbf_svm(pos, neg, 1.0, C, {}, &rep);
  double eq = 0.0;
  for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
    CHECK(rep.alphas[i] >= 0.0);
    CHECK(rep.alphas[i] <= C);
    eq += rep.alphas[i] * rep.labels[i];
  }
  CHECK(std::abs(eq) <= 1e-9);
  CHECK(rep.kkt_gap <= 1e-3);
  det.validate();
  CHECK(dual_objective(det) == doctest::Approx(objective(rep.alphas, rep.labels, [&] {
                                 auto v = pos;
                                 v.insert(v.end(), neg.begin(), neg.end());
                                 return v;
                               }(), 1.0)).epsilon(1e-9));
}

TEST_CASE("decision values of hand-built detectors") {
  RbfSvmDetector one;
  one.support_codes = {Code{{1, 2}}};
  one.dual_coeffs = {2.0};
  one.bias = -0.5;
  one.sigma = 1.0;
  CHECK(svm_decide(one, Code{{1, 2}}) == doctest::Approx(1.5));
  // distance^2 = 2 -> exp(-1)
  CHECK(svm_decide(one, Code{{0, 3}}) == doctest::Approx(2.0 * std::exp(-1.0) - 0.5));
  CHECK_FAILS_WITH(svm_decide(one, Code{{1}}), ErrorKind::Shape);

  RbfSvmDetector pair;
  pair.support_codes = {Code{{0}}, Code{{2}}};
  pair.dual_coeffs = {1.0, -1.0};
  pair.sigma = 1.0;
  CHECK(std::abs(svm_decide(pair, Code{{1}})) <= 1e-15);
  CHECK(svm_decide(pair, Code{{0}}) == doctest::Approx(-svm_decide(pair, Code{{2}})));

  // far from every support code only the bias is left
  const Vector far{1e3, 1e3};
  CHECK(svm_decide_real(one, far, 1.0) == doctest::Approx(-0.5));
  for (double g : svm_decide_gradient(one, far)) CHECK(std::abs(g) <= 1e-300);

  // analytic gradient at a nearby point
  const Vector c{1.5, 2.0};
  const Vector g = svm_decide_gradient(one, c);
  CHECK(g[0] == doctest::Approx(-2.0 * std::exp(-0.125) * 0.5));
  CHECK(g[1] == doctest::Approx(0.0));
}

TEST_CASE("confidence ratio") {
  CHECK(confidence_ratio(Vector{0.5, 0.3, 0.2}) == doctest::Approx(0.6));
  CHECK(confidence_ratio(Vector{0.25, 0.25, 0.5}) == doctest::Approx(0.5));
  CHECK(confidence_ratio(Vector{0.5, 0.5}) == 1.0);
  CHECK(confidence_ratio(Vector{1.0, 0.0}) == 0.0);
  CHECK_FAILS_WITH(confidence_ratio(Vector{1.0}), ErrorKind::Domain);
}

TEST_CASE("ANY and ALL combinators") {
  CHECK(detectors_flag(Vector{0.3, -0.1}, Combinator::Any));
  CHECK_FALSE(detectors_flag(Vector{0.3, -0.1}, Combinator::All));
  CHECK(detectors_flag(Vector{-0.3, -0.1}, Combinator::All));
  CHECK_FALSE(detectors_flag(Vector{0.3, 0.1}, Combinator::Any));
  CHECK_FALSE(detectors_flag(Vector{0.0}, Combinator::Any));
  CHECK_FALSE(detectors_flag(Vector{}, Combinator::Any));
  CHECK(combined_score(Vector{0.3, -0.1}, Combinator::Any) == -0.1);
  CHECK(combined_score(Vector{0.3, -0.1}, Combinator::All) == 0.3);
  CHECK(parse_combinator("all") == Combinator::All);
  CHECK_FAILS_WITH(parse_combinator("most"), ErrorKind::Config);
}

TEST_CASE("confidence rejection is strict") {
  // softmax(log 0.5, log 0.25) = (2/3, 1/3): ratio exactly 0.5
  SafetyNetPipeline p;
  p.classifier = testutil::linear_net({{0.0}, {0.0}}, {std::log(0.5), std::log(0.25)});
  p.rejection_ratio = 0.5;
  const Verdict v = safetynet_classify(p, Vector{0.3});
  CHECK(v.label == 0);
  CHECK(v.confidence_ratio == doctest::Approx(0.5).epsilon(1e-12));
  p.rejection_ratio = 0.5 + 1e-9;
  CHECK_FALSE(safetynet_classify(p, Vector{0.3}).rejected);
  p.rejection_ratio = 0.49;
  const Verdict r = safetynet_classify(p, Vector{0.3});
  CHECK(r.rejected);
  CHECK(r.reject_reason == RejectReason::Confidence);
}

TEST_CASE("detector serialization round trips") {
  std::mt19937_64 rng(12);
  std::vector<Code> pos, neg;
  for (int i = 0; i < 20; ++i) pos.push_back(random_code(rng, 6, 4));
  for (int i = 0; i < 20; ++i) neg.push_back(random_code(rng, 6, 4));
  DetectorStage st{Thresholds{1, {0.1, 0.2, 0.7}}, fit_rbf_svm(pos, neg, 0.37, 3.0)};
  st.svm.layer_index = 1;
  std::stringstream ss;
  write_detector(ss, st);
  const DetectorStage back = read_detector(ss);
  CHECK(back.thresholds == st.thresholds);
  CHECK(back.svm.support_codes == st.svm.support_codes);
  CHECK(back.svm.dual_coeffs == st.svm.dual_coeffs);
  CHECK(back.svm.bias == st.svm.bias);
  CHECK(back.svm.sigma == st.svm.sigma);
  for (const auto& c : pos) CHECK(svm_decide(back.svm, c) == svm_decide(st.svm, c));

  std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_detector(truncated), Error);
}

TEST_CASE("pipeline construction errors") {
  const Network net = make_network(std::vector<std::size_t>{2, 6, 3}, 1);
  Dataset ds{{{0.2, 0.3}, {0.7, 0.1}}, {0, 1}, 3};
  DetectorSpec spec;
  spec.layers = {0};
  CHECK_FAILS_WITH(build_detector_pipeline_from(net, ds, {}, spec), ErrorKind::InsufficientNegatives);
  spec.layers = {};
  CHECK_FAILS_WITH(build_detector_pipeline_from(net, ds, std::vector<Vector>{{0.5, 0.5}}, spec), ErrorKind::Config);
  CHECK_FAILS_WITH(fit_rbf_svm(std::vector{Code{{1}}}, std::vector<Code>{}, 1.0, 1.0), ErrorKind::Config);
  CHECK_FAILS_WITH((SigmaRule{SigmaRule::Kind::Fixed, 0.0}.resolve({})), ErrorKind::Config);
}

TEST_CASE("median pairwise distance skips duplicate codes") {
  const std::vector<Code> codes{{{0, 0}}, {{0, 0}}, {{3, 4}}, {{0, 4}}};
  // distinct: (0,0),(3,4),(0,4) -> distances 5, 4, 3
  CHECK(median_pairwise_distance(codes) == doctest::Approx(4.0));
  CHECK(median_pairwise_distance(std::vector<Code>{{{1}}, {{1}}}) == 1.0);
}
