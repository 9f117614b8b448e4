#include "churnlab/losses.hpp"

#include <cmath>
#include <sstream>

#include <doctest.h>

#include "churnlab/metrics.hpp"
#include "churnlab/rng.hpp"
#include "support.hpp"

using namespace churnlab;
using namespace churnlab::losses;
using testsupport::central_diff_grad;
using testsupport::max_rel_err;
using testsupport::random_batch;
using testsupport::random_labels;

namespace {

NodeId input_probs(Tape& tape, const std::vector<std::vector<double>>& rows) {
  Mat m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }
  }
  return tape.input(std::move(m));
}

double scalar(const Tape& tape, NodeId id) { return tape.value(id).at(0, 0); }

}  // namespace

TEST_CASE("ce_loss hand cases") {
  Tape tape;
  // perfect one-hot: loss collapses to the clamp residue
  const NodeId perfect = input_probs(tape, {{1.0, 0.0, 0.0}});
  const double l0 = scalar(tape, ce_loss(tape, perfect, LabelVector({0})));
  CHECK(l0 > 0.0);
  CHECK(l0 < 1e-5);

  const NodeId uniform = input_probs(tape, {{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  CHECK(scalar(tape, ce_loss(tape, uniform, LabelVector({1}))) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-9));

  const NodeId two = input_probs(tape, {{0.5, 0.5}, {0.25, 0.75}});
  const double l2 = scalar(tape, ce_loss(tape, two, LabelVector({0, 1})));
  CHECK(l2 == doctest::Approx(0.5 * (std::log(2.0) + std::log(4.0 / 3.0))).epsilon(1e-9));

  CHECK_THROWS_AS(ce_loss(tape, two, LabelVector({0, 2})), UsageError);
}

TEST_CASE("entropy regularizer endpoints and hand value") {
  Tape tape;
  const NodeId probs = input_probs(tape, {{0.7, 0.2, 0.1}});
  const LabelVector labels({0});

  // alpha = 0 is exactly the CE node
  const double ce = scalar(tape, ce_loss(tape, probs, labels));
  const double e0 = scalar(tape, entropy_regularized_loss(tape, probs, labels, 0.0));
  CHECK(e0 == ce);

  // alpha = 1 on uniform rows is ln K
  const NodeId uniform = input_probs(tape, {{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  CHECK(scalar(tape, entropy_regularized_loss(tape, uniform, labels, 1.0)) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // alpha = 0.3: 0.7*(-ln 0.7) + 0.3*H([0.7,0.2,0.1])
  const double h = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  const double expect = 0.7 * -std::log(0.7) + 0.3 * h;
  CHECK(scalar(tape, entropy_regularized_loss(tape, probs, labels, 0.3)) ==
        doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(0.490218).epsilon(1e-5));

  CHECK_THROWS_AS(entropy_regularized_loss(tape, probs, labels, 0.3, 4), UsageError);
}

TEST_CASE("skl regularizer endpoints and hand value") {
  Tape tape;
  const LabelVector labels({0});

  const NodeId uniform = input_probs(tape, {{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  CHECK(std::abs(scalar(tape, skl_regularized_loss(tape, uniform, labels, 1.0))) <= 1e-12);

  // K=2, [0.75,0.25]: SKL(row, Unif) = 0.25*ln 3
  const NodeId row = input_probs(tape, {{0.75, 0.25}});
  CHECK(scalar(tape, skl_regularized_loss(tape, row, labels, 1.0)) ==
        doctest::Approx(-0.25 * std::log(3.0)).epsilon(1e-9));

  const double ce = scalar(tape, ce_loss(tape, row, labels));
  CHECK(scalar(tape, skl_regularized_loss(tape, row, labels, 0.0)) == ce);
}

TEST_CASE("top-k restricts the regularizer to the renormalized head") {
  Tape tape;
  const NodeId probs = input_probs(tape, {{0.6, 0.3, 0.08, 0.02}});
  const LabelVector labels({0});
  // top-2 mass 0.9 -> renormalized [2/3, 1/3]
  const double h2 = -(2.0 / 3 * std::log(2.0 / 3) + 1.0 / 3 * std::log(1.0 / 3));
  const double got = scalar(tape, entropy_regularized_loss(tape, probs, labels, 1.0, 2));
  CHECK(got == doctest::Approx(h2).epsilon(1e-9));

  // SKL analogue compares against the uniform over the kept classes
  const double skl2 = (2.0 / 3 - 0.5) * std::log((2.0 / 3) / 0.5) +
                      (1.0 / 3 - 0.5) * std::log((1.0 / 3) / 0.5);
  const double got_skl = scalar(tape, skl_regularized_loss(tape, probs, labels, 1.0, 2));
  CHECK(got_skl == doctest::Approx(-skl2).epsilon(1e-9));
}

TEST_CASE("codistillation endpoints and the SKL hand value") {
  Tape tape;
  const NodeId p1 = input_probs(tape, {{0.75, 0.25}});
  const NodeId p2 = input_probs(tape, {{0.25, 0.75}});
  const LabelVector labels({0});

  const double ce1 = scalar(tape, ce_loss(tape, p1, labels));
  const double ce2 = scalar(tape, ce_loss(tape, p2, labels));

  // coupling off: exactly the sum of independent CE losses
  for (auto variant : {CodistillVariant::kL1, CodistillVariant::kSkl}) {
    CHECK(scalar(tape, codistill_loss(tape, p1, p2, labels, 0.0, variant)) == ce1 + ce2);
  }

  // identical distributions: disagreement term is zero
  CHECK(scalar(tape, codistill_loss(tape, p1, p1, labels, 1.0, CodistillVariant::kSkl)) ==
        doctest::Approx(2.0 * ce1).epsilon(1e-12));

  // SKL disagreement on the [0.75,0.25] vs [0.25,0.75] pair is ln 3
  const double skl_loss =
      scalar(tape, codistill_loss(tape, p1, p2, labels, 1.0, CodistillVariant::kSkl));
  CHECK(skl_loss == doctest::Approx(ce1 + ce2 + std::log(3.0)).epsilon(1e-9));
  CHECK(std::log(3.0) == doctest::Approx(1.098612).epsilon(1e-6));

  // L1 disagreement is |0.5| + |-0.5| = 1
  const double l1_loss =
      scalar(tape, codistill_loss(tape, p1, p2, labels, 1.0, CodistillVariant::kL1));
  CHECK(l1_loss == doctest::Approx(ce1 + ce2 + 1.0).epsilon(1e-9));

  Tape other;
  const NodeId small = input_probs(other, {{0.5, 0.5}, {0.5, 0.5}});
  const NodeId mismatched = input_probs(other, {{0.5, 0.5}});
  CHECK_THROWS_AS(
      codistill_loss(other, small, mismatched, LabelVector({0, 0}), 0.1, CodistillVariant::kSkl),
      UsageError);
}

TEST_CASE("joint SKL objective is symmetric in the two models") {
  KeyedRng rng(RngStream::kBlobs, 31);
  const auto a = testsupport::random_probs(rng, 8, 4);
  const auto b = testsupport::random_probs(rng, 8, 4);
  const auto labels = random_labels(rng, 8, 4);
  Tape t1, t2;
  const double l12 = scalar(
      t1, codistill_loss(t1, t1.input(Mat(8, 4, a.p)), t1.input(Mat(8, 4, b.p)), labels, 0.7,
                         CodistillVariant::kSkl));
  const double l21 = scalar(
      t2, codistill_loss(t2, t2.input(Mat(8, 4, b.p)), t2.input(Mat(8, 4, a.p)), labels, 0.7,
                         CodistillVariant::kSkl));
  CHECK(l12 == doctest::Approx(l21).epsilon(1e-12));
}

TEST_CASE("independent-update variant leaves the teacher side untouched") {
  // both models on one tape; model 1's loss uses the frozen value of model 2
  ModelParams m1 = ModelParams::init({2, 6, 3}, 100);
  ModelParams m2 = ModelParams::init({2, 6, 3}, 200);
  const std::size_t p = m1.param_count();
  KeyedRng rng(RngStream::kBlobs, 33);
  const Mat batch = random_batch(rng, 5, 2);
  const auto labels = random_labels(rng, 5, 3);

  Tape tape;
  const NodeId probs1 = mlp_probs_node(tape, m1, batch, 0);
  const NodeId probs2 = mlp_probs_node(tape, m2, batch, p);
  const Mat& frozen = tape.value(probs2);
  ProbMatrix teacher(frozen.rows, frozen.cols);
  teacher.p = frozen.v;
  const NodeId loss1 = codistill_ce_independent_loss(tape, probs1, teacher, labels, 0.5);
  const auto grads = compute_gradients(tape, loss1);
  REQUIRE(grads.size() == 2 * p);
  for (std::size_t i = 0; i < p; ++i) {
    REQUIRE(grads[p + i] == 0.0);  // teacher-side parameters get exactly zero
  }
  // the student side does receive signal
  double student_norm = 0.0;
  for (std::size_t i = 0; i < p; ++i) student_norm += std::abs(grads[i]);
  CHECK(student_norm > 0.0);
}

TEST_CASE("combined objective endpoints") {
  Tape tape;
  const NodeId p1 = input_probs(tape, {{0.7, 0.3}});
  const NodeId p2 = input_probs(tape, {{0.4, 0.6}});
  const LabelVector labels({0});

  const double codist =
      scalar(tape, codistill_loss(tape, p1, p2, labels, 0.3, CodistillVariant::kSkl));
  CHECK(scalar(tape, combined_loss(tape, p1, p2, labels, 0.0, 0.3, CombinedReg::kEntropy)) ==
        codist);

  // beta=0, entropy kind: CE sum plus alpha * (H1 + H2), the additive form
  const double ce_sum =
      scalar(tape, codistill_loss(tape, p1, p2, labels, 0.0, CodistillVariant::kSkl));
  const double h1 = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
  const double h2 = -(0.4 * std::log(0.4) + 0.6 * std::log(0.6));
  const double got =
      scalar(tape, combined_loss(tape, p1, p2, labels, 0.2, 0.0, CombinedReg::kEntropy));
  CHECK(got == doctest::Approx(ce_sum + 0.2 * (h1 + h2)).epsilon(1e-9));
}

TEST_CASE("ramp schedules") {
  RampSchedule linear{0.04, 0.001, RampSchedule::Style::kLinear, 0};
  CHECK(coefficient_at(linear, 10) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(coefficient_at(linear, 0) == 0.0);
  CHECK(coefficient_at(linear, 1000000) == 0.04);

  RampSchedule step{0.04, 0.0, RampSchedule::Style::kStep, 100};
  CHECK(coefficient_at(step, 99) == 0.0);
  CHECK(coefficient_at(step, 100) == 0.04);

  // nondecreasing, capped
  double prev = -1.0;
  for (int t = 0; t < 200; ++t) {
    const double c = coefficient_at(linear, t);
    REQUIRE(c >= prev);
    REQUIRE(c <= linear.cap);
    prev = c;
  }
}

TEST_CASE("distillation loss hand cases") {
  // teacher == student at tau=1: loss is the (clamped) teacher entropy
  Tape tape;
  const NodeId student = input_probs(tape, {{0.7, 0.2, 0.1}});
  ProbMatrix teacher(1, 3);
  teacher.p = {0.7, 0.2, 0.1};
  const double h = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  CHECK(scalar(tape, distill_loss(tape, student, teacher, 1.0)) ==
        doctest::Approx(h).epsilon(1e-6));

  // one-hot teacher at tau=1 reduces to CE against the teacher argmax
  ProbMatrix onehot(1, 3);
  onehot.p = {1.0, 0.0, 0.0};
  const double ce = scalar(tape, ce_loss(tape, student, LabelVector({0})));
  CHECK(scalar(tape, distill_loss(tape, student, onehot, 1.0)) ==
        doctest::Approx(ce).epsilon(1e-4));

  CHECK_THROWS_AS(distill_loss(tape, student, onehot, 0.0), UsageError);
  CHECK_THROWS_AS(distill_loss(tape, student, onehot, -1.0), UsageError);
}

TEST_CASE("distillation softening matches the logit form") {
  // student probs from logits [2,0]; softened at tau=3 must equal
  // softmax([2,0]/3) = [e^(2/3), 1] / Z
  const double e2 = std::exp(2.0);
  Tape tape;
  const NodeId student = input_probs(tape, {{e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)}});
  // use a uniform teacher so the loss exposes log(softened student) directly
  ProbMatrix teacher(1, 2);
  teacher.p = {0.5, 0.5};
  const double got = scalar(tape, distill_loss(tape, student, teacher, 3.0));

  const double s0 = std::exp(2.0 / 3.0), s1 = 1.0;
  const double z = s0 + s1;
  const double expect = -(0.5 * std::log(s0 / z) + 0.5 * std::log(s1 / z));
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("all differentiable objectives pass the central-difference check") {
  KeyedRng rng(RngStream::kBlobs, 55);
  const Mat batch = random_batch(rng, 4, 2);
  const auto labels = random_labels(rng, 4, 3);

  enum Obj { kEnt, kEntTopK, kSkl, kSklTopK, kL1, kSklPair, kCombined, kDistill };
  for (Obj obj : {kEnt, kEntTopK, kSkl, kSklTopK, kL1, kSklPair, kCombined, kDistill}) {
    ModelParams m1 = ModelParams::init({2, 6, 3}, 300 + obj);
    ModelParams m2 = ModelParams::init({2, 6, 3}, 400 + obj);
    ProbMatrix teacher = testsupport::random_probs(rng, 4, 3);
    const std::size_t p_count = m1.param_count();

    const auto build = [&](Tape& t) -> NodeId {
      const NodeId probs1 = mlp_probs_node(t, m1, batch, 0);
      switch (obj) {
        case kEnt: return entropy_regularized_loss(t, probs1, labels, 0.3);
        case kEntTopK: return entropy_regularized_loss(t, probs1, labels, 0.3, 2);
        case kSkl: return skl_regularized_loss(t, probs1, labels, 0.2);
        case kSklTopK: return skl_regularized_loss(t, probs1, labels, 0.2, 2);
        case kL1:
          return codistill_loss(t, probs1, mlp_probs_node(t, m2, batch, p_count), labels, 0.5,
                                CodistillVariant::kL1);
        case kSklPair:
          return codistill_loss(t, probs1, mlp_probs_node(t, m2, batch, p_count), labels, 0.5,
                                CodistillVariant::kSkl);
        case kCombined:
          return combined_loss(t, probs1, mlp_probs_node(t, m2, batch, p_count), labels, 0.2,
                               0.04, CombinedReg::kEntropy);
        case kDistill: return distill_loss(t, probs1, teacher, 2.5);
      }
      return 0;
    };

    Tape tape;
    const NodeId loss = build(tape);
    const auto grads = compute_gradients(tape, loss);

    const bool pair = obj == kL1 || obj == kSklPair || obj == kCombined;
    const auto eval = [&] {
      Tape t;
      return t.value(build(t)).at(0, 0);
    };
    auto fd1 = central_diff_grad(m1, eval);
    std::vector<double> g1(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(p_count));
    REQUIRE(max_rel_err(g1, fd1) <= 1e-5);
    if (pair) {
      auto fd2 = central_diff_grad(m2, eval);
      std::vector<double> g2(grads.begin() + static_cast<std::ptrdiff_t>(p_count), grads.end());
      REQUIRE(max_rel_err(g2, fd2) <= 1e-5);
    }
  }
}

TEST_CASE("method spec validation") {
  MethodSpec s;
  s.kind = MethodKind::kBaseline;
  s.alpha = 0.1;
  CHECK_THROWS_AS(s.validate(3), ConfigError);
  s.alpha = 0.0;
  CHECK_NOTHROW(s.validate(3));

  MethodSpec e;
  e.kind = MethodKind::kEntropy;
  e.alpha = 0.3;
  e.top_k = 5;
  CHECK_THROWS_AS(e.validate(3), ConfigError);  // top_k > K
  e.top_k = 2;
  CHECK_NOTHROW(e.validate(3));
  e.beta = 0.1;
  CHECK_THROWS_AS(e.validate(3), ConfigError);

  CHECK(parse_method_kind("codistill_skl") == MethodKind::kCodistillSkl);
  CHECK_THROWS_AS(parse_method_kind("nope"), ConfigError);
}

TEST_CASE("landscape scan samples the stated curve values") {
  const double alphas[] = {0.0, 1.0};
  const double taus[] = {2.0};
  const double ps[] = {0.5};
  const auto samples = landscape_scan(alphas, taus, ps);
  REQUIRE(samples.size() == 3);

  // alpha=0, p=0.5 -> ln 2; alpha=1, p=0.5 -> H_bin(0.5) = ln 2
  CHECK(samples[0].kind == "entropy_log_loss");
  CHECK(samples[0].loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(samples[1].loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // tau=2, f=logit(0.5)=0 -> -ln sigmoid(0) = ln 2
  CHECK(samples[2].kind == "tempered_logistic");
  CHECK(samples[2].x == 0.0);
  CHECK(samples[2].loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  std::ostringstream csv;
  write_curves_csv(csv, samples);
  CHECK(csv.str().rfind("kind,param,x,loss\n", 0) == 0);

  const double bad_p[] = {0.0};
  CHECK_THROWS_AS(landscape_scan(alphas, taus, bad_p), UsageError);
}
