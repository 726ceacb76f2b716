// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mogu/errors.hpp"
#include "mogu/losses.hpp"
#include "support.hpp"

namespace mogu {
namespace {

InstructionRecord instr(Label label, int topic, std::vector<int> fillers = {26, 27}) {
  InstructionRecord r;
  r.label = label;
  r.tokens = {tok::kBos, label == Label::Benign ? tok::kBenignMarker : tok::kMaliciousMarker, topic};
  r.tokens.insert(r.tokens.end(), fillers.begin(), fillers.end());
  return r;
}

MaskedSequence seq(Label label, int topic, bool glad, std::vector<int> fillers = {26, 27}) {
  const auto in = instr(label, topic, std::move(fillers));
  return make_masked(
      PairRecord{in, glad ? glad_response(topic) : rejection_response(), make_pair_type(label, glad)});
}

ContrastiveSample glad_sample(int topic = 19) {
  return {seq(Label::Malicious, topic, true), seq(Label::Malicious, topic, false)};
}

ContrastiveSample unwill_sample(int topic = 11) {
  return {seq(Label::Benign, topic, false), seq(Label::Benign, topic, true)};
}

// -log softmax(logits[t])[target] summed by hand over masked rows.
double ce_oracle(const Tensor& logits, const std::vector<int>& targets, const std::vector<bool>& mask) {
  double total = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!mask[t]) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(t, j));
    total += std::log(z) - logits.at(t, static_cast<std::size_t>(targets[t]));
    ++n;
  }
  return total / n;
}

TEST(MakeMasked, MaskIsContiguousResponseSuffix) {
  const auto s = seq(Label::Malicious, 20, false);
  ASSERT_EQ(s.tokens.size(), s.response_mask.size());
  const std::size_t prompt = 5;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) EXPECT_EQ(s.response_mask[i], i >= prompt) << i;
  EXPECT_EQ(s.tokens.back(), tok::kEos);
  EXPECT_EQ(s.pair_type, PairType::MaliciousReject);
  EXPECT_EQ(s.label, Label::Malicious);
}

TEST(MaskedCe, PerfectLogitsGiveZero) {
  const std::vector<int> targets{2, 0, 1};
  std::vector<double> v(3 * 4, -1e3);
  for (std::size_t t = 0; t < 3; ++t) v[t * 4 + targets[t]] = 1e3;
  EXPECT_NEAR(masked_ce(Tensor::from({3, 4}, v), targets, {true, true, true}).item(), 0.0, 1e-9);
}

TEST(MaskedCe, UniformLogitsGiveLogVocab) {
  const std::vector<int> targets{5, 7};
  EXPECT_NEAR(masked_ce(Tensor::zeros({2, 32}), targets, {true, true}).item(), std::log(32.0), 1e-6);
}

TEST(MaskedCe, MatchesHandOracleAndIgnoresUnmaskedRows) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 2);
  std::vector<double> v(6 * 9);
  for (auto& x : v) x = nd(rng);
  const auto logits = Tensor::from({6, 9}, v);
  const std::vector<int> targets{0, 8, 3, 3, 1, 7};
  const std::vector<bool> mask{false, false, true, true, false, true};
  EXPECT_NEAR(masked_ce(logits, targets, mask).item(), ce_oracle(logits, targets, mask), 1e-12);
  EXPECT_THROW(masked_ce(logits, targets, std::vector<bool>(6, false)), ContractError);
}

TEST(SequenceCe, TeacherForcedAlignment) {
  const auto m = testing::random_model(1);
  const auto s = seq(Label::Benign, 12, true);
  const auto logits = forward(m, std::span<const int>(s.tokens).first(s.tokens.size() - 1), Mode::Glad).logits;
  const std::vector<int> targets(s.tokens.begin() + 1, s.tokens.end());
  const std::vector<bool> mask(s.response_mask.begin() + 1, s.response_mask.end());
  EXPECT_NEAR(sequence_ce(m, s, Mode::Glad).item(), ce_oracle(logits, targets, mask), 1e-12);
}

TEST(ResponderLoss, PlainEqualsMaskedCeOnOneSample) {
  const auto m = testing::random_model(2);
  const std::vector<ContrastiveSample> batch{glad_sample()};
  const double plain = responder_loss(m, batch, AdapterKind::Glad, ResponderVariant::Plain).item();
  EXPECT_DOUBLE_EQ(plain, sequence_ce(m, batch[0].positive, Mode::Glad).item());
}

TEST(ResponderLoss, ContrastiveIsRatioWithEpsilon) {
  const auto m = testing::random_model(3);
  const std::vector<ContrastiveSample> batch{unwill_sample(10), unwill_sample(14)};
  double expect = 0.0;
  for (const auto& s : batch) {
    expect += sequence_ce(m, s.positive, Mode::Unwill).item() /
              (sequence_ce(m, s.negative, Mode::Unwill).item() + kRatioEpsilon);
  }
  expect /= 2.0;
  EXPECT_NEAR(responder_loss(m, batch, AdapterKind::Unwill, ResponderVariant::Contrastive).item(), expect, 1e-14);
}

TEST(ResponderLoss, EqualPositiveAndNegativeGiveAboutOne) {
  const auto m = testing::random_model(4);
  auto s = glad_sample();
  auto same = s;
  same.negative.tokens = same.positive.tokens;
  same.negative.response_mask = same.positive.response_mask;
  const std::vector<ContrastiveSample> batch{same};
  const double ce = sequence_ce(m, s.positive, Mode::Glad).item();
  const double loss = responder_loss(m, batch, AdapterKind::Glad, ResponderVariant::Contrastive).item();
  EXPECT_NEAR(loss, ce / (ce + kRatioEpsilon), 1e-14);
  EXPECT_NEAR(loss, 1.0, 1e-5);
}

TEST(ResponderLoss, WrongPairTypesAreContractErrors) {
  const auto m = testing::random_model(5);
  const std::vector<ContrastiveSample> unwill{unwill_sample()};
  const std::vector<ContrastiveSample> glad{glad_sample()};
  EXPECT_THROW(responder_loss(m, unwill, AdapterKind::Glad, ResponderVariant::Plain), ContractError);
  EXPECT_THROW(responder_loss(m, glad, AdapterKind::Unwill, ResponderVariant::Contrastive), ContractError);
  EXPECT_THROW(responder_loss(m, glad, AdapterKind::Sft, ResponderVariant::Plain), ContractError);
  EXPECT_THROW(responder_loss(m, std::vector<ContrastiveSample>{}, AdapterKind::Glad, ResponderVariant::Plain),
               ContractError);
}

// The ratio falls when the positive CE falls with the negative held fixed.
TEST(ResponderLoss, ContrastiveMonotoneInPositiveProbability) {
  const std::vector<int> targets{1};
  const std::vector<bool> mask{true};
  const double neg = masked_ce(Tensor::matrix({{0.0, 0.0, 0.0}}), targets, mask).item();
  double previous = 1e300;
  for (double boost : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const double pos = masked_ce(Tensor::matrix({{0.0, boost, 0.0}}), targets, mask).item();
    const double ratio = pos / (neg + kRatioEpsilon);
    EXPECT_LT(ratio, previous);
    previous = ratio;
  }
}

TEST(RouterLoss, CeIsSizeWeightedMean) {
  const auto m = testing::random_model(6);
  const std::vector<MaskedSequence> batch{seq(Label::Benign, 10, true), seq(Label::Benign, 13, true),
                                          seq(Label::Malicious, 21, false)};
  double a = 0.0, b = 0.0;
  for (int i = 0; i < 2; ++i) a += sequence_ce(m, batch[i], Mode::MoGU).item();
  b = sequence_ce(m, batch[2], Mode::MoGU).item();
  EXPECT_NEAR(router_ce_loss(m, batch).item(), (a + b) / 3.0, 1e-14);
  EXPECT_NEAR(router_total_loss(m, batch, 0.0).item(), router_ce_loss(m, batch).item(), 1e-14);
}

TEST(RouterLoss, RejectsForbiddenPairTypes) {
  const auto m = testing::random_model(7);
  for (const auto& bad : {seq(Label::Benign, 10, false), seq(Label::Malicious, 20, true)}) {
    const std::vector<MaskedSequence> batch{seq(Label::Benign, 11, true), bad};
    EXPECT_THROW(router_ce_loss(m, batch), ContractError);
    EXPECT_THROW(router_total_loss(m, batch, 2.0), ContractError);
  }
}

RouterTrace constant_trace(double g, double u, std::size_t layers = 3, std::size_t positions = 4) {
  RouterTrace t;
  for (std::size_t l = 0; l < layers; ++l) {
    t.w_glad.push_back(Tensor::filled({positions, 1}, g));
    t.w_unwill.push_back(Tensor::filled({positions, 1}, u));
  }
  return t;
}

TEST(RouterL1, HandExamples) {
  EXPECT_DOUBLE_EQ(router_l1_loss(constant_trace(1.0, 0.0), Label::Benign).item(), 0.0);
  EXPECT_DOUBLE_EQ(router_l1_loss(constant_trace(1.0, 0.0), Label::Malicious).item(), 2.0);
  EXPECT_DOUBLE_EQ(router_l1_loss(constant_trace(0.5, 0.5), Label::Benign).item(), 1.0);
  EXPECT_THROW(router_l1_loss(RouterTrace{}, Label::Benign), ContractError);
}

TEST(RouterL1, ComplementaritySumsToTwo) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    RouterTrace t;
    const std::size_t layers = 1 + trial % 4, positions = 1 + trial % 7;
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<double> g(positions), w(positions);
      for (auto& x : g) x = u(rng);
      for (auto& x : w) x = u(rng);
      t.w_glad.push_back(Tensor::from({positions, 1}, g));
      t.w_unwill.push_back(Tensor::from({positions, 1}, w));
    }
    const double total = router_l1_loss(t, Label::Benign).item() + router_l1_loss(t, Label::Malicious).item();
    EXPECT_NEAR(total, 2.0, 1e-12);
  }
}

TEST(RouterTotal, ArithmeticOfTheTwoTerms) {
  const auto m = testing::random_model(9);
  const std::vector<MaskedSequence> batch{seq(Label::Benign, 15, true), seq(Label::Malicious, 22, false)};
  double ce = 0.0, l1 = 0.0;
  for (const auto& s : batch) {
    RouterTrace trace;
    ce += sequence_ce(m, s, Mode::MoGU, &trace).item();
    l1 += router_l1_loss(trace, s.label).item();
  }
  EXPECT_NEAR(router_total_loss(m, batch, 2.0).item(), ce / 2.0 + 2.0 * l1 / 2.0, 1e-13);
  // Loss1 = 1, Loss2 = 0.5, lambda = 2.
  EXPECT_DOUBLE_EQ(add(Tensor::scalar(1.0), scale(Tensor::scalar(0.5), 2.0)).item(), 2.0);
}

TEST(Losses, FiniteAndNonNegative) {
  const auto m = testing::random_model(10);
  const std::vector<ContrastiveSample> g{glad_sample(18), glad_sample(25)};
  const std::vector<ContrastiveSample> u{unwill_sample(16)};
  const std::vector<MaskedSequence> r{seq(Label::Benign, 17, true), seq(Label::Malicious, 24, false)};
  for (double v : {responder_loss(m, g, AdapterKind::Glad, ResponderVariant::Contrastive).item(),
                   responder_loss(m, u, AdapterKind::Unwill, ResponderVariant::Plain).item(),
                   router_ce_loss(m, r).item(), router_total_loss(m, r, 2.0).item()}) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
}

// Gradient checks on a d_model = 8, two-layer model with nonzero adapters
// and routers. Only the group each objective trains is perturbed. With losses
// of order one a 1e-5 step leaves roughly 1e-11 of rounding noise in each
// central difference, so a coordinate whose gradient is near 1e-7 can miss
// the relative bound while agreeing to eleven decimal places. Such entries
// are held to an absolute bound instead.
constexpr double kRelTol = 1e-5;
constexpr double kRoundingFloor = 1e-10;

bool agrees(const GradCheckEntry& e) {
  return e.rel_err < kRelTol || std::abs(e.analytic - e.numeric) < kRoundingFloor;
}
class LossGradients : public ::testing::TestWithParam<std::uint64_t> {};

GradCheckReport check_group(const MoguModel& m, const std::vector<NamedTensor>& group,
                            const std::function<Tensor()>& loss) {
  m.freeze_all();
  for (auto p : group) p.tensor.set_requires_grad(true);
  auto report = grad_check(loss, group);
  m.freeze_all();
  return report;
}

std::string describe(const GradCheckReport& r) {
  std::string out;
  for (const auto& e : r.per_param) {
    if (agrees(e)) continue;
    std::ostringstream line;
    line << "\n  " << e.name << "[" << e.index << "] analytic " << e.analytic << " numeric " << e.numeric;
    out += line.str();
  }
  return out;
}

TEST_P(LossGradients, ResponderAndRouterObjectives) {
  const auto m = testing::random_model(GetParam());
  const std::vector<ContrastiveSample> g{glad_sample(18 + static_cast<int>(GetParam() % 8))};
  const std::vector<ContrastiveSample> u{unwill_sample(10 + static_cast<int>(GetParam() % 8))};
  const std::vector<MaskedSequence> r{seq(Label::Benign, 12, true), seq(Label::Malicious, 23, false)};
  const auto glad = m.adapter_parameters(AdapterKind::Glad);
  const auto unwill = m.adapter_parameters(AdapterKind::Unwill);
  const auto routers = m.router_parameters();
  const struct {
    const char* name;
    const std::vector<NamedTensor>* group;
    std::function<Tensor()> fn;
  } cases[] = {
      {"glad plain", &glad, [&] { return responder_loss(m, g, AdapterKind::Glad, ResponderVariant::Plain); }},
      {"unwill plain", &unwill,
       [&] { return responder_loss(m, u, AdapterKind::Unwill, ResponderVariant::Plain); }},
      {"glad ratio", &glad,
       [&] { return responder_loss(m, g, AdapterKind::Glad, ResponderVariant::Contrastive); }},
      {"unwill ratio", &unwill,
       [&] { return responder_loss(m, u, AdapterKind::Unwill, ResponderVariant::Contrastive); }},
      {"router ce", &routers, [&] { return router_ce_loss(m, r); }},
      {"router total", &routers, [&] { return router_total_loss(m, r, 2.0); }},
  };
  for (const auto& c : cases) {
    const auto report = check_group(m, *c.group, c.fn);
    ASSERT_TRUE(report.finite) << c.name;
    for (const auto& e : report.per_param) EXPECT_TRUE(agrees(e)) << c.name << describe(report);
  }
  // The L1 term alone, differentiated through the trace.
  const auto l1 = check_group(m, routers, [&] {
    RouterTrace trace;
    sequence_ce(m, r[1], Mode::MoGU, &trace);
    return router_l1_loss(trace, Label::Malicious);
  });
  for (const auto& e : l1.per_param) EXPECT_TRUE(agrees(e)) << describe(l1);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradients, ::testing::Range<std::uint64_t>(0, 8));

}  // namespace
}  // namespace mogu
