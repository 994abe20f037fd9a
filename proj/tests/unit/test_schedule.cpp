#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"

using namespace swaux;

namespace {

std::vector<NamedParam> scalar_param(double value, double grad) {
    Tensor t = Tensor::scalar(value);
    t.set_requires_grad(true);
    t.mutable_grad()[0] = grad;
    return {NamedParam{"w", ParamGroup::encoder, 1, t}};
}

}  // namespace

TEST(AuxStageForEpoch, SwitchedAtHalfOf120) {
    const Regime r = SwitchedAux{};
    EXPECT_EQ(aux_stage_for_epoch(r, 0, 120), 2);
    EXPECT_EQ(aux_stage_for_epoch(r, 59, 120), 2);
    EXPECT_EQ(aux_stage_for_epoch(r, 60, 120), 1);
    EXPECT_EQ(aux_stage_for_epoch(r, 119, 120), 1);
}

TEST(AuxStageForEpoch, ExactlyOneTransition) {
    for (int total : {1, 2, 3, 7, 24, 30, 120}) {
        int transitions = 0;
        for (int e = 1; e < total; ++e)
            transitions += aux_stage_for_epoch(SwitchedAux{}, e, total) != aux_stage_for_epoch(SwitchedAux{}, e - 1, total);
        EXPECT_EQ(transitions, total >= 2 ? 1 : 0) << total;
        for (int e = 0; e < total; ++e) {
            EXPECT_FALSE(aux_stage_for_epoch(NormalRegime{}, e, total).has_value());
            EXPECT_EQ(aux_stage_for_epoch(SingleAux{3}, e, total), 3);
        }
    }
}

TEST(AuxStageForEpoch, SingleAndNormal) {
    EXPECT_EQ(aux_stage_for_epoch(SingleAux{2}, 23, 24), 2);
    EXPECT_FALSE(aux_stage_for_epoch(NormalRegime{}, 5, 24).has_value());
}

TEST(AuxStageForEpoch, ReversedDirectionAndFraction) {
    const Regime r = SwitchedAux{1, 2, 0.25};
    EXPECT_EQ(switch_epoch(std::get<SwitchedAux>(r), 24), 6);
    EXPECT_EQ(aux_stage_for_epoch(r, 5, 24), 1);
    EXPECT_EQ(aux_stage_for_epoch(r, 6, 24), 2);
}

TEST(AuxStageForEpoch, EpochOutOfRange) {
    EXPECT_THROW(aux_stage_for_epoch(SwitchedAux{}, -1, 10), std::out_of_range);
    EXPECT_THROW(aux_stage_for_epoch(SwitchedAux{}, 10, 10), std::out_of_range);
}

TEST(Regime, ParseAndValidate) {
    EXPECT_EQ(to_string(parse_regime("normal")), "normal");
    EXPECT_EQ(to_string(parse_regime("single:3")), "single:3");
    EXPECT_EQ(to_string(parse_regime("switched")), "switched:2:1:0.5");
    EXPECT_EQ(to_string(parse_regime("switched:1:2:0.25")), "switched:1:2:0.25");
    EXPECT_THROW(parse_regime("single:5"), std::out_of_range);
    EXPECT_THROW(parse_regime("switched:2:1:1.0"), std::invalid_argument);
    EXPECT_THROW(parse_regime("sometimes"), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    auto p = scalar_param(0.75, 0.0);
    OptState s = OptState::for_params(p, 1e-3);
    for (int i = 0; i < 5; ++i) adam_step(p, s);
    EXPECT_EQ(p[0].tensor[0], 0.75);
}

TEST(Adam, FirstStepClosedForm) {
    auto p = scalar_param(0.0, 0.5);
    OptState s = OptState::for_params(p, 1e-3);
    adam_step(p, s);
    EXPECT_NEAR(p[0].tensor[0], -1e-3 * 0.5 / (0.5 + 1e-8), 1e-18);
    EXPECT_NEAR(p[0].tensor[0], -9.9999998e-4, 1e-13);
}

TEST(Adam, TwoStepsMatchScalarTrace) {
    auto p = scalar_param(1.0, 0.5);
    OptState s = OptState::for_params(p, 1e-3);
    const double g[] = {0.5, -0.2};
    // Hand-rolled reference trace.
    double x = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        p[0].tensor.mutable_grad()[0] = g[t - 1];
        adam_step(p, s);
        m = 0.9 * m + 0.1 * g[t - 1];
        v = 0.999 * v + 0.001 * g[t - 1] * g[t - 1];
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        x -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(p[0].tensor[0], x, 1e-15) << "step " << t;
    }
    EXPECT_EQ(s.step, 2);
}

TEST(Adam, NanGradientNamesParameter) {
    auto p = scalar_param(0.0, std::numeric_limits<double>::quiet_NaN());
    OptState s = OptState::for_params(p, 1e-3);
    try {
        adam_step(p, s);
        FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
    }
    EXPECT_EQ(p[0].tensor[0], 0.0);
}

TEST(Adam, GradientClipBoundsGlobalNorm) {
    auto clipped = scalar_param(0.0, 100.0);
    OptState s = OptState::for_params(clipped, 1.0);
    AdamConfig cfg;
    cfg.grad_clip = 1.0;
    adam_step(clipped, s, cfg);
    EXPECT_NEAR(s.m[0][0], 0.1 * 1.0, 1e-15);
}

TEST(Plateau, ImprovingMetricsKeepLr) {
    OptState s;
    s.lr = 1e-3;
    for (int e = 0; e < 20; ++e) EXPECT_FALSE(plateau_step(s, 0.1 + 0.01 * e));
    EXPECT_EQ(s.lr, 1e-3);
}

TEST(Plateau, SevenStaleEpochsHalveOnce) {
    OptState s;
    s.lr = 1e-3;
    plateau_step(s, 0.5);
    int reductions = 0;
    for (int e = 0; e < 7; ++e) reductions += plateau_step(s, 0.5);
    EXPECT_EQ(reductions, 1);
    EXPECT_EQ(s.lr, 5e-4);
}

TEST(Plateau, MinDeltaCountsTinyGainsAsStale) {
    OptState s;
    s.lr = 1e-3;
    plateau_step(s, 0.5);
    for (int e = 1; e <= 6; ++e) plateau_step(s, 0.5 + 0.5e-4 * e / 6.0);
    EXPECT_EQ(s.lr, 5e-4);
}

TEST(Plateau, ClampsAtMinLr) {
    OptState s;
    s.lr = 1e-7;
    plateau_step(s, 0.5);
    for (int e = 0; e < 30; ++e) EXPECT_FALSE(plateau_step(s, 0.1));
    EXPECT_EQ(s.lr, 1e-7);
    OptState t;
    t.lr = 1.5e-7;
    plateau_step(t, 0.5);
    for (int e = 0; e < 6; ++e) plateau_step(t, 0.1);
    EXPECT_EQ(t.lr, 1e-7);
}

TEST(Plateau, LrNeverIncreases) {
    Rng rng(1);
    OptState s;
    s.lr = 1e-2;
    double prev = s.lr;
    for (int e = 0; e < 500; ++e) {
        plateau_step(s, rng.uniform());
        EXPECT_LE(s.lr, prev);
        EXPECT_GT(s.lr, 0.0);
        prev = s.lr;
    }
}
