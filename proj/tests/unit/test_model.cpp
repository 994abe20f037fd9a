#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace swaux;

namespace {

Tensor image(std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    return oracle::random_tensor({3, size, size}, rng, 0.0, 1.0);
}

double grad_norm_of_stage(const SegModel& m, int stage) {
    double sq = 0.0;
    for (const auto& p : m.parameters())
        if (p.group == ParamGroup::encoder && p.stage == stage)
            for (double g : p.tensor.grad_or_zero()) sq += g * g;
    return sq;
}

}  // namespace

TEST(Encoder, StageSizesAt64) {
    SegModel m;
    auto feats = m.encoder_forward(image(64, 1));
    ASSERT_EQ(feats.size(), 4u);
    const std::size_t sizes[] = {16, 8, 4, 2};
    const std::size_t chans[] = {16, 32, 64, 96};
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(feats[k].shape(), (Shape{chans[k], sizes[k], sizes[k]}));
}

TEST(Encoder, StageSizesAt96) {
    SegModel m;
    auto feats = m.encoder_forward(image(96, 2));
    const std::size_t sizes[] = {24, 12, 6, 3};
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(feats[k].dim(1), sizes[k]);
}

TEST(Encoder, RejectsIndivisibleInput) {
    SegModel m;
    EXPECT_THROW(m.encoder_forward(image(48, 3)), ShapeError);
    EXPECT_THROW(m.encoder_forward(Tensor::zeros({1, 64, 64})), ShapeError);
}

TEST(Encoder, BlockTypesShareShapes) {
    EncoderConfig conv_cfg;
    conv_cfg.block_type = BlockType::conv;
    SegModel a, b(conv_cfg);
    const Tensor x = image(64, 4);
    auto fa = a.encoder_forward(x), fb = b.encoder_forward(x);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(fa[k].shape(), fb[k].shape());
    EXPECT_EQ(a(x).shape(), b(x).shape());
}

TEST(AuxHead, ZeroFeatureGivesZeroLogits) {
    SegModel m;
    Tensor y = m.aux_head_forward(Tensor::zeros({32, 8, 8}), 2);
    ASSERT_EQ(y.shape(), (Shape{1, 8, 8}));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(AuxHead, ResolutionPerStage) {
    SegModel m;
    auto out = m.forward(image(64, 5), {1, 2, 3, 4});
    EXPECT_EQ(out.aux_logits.at(1).shape(), (Shape{1, 16, 16}));
    EXPECT_EQ(out.aux_logits.at(2).shape(), (Shape{1, 8, 8}));
    EXPECT_EQ(out.aux_logits.at(3).shape(), (Shape{1, 4, 4}));
    EXPECT_EQ(out.aux_logits.at(4).shape(), (Shape{1, 2, 2}));
}

TEST(AuxHead, StageOutOfRange) {
    SegModel m;
    EXPECT_THROW(m.aux_head_forward(Tensor::zeros({16, 4, 4}), 0), std::out_of_range);
    EXPECT_THROW(m.aux_head_forward(Tensor::zeros({16, 4, 4}), 5), std::out_of_range);
    EXPECT_THROW(m.forward(image(64, 6), {7}), std::out_of_range);
}

TEST(AuxHead, Stage2LossReachesOnlyStages1And2) {
    SegModel m(EncoderConfig{}, 9);
    Rng rng(10);
    const Tensor mask = oracle::random_mask({1, 64, 64}, rng, 0.2);
    auto out = m.forward(image(64, 11), {2});
    m.zero_grad();
    composite_loss(out.main_logits, out.aux_logits, mask, 2, 1.0, /*detach_main=*/true).total.backward();
    EXPECT_GT(grad_norm_of_stage(m, 1), 0.0);
    EXPECT_GT(grad_norm_of_stage(m, 2), 0.0);
    EXPECT_EQ(grad_norm_of_stage(m, 3), 0.0);
    EXPECT_EQ(grad_norm_of_stage(m, 4), 0.0);
    for (const auto& p : m.parameters()) {
        double sq = 0.0;
        for (double g : p.tensor.grad_or_zero()) sq += g * g;
        if (p.group == ParamGroup::decoder || (p.group == ParamGroup::aux_head && p.stage != 2)) EXPECT_EQ(sq, 0.0) << p.name;
        if (p.group == ParamGroup::aux_head && p.stage == 2) EXPECT_GT(sq, 0.0);
    }
}

TEST(AuxHead, ReachabilityFollowsStageForEveryTap) {
    for (int b = 1; b <= 4; ++b) {
        SegModel m(EncoderConfig{}, 12);
        Rng rng(13);
        const Tensor mask = oracle::random_mask({1, 64, 64}, rng, 0.2);
        auto out = m.forward(image(64, 14), {b});
        m.zero_grad();
        composite_loss(out.main_logits, out.aux_logits, mask, b, 1.0, true).total.backward();
        for (int k = 1; k <= 4; ++k) {
            if (k <= b)
                EXPECT_GT(grad_norm_of_stage(m, k), 0.0) << "tap " << b << " stage " << k;
            else
                EXPECT_EQ(grad_norm_of_stage(m, k), 0.0) << "tap " << b << " stage " << k;
        }
    }
}

TEST(Model, MainLogitsAtInputResolution) {
    SegModel m;
    auto out = m.forward(image(64, 15), {2});
    EXPECT_EQ(out.main_logits.shape(), (Shape{1, 64, 64}));
    ASSERT_EQ(out.aux_logits.size(), 1u);
    EXPECT_EQ(out.aux_logits.count(2), 1u);
    EXPECT_TRUE(m.forward(image(64, 15)).aux_logits.empty());
}

TEST(Model, ForwardIsPure) {
    SegModel m(EncoderConfig{}, 16);
    const Tensor x = image(64, 17);
    auto a = m.forward(x, {1}), b = m.forward(x, {1});
    EXPECT_TRUE(oracle::bitwise_equal(a.main_logits.values(), b.main_logits.values()));
    EXPECT_TRUE(oracle::bitwise_equal(a.aux_logits.at(1).values(), b.aux_logits.at(1).values()));
}

TEST(Model, DefaultParameterBudget) {
    SegModel m;
    EXPECT_LE(m.parameter_count(), 100000u);
    EXPECT_EQ(m.parameter_count(), 99653u);
}

TEST(Model, SeedControlsInit) {
    SegModel a(EncoderConfig{}, 1), b(EncoderConfig{}, 1), c(EncoderConfig{}, 2);
    EXPECT_TRUE(oracle::bitwise_equal(a.parameters()[0].tensor.values(), b.parameters()[0].tensor.values()));
    EXPECT_FALSE(oracle::bitwise_equal(a.parameters()[0].tensor.values(), c.parameters()[0].tensor.values()));
}

TEST(Model, CloneCopiesValuesNotHandles) {
    SegModel a(EncoderConfig{}, 3);
    SegModel b = a.clone();
    b.parameters()[0].tensor.mutable_values()[0] += 1.0;
    EXPECT_NE(a.parameters()[0].tensor[0], b.parameters()[0].tensor[0]);
    EXPECT_EQ(a.parameters()[1].tensor[0], b.parameters()[1].tensor[0]);
}

TEST(Model, ConfigValidation) {
    EncoderConfig c;
    c.blocks_per_stage = 0;
    EXPECT_THROW(SegModel{c}, std::invalid_argument);
    EXPECT_THROW(parse_block_type("mlp"), std::invalid_argument);
    EXPECT_EQ(EncoderConfig{}.total_stride(), 32u);
}

class ModelGradient : public ::testing::TestWithParam<std::tuple<BlockType, int>> {};

TEST_P(ModelGradient, TinyModelEveryCoordinate) {
    const auto [bt, stage] = GetParam();
    const auto r = oracle::check_model(oracle::tiny_config(bt), 32, stage, 21);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
    EXPECT_GT(r.coordinates, 500u);
}

INSTANTIATE_TEST_SUITE_P(BlocksAndTaps, ModelGradient,
                         ::testing::Combine(::testing::Values(BlockType::attention, BlockType::conv), ::testing::Values(1, 2, 4)),
                         [](const auto& info) {
                             return to_string(std::get<0>(info.param)) + "_aux" + std::to_string(std::get<1>(info.param));
                         });

TEST(ModelGradientDefault, SampledCoordinates) {
    const auto r = oracle::check_model(EncoderConfig{}, 64, 2, 22, 4);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
}
