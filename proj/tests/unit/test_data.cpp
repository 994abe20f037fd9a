#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <set>

#include "oracles.hpp"

using namespace swaux;

namespace {

std::vector<Sample> organ_counts(std::map<Organ, int> counts) {
    std::vector<Sample> out;
    for (auto [o, n] : counts)
        for (int i = 0; i < n; ++i) {
            Sample s;
            s.organ = o;
            s.id = static_cast<int>(out.size());
            out.push_back(s);
        }
    return out;
}

/// Mean equivalent radius sqrt(area / pi) of 4-connected foreground components.
double mean_component_radius(const Tensor& mask) {
    const std::size_t h = mask.dim(1), w = mask.dim(2);
    std::vector<int> label(h * w, -1);
    std::vector<double> radii;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (mask[start] < 0.5 || label[start] >= 0) continue;
        std::vector<std::size_t> stack{start};
        label[start] = 1;
        std::size_t area = 0;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++area;
            const std::size_t y = i / w, x = i % w;
            const std::pair<long, long> nb[] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
            for (auto [dy, dx] : nb) {
                const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
                if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
                const std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                if (mask[j] > 0.5 && label[j] < 0) {
                    label[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        radii.push_back(std::sqrt(static_cast<double>(area) / std::numbers::pi));
    }
    double s = 0.0;
    for (double r : radii) s += r;
    return radii.empty() ? 0.0 : s / static_cast<double>(radii.size());
}

std::array<double, 3> rgb_means(const Tensor& img) {
    const std::size_t n = img.dim(1) * img.dim(2);
    std::array<double, 3> m{};
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) m[c] += img[c * n + i];
        m[c] /= static_cast<double>(n);
    }
    return m;
}

double distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST(Generator, Deterministic) {
    for (auto o : kAllOrgans)
        for (auto d : kAllDomains) {
            Sample a = generate_synthetic_sample(77, o, d, 64), b = generate_synthetic_sample(77, o, d, 64);
            EXPECT_TRUE(oracle::bitwise_equal(a.image.values(), b.image.values()));
            EXPECT_TRUE(oracle::bitwise_equal(a.mask.values(), b.mask.values()));
        }
}

TEST(Generator, ShapesRangesAndSizeContract) {
    Sample s = generate_synthetic_sample(1, Organ::spleen, Domain::hubmap, 96);
    EXPECT_EQ(s.image.shape(), (Shape{3, 96, 96}));
    EXPECT_EQ(s.mask.shape(), (Shape{1, 96, 96}));
    for (double v : s.image.values()) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    for (double v : s.mask.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_THROW(generate_synthetic_sample(1, Organ::lung, Domain::hpa, 50), std::invalid_argument);
    EXPECT_THROW(generate_synthetic_sample(1, Organ::lung, Domain::hpa, 0), std::invalid_argument);
}

TEST(Generator, ForegroundFractionSweep) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const Organ o = kAllOrgans[seed % 5];
        const Domain d = kAllDomains[(seed / 5) % 2];
        const double f = foreground_fraction(generate_synthetic_sample(seed, o, d, 64).mask);
        ASSERT_GE(f, kMinForeground) << seed;
        ASSERT_LE(f, kMaxForeground) << seed;
    }
}

TEST(Generator, MaskIndependentOfDomain) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Sample a = generate_synthetic_sample(seed, Organ::kidney, Domain::hpa, 64);
        Sample b = generate_synthetic_sample(seed, Organ::kidney, Domain::hubmap, 64);
        EXPECT_TRUE(oracle::bitwise_equal(a.mask.values(), b.mask.values()));
        EXPECT_FALSE(oracle::bitwise_equal(a.image.values(), b.image.values()));
    }
}

TEST(Generator, LungBlobsSmallerThanKidney) {
    double lung = 0.0, kidney = 0.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        lung += mean_component_radius(generate_synthetic_sample(seed, Organ::lung, Domain::hpa, 64).mask);
        kidney += mean_component_radius(generate_synthetic_sample(seed, Organ::kidney, Domain::hpa, 64).mask);
    }
    EXPECT_LT(lung / 200, kidney / 200);
    EXPECT_LT(organ_style(Organ::lung).max_radius, organ_style(Organ::kidney).min_radius);
}

TEST(Generator, DatasetLayout) {
    DatasetSpec spec;
    spec.per_organ = 4;
    const auto ds = generate_dataset(spec);
    ASSERT_EQ(ds.size(), 20u);
    std::map<Organ, int> counts;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(ds[i].id, static_cast<int>(i));
        ++counts[ds[i].organ];
    }
    for (auto o : kAllOrgans) EXPECT_EQ(counts[o], 4);
}

TEST(KFold, EvenCountsPerOrgan) {
    const auto samples = organ_counts({{Organ::kidney, 10}, {Organ::large_intestine, 10}, {Organ::lung, 10},
                                       {Organ::prostate, 10}, {Organ::spleen, 10}});
    const FoldSplit split = stratified_kfold(samples, 5, 3);
    ASSERT_EQ(split.folds.size(), 5u);
    for (const auto& fold : split.folds) {
        std::map<Organ, int> c;
        for (int id : fold) ++c[samples[static_cast<std::size_t>(id)].organ];
        for (auto o : kAllOrgans) EXPECT_EQ(c[o], 2);
    }
}

TEST(KFold, ElevenSplitThreeTwoTwoTwoTwo) {
    const auto samples = organ_counts({{Organ::kidney, 11}, {Organ::lung, 7}});
    const FoldSplit split = stratified_kfold(samples, 5, 9);
    std::multiset<int> kidney;
    for (const auto& fold : split.folds) {
        int n = 0;
        for (int id : fold) n += samples[static_cast<std::size_t>(id)].organ == Organ::kidney;
        kidney.insert(n);
    }
    EXPECT_EQ(kidney, (std::multiset<int>{2, 2, 2, 2, 3}));
}

TEST(KFold, PartitionAndDeterminism) {
    const auto samples = organ_counts({{Organ::kidney, 8}, {Organ::lung, 13}, {Organ::spleen, 5}});
    const FoldSplit a = stratified_kfold(samples, 5, 4), b = stratified_kfold(samples, 5, 4);
    EXPECT_EQ(a.folds, b.folds);
    std::vector<int> all;
    for (const auto& f : a.folds) all.insert(all.end(), f.begin(), f.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expect(samples.size());
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect);
    for (std::size_t f = 0; f < 5; ++f) {
        auto tr = a.train_ids(f), va = a.val_ids(f);
        EXPECT_EQ(tr.size() + va.size(), samples.size());
        for (int id : va) EXPECT_FALSE(std::binary_search(tr.begin(), tr.end(), id));
    }
}

TEST(KFold, Errors) {
    EXPECT_THROW(stratified_kfold(organ_counts({{Organ::lung, 4}}), 5, 1), std::invalid_argument);
    EXPECT_THROW(stratified_kfold(organ_counts({{Organ::lung, 4}}), 1, 1), std::invalid_argument);
}

TEST(Augment, FlipMovesImageAndMaskTogether) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        AugmentPlan plan = draw_augment_plan(32, seed);
        plan.crop.reset();
        Rng rng(seed);
        const std::size_t r = static_cast<std::size_t>(rng.uniform_int(0, 31)), c = static_cast<std::size_t>(rng.uniform_int(0, 31));
        Tensor img = Tensor::zeros({3, 32, 32}), mask = Tensor::zeros({1, 32, 32});
        for (std::size_t ch = 0; ch < 3; ++ch) img.mutable_values()[(ch * 32 + r) * 32 + c] = 1.0;
        mask.mutable_values()[r * 32 + c] = 1.0;
        Tensor ai = apply_spatial(plan, img, false), am = apply_spatial(plan, mask, true);
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t i = 0; i < 32 * 32; ++i) EXPECT_EQ(ai[ch * 1024 + i], am[i]);
    }
}

TEST(Augment, HorizontalFlipMarker) {
    AugmentPlan plan;
    plan.hflip = true;
    Tensor mask = Tensor::zeros({1, 4, 4});
    mask.mutable_values()[1 * 4 + 0] = 1.0;
    EXPECT_EQ(apply_spatial(plan, mask, true)[1 * 4 + 3], 1.0);
}

TEST(Augment, SameSeedSameOutput) {
    Sample s = generate_synthetic_sample(5, Organ::prostate, Domain::hpa, 64);
    Sample a = augment(s, 123), b = augment(s, 123);
    EXPECT_TRUE(oracle::bitwise_equal(a.image.values(), b.image.values()));
    EXPECT_TRUE(oracle::bitwise_equal(a.mask.values(), b.mask.values()));
}

TEST(Augment, MasksStayBinaryAndMatchSpatialTransform) {
    Sample s = generate_synthetic_sample(6, Organ::kidney, Domain::hubmap, 64);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        Sample a = augment(s, seed);
        for (double v : a.mask.values()) ASSERT_TRUE(v == 0.0 || v == 1.0) << seed;
        for (double v : a.image.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0) << seed;
        const Tensor expect = apply_spatial(draw_augment_plan(64, seed), s.mask, true);
        ASSERT_EQ(dice_score(a.mask, expect), 1.0) << seed;
    }
}

TEST(Augment, PlanRespectsRanges) {
    int fired = 0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        const AugmentPlan p = draw_augment_plan(64, seed);
        EXPECT_LE(p.noise_sigma, 0.03);
        EXPECT_LE(std::abs(p.brightness), 0.15);
        EXPECT_LE(std::abs(p.contrast), 0.15);
        EXPECT_LE(std::abs(p.hue_shift), 0.05);
        if (p.crop) {
            EXPECT_GE(p.crop->side, 51u);
            EXPECT_LE(p.crop->y0 + p.crop->side, 64u);
            EXPECT_LE(p.crop->x0 + p.crop->side, 64u);
        }
        fired += p.hflip;
    }
    EXPECT_NEAR(fired / 2000.0, 0.5, 0.05);
}

TEST(ColorNormalize, SelfStatisticsAreAFixedPoint) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Sample s = generate_synthetic_sample(seed, kAllOrgans[seed % 5], kAllDomains[seed % 2], 64);
        Tensor out = color_normalize(s.image, color_stats(s.image));
        for (std::size_t i = 0; i < out.numel(); ++i) ASSERT_NEAR(out[i], s.image[i], 1e-9);
    }
}

TEST(ColorNormalize, MeansMatchTargetBeforeClamp) {
    const auto pool = generate_dataset({.per_organ = 2, .image_size = 64, .seed = 3});
    const ColorStats target = mosaic_target(pool);
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        Sample s = generate_synthetic_sample(seed, Organ::lung, kAllDomains[seed % 2], 64);
        const auto lab = color_transfer_lab(s.image, target);
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0.0;
            for (const auto& px : lab) m += px[c];
            EXPECT_NEAR(m / static_cast<double>(lab.size()), target.mean[c], 1e-6);
        }
    }
}

TEST(ColorNormalize, ConstantImageGetsMeanShiftOnly) {
    const ColorStats target{{-1.0, 0.01, 0.02}, {0.3, 0.05, 0.04}};
    const auto lab = color_transfer_lab(Tensor::full({3, 8, 8}, 0.4), target);
    for (const auto& px : lab)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(px[c], target.mean[c], 1e-12);
    EXPECT_THROW(color_normalize(Tensor::full({3, 8, 8}, 0.4), ColorStats{{0, 0, 0}, {0, 1, 1}}), std::invalid_argument);
}

TEST(ColorNormalize, LabRoundTrip) {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const std::array<double, 3> rgb{rng.uniform(), rng.uniform(), rng.uniform()};
        const auto back = lab_to_rgb(rgb_to_lab(rgb));
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(back[c], rgb[c], 1e-12);
    }
}

TEST(ColorNormalize, ShrinksDomainDistance) {
    const auto pool = generate_dataset({.per_organ = 4, .image_size = 64, .seed = 8});
    const ColorStats target = mosaic_target(pool);
    double before = 0.0, after = 0.0;
    int shrunk = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Organ o = kAllOrgans[seed % 5];
        Sample a = generate_synthetic_sample(1000 + seed, o, Domain::hpa, 64);
        Sample b = generate_synthetic_sample(1000 + seed, o, Domain::hubmap, 64);
        const double pre = distance(rgb_means(a.image), rgb_means(b.image));
        const double post = distance(rgb_means(color_normalize(a.image, target)), rgb_means(color_normalize(b.image, target)));
        before += pre;
        after += post;
        shrunk += post < pre;
    }
    EXPECT_LT(after, before);
    EXPECT_EQ(shrunk, 50);
}

TEST(Resize, ConstantStaysConstant) {
    Tensor r = resize_image(Tensor::full({3, 64, 64}, 0.3), 40);
    for (double v : r.values()) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(Resize, DownscaleShape) {
    Sample s = generate_synthetic_sample(2, Organ::spleen, Domain::hpa, 192);
    EXPECT_EQ(resize_image(s.image, 64).shape(), (Shape{3, 64, 64}));
    Tensor m = resize_mask(s.mask, 64);
    EXPECT_EQ(m.shape(), (Shape{1, 64, 64}));
    for (double v : m.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Resize, SmoothRoundTrip) {
    Tensor img = Tensor::zeros({3, 64, 64});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x)
                img.mutable_values()[(c * 64 + y) * 64 + x] =
                    0.5 + 0.2 * std::sin(2 * std::numbers::pi * (static_cast<double>(x) + 3.0 * c) / 32.0) *
                              std::cos(2 * std::numbers::pi * static_cast<double>(y) / 24.0);
    Tensor back = resize_image(resize_image(img, 128), 64);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.numel(); ++i) worst = std::max(worst, std::abs(back[i] - img[i]));
    EXPECT_LT(worst, 0.02);
}

TEST(ImageIo, DatasetRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "switchaux_io_test";
    std::filesystem::remove_all(dir);
    const auto ds = generate_dataset({.per_organ = 1, .image_size = 32, .seed = 4});
    write_dataset(dir, ds);
    const auto back = read_dataset(dir);
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back[i].id, ds[i].id);
        EXPECT_EQ(back[i].organ, ds[i].organ);
        EXPECT_EQ(back[i].domain, ds[i].domain);
        EXPECT_EQ(back[i].seed, ds[i].seed);
        EXPECT_TRUE(oracle::bitwise_equal(back[i].mask.values(), ds[i].mask.values()));
        for (std::size_t j = 0; j < ds[i].image.numel(); ++j) ASSERT_NEAR(back[i].image[j], ds[i].image[j], 0.5 / 255 + 1e-12);
    }
    std::filesystem::remove_all(dir);
}
