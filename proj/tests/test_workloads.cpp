#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracle.hpp"
#include "tpusim/error.hpp"
#include "tpusim/workloads.hpp"

using namespace tpusim;
using namespace tpusim::workloads;

namespace {

// MACs by walking the full loop nest of one conv layer.
std::uint64_t conv_macs_loop(const ConvShape& c) {
    std::uint64_t n = 0;
    for (std::uint32_t oy = 0; oy < c.out_h(); ++oy)
        for (std::uint32_t ox = 0; ox < c.out_w(); ++ox)
            for (std::uint32_t m = 0; m < c.out_channels; ++m)
                for (std::uint32_t r = 0; r < c.kernel_h; ++r)
                    for (std::uint32_t s = 0; s < c.kernel_w; ++s)
                        for (std::uint32_t ch = 0; ch < c.in_channels; ++ch) ++n;
    return n;
}

std::string temp(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("tpusim_wl_" + name)).string();
}

} // namespace

TEST(Intensity, FcStackEqualsBatch) {
    for (std::uint32_t b : {1u, 2u, 7u, 64u, 200u, 1000u}) {
        WorkloadSpec ws{"fc", {fc(100, 300), fc(300, 50), fc(50, 10)}, b, 8};
        EXPECT_DOUBLE_EQ(operational_intensity(ws), double(b));
    }
    WorkloadSpec none{"v", {vector(16, isa::ActivationFn::Tanh)}, 4, 8};
    EXPECT_THROW(operational_intensity(none), Error);
}

TEST(Intensity, ConvReuse) {
    WorkloadSpec ws{"c", {conv(8, 8, 3, 3, 16, 16)}, 8, 8};
    const auto& shape = std::get<ConvShape>(ws.layers[0].shape);
    EXPECT_EQ(ws.layers[0].macs_per_sample(), conv_macs_loop(shape));
    EXPECT_DOUBLE_EQ(operational_intensity(ws), 8.0 * conv_macs_loop(shape) / ws.total_weight_bytes());
    EXPECT_DOUBLE_EQ(operational_intensity(ws), 1568.0);
}

TEST(Presets, MatchPublishedAggregates) {
    struct Row {
        const char* name;
        std::size_t layers;
        double weights;
        std::uint32_t batch;
    };
    for (const Row& r : {Row{"MLP0", 5, 20e6, 200}, Row{"MLP1", 4, 5e6, 168}, Row{"LSTM0", 58, 52e6, 64},
                         Row{"LSTM1", 56, 34e6, 96}, Row{"CNN0", 16, 8e6, 8}, Row{"CNN1", 89, 100e6, 32}}) {
        const auto ws = make_preset(r.name);
        EXPECT_NO_THROW(ws.validate());
        EXPECT_EQ(ws.layers.size(), r.layers) << r.name;
        EXPECT_NEAR(double(ws.total_weights()), r.weights, 0.01 * r.weights) << r.name;
        EXPECT_EQ(ws.batch, r.batch) << r.name;
        const double ref = published_intensity(r.name);
        EXPECT_LE(std::abs(operational_intensity(ws) - ref) / ref, 0.05) << r.name;
    }
    EXPECT_EQ(make_preset("MLP0").count(LayerKind::FC), 5u);
    EXPECT_EQ(make_preset("CNN0").count(LayerKind::Conv), 16u);
    EXPECT_THROW(make_preset("RNN9"), ConfigError);
}

TEST(Presets, Cnn1FcPortionIntensity) {
    const auto ws = make_preset("CNN1");
    EXPECT_EQ(ws.count(LayerKind::FC), 4u);
    EXPECT_EQ(ws.count(LayerKind::Conv), 72u);
    EXPECT_EQ(ws.count(LayerKind::Vector) + ws.count(LayerKind::Pool), 13u);
    WorkloadSpec fc_only{"fc", {}, ws.batch, 8};
    for (const auto& l : ws.layers)
        if (l.kind() == LayerKind::FC) fc_only.layers.push_back(l);
    EXPECT_NEAR(operational_intensity(fc_only), 32.0, 1e-9);
}

TEST(Presets, DeploymentWeightsCoverListedShare) {
    double sum = 0;
    for (const auto& n : preset_names()) sum += deployment_weight(n);
    EXPECT_NEAR(sum, 0.95, 1e-12);  // 61% + 29% + 5%
}

TEST(Spec, WeightCountMatchesReferenceModel) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto ws = random_workload(seed, 64);
        const auto model = synthetic_model(ws, seed);
        std::uint64_t counted = 0;
        for (const auto& w : model.weights) counted += w.size();
        EXPECT_EQ(ws.total_weights(), counted) << seed;
        std::uint64_t per_layer = 0;
        for (const auto& l : ws.layers) per_layer += l.weight_count();
        EXPECT_EQ(ws.total_weights(), per_layer);
    }
}

TEST(Spec, JsonRoundTripAndRejections) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto ws = random_workload(seed);
        nlohmann::json j = ws;
        EXPECT_EQ(j.get<WorkloadSpec>(), ws);
    }
    const auto path = temp("ws.json");
    std::ofstream(path) << nlohmann::json(make_preset("MLP1")).dump();
    EXPECT_EQ(load_workload(path), make_preset("MLP1"));
    WorkloadSpec bad{"bad", {fc(10, 20), fc(30, 5)}, 1, 8};
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = {"zero", {fc(10, 0)}, 1, 8};
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = {"nobatch", {fc(10, 10)}, 0, 8};
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Quantize, ZeroTensorAndGrid) {
    EXPECT_DOUBLE_EQ(symmetric_scale({0.f, 0.f, 0.f}), 1.0);
    FloatModel fm;
    fm.spec = {"grid", {fc(4, 3, isa::ActivationFn::Identity)}, 1, 8};
    fm.weights = {{1.f / 127, 0.f, -1.f / 127, 1.f / 127, 1.f / 127, 0.f, 0.f, -1.f / 127, 1.f / 127, 0.f, 0.f, 1.f / 127}};
    const auto q = quantize(fm, {{1.f, 0.5f, -0.25f, 0.f}});
    const double s = symmetric_scale(fm.weights[0]);
    for (std::size_t i = 0; i < fm.weights[0].size(); ++i)
        EXPECT_FLOAT_EQ(float(q.weights[0][i] * s), fm.weights[0][i]) << i;
    EXPECT_TRUE(std::all_of(q.weights[0].begin(), q.weights[0].end(), [](int v) { return v == -127 || v == 0 || v == 127; }));

    FloatModel zero;
    zero.spec = {"zero", {fc(2, 2, isa::ActivationFn::Identity)}, 1, 8};
    zero.weights = {{0.f, 0.f, 0.f, 0.f}};
    const auto qz = quantize(zero, {{1.f, 1.f}});
    EXPECT_EQ(qz.weights[0], (std::vector<std::int32_t>{0, 0, 0, 0}));
}

TEST(Quantize, FcNetTracksFloat) {
    std::mt19937_64 rng(11);
    std::normal_distribution<float> n(0.f, 0.3f);
    FloatModel fm;
    fm.spec = {"net", {fc(32, 48), fc(48, 24), fc(24, 10, isa::ActivationFn::Identity)}, 1, 8};
    for (const auto& l : fm.spec.layers) {
        std::vector<float> w(l.weight_count());
        for (auto& v : w) v = n(rng);
        fm.weights.push_back(std::move(w));
    }
    std::vector<std::vector<float>> calib(64, std::vector<float>(32));
    for (auto& x : calib)
        for (auto& v : x) v = n(rng) * 3;
    const auto q = quantize(fm, calib);
    for (const auto& x : calib) {
        const auto ref = float_forward(fm, x);
        const auto out = oracle::forward(q, quantize_input(q, x));
        const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
        const double range = *hi - *lo;
        for (std::size_t i = 0; i < ref.size(); ++i)
            EXPECT_LE(std::abs(out[i] * q.output_scales.back() - ref[i]), 0.05 * range) << i;
    }
}

TEST(Quantize, RequantDecomposition) {
    for (double m : {1.0, 0.5, 1e-3, 0.123456, 3.75}) {
        const auto rq = requant_for(m);
        EXPECT_LT(rq.scale, std::int64_t{1} << 31);
        EXPECT_NEAR(double(rq.scale) / std::ldexp(1.0, int(rq.shift)), m, m * 1e-8);
    }
}

TEST(FloatModel, ManifestRoundTrip) {
    FloatModel fm;
    fm.spec = {"m", {conv(3, 4, 3, 3, 4, 4), pool(2, 2), fc(4, 5)}, 2, 8};
    std::mt19937_64 rng(2);
    for (const auto& l : fm.spec.layers) {
        std::vector<float> w(l.weight_count());
        for (auto& v : w) v = float(rng() % 1000) / 500.f - 1.f;
        fm.weights.push_back(std::move(w));
    }
    save_float_model(fm, temp("m.json"), temp("m.bin"));
    const auto back = load_float_model(temp("m.json"), temp("m.bin"));
    EXPECT_EQ(back.spec, fm.spec);
    EXPECT_EQ(back.weights, fm.weights);
    EXPECT_THROW(load_float_model(temp("m.json"), "/nonexistent.bin"), Error);
}
