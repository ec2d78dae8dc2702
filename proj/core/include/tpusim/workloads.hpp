#pragma once

// Workload descriptions, operational intensity, synthetic presets and
// float -> int8 quantization.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/funcsim.hpp"
#include "tpusim/isa.hpp"

namespace tpusim::workloads {

using isa::ActivationFn;
using isa::PoolKind;

struct FcShape {
    std::uint32_t in_dim = 0;
    std::uint32_t out_dim = 0;
    bool operator==(const FcShape&) const = default;
};

struct ConvShape {
    std::uint32_t in_channels = 0;   ///< C
    std::uint32_t out_channels = 0;  ///< M
    std::uint32_t kernel_h = 1;      ///< R
    std::uint32_t kernel_w = 1;      ///< S
    std::uint32_t image_h = 1;
    std::uint32_t image_w = 1;
    std::uint32_t stride = 1;
    std::uint32_t pad = 0;

    std::uint32_t out_h() const { return (image_h + 2 * pad - kernel_h) / stride + 1; }
    std::uint32_t out_w() const { return (image_w + 2 * pad - kernel_w) / stride + 1; }
    bool operator==(const ConvShape&) const = default;
};

/// Elementwise op (the layer's activation) over a `dim`-wide vector.
struct VectorShape {
    std::uint32_t dim = 0;
    bool operator==(const VectorShape&) const = default;
};

struct PoolShape {
    std::uint32_t window = 1;
    std::uint32_t stride = 1;
    std::uint32_t pad = 0;
    PoolKind kind = PoolKind::Max;
    bool operator==(const PoolShape&) const = default;
};

enum class LayerKind { FC, Conv, Vector, Pool };
std::string_view to_string(LayerKind kind);

struct LayerSpec {
    std::variant<FcShape, ConvShape, VectorShape, PoolShape> shape;
    ActivationFn activation = ActivationFn::ReLU;
    std::uint32_t weight_bits = 8;
    func::Requant requant{};

    LayerKind kind() const { return static_cast<LayerKind>(shape.index()); }
    std::uint64_t weight_count() const;
    std::uint64_t weight_bytes() const { return weight_count() * (weight_bits / 8); }
    /// MACs for one sample, given the layer's input spatial size (FC/Vector ignore it).
    std::uint64_t macs_per_sample() const;

    bool operator==(const LayerSpec&) const = default;
};

LayerSpec fc(std::uint32_t in, std::uint32_t out, ActivationFn fn = ActivationFn::ReLU);
LayerSpec conv(std::uint32_t c, std::uint32_t m, std::uint32_t r, std::uint32_t s, std::uint32_t h, std::uint32_t w,
               std::uint32_t stride = 1, std::uint32_t pad = 0, ActivationFn fn = ActivationFn::ReLU);
LayerSpec vector(std::uint32_t dim, ActivationFn fn);
LayerSpec pool(std::uint32_t window, std::uint32_t stride = 1, std::uint32_t pad = 0, PoolKind kind = PoolKind::Max);

/// Activation tensor shape for one sample: channels x h x w.
struct TensorShape {
    std::uint32_t channels = 0;
    std::uint32_t h = 1;
    std::uint32_t w = 1;
    std::uint64_t elements() const { return std::uint64_t{channels} * h * w; }
    bool operator==(const TensorShape&) const = default;
};

struct WorkloadSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    std::uint32_t batch = 1;
    std::uint32_t activation_bits = 8;

    std::uint64_t total_weights() const;
    std::uint64_t total_weight_bytes() const;
    /// MACs for the whole batch.
    std::uint64_t total_macs() const;
    std::size_t count(LayerKind kind) const;

    TensorShape input_shape() const;
    /// Output shape of every layer (index-aligned with `layers`).
    std::vector<TensorShape> layer_outputs() const;

    /// Throws ConfigError when dims are zero or consecutive layers disagree.
    void validate() const;

    bool operator==(const WorkloadSpec&) const = default;
};

/// MACs per weight byte read, for the whole batch. Throws on a zero-weight workload.
double operational_intensity(const WorkloadSpec& ws);

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"MLP0", "MLP1", "LSTM0", "LSTM1", "CNN0", "CNN1"};
    return names;
}

/// Published ops per weight byte for each preset.
double published_intensity(const std::string& name);
/// Deployment share used for weighted means. The six presets cover 0.95; means renormalize.
double deployment_weight(const std::string& name);

WorkloadSpec make_preset(const std::string& name);
std::vector<WorkloadSpec> all_presets();

/// Random small workload for property tests. `max_dim` bounds every layer width.
WorkloadSpec random_workload(std::uint64_t seed, std::uint32_t max_dim = 600, bool allow_conv = true);

void to_json(nlohmann::json& j, const LayerSpec& l);
void from_json(const nlohmann::json& j, LayerSpec& l);
void to_json(nlohmann::json& j, const WorkloadSpec& ws);
void from_json(const nlohmann::json& j, WorkloadSpec& ws);
WorkloadSpec load_workload(const std::string& path);

// Quantized models --------------------------------------------------------------

/// Integer weights per layer. FC: [in][out] row-major. Conv: [r][s][c][m].
/// Vector and Pool layers carry no weights.
struct QuantizedModel {
    WorkloadSpec spec;
    std::vector<std::vector<std::int32_t>> weights;
    double input_scale = 1.0;
    std::vector<double> output_scales;  ///< real value = q * scale, per layer
};

/// Uniform random weights with requant shifts chosen to keep outputs in range.
QuantizedModel synthetic_model(const WorkloadSpec& ws, std::uint64_t seed);
/// Random int8 (or int16) input samples in the [h][w][c] layout, one vector per sample.
std::vector<std::vector<std::int32_t>> synthetic_inputs(const WorkloadSpec& ws, std::uint64_t seed);

struct FloatModel {
    WorkloadSpec spec;
    std::vector<std::vector<float>> weights;  ///< same layouts as QuantizedModel
};

/// Float forward pass for one sample in [h][w][c] layout.
std::vector<float> float_forward(const FloatModel& model, const std::vector<float>& input);

/// Per-tensor symmetric scale: max|x| / qmax, or 1 for an all-zero tensor.
double symmetric_scale(const std::vector<float>& values, int qmax = 127);
/// Decomposes a positive real multiplier into (scale, shift) with scale < 2^31.
func::Requant requant_for(double multiplier);

/// Post-training quantization calibrated on `calibration` samples.
QuantizedModel quantize(const FloatModel& model, const std::vector<std::vector<float>>& calibration);
std::vector<std::int32_t> quantize_input(const QuantizedModel& model, const std::vector<float>& input);

/// JSON manifest plus a flat little-endian float32 tensor file.
/// Manifest: {"workload": {...}, "tensors": [{"layer": i, "offset": bytes, "count": n}, ...]}
FloatModel load_float_model(const std::string& manifest_path, const std::string& tensor_path);
void save_float_model(const FloatModel& model, const std::string& manifest_path, const std::string& tensor_path);

} // namespace tpusim::workloads
