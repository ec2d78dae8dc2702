#pragma once

// Compiles a WorkloadSpec into a TPU program: weight tiling, Unified Buffer
// allocation, weight prefetch scheduling and activation/pool fusion.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/archconfig.hpp"
#include "tpusim/funcsim.hpp"
#include "tpusim/isa.hpp"
#include "tpusim/workloads.hpp"

namespace tpusim::lowering {

/// A workload needs more of some resource than the configuration offers.
class DoesNotFit : public Error {
public:
    DoesNotFit(std::string resource, const std::string& what)
        : Error(resource + ": " + what), resource_(std::move(resource)) {}
    const std::string& resource() const noexcept { return resource_; }

private:
    std::string resource_;
};

/// Tiling of one lowered layer (a convolution and the pool fused into it count as one).
struct LayerPlan {
    std::size_t layer = 0;               ///< index of the first spec layer covered
    workloads::LayerKind kind = workloads::LayerKind::FC;
    std::uint32_t row_tiles = 0;         ///< K: input-channel tiles
    std::uint32_t col_tiles = 0;         ///< J: output-channel tiles
    std::uint32_t taps = 1;              ///< kernel positions (R*S) for convolutions
    std::uint32_t pad_rows = 0;          ///< K*dim - input channels
    std::uint32_t pad_cols = 0;          ///< J*dim - output channels
    std::vector<double> tile_useful;     ///< per distinct tile, [j][tap][k]
    std::uint32_t groups = 1;            ///< batch groups (weights are refetched per group)
    bool wide_weights = false;
    bool wide_inputs = false;
    std::uint64_t tile_passes = 0;       ///< tiles consumed by the matrix unit
    std::uint64_t matrix_cycles = 0;     ///< matrix unit occupancy, speed factor applied
    std::uint64_t activation_rows = 0;   ///< accumulator rows read by Activate
    std::uint64_t true_macs = 0;
    std::uint64_t padded_macs = 0;
};

struct TilePlan {
    std::vector<LayerPlan> layers;
    std::uint64_t true_macs = 0;
    std::uint64_t padded_macs = 0;
    std::uint64_t weight_units = 0;      ///< distinct Weight Memory tile units used
    std::uint64_t input_dma_bytes = 0;
    std::uint64_t output_dma_bytes = 0;
};

/// True MACs / padded MACs over the whole program.
double useful_mac_fraction(const TilePlan& plan);

struct UbInterval {
    std::string tensor;
    int first_stage = 0;   ///< stage that produces it (-1 for the host input)
    int last_stage = 0;    ///< last stage that reads it
    std::uint64_t row_begin = 0;
    std::uint64_t row_end = 0;
};

struct UbAllocation {
    std::vector<UbInterval> tensors;
    std::uint64_t peak_rows = 0;
    std::uint64_t peak_bytes = 0;
};

/// Where an activation tensor lives. Rows are tile-major: [ctile][sample][pixel], each
/// vector occupying `span` rows.
struct TensorLayout {
    workloads::TensorShape shape;
    std::uint32_t batch = 1;
    std::uint32_t ctiles = 1;
    bool wide = false;
    bool is_unsigned = false;
    std::uint64_t ub_row = 0;

    std::uint32_t span() const { return wide ? 2u : 1u; }
    std::uint64_t pixels() const { return std::uint64_t{shape.h} * shape.w; }
    std::uint64_t rows_per_ctile() const { return std::uint64_t{batch} * pixels() * span(); }
    std::uint64_t rows() const { return rows_per_ctile() * ctiles; }
};

struct HostLayout {
    std::uint64_t input_offset = 0;
    std::uint64_t input_bytes = 0;
    std::uint64_t output_offset = 0;
    std::uint64_t output_bytes = 0;
    std::uint64_t total_bytes() const { return output_offset + output_bytes; }
};

struct WeightBlob {
    std::uint64_t unit = 0;
    std::vector<std::uint8_t> bytes;
};

struct LoweredProgram {
    isa::Program program;
    TilePlan plan;
    UbAllocation ub;
    HostLayout host;
    TensorLayout input;
    TensorLayout output;
    std::vector<std::uint64_t> useful_macs;  ///< per instruction; nonzero only for matrix ops
    std::vector<WeightBlob> weights;         ///< filled only when a model was supplied
};

/// Lowers `ws`. Pass a model to also build the Weight Memory image.
LoweredProgram lower(const workloads::WorkloadSpec& ws, const arch::TpuConfig& cfg,
                     const workloads::QuantizedModel* model = nullptr);

/// Peak Unified Buffer bytes under the liveness first-fit allocator.
std::uint64_t ub_footprint(const workloads::WorkloadSpec& ws, const arch::TpuConfig& cfg);

/// Host image with `samples` ([h][w][c] each) placed at the input region.
func::HostMemory pack_input(const LoweredProgram& lp, const std::vector<std::vector<std::int32_t>>& samples,
                            const arch::TpuConfig& cfg);
/// Output samples in [h][w][c] layout read from the host output region.
std::vector<std::vector<std::int32_t>> unpack_output(const LoweredProgram& lp, const func::HostMemory& host,
                                                     const arch::TpuConfig& cfg);
void load_weights(const LoweredProgram& lp, func::TpuState& state);

/// Tiles, footprint and useful-MAC fraction as JSON.
nlohmann::json plan_report(const LoweredProgram& lp, const arch::TpuConfig& cfg);

} // namespace tpusim::lowering
