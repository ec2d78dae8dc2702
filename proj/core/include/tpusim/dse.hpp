#pragma once

// Design-space exploration: scaling sweeps, the 600x600 tiling cost model and
// the TPU' (faster memory) hypothetical.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/archconfig.hpp"
#include "tpusim/workloads.hpp"

namespace tpusim::dse {

/// Plus variants co-scale accumulators: linearly with clock, quadratically with matrix dimension.
enum class Knob { Memory, Clock, ClockPlus, Matrix, MatrixPlus };
std::string to_string(Knob k);
Knob knob_from_string(const std::string& s);
const std::vector<Knob>& all_knobs();

inline constexpr double kMinFactor = 0.25;
inline constexpr double kMaxFactor = 4.0;

/// Scaled copy of `cfg`; throws ConfigError outside [0.25, 4].
arch::TpuConfig apply_knob(const arch::TpuConfig& cfg, Knob knob, double factor);

struct SweepCell {
    Knob knob = Knob::Memory;
    double factor = 1.0;
    std::string workload;
    double ops_per_s = 0.0;   ///< 0 when the cell did not fit
    double speedup = 0.0;     ///< vs the unscaled configuration
    std::string error;        ///< DoesNotFit resource, empty on success
};

struct SweepMean {
    Knob knob = Knob::Memory;
    double factor = 1.0;
    double geometric = 0.0;
    double weighted = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;   ///< ordered by factor, then workload
    std::vector<SweepMean> means;   ///< one per factor, over the cells that fit
};

SweepResult sweep(const std::vector<workloads::WorkloadSpec>& presets, Knob knob, const std::vector<double>& factors,
                  const arch::TpuConfig& cfg);

std::string sweep_csv_header();
/// Cells then mean rows (workload "GM" / "WM").
std::string sweep_csv(const SweepResult& r);

struct TilingCost {
    std::uint64_t steps = 0;
    double seconds = 0.0;
};

/// ceil(n/tile) * ceil(m/tile) steps, each fetching one tile_dim^2-byte tile at weight_bw.
TilingCost tiling_cost(std::uint64_t n, std::uint64_t m, std::uint64_t tile_dim, double weight_bw);

/// Host interaction time as a percentage of TPU time, per preset.
double host_fraction(const std::string& workload);
/// Amdahl adjustment: 1 / (h + (1 - h) / speedup).
double host_adjusted(double speedup, double h);
/// Converts an interaction fraction f of accelerator time to a share of total time, f / (1 + f).
double host_share(double fraction);

struct PrimeVariant {
    std::string name;
    arch::TpuConfig cfg;
    double ridge = 0.0;
    std::map<std::string, double> speedups;
    std::map<std::string, double> adjusted;
    double gm = 0.0, wm = 0.0;
    double adjusted_gm = 0.0, adjusted_wm = 0.0;
};

struct PrimeReport {
    double baseline_ridge = 0.0;
    double reference_ridge = 250.0;  ///< ridge quoted for the faster-memory variant
    std::vector<PrimeVariant> variants;  ///< clock, memory, both
};

/// `host_scale` multiplies every host fraction (0 disables the adjustment).
PrimeReport tpu_prime(const arch::TpuConfig& cfg, double host_scale = 1.0);

void to_json(nlohmann::json& j, const PrimeReport& r);
std::string prime_csv_header();
std::string prime_csv(const PrimeReport& r);

} // namespace tpusim::dse
