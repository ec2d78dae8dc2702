#pragma once

/**
 * @file timesim.hpp
 * @brief Cycle-level timing of TPU programs.
 *
 * Instructions issue in order, one per cycle, with at most four instructions
 * between the issuing one and the oldest not yet started. Each unit (matrix,
 * activation, host DMA, weight fetch) executes its micro-ops in order; a
 * repeated instruction is one micro-op per iteration. Data hazards are tracked
 * per Unified Buffer row and per accumulator row (read-after-write and
 * write-after-read). Weight tiles flow Weight Memory -> FIFO -> shadow tile ->
 * active tile; the shift into the shadow takes matrix_dim cycles.
 *
 * Idle matrix cycles are charged, in order, to whatever non-weight constraint
 * held the matrix unit back (non_matrix), then to waiting for the tile's
 * DRAM fetch (weight_stall), then to the shift-in (weight_shift), so the four
 * buckets partition total_cycles exactly.
 */

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/archconfig.hpp"
#include "tpusim/funcsim.hpp"
#include "tpusim/isa.hpp"

namespace tpusim::timing {

/// Pipeline stages; an instruction that occupies no unit retires this many cycles after issue.
inline constexpr std::uint64_t kPipelineStages = 4;

struct PerfCounters {
    std::uint64_t total_cycles = 0;
    std::uint64_t array_active_cycles = 0;
    std::uint64_t weight_stall_cycles = 0;
    std::uint64_t weight_shift_cycles = 0;
    std::uint64_t non_matrix_cycles = 0;
    std::uint64_t raw_stall_cycles = 0;    ///< sub-reason; overlaps the buckets above
    std::uint64_t input_stall_cycles = 0;  ///< sub-reason: waiting on host DMA
    double useful_mac_cycles_frac = 0.0;   ///< useful MACs / (matrix_dim^2 * total_cycles)
    double unused_mac_frac = 0.0;          ///< array_active fraction minus the useful fraction
    double achieved_ops_per_s = 0.0;       ///< 2 x useful MACs per second (TOPS convention)
    double achieved_macs_per_s = 0.0;
    double avg_cpi = 0.0;

    std::uint64_t retired_instructions = 0;
    std::uint64_t useful_macs = 0;
    std::uint64_t tiles_fetched = 0;
    std::uint64_t weight_bytes = 0;
    std::uint64_t host_bytes = 0;
    double clock_hz = 0.0;

    double seconds() const { return clock_hz > 0 ? static_cast<double>(total_cycles) / clock_hz : 0.0; }
    double fraction(std::uint64_t cycles) const {
        return total_cycles == 0 ? 0.0 : static_cast<double>(cycles) / static_cast<double>(total_cycles);
    }
};

enum class Unit { Issue, Matrix, Activation, Dma, WeightFetch };
enum class EventKind { Start, Stall, Done };
std::string_view to_string(Unit unit);
std::string_view to_string(EventKind kind);

struct TimingEvent {
    std::uint64_t cycle = 0;
    Unit unit = Unit::Issue;
    EventKind kind = EventKind::Start;
    std::size_t index = 0;  ///< instruction index (tile index for weight fetches)
};

struct TimingOptions {
    /// Useful MACs per instruction (from lowering). Empty: every matrix MAC counts as useful.
    std::vector<std::uint64_t> useful_macs;
    bool record_timeline = false;
};

struct TimingResult {
    PerfCounters counters;
    std::vector<TimingEvent> timeline;
};

/// Timing-only simulation; values are never computed.
TimingResult simulate_timed(const isa::Program& program, const arch::TpuConfig& cfg, const TimingOptions& opts = {});

struct TimedRun {
    func::ExecResult exec;
    TimingResult timing;
};

/// Functional execution followed by timing of the same program.
TimedRun simulate(const isa::Program& program, func::TpuState& state, func::HostMemory& host,
                  const TimingOptions& opts = {});

double avg_cpi(const isa::Program& program, const PerfCounters& counters);

/// Report rows in order: eight percentages then TeraOps/s.
std::vector<std::pair<std::string, double>> counter_report(const PerfCounters& counters);

void to_json(nlohmann::json& j, const PerfCounters& c);
std::string counters_csv_header();
std::string counters_csv_row(const std::string& workload, const PerfCounters& c);
std::string timeline_to_jsonl(const std::vector<TimingEvent>& events);

} // namespace tpusim::timing
