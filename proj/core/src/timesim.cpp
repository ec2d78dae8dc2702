#include "tpusim/timesim.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <sstream>

#include "tpusim/footprint.hpp"

namespace tpusim::timing {

using isa::Opcode;

std::string_view to_string(Unit unit) {
    switch (unit) {
    case Unit::Issue: return "issue";
    case Unit::Matrix: return "matrix";
    case Unit::Activation: return "activation";
    case Unit::Dma: return "dma";
    case Unit::WeightFetch: return "weight-fetch";
    }
    return "?";
}

std::string_view to_string(EventKind kind) {
    switch (kind) {
    case EventKind::Start: return "start";
    case EventKind::Stall: return "stall";
    case EventKind::Done: return "done";
    }
    return "?";
}

namespace {

/// Per-row hazard state for one memory. Units stream rows in address order, so an
/// operation lasting `dur` cycles over n rows touches row begin+k at offset k*dur/n.
class Scoreboard {
public:
    Scoreboard(std::uint64_t rows, const char* name)
        : write_ready_(rows, 0), read_done_(rows, 0), from_dma_(rows, 0), name_(name) {}

    struct Ready {
        std::uint64_t at = 0;
        bool from_dma = false;
    };

    /// Earliest start for a reader of `r` streaming over `dur` cycles (0: needs every row up front).
    Ready ready(const isa::RowRange& r, std::uint64_t dur) const {
        check(r);
        Ready best;
        for (std::uint64_t i = r.begin; i < r.end; ++i) {
            const std::uint64_t off = offset(r, i, dur);
            const std::uint64_t t = write_ready_[i] > off ? write_ready_[i] - off : 0;
            if (t > best.at) best = {t, from_dma_[i] != 0};
        }
        return best;
    }

    /// Earliest start for a writer of `r` streaming over `dur` cycles.
    std::uint64_t free(const isa::RowRange& r, std::uint64_t dur, bool include_writes) const {
        check(r);
        std::uint64_t t = 0;
        for (std::uint64_t i = r.begin; i < r.end; ++i) {
            std::uint64_t v = read_done_[i];
            if (include_writes) v = std::max(v, write_ready_[i]);
            const std::uint64_t off = offset(r, i, dur);
            if (v > off) t = std::max(t, v - off);
        }
        return t;
    }

    void write(const isa::RowRange& r, std::uint64_t start, std::uint64_t dur, std::uint64_t latency, bool dma) {
        for (std::uint64_t i = r.begin; i < r.end; ++i) {
            write_ready_[i] = start + offset(r, i + 1, dur) + latency;
            from_dma_[i] = dma;
        }
    }

    void read(const isa::RowRange& r, std::uint64_t start, std::uint64_t dur) {
        for (std::uint64_t i = r.begin; i < r.end; ++i)
            read_done_[i] = std::max(read_done_[i], start + offset(r, i + 1, dur));
    }

private:
    static std::uint64_t offset(const isa::RowRange& r, std::uint64_t i, std::uint64_t dur) {
        return (i - r.begin) * dur / r.size();
    }

    void check(const isa::RowRange& r) const {
        if (r.end > write_ready_.size()) throw Error(std::string(name_) + " rows out of range in timing model");
    }

    std::vector<std::uint64_t> write_ready_;
    std::vector<std::uint64_t> read_done_;
    std::vector<std::uint8_t> from_dma_;
    const char* name_;
};

struct TileTiming {
    std::uint64_t request = 0;
    std::uint64_t bytes = 0;
    std::uint64_t fetch_done = 0;
    std::uint64_t leave_fifo = 0;   ///< shift into the shadow begins
    std::uint64_t shift_done = 0;
    std::uint64_t active = 0;       ///< first matrix cycle using it
    bool wide = false;
};

class Engine {
public:
    Engine(const arch::TpuConfig& cfg, const TimingOptions& opts)
        : cfg_(cfg), opts_(opts), ub_(cfg.ub_rows(), "Unified Buffer"), acc_(cfg.acc_entries, "accumulator") {
        cfg_.validate();
    }

    TimingResult run(const isa::Program& program) {
        const auto& ins = program.instructions;
        std::vector<std::uint64_t> started(ins.size(), 0);
        std::uint64_t prev_issue = 0;
        std::uint64_t last_issue = 0;
        std::size_t retired = 0;
        for (std::size_t i = 0; i < ins.size(); ++i) {
            const isa::Instruction& in = ins[i];
            std::uint64_t issue = i == 0 ? 0 : prev_issue + 1;
            if (i >= kPipelineStages) issue = std::max(issue, started[i - kPipelineStages]);
            if (in.opcode == Opcode::SyncA) issue = std::max(issue, matrix_drained());
            if (in.opcode == Opcode::SyncB) issue = std::max(issue, all_drained());
            index_ = i;
            started[i] = execute(in, issue);
            prev_issue = issue;
            last_issue = issue;
            ++retired;
            if (in.opcode == Opcode::Halt) break;
        }
        PerfCounters& c = result_.counters;
        std::uint64_t total = last_issue + kPipelineStages;
        total = std::max({total, matrix_free_, act_free_, dma_free_, fetch_free_});
        if (c.array_active_cycles > 0) total = std::max(total, last_matrix_end_ + cfg_.matrix_dim);
        if (total > matrix_free_) c.non_matrix_cycles += total - matrix_free_;
        c.total_cycles = total;
        c.retired_instructions = retired;
        c.clock_hz = cfg_.clock_hz;
        const double dim2 = static_cast<double>(cfg_.matrix_dim) * cfg_.matrix_dim;
        c.useful_mac_cycles_frac = static_cast<double>(c.useful_macs) / (dim2 * static_cast<double>(total));
        c.unused_mac_frac = c.fraction(c.array_active_cycles) - c.useful_mac_cycles_frac;
        c.achieved_macs_per_s = static_cast<double>(c.useful_macs) / c.seconds();
        c.achieved_ops_per_s = 2.0 * c.achieved_macs_per_s;
        c.avg_cpi = retired == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(retired);
        if (opts_.record_timeline)
            std::stable_sort(result_.timeline.begin(), result_.timeline.end(),
                             [](const TimingEvent& a, const TimingEvent& b) { return a.cycle < b.cycle; });
        return std::move(result_);
    }

private:
    const arch::TpuConfig& cfg_;
    const TimingOptions& opts_;
    TimingResult result_;
    Scoreboard ub_;
    Scoreboard acc_;
    isa::RegisterFile regs_;
    std::size_t index_ = 0;

    std::uint64_t matrix_free_ = 0;
    std::uint64_t last_matrix_end_ = 0;
    std::uint64_t act_free_ = 0;
    std::uint64_t dma_free_ = 0;
    std::uint64_t fetch_free_ = 0;
    std::vector<TileTiming> tiles_;
    std::size_t consumed_ = 0;
    bool wide_active_ = false;

    void event(std::uint64_t cycle, Unit unit, EventKind kind, std::size_t index) {
        if (opts_.record_timeline) result_.timeline.push_back({cycle, unit, kind, index});
    }

    std::uint64_t matrix_drained() const { return last_matrix_end_ + (result_.counters.array_active_cycles ? cfg_.matrix_dim : 0); }
    std::uint64_t all_drained() const { return std::max({matrix_drained(), act_free_, dma_free_, fetch_free_}); }

    void raw_stall(std::uint64_t base, const Scoreboard::Ready& r) {
        if (r.at <= base) return;
        if (r.from_dma) result_.counters.input_stall_cycles += r.at - base;
        else result_.counters.raw_stall_cycles += r.at - base;
    }

    /// Resolves fetch and shift timing of the next tile and returns it.
    TileTiming& next_tile() {
        if (consumed_ >= tiles_.size()) throw Error("timing: matrix op with no requested weight tile");
        const std::size_t t = consumed_++;
        TileTiming& tile = tiles_[t];
        const std::uint32_t depth = cfg_.fifo_depth_tiles;
        std::uint64_t start = std::max(tile.request, fetch_free_);
        if (depth == 0) start = std::max(start, matrix_free_);
        else if (t >= depth) start = std::max(start, tiles_[t - depth].leave_fifo);
        event(start, Unit::WeightFetch, EventKind::Start, t);
        tile.fetch_done = start + cfg_.weight_fetch_cycles(tile.bytes);
        fetch_free_ = tile.fetch_done;
        event(tile.fetch_done, Unit::WeightFetch, EventKind::Done, t);
        std::uint64_t shift = tile.fetch_done;
        if (depth == 0) shift = std::max(shift, matrix_free_);
        else if (t > 0) shift = std::max(shift, tiles_[t - 1].active);
        tile.leave_fifo = shift;
        tile.shift_done = shift + cfg_.matrix_dim;
        result_.counters.tiles_fetched += 1;
        result_.counters.weight_bytes += tile.bytes;
        return tile;
    }

    std::uint64_t execute(const isa::Instruction& in, std::uint64_t issue) {
        switch (in.opcode) {
        case Opcode::SetConfig:
            if (in.acc_addr < isa::kConfigRegCount) regs_.set(static_cast<isa::ConfigReg>(in.acc_addr), in.length);
            return issue;
        case Opcode::ReadWeights: {
            const bool wide = in.flags & isa::WeightFlag::kWeight16;
            const std::uint64_t bytes = cfg_.tile_bytes() * isa::tile_units(wide);
            for (std::uint32_t it = 0; it < in.iterations(); ++it)
                for (std::uint32_t k = 0; k < in.length; ++k) tiles_.push_back({issue, bytes, 0, 0, 0, 0, wide});
            return issue;
        }
        case Opcode::ReadHostMemory:
        case Opcode::ReadHostMemoryAlt:
        case Opcode::WriteHostMemory:
        case Opcode::WriteHostMemoryAlt: return dma(in, issue);
        case Opcode::MatrixMultiply: return matrix(in, issue);
        case Opcode::Activate: return activate(in, issue);
        default: return issue;
        }
    }

    std::uint64_t dma(const isa::Instruction& in, std::uint64_t issue) {
        const bool to_ub = in.opcode == Opcode::ReadHostMemory || in.opcode == Opcode::ReadHostMemoryAlt;
        std::uint64_t first = 0;
        for (std::uint32_t it = 0; it < in.iterations(); ++it) {
            const isa::Footprint f = isa::iteration_footprint(in, it, regs_, cfg_);
            const std::uint64_t base = std::max(issue, dma_free_);
            const std::uint64_t dur = cfg_.pcie_cycles(f.host_bytes);
            std::uint64_t start = base;
            if (to_ub) {
                start = std::max(start, ub_.free(f.ub_write, dur, true));
            } else {
                const auto r = ub_.ready(f.ub_read, dur);
                raw_stall(base, r);
                start = std::max(start, r.at);
            }
            const std::uint64_t end = start + dur;
            if (to_ub) ub_.write(f.ub_write, start, dur, 0, true);
            else ub_.read(f.ub_read, start, dur);
            event(start, Unit::Dma, EventKind::Start, index_);
            event(end, Unit::Dma, EventKind::Done, index_);
            dma_free_ = end;
            result_.counters.host_bytes += f.host_bytes;
            if (it == 0) first = start;
        }
        return first;
    }

    std::uint64_t matrix(const isa::Instruction& in, std::uint64_t issue) {
        const bool in16 = in.flags & isa::MatMulFlag::kInput16;
        const bool switching = in.flags & isa::MatMulFlag::kSwitchTile;
        TileTiming* tile = nullptr;
        if (switching) {
            tile = &next_tile();
            wide_active_ = tile->wide;
        }
        const std::uint64_t mult = (in16 ? 2 : 1) * (wide_active_ ? 2 : 1);
        if (in.is_convolve() && !isa::conv_geometry(in, regs_).conv) throw Error("timing: malformed convolution");
        std::uint64_t first = 0;
        std::uint64_t rows_total = 0;
        for (std::uint32_t it = 0; it < in.iterations(); ++it) {
            const isa::Footprint f = isa::iteration_footprint(in, it, regs_, cfg_);
            const std::uint64_t prev_end = matrix_free_;
            const std::uint64_t base = std::max(issue, prev_end);
            const std::uint64_t occ = f.work_rows * mult;
            // Convolutions revisit input rows per tap, so they need the whole window up front.
            const std::uint64_t read_dur = in.is_convolve() ? 0 : occ;
            const auto data = ub_.ready(f.ub_read, read_dur);
            raw_stall(base, data);
            const std::uint64_t other = std::max({issue, data.at, acc_.free(f.acc_write, occ, false)});
            std::uint64_t start = std::max(prev_end, other);
            std::uint64_t fetch = 0;
            if (tile && it == 0) {
                start = std::max(start, tile->shift_done);
                fetch = tile->fetch_done;
                tile->active = start;
            }
            // Charge the idle gap: other constraints, then the fetch, then the shift.
            auto clamp = [&](std::uint64_t v) { return std::clamp(v, prev_end, start); };
            const std::uint64_t a = clamp(other);
            const std::uint64_t b = clamp(std::max(other, fetch));
            auto& c = result_.counters;
            c.non_matrix_cycles += a - prev_end;
            c.weight_stall_cycles += b - a;
            c.weight_shift_cycles += start - b;
            if (start > prev_end) event(prev_end, Unit::Matrix, EventKind::Stall, index_);
            const std::uint64_t end = start + occ;
            c.array_active_cycles += occ;
            ub_.read(f.ub_read, start, occ);
            acc_.write(f.acc_write, start, occ, cfg_.matrix_dim, false);
            event(start, Unit::Matrix, EventKind::Start, index_);
            event(end, Unit::Matrix, EventKind::Done, index_);
            matrix_free_ = end;
            last_matrix_end_ = end;
            rows_total += f.work_rows;
            if (it == 0) first = start;
        }
        if (opts_.useful_macs.empty()) {
            result_.counters.useful_macs += rows_total * cfg_.matrix_dim * cfg_.matrix_dim;
        } else if (index_ < opts_.useful_macs.size()) {
            result_.counters.useful_macs += opts_.useful_macs[index_];
        }
        return first;
    }

    std::uint64_t activate(const isa::Instruction& in, std::uint64_t issue) {
        const bool pooled = isa::activate_pool(in) != isa::PoolKind::None;
        if (pooled && !isa::pool_geometry(in, regs_).pool) throw Error("timing: malformed pool window");
        std::uint64_t first = 0;
        for (std::uint32_t it = 0; it < in.iterations(); ++it) {
            const isa::Footprint f = isa::iteration_footprint(in, it, regs_, cfg_);
            const std::uint64_t base = std::max(issue, act_free_);
            const std::uint64_t dur = f.work_rows;
            const auto data = acc_.ready(f.acc_read, pooled ? 0 : dur);
            raw_stall(base, data);
            const std::uint64_t start = std::max({base, data.at, ub_.free(f.ub_write, dur, true)});
            const std::uint64_t end = start + dur;
            acc_.read(f.acc_read, start, dur);
            ub_.write(f.ub_write, start, dur, 0, false);
            event(start, Unit::Activation, EventKind::Start, index_);
            event(end, Unit::Activation, EventKind::Done, index_);
            act_free_ = end;
            if (it == 0) first = start;
        }
        return first;
    }
};

} // namespace

TimingResult simulate_timed(const isa::Program& program, const arch::TpuConfig& cfg, const TimingOptions& opts) {
    return Engine(cfg, opts).run(program);
}

TimedRun simulate(const isa::Program& program, func::TpuState& state, func::HostMemory& host,
                  const TimingOptions& opts) {
    TimedRun r;
    r.exec = func::execute(program, state, host);
    r.timing = simulate_timed(program, state.cfg, opts);
    return r;
}

double avg_cpi(const isa::Program& program, const PerfCounters& counters) {
    (void)program;
    return counters.retired_instructions == 0
               ? 0.0
               : static_cast<double>(counters.total_cycles) / static_cast<double>(counters.retired_instructions);
}

std::vector<std::pair<std::string, double>> counter_report(const PerfCounters& c) {
    return {{"Array active cycles", 100.0 * c.fraction(c.array_active_cycles)},
            {"Useful MACs in matrix (% peak)", 100.0 * c.useful_mac_cycles_frac},
            {"Unused MACs", 100.0 * c.unused_mac_frac},
            {"Weight stall cycles", 100.0 * c.fraction(c.weight_stall_cycles)},
            {"Weight shift cycles", 100.0 * c.fraction(c.weight_shift_cycles)},
            {"Non-matrix cycles", 100.0 * c.fraction(c.non_matrix_cycles)},
            {"RAW stalls", 100.0 * c.fraction(c.raw_stall_cycles)},
            {"Input data stalls", 100.0 * c.fraction(c.input_stall_cycles)},
            {"TeraOps/sec", c.achieved_ops_per_s / 1e12}};
}

void to_json(nlohmann::json& j, const PerfCounters& c) {
    j = {{"total_cycles", c.total_cycles},
         {"array_active_cycles", c.array_active_cycles},
         {"weight_stall_cycles", c.weight_stall_cycles},
         {"weight_shift_cycles", c.weight_shift_cycles},
         {"non_matrix_cycles", c.non_matrix_cycles},
         {"raw_stall_cycles", c.raw_stall_cycles},
         {"input_stall_cycles", c.input_stall_cycles},
         {"useful_mac_cycles_frac", c.useful_mac_cycles_frac},
         {"unused_mac_frac", c.unused_mac_frac},
         {"achieved_ops_per_s", c.achieved_ops_per_s},
         {"achieved_macs_per_s", c.achieved_macs_per_s},
         {"avg_cpi", c.avg_cpi},
         {"retired_instructions", c.retired_instructions},
         {"useful_macs", c.useful_macs},
         {"tiles_fetched", c.tiles_fetched},
         {"weight_bytes", c.weight_bytes},
         {"host_bytes", c.host_bytes},
         {"seconds", c.seconds()}};
}

std::string counters_csv_header() {
    return "workload,array_active_pct,useful_macs_pct,unused_macs_pct,weight_stall_pct,weight_shift_pct,"
           "non_matrix_pct,raw_stall_pct,input_stall_pct,tera_ops_per_s,total_cycles,avg_cpi";
}

std::string counters_csv_row(const std::string& workload, const PerfCounters& c) {
    std::ostringstream os;
    os << workload;
    char buf[64];
    for (const auto& [label, value] : counter_report(c)) {
        std::snprintf(buf, sizeof buf, ",%.4f", value);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.4f", c.avg_cpi);
    os << ',' << c.total_cycles << buf;
    return os.str();
}

std::string timeline_to_jsonl(const std::vector<TimingEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += nlohmann::json{{"cycle", e.cycle},
                              {"unit", std::string(to_string(e.unit))},
                              {"kind", std::string(to_string(e.kind))},
                              {"index", e.index}}
                   .dump();
        out += '\n';
    }
    return out;
}

} // namespace tpusim::timing
