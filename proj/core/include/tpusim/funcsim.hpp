#pragma once

/**
 * @file funcsim.hpp
 * @brief Bit-exact functional execution of TPU programs.
 *
 * The model is sequentially consistent: instructions apply their
 * architectural effect in program order. The systolic wavefront is not
 * visible here; a MatrixMultiply is an atomic B-row GEMM. Overlap and
 * stalls are the timing model's concern.
 */

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/archconfig.hpp"
#include "tpusim/error.hpp"
#include "tpusim/footprint.hpp"
#include "tpusim/isa.hpp"

namespace tpusim::func {

enum class ExecErrorKind {
    AddressFault,
    FifoUnderflow,
    AccOutOfRange,
    WeightMemOutOfRange,
    InvalidPoolWindow,
    BadGeometry,
    UnknownConfigRegister,
    ReservedFlagSet,
};

std::string_view to_string(ExecErrorKind kind);

class ExecError : public Error {
public:
    ExecError(ExecErrorKind kind, std::size_t index, const std::string& what)
        : Error("instruction " + std::to_string(index) + ": " + what), kind_(kind), index_(index) {}
    ExecErrorKind kind() const noexcept { return kind_; }
    std::size_t index() const noexcept { return index_; }

private:
    ExecErrorKind kind_;
    std::size_t index_;
};

/// Operand widths and signedness of one matrix operation.
struct DataMode {
    bool input16 = false;
    bool weight16 = false;
    bool input_signed = true;
    bool weight_signed = true;

    /// Matrix unit throughput relative to 8x8 (timing only; never changes values).
    double speed_factor() const { return isa::matrix_speed(input16, weight16); }
};

struct WeightTile {
    std::uint32_t dim = 0;
    bool wide = false;         ///< 16-bit elements
    bool is_signed = true;
    std::vector<std::int32_t> values;  ///< dim x dim, row-major [input row][output column]

    std::uint64_t byte_size() const { return std::uint64_t{dim} * dim * (wide ? 2 : 1); }
    std::int32_t at(std::uint32_t row, std::uint32_t col) const { return values[std::size_t{row} * dim + col]; }
};

/// Sparse byte store for the 8 GiB Weight Memory; untouched pages read as zero.
class WeightMemory {
public:
    WeightMemory(std::uint64_t capacity, std::uint64_t unit_bytes);

    std::uint64_t capacity() const { return capacity_; }
    std::uint64_t unit_bytes() const { return unit_bytes_; }
    std::uint64_t units() const { return capacity_ / unit_bytes_; }

    /// Writes `bytes` starting at byte address `addr`.
    void write(std::uint64_t addr, std::span<const std::uint8_t> bytes);
    void read(std::uint64_t addr, std::span<std::uint8_t> out) const;

    bool operator==(const WeightMemory& other) const;

private:
    std::uint64_t capacity_;
    std::uint64_t unit_bytes_;
    std::unordered_map<std::uint64_t, std::vector<std::uint8_t>> pages_;
};

/// Host-side buffers addressed by the DMA instructions.
class HostMemory {
public:
    explicit HostMemory(std::size_t bytes = 0) : data_(bytes, 0) {}
    explicit HostMemory(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

    std::size_t size() const { return data_.size(); }
    std::span<std::uint8_t> bytes() { return data_; }
    std::span<const std::uint8_t> bytes() const { return data_; }

    /// Bounds-checked; throws ExecError(AddressFault) with index `at`.
    void read(std::uint64_t addr, std::span<std::uint8_t> out, std::size_t at) const;
    void write(std::uint64_t addr, std::span<const std::uint8_t> in, std::size_t at);

    bool operator==(const HostMemory&) const = default;

private:
    std::vector<std::uint8_t> data_;
};

struct PendingFetch {
    std::uint64_t unit = 0;
    bool wide = false;
    bool is_signed = true;
    bool operator==(const PendingFetch&) const = default;
};

struct TpuState {
    explicit TpuState(const arch::TpuConfig& cfg);

    arch::TpuConfig cfg;
    std::vector<std::uint8_t> ub;
    WeightMemory wmem;
    std::deque<WeightTile> wfifo;        ///< never longer than max(1, fifo_depth_tiles)
    std::deque<PendingFetch> pending;    ///< requested tiles waiting for a FIFO slot
    std::optional<WeightTile> active_tile;
    std::optional<WeightTile> shadow_tile;
    std::vector<std::int32_t> acc;       ///< acc_entries x matrix_dim
    std::uint64_t overflow_count = 0;
    isa::RegisterFile regs;

    std::size_t fifo_capacity() const { return cfg.fifo_depth_tiles == 0 ? 1 : cfg.fifo_depth_tiles; }
    std::int32_t acc_at(std::uint32_t row, std::uint32_t col) const {
        return acc[std::size_t{row} * cfg.matrix_dim + col];
    }
    std::span<const std::int32_t> acc_row(std::uint32_t row) const {
        return std::span<const std::int32_t>(acc).subspan(std::size_t{row} * cfg.matrix_dim, cfg.matrix_dim);
    }

    /// Writes element `col` of the activation vector stored at UB row `row`.
    void ub_store(std::uint64_t row, std::uint32_t col, std::int32_t value, bool wide);
    std::int32_t ub_load(std::uint64_t row, std::uint32_t col, bool wide, bool is_signed) const;

    bool operator==(const TpuState& other) const;
};

bool operator==(const WeightTile& a, const WeightTile& b);

struct ExecEvent {
    std::size_t index = 0;
    isa::Opcode opcode = isa::Opcode::Nop;
    bool convolve = false;
    std::uint32_t ub_addr = 0;
    std::uint16_t acc_addr = 0;
    std::uint32_t length = 0;
    std::uint8_t repeat = 0;
    std::uint64_t bytes = 0;

    bool operator==(const ExecEvent&) const = default;
};

void to_json(nlohmann::json& j, const ExecEvent& e);

struct ExecResult {
    std::vector<ExecEvent> events;
    std::size_t retired = 0;  ///< instructions retired, including Halt
    bool halted = false;
};

/// Runs `program` to Halt (or the end) mutating `state` and `host`.
ExecResult execute(const isa::Program& program, TpuState& state, HostMemory& host);

/// JSON-lines rendering of the event log.
std::string events_to_jsonl(const std::vector<ExecEvent>& events);

// Unit-level operations. `index` is only used to tag errors.

void read_weights(TpuState& s, std::uint64_t wmem_unit, std::uint32_t n_tiles, bool wide, bool is_signed,
                  std::size_t index = 0);
/// Moves the next tile into the matrix unit (shadow -> active, FIFO -> shadow).
void switch_tile(TpuState& s, std::size_t index = 0);
void matrix_multiply(TpuState& s, std::uint64_t ub_row, std::uint32_t acc_base, std::uint32_t rows, bool accumulate,
                     bool input16, bool input_signed, std::size_t index = 0);
void convolve(TpuState& s, std::uint64_t ub_row, std::uint32_t acc_base, const isa::ConvGeometry& g, bool accumulate,
              bool input16, bool input_signed, std::size_t index = 0);

struct Requant {
    std::int32_t scale = 1;
    std::uint32_t shift = 0;
    bool operator==(const Requant&) const = default;
};

struct OutputFormat {
    bool wide = false;
    bool is_unsigned = false;
};

void activate(TpuState& s, std::uint32_t acc_base, std::uint64_t ub_row, std::uint32_t rows, isa::ActivationFn fn,
              Requant rq, OutputFormat out, std::size_t index = 0);
void activate_pooled(TpuState& s, std::uint32_t acc_base, std::uint64_t ub_row, const isa::PoolGeometry& g,
                     isa::PoolKind kind, isa::ActivationFn fn, Requant rq, OutputFormat out, std::size_t index = 0);

// Fixed-point helpers shared with the quantizer.

/// (value * scale) >> shift with round-half-away-from-zero.
std::int64_t requantize(std::int64_t value, std::int32_t scale, std::uint32_t shift);
/// Integer division rounding half away from zero.
std::int64_t div_round_away(std::int64_t num, std::int64_t den);
std::int32_t saturate(std::int64_t v, OutputFormat out);

/// LUT input coding: an int8 q stands for q / kLutInputScale.
inline constexpr double kLutInputScale = 16.0;
/// 256-entry tables indexed by (q + 128).
const std::array<std::uint8_t, 256>& sigmoid_table();
const std::array<std::int8_t, 256>& tanh_table();

/// requantize -> nonlinearity -> saturate, as the activation unit does per element.
std::int32_t activation_pipeline(std::int64_t acc_value, isa::ActivationFn fn, Requant rq, OutputFormat out);

} // namespace tpusim::func
