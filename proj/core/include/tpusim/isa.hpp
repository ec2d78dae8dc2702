#pragma once

/**
 * @file isa.hpp
 * @brief The TPU's CISC instruction set, its 12-byte frame encoding, the
 *        program container with its binary file format, and a static validator.
 *
 * Frame layout (little-endian):
 *
 *   byte 0      opcode
 *   byte 1      flags (meaning depends on the opcode, see the Flag namespaces)
 *   bytes 2-4   ub_addr   (24 bits; Unified Buffer row, or Weight Memory tile for ReadWeights)
 *   bytes 5-6   acc_addr  (16 bits; accumulator row, or register id for SetConfig)
 *   bytes 7-10  length    (32 bits; rows, tiles, or two 16-bit dims for Convolve / pooled Activate)
 *   byte 11     repeat    (additional iterations; each advances the addresses by one iteration's footprint)
 */

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpusim/archconfig.hpp"
#include "tpusim/error.hpp"

namespace tpusim::isa {

enum class Opcode : std::uint8_t {
    Nop = 0x00,
    ReadHostMemory = 0x01,
    ReadWeights = 0x02,
    MatrixMultiply = 0x03,  ///< also Convolve, selected by MatMulFlag::kConvolve
    Activate = 0x04,
    WriteHostMemory = 0x05,
    ReadHostMemoryAlt = 0x06,
    WriteHostMemoryAlt = 0x07,
    SetConfig = 0x08,
    SyncA = 0x09,           ///< wait until the matrix unit drains
    SyncB = 0x0A,           ///< wait until every unit drains
    InterruptHost = 0x0B,
    DebugTag = 0x0C,
    Halt = 0x0D,
};

inline constexpr std::size_t kOpcodeCount = 14;
inline constexpr std::array<Opcode, kOpcodeCount> kAllOpcodes = {
    Opcode::Nop,           Opcode::ReadHostMemory,    Opcode::ReadWeights,        Opcode::MatrixMultiply,
    Opcode::Activate,      Opcode::WriteHostMemory,   Opcode::ReadHostMemoryAlt,  Opcode::WriteHostMemoryAlt,
    Opcode::SetConfig,     Opcode::SyncA,             Opcode::SyncB,              Opcode::InterruptHost,
    Opcode::DebugTag,      Opcode::Halt};

std::string_view to_string(Opcode op);
std::optional<Opcode> opcode_from_string(std::string_view name);

namespace MatMulFlag {
inline constexpr std::uint8_t kAccumulate = 1u << 0;  ///< add into accumulators instead of overwriting
inline constexpr std::uint8_t kInput16 = 1u << 1;     ///< 16-bit activations
inline constexpr std::uint8_t kInputSigned = 1u << 2;
inline constexpr std::uint8_t kConvolve = 1u << 3;
inline constexpr std::uint8_t kSwitchTile = 1u << 4;  ///< make the next FIFO tile active before computing
inline constexpr std::uint8_t kValid = 0x1F;
} // namespace MatMulFlag

namespace WeightFlag {
inline constexpr std::uint8_t kWeight16 = 1u << 0;
inline constexpr std::uint8_t kWeightSigned = 1u << 1;
inline constexpr std::uint8_t kValid = 0x03;
} // namespace WeightFlag

enum class ActivationFn : std::uint8_t { Identity = 0, ReLU = 1, Sigmoid = 2, Tanh = 3 };
enum class PoolKind : std::uint8_t { None = 0, Max = 1, Average = 2 };

namespace ActivateFlag {
inline constexpr std::uint8_t kFnMask = 0x03;
inline constexpr std::uint8_t kPoolShift = 2;
inline constexpr std::uint8_t kPoolMask = 0x0C;
inline constexpr std::uint8_t kOutput16 = 1u << 4;
inline constexpr std::uint8_t kOutputUnsigned = 1u << 5;
inline constexpr std::uint8_t kValid = 0x3F;
} // namespace ActivateFlag

/// Registers written by SetConfig (register id travels in the acc_addr field).
enum class ConfigReg : std::uint16_t {
    RequantScale = 0,   ///< int32 multiplier, two's complement in `length`
    RequantShift = 1,   ///< arithmetic right shift, 0..62
    HostAddr = 2,       ///< byte address used by Read/WriteHostMemory, post-incremented
    HostAddrAlt = 3,    ///< byte address used by the Alt variants, post-incremented
    ConvInputDims = 4,  ///< (H << 16) | W of the input image
    ConvStride = 5,
    ConvPad = 6,
    ConvTap = 7,        ///< (r << 8) | s, the kernel tap applied by the next Convolve
    PoolWindow = 8,
    PoolStride = 9,
    PoolPad = 10,
};
inline constexpr std::uint16_t kConfigRegCount = 11;
std::string_view to_string(ConfigReg reg);

inline constexpr std::size_t kFrameBytes = 12;
using Frame = std::array<std::uint8_t, kFrameBytes>;

inline constexpr std::uint32_t kMaxUbAddr = (1u << 24) - 1;
inline constexpr std::uint32_t kMaxAccAddr = (1u << 16) - 1;

struct Instruction {
    Opcode opcode = Opcode::Nop;
    std::uint8_t flags = 0;
    std::uint32_t ub_addr = 0;
    std::uint16_t acc_addr = 0;
    std::uint32_t length = 0;
    std::uint8_t repeat = 0;

    std::uint32_t iterations() const { return std::uint32_t{repeat} + 1; }
    bool is_convolve() const {
        return opcode == Opcode::MatrixMultiply && (flags & MatMulFlag::kConvolve) != 0;
    }
    /// High/low halves of `length` for the two-dimensional forms.
    std::uint16_t length_hi() const { return static_cast<std::uint16_t>(length >> 16); }
    std::uint16_t length_lo() const { return static_cast<std::uint16_t>(length & 0xFFFF); }

    bool operator==(const Instruction&) const = default;
};

// Builders used by the lowering pass and tests.
Instruction make_nop();
Instruction make_halt();
Instruction make_sync_a();
Instruction make_sync_b();
Instruction make_set_config(ConfigReg reg, std::uint32_t value);
Instruction make_read_host(std::uint32_t ub_row, std::uint32_t rows, std::uint8_t repeat = 0, bool alt = false);
Instruction make_write_host(std::uint32_t ub_row, std::uint32_t rows, std::uint8_t repeat = 0, bool alt = false);
Instruction make_read_weights(std::uint32_t wmem_tile, std::uint32_t n_tiles, bool weight16 = false,
                              bool weight_signed = true, std::uint8_t repeat = 0);
Instruction make_matmul(std::uint32_t ub_row, std::uint16_t acc_row, std::uint32_t rows, std::uint8_t flags,
                        std::uint8_t repeat = 0);
Instruction make_convolve(std::uint32_t ub_row, std::uint16_t acc_row, std::uint16_t out_h, std::uint16_t out_w,
                          std::uint8_t flags, std::uint8_t repeat = 0);
Instruction make_activate(std::uint32_t ub_row, std::uint16_t acc_row, std::uint32_t length, ActivationFn fn,
                          PoolKind pool = PoolKind::None, bool out16 = false, bool out_unsigned = false,
                          std::uint8_t repeat = 0);

ActivationFn activate_fn(const Instruction& in);
PoolKind activate_pool(const Instruction& in);

enum class DecodeErrorKind { UnknownOpcode, ReservedFlagSet, BadLength };

class EncodeError : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    DecodeError(DecodeErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    DecodeErrorKind kind() const noexcept { return kind_; }

private:
    DecodeErrorKind kind_;
};

/// Throws EncodeError if a field exceeds its bit width or flags use reserved bits.
Frame encode(const Instruction& in);
/// Total over all 12-byte inputs: returns an instruction or throws DecodeError.
Instruction decode(std::span<const std::uint8_t, kFrameBytes> frame);
Instruction decode(const Frame& frame);

/// Debug pretty-printer, one line.
std::string disassemble(const Instruction& in);

void to_json(nlohmann::json& j, const Instruction& in);
void from_json(const nlohmann::json& j, Instruction& in);

struct Program {
    std::vector<Instruction> instructions;
    std::string name;
    std::uint64_t config_hash = 0;

    bool operator==(const Program&) const = default;
};

inline constexpr std::array<char, 4> kProgramMagic = {'T', 'P', 'U', 'P'};
inline constexpr std::uint16_t kProgramVersion = 1;

/// Binary container: "TPUP", u16 version, u32 count, count x 12-byte frames.
std::vector<std::uint8_t> serialize(const Program& program);
Program deserialize(std::span<const std::uint8_t> bytes);
void write_program(const std::string& path, const Program& program);
Program read_program(const std::string& path);

/// Text form: one JSON object per instruction per line.
std::string to_jsonl(const Program& program);
Program from_jsonl(std::istream& in);

enum class DiagnosticKind {
    MissingHalt,
    InstructionAfterHalt,
    UbOutOfRange,
    AccOutOfRange,
    WeightMemOutOfRange,
    HostOutOfRange,
    UninitializedAccRead,
    UninitializedUbRead,
    FifoUnderflow,
    ReservedFlagSet,
    UnknownConfigRegister,
    BadLength,
    BadGeometry,
};

std::string_view to_string(DiagnosticKind kind);

struct Diagnostic {
    DiagnosticKind kind;
    std::size_t index;  ///< instruction index (program size for MissingHalt)
    std::string message;
};

struct ValidateOptions {
    /// Host memory size; host transfers are only bounds-checked when set.
    std::optional<std::uint64_t> host_bytes;
    /// UB rows the host is assumed to have initialized before the program runs.
    std::uint32_t preinitialized_ub_rows = 0;
};

/// Static checks that shadow the runtime faults: address bounds, Halt
/// placement, uninitialized reads (the "delay slot" hazard) and FIFO underflow.
/// Programs are straight-line, so register values are tracked exactly.
std::vector<Diagnostic> validate(const Program& program, const arch::TpuConfig& cfg,
                                 const ValidateOptions& options = {});

} // namespace tpusim::isa
