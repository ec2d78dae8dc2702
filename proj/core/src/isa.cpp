#include "tpusim/isa.hpp"

#include <fstream>
#include <istream>
#include <iterator>
#include <sstream>

#include "tpusim/footprint.hpp"

namespace tpusim::isa {

using nlohmann::json;

std::string_view to_string(Opcode op) {
    switch (op) {
    case Opcode::Nop: return "Nop";
    case Opcode::ReadHostMemory: return "ReadHostMemory";
    case Opcode::ReadWeights: return "ReadWeights";
    case Opcode::MatrixMultiply: return "MatrixMultiply";
    case Opcode::Activate: return "Activate";
    case Opcode::WriteHostMemory: return "WriteHostMemory";
    case Opcode::ReadHostMemoryAlt: return "ReadHostMemoryAlt";
    case Opcode::WriteHostMemoryAlt: return "WriteHostMemoryAlt";
    case Opcode::SetConfig: return "SetConfig";
    case Opcode::SyncA: return "SyncA";
    case Opcode::SyncB: return "SyncB";
    case Opcode::InterruptHost: return "InterruptHost";
    case Opcode::DebugTag: return "DebugTag";
    case Opcode::Halt: return "Halt";
    }
    return "Unknown";
}

std::optional<Opcode> opcode_from_string(std::string_view name) {
    for (Opcode op : kAllOpcodes) {
        if (to_string(op) == name) return op;
    }
    return std::nullopt;
}

std::string_view to_string(ConfigReg reg) {
    switch (reg) {
    case ConfigReg::RequantScale: return "requant_scale";
    case ConfigReg::RequantShift: return "requant_shift";
    case ConfigReg::HostAddr: return "host_addr";
    case ConfigReg::HostAddrAlt: return "host_addr_alt";
    case ConfigReg::ConvInputDims: return "conv_input_dims";
    case ConfigReg::ConvStride: return "conv_stride";
    case ConfigReg::ConvPad: return "conv_pad";
    case ConfigReg::ConvTap: return "conv_tap";
    case ConfigReg::PoolWindow: return "pool_window";
    case ConfigReg::PoolStride: return "pool_stride";
    case ConfigReg::PoolPad: return "pool_pad";
    }
    return "unknown";
}

std::string_view to_string(DiagnosticKind kind) {
    switch (kind) {
    case DiagnosticKind::MissingHalt: return "MissingHalt";
    case DiagnosticKind::InstructionAfterHalt: return "InstructionAfterHalt";
    case DiagnosticKind::UbOutOfRange: return "UbOutOfRange";
    case DiagnosticKind::AccOutOfRange: return "AccOutOfRange";
    case DiagnosticKind::WeightMemOutOfRange: return "WeightMemOutOfRange";
    case DiagnosticKind::HostOutOfRange: return "HostOutOfRange";
    case DiagnosticKind::UninitializedAccRead: return "UninitializedAccRead";
    case DiagnosticKind::UninitializedUbRead: return "UninitializedUbRead";
    case DiagnosticKind::FifoUnderflow: return "FifoUnderflow";
    case DiagnosticKind::ReservedFlagSet: return "ReservedFlagSet";
    case DiagnosticKind::UnknownConfigRegister: return "UnknownConfigRegister";
    case DiagnosticKind::BadLength: return "BadLength";
    case DiagnosticKind::BadGeometry: return "BadGeometry";
    }
    return "Unknown";
}

// Builders -------------------------------------------------------------------

Instruction make_nop() { return {}; }
Instruction make_halt() { return {.opcode = Opcode::Halt}; }
Instruction make_sync_a() { return {.opcode = Opcode::SyncA}; }
Instruction make_sync_b() { return {.opcode = Opcode::SyncB}; }

Instruction make_set_config(ConfigReg reg, std::uint32_t value) {
    return {.opcode = Opcode::SetConfig, .acc_addr = static_cast<std::uint16_t>(reg), .length = value};
}

Instruction make_read_host(std::uint32_t ub_row, std::uint32_t rows, std::uint8_t repeat, bool alt) {
    return {.opcode = alt ? Opcode::ReadHostMemoryAlt : Opcode::ReadHostMemory,
            .ub_addr = ub_row,
            .length = rows,
            .repeat = repeat};
}

Instruction make_write_host(std::uint32_t ub_row, std::uint32_t rows, std::uint8_t repeat, bool alt) {
    return {.opcode = alt ? Opcode::WriteHostMemoryAlt : Opcode::WriteHostMemory,
            .ub_addr = ub_row,
            .length = rows,
            .repeat = repeat};
}

Instruction make_read_weights(std::uint32_t wmem_tile, std::uint32_t n_tiles, bool weight16, bool weight_signed,
                              std::uint8_t repeat) {
    std::uint8_t flags = 0;
    if (weight16) flags |= WeightFlag::kWeight16;
    if (weight_signed) flags |= WeightFlag::kWeightSigned;
    return {.opcode = Opcode::ReadWeights, .flags = flags, .ub_addr = wmem_tile, .length = n_tiles, .repeat = repeat};
}

Instruction make_matmul(std::uint32_t ub_row, std::uint16_t acc_row, std::uint32_t rows, std::uint8_t flags,
                        std::uint8_t repeat) {
    return {.opcode = Opcode::MatrixMultiply,
            .flags = static_cast<std::uint8_t>(flags & ~MatMulFlag::kConvolve),
            .ub_addr = ub_row,
            .acc_addr = acc_row,
            .length = rows,
            .repeat = repeat};
}

Instruction make_convolve(std::uint32_t ub_row, std::uint16_t acc_row, std::uint16_t out_h, std::uint16_t out_w,
                          std::uint8_t flags, std::uint8_t repeat) {
    return {.opcode = Opcode::MatrixMultiply,
            .flags = static_cast<std::uint8_t>(flags | MatMulFlag::kConvolve),
            .ub_addr = ub_row,
            .acc_addr = acc_row,
            .length = (std::uint32_t{out_h} << 16) | out_w,
            .repeat = repeat};
}

Instruction make_activate(std::uint32_t ub_row, std::uint16_t acc_row, std::uint32_t length, ActivationFn fn,
                          PoolKind pool, bool out16, bool out_unsigned, std::uint8_t repeat) {
    std::uint8_t flags = static_cast<std::uint8_t>(fn);
    flags |= static_cast<std::uint8_t>(static_cast<std::uint8_t>(pool) << ActivateFlag::kPoolShift);
    if (out16) flags |= ActivateFlag::kOutput16;
    if (out_unsigned) flags |= ActivateFlag::kOutputUnsigned;
    return {.opcode = Opcode::Activate,
            .flags = flags,
            .ub_addr = ub_row,
            .acc_addr = acc_row,
            .length = length,
            .repeat = repeat};
}

ActivationFn activate_fn(const Instruction& in) {
    return static_cast<ActivationFn>(in.flags & ActivateFlag::kFnMask);
}

PoolKind activate_pool(const Instruction& in) {
    return static_cast<PoolKind>((in.flags & ActivateFlag::kPoolMask) >> ActivateFlag::kPoolShift);
}

// Encoding -------------------------------------------------------------------

namespace {

bool known_opcode(std::uint8_t byte) { return byte <= static_cast<std::uint8_t>(Opcode::Halt); }

/// Flag bits that carry meaning for `op`; anything else is reserved.
std::uint8_t valid_flags(Opcode op) {
    switch (op) {
    case Opcode::MatrixMultiply: return MatMulFlag::kValid;
    case Opcode::ReadWeights: return WeightFlag::kValid;
    case Opcode::Activate: return ActivateFlag::kValid;
    case Opcode::DebugTag: return 0xFF;
    default: return 0;
    }
}

bool reserved_flags_set(Opcode op, std::uint8_t flags) {
    if (flags & ~valid_flags(op)) return true;
    if (op == Opcode::Activate && ((flags & ActivateFlag::kPoolMask) >> ActivateFlag::kPoolShift) == 3) return true;
    return false;
}

} // namespace

Frame encode(const Instruction& in) {
    if (!known_opcode(static_cast<std::uint8_t>(in.opcode))) throw EncodeError("unknown opcode");
    if (in.ub_addr > kMaxUbAddr) throw EncodeError("ub_addr " + std::to_string(in.ub_addr) + " exceeds 24 bits");
    if (reserved_flags_set(in.opcode, in.flags))
        throw EncodeError("reserved flag bits set for " + std::string(to_string(in.opcode)));
    Frame f{};
    f[0] = static_cast<std::uint8_t>(in.opcode);
    f[1] = in.flags;
    f[2] = static_cast<std::uint8_t>(in.ub_addr);
    f[3] = static_cast<std::uint8_t>(in.ub_addr >> 8);
    f[4] = static_cast<std::uint8_t>(in.ub_addr >> 16);
    f[5] = static_cast<std::uint8_t>(in.acc_addr);
    f[6] = static_cast<std::uint8_t>(in.acc_addr >> 8);
    for (int i = 0; i < 4; ++i) f[7 + i] = static_cast<std::uint8_t>(in.length >> (8 * i));
    f[11] = in.repeat;
    return f;
}

Instruction decode(std::span<const std::uint8_t, kFrameBytes> f) {
    if (!known_opcode(f[0])) {
        throw DecodeError(DecodeErrorKind::UnknownOpcode, "unknown opcode byte " + std::to_string(f[0]));
    }
    Instruction in;
    in.opcode = static_cast<Opcode>(f[0]);
    in.flags = f[1];
    if (reserved_flags_set(in.opcode, in.flags)) {
        throw DecodeError(DecodeErrorKind::ReservedFlagSet,
                          "reserved flag bits set for " + std::string(to_string(in.opcode)));
    }
    in.ub_addr = std::uint32_t{f[2]} | (std::uint32_t{f[3]} << 8) | (std::uint32_t{f[4]} << 16);
    in.acc_addr = static_cast<std::uint16_t>(f[5] | (f[6] << 8));
    in.length = 0;
    for (int i = 0; i < 4; ++i) in.length |= std::uint32_t{f[7 + i]} << (8 * i);
    in.repeat = f[11];
    return in;
}

Instruction decode(const Frame& frame) { return decode(std::span<const std::uint8_t, kFrameBytes>(frame)); }

std::string disassemble(const Instruction& in) {
    std::ostringstream os;
    os << (in.is_convolve() ? std::string_view("Convolve") : to_string(in.opcode));
    switch (in.opcode) {
    case Opcode::SetConfig:
        if (in.acc_addr < kConfigRegCount) os << ' ' << to_string(static_cast<ConfigReg>(in.acc_addr));
        else os << " reg" << in.acc_addr;
        os << '=' << in.length;
        break;
    case Opcode::ReadWeights:
        os << " wmem=" << in.ub_addr << " tiles=" << in.length;
        break;
    case Opcode::Nop:
    case Opcode::Halt:
    case Opcode::SyncA:
    case Opcode::SyncB:
    case Opcode::InterruptHost:
        break;
    default:
        os << " ub=" << in.ub_addr << " acc=" << in.acc_addr;
        if (in.is_convolve() || (in.opcode == Opcode::Activate && activate_pool(in) != PoolKind::None))
            os << " dims=" << in.length_hi() << 'x' << in.length_lo();
        else
            os << " len=" << in.length;
        break;
    }
    if (in.flags) os << " flags=0x" << std::hex << int(in.flags) << std::dec;
    if (in.repeat) os << " repeat=" << int(in.repeat);
    return os.str();
}

void to_json(json& j, const Instruction& in) {
    j = json{{"op", std::string(to_string(in.opcode))},
             {"flags", in.flags},
             {"ub_addr", in.ub_addr},
             {"acc_addr", in.acc_addr},
             {"length", in.length},
             {"repeat", in.repeat}};
}

void from_json(const json& j, Instruction& in) {
    if (!j.is_object() || !j.contains("op")) throw Error("instruction JSON needs an \"op\" field");
    for (const auto& [key, _] : j.items()) {
        if (key != "op" && key != "flags" && key != "ub_addr" && key != "acc_addr" && key != "length" &&
            key != "repeat")
            throw Error("unknown instruction field \"" + key + "\"");
    }
    const auto op = opcode_from_string(j.at("op").get<std::string>());
    if (!op) throw Error("unknown opcode \"" + j.at("op").get<std::string>() + "\"");
    auto field = [&](const char* key, std::uint64_t max) -> std::uint64_t {
        if (!j.contains(key)) return 0;
        const auto& v = j.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            throw Error(std::string(key) + " must be a non-negative integer");
        const auto x = v.get<std::uint64_t>();
        if (x > max) throw Error(std::string(key) + " out of range");
        return x;
    };
    in = Instruction{};
    in.opcode = *op;
    in.flags = static_cast<std::uint8_t>(field("flags", 0xFF));
    in.ub_addr = static_cast<std::uint32_t>(field("ub_addr", kMaxUbAddr));
    in.acc_addr = static_cast<std::uint16_t>(field("acc_addr", kMaxAccAddr));
    in.length = static_cast<std::uint32_t>(field("length", 0xFFFFFFFFull));
    in.repeat = static_cast<std::uint8_t>(field("repeat", 0xFF));
}

// Program container ------------------------------------------------------------

std::vector<std::uint8_t> serialize(const Program& program) {
    std::vector<std::uint8_t> out;
    out.reserve(10 + program.instructions.size() * kFrameBytes);
    out.insert(out.end(), kProgramMagic.begin(), kProgramMagic.end());
    out.push_back(static_cast<std::uint8_t>(kProgramVersion));
    out.push_back(static_cast<std::uint8_t>(kProgramVersion >> 8));
    const auto count = static_cast<std::uint32_t>(program.instructions.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
    for (const auto& in : program.instructions) {
        const Frame f = encode(in);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

Program deserialize(std::span<const std::uint8_t> bytes) {
    constexpr std::size_t kHeader = 10;
    if (bytes.size() < kHeader || !std::equal(kProgramMagic.begin(), kProgramMagic.end(), bytes.begin()))
        throw Error("not a TPUP program (bad magic)");
    const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
    if (version != kProgramVersion) throw Error("unsupported program version " + std::to_string(version));
    std::uint32_t count = 0;
    for (int i = 0; i < 4; ++i) count |= std::uint32_t{bytes[6 + i]} << (8 * i);
    if (bytes.size() != kHeader + std::uint64_t{count} * kFrameBytes)
        throw Error("program size does not match its instruction count");
    Program p;
    p.instructions.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        p.instructions.push_back(decode(bytes.subspan(kHeader + i * kFrameBytes).first<kFrameBytes>()));
    }
    return p;
}

void write_program(const std::string& path, const Program& program) {
    const auto bytes = serialize(program);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Program read_program(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::string to_jsonl(const Program& program) {
    std::string out;
    for (const auto& in : program.instructions) {
        out += json(in).dump();
        out += '\n';
    }
    return out;
}

Program from_jsonl(std::istream& in) {
    Program p;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            p.instructions.push_back(json::parse(line).get<Instruction>());
        } catch (const json::exception& e) {
            throw Error("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return p;
}

// Validation -----------------------------------------------------------------

namespace {

class Validator {
public:
    Validator(const arch::TpuConfig& cfg, const ValidateOptions& opt)
        : cfg_(cfg), opt_(opt), ub_written_(cfg.ub_rows(), 0), acc_written_(cfg.acc_entries, 0) {
        const auto pre = std::min<std::uint64_t>(opt.preinitialized_ub_rows, ub_written_.size());
        std::fill(ub_written_.begin(), ub_written_.begin() + static_cast<std::ptrdiff_t>(pre), 1);
    }

    std::vector<Diagnostic> run(const Program& program) {
        bool halted = false;
        for (std::size_t i = 0; i < program.instructions.size(); ++i) {
            const auto& in = program.instructions[i];
            if (halted) {
                add(DiagnosticKind::InstructionAfterHalt, i, "instruction follows Halt");
                continue;
            }
            if (in.opcode == Opcode::Halt) {
                halted = true;
                continue;
            }
            check(in, i);
        }
        if (!halted) add(DiagnosticKind::MissingHalt, program.instructions.size(), "program does not end with Halt");
        return std::move(diags_);
    }

private:
    void add(DiagnosticKind k, std::size_t i, std::string msg) { diags_.push_back({k, i, std::move(msg)}); }

    bool in_bounds(const RowRange& r, std::uint64_t limit) const { return r.empty() || r.end <= limit; }

    bool all_set(const std::vector<std::uint8_t>& v, const RowRange& r) const {
        for (auto x = r.begin; x < r.end; ++x)
            if (!v[x]) return false;
        return true;
    }

    void mark(std::vector<std::uint8_t>& v, const RowRange& r) {
        std::fill(v.begin() + static_cast<std::ptrdiff_t>(r.begin), v.begin() + static_cast<std::ptrdiff_t>(r.end), 1);
    }

    void check(const Instruction& in, std::size_t i) {
        if (reserved_flags_set(in.opcode, in.flags)) {
            add(DiagnosticKind::ReservedFlagSet, i, "reserved flag bits set");
            return;
        }
        switch (in.opcode) {
        case Opcode::SetConfig:
            if (in.acc_addr >= kConfigRegCount) {
                add(DiagnosticKind::UnknownConfigRegister, i, "unknown register " + std::to_string(in.acc_addr));
                return;
            }
            if (static_cast<ConfigReg>(in.acc_addr) == ConfigReg::RequantShift && in.length > 62) {
                add(DiagnosticKind::BadLength, i, "requant shift above 62");
                return;
            }
            regs_.set(static_cast<ConfigReg>(in.acc_addr), in.length);
            return;
        case Opcode::ReadHostMemory:
        case Opcode::ReadHostMemoryAlt:
        case Opcode::WriteHostMemory:
        case Opcode::WriteHostMemoryAlt:
        case Opcode::ReadWeights:
            if (in.length == 0) {
                add(DiagnosticKind::BadLength, i, "zero length");
                return;
            }
            break;
        case Opcode::MatrixMultiply:
            if (in.is_convolve()) {
                auto g = conv_geometry(in, regs_);
                if (!g.conv) {
                    add(DiagnosticKind::BadGeometry, i, g.error);
                    return;
                }
            } else if (in.length == 0) {
                add(DiagnosticKind::BadLength, i, "zero length");
                return;
            }
            break;
        case Opcode::Activate:
            if (activate_pool(in) != PoolKind::None) {
                auto g = pool_geometry(in, regs_);
                if (!g.pool) {
                    add(DiagnosticKind::BadGeometry, i, g.error);
                    return;
                }
            } else if (in.length == 0) {
                add(DiagnosticKind::BadLength, i, "zero length");
                return;
            }
            break;
        default:
            return;
        }

        if (in.opcode == Opcode::MatrixMultiply) {
            if (in.flags & MatMulFlag::kSwitchTile) {
                if (tiles_consumed_ >= tiles_requested_) {
                    add(DiagnosticKind::FifoUnderflow, i, "tile switch with no weight tile requested");
                    return;
                }
                ++tiles_consumed_;
                have_active_ = true;
            } else if (!have_active_) {
                add(DiagnosticKind::FifoUnderflow, i, "matrix multiply before any weight tile is active");
                return;
            }
        }

        for (std::uint32_t it = 0; it < in.iterations(); ++it) {
            const Footprint f = iteration_footprint(in, it, regs_, cfg_);
            if (!in_bounds(f.ub_read, cfg_.ub_rows()) || !in_bounds(f.ub_write, cfg_.ub_rows())) {
                add(DiagnosticKind::UbOutOfRange, i, "Unified Buffer rows out of range");
                return;
            }
            if (!in_bounds(f.acc_read, cfg_.acc_entries) || !in_bounds(f.acc_write, cfg_.acc_entries)) {
                add(DiagnosticKind::AccOutOfRange, i, "accumulator rows out of range");
                return;
            }
            if (!in_bounds(f.wmem_units, cfg_.weight_mem_bytes / cfg_.tile_bytes())) {
                add(DiagnosticKind::WeightMemOutOfRange, i, "Weight Memory tiles out of range");
                return;
            }
            if (f.host_bytes && opt_.host_bytes && f.host_addr + f.host_bytes > *opt_.host_bytes) {
                add(DiagnosticKind::HostOutOfRange, i, "host memory range out of bounds");
                return;
            }
            if (!f.ub_read.empty() && !all_set(ub_written_, f.ub_read)) {
                add(DiagnosticKind::UninitializedUbRead, i, "reads Unified Buffer rows never written");
                return;
            }
            if (!f.acc_read.empty() && !all_set(acc_written_, f.acc_read)) {
                add(DiagnosticKind::UninitializedAccRead, i, "reads accumulator rows never written");
                return;
            }
            if (!f.ub_write.empty()) mark(ub_written_, f.ub_write);
            if (!f.acc_write.empty()) mark(acc_written_, f.acc_write);
            tiles_requested_ += f.tiles;
        }
        if (in.opcode == Opcode::ReadHostMemory || in.opcode == Opcode::WriteHostMemory) {
            const auto reg = ConfigReg::HostAddr;
            regs_.set(reg, regs_.get(reg) + static_cast<std::uint32_t>(std::uint64_t{in.length} * cfg_.ub_row_bytes() *
                                                                       in.iterations()));
        } else if (in.opcode == Opcode::ReadHostMemoryAlt || in.opcode == Opcode::WriteHostMemoryAlt) {
            const auto reg = ConfigReg::HostAddrAlt;
            regs_.set(reg, regs_.get(reg) + static_cast<std::uint32_t>(std::uint64_t{in.length} * cfg_.ub_row_bytes() *
                                                                       in.iterations()));
        }
    }

    const arch::TpuConfig& cfg_;
    const ValidateOptions& opt_;
    RegisterFile regs_;
    std::vector<std::uint8_t> ub_written_;
    std::vector<std::uint8_t> acc_written_;
    std::uint64_t tiles_requested_ = 0;
    std::uint64_t tiles_consumed_ = 0;
    bool have_active_ = false;
    std::vector<Diagnostic> diags_;
};

} // namespace

std::vector<Diagnostic> validate(const Program& program, const arch::TpuConfig& cfg, const ValidateOptions& options) {
    return Validator(cfg, options).run(program);
}

} // namespace tpusim::isa
