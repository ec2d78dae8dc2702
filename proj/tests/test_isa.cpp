#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "tpusim/isa.hpp"
#include "tpusim/lowering.hpp"

using namespace tpusim;
using namespace tpusim::isa;

namespace {

// Byte layout written out by hand: opcode, flags, ub[3], acc[2], length[4], repeat, little-endian.
Frame layout_oracle(std::uint8_t op, std::uint8_t flags, std::uint32_t ub, std::uint16_t acc, std::uint32_t len,
                    std::uint8_t rep) {
    return {op,
            flags,
            std::uint8_t(ub & 0xFF),
            std::uint8_t((ub >> 8) & 0xFF),
            std::uint8_t((ub >> 16) & 0xFF),
            std::uint8_t(acc & 0xFF),
            std::uint8_t(acc >> 8),
            std::uint8_t(len & 0xFF),
            std::uint8_t((len >> 8) & 0xFF),
            std::uint8_t((len >> 16) & 0xFF),
            std::uint8_t(len >> 24),
            rep};
}

std::uint8_t legal_flags(Opcode op, std::mt19937_64& rng) {
    switch (op) {
    case Opcode::MatrixMultiply: return std::uint8_t(rng() & 0x1F);
    case Opcode::ReadWeights: return std::uint8_t(rng() & 0x03);
    case Opcode::Activate: {
        std::uint8_t f = std::uint8_t(rng() & 0x33);
        return std::uint8_t(f | ((rng() % 3) << 2));  // pool field 3 is reserved
    }
    case Opcode::DebugTag: return std::uint8_t(rng());
    default: return 0;
    }
}

Instruction random_instruction(std::mt19937_64& rng) {
    Instruction in;
    in.opcode = kAllOpcodes[rng() % kOpcodeCount];
    in.flags = legal_flags(in.opcode, rng);
    in.ub_addr = std::uint32_t(rng() & kMaxUbAddr);
    in.acc_addr = std::uint16_t(rng());
    in.length = std::uint32_t(rng());
    in.repeat = std::uint8_t(rng());
    return in;
}

bool has(const std::vector<Diagnostic>& d, DiagnosticKind k) {
    return std::any_of(d.begin(), d.end(), [&](const Diagnostic& x) { return x.kind == k; });
}

} // namespace

TEST(Opcodes, DistinctEncodings) {
    std::set<std::uint8_t> seen;
    for (Opcode op : kAllOpcodes) seen.insert(static_cast<std::uint8_t>(op));
    EXPECT_EQ(seen.size(), kOpcodeCount);
    for (Opcode op : kAllOpcodes) EXPECT_EQ(opcode_from_string(to_string(op)), op);
}

TEST(Encode, NopIsOpcodeThenZeros) {
    const auto f = encode(make_nop());
    EXPECT_EQ(f[0], static_cast<std::uint8_t>(Opcode::Nop));
    for (std::size_t i = 1; i < kFrameBytes; ++i) EXPECT_EQ(f[i], 0) << i;
    EXPECT_EQ(decode(f), make_nop());
}

TEST(Encode, MatrixMultiplyLayout) {
    Instruction in;
    in.opcode = Opcode::MatrixMultiply;
    in.ub_addr = 1;
    in.acc_addr = 2;
    in.length = 300;
    const auto f = encode(in);
    EXPECT_EQ(f, layout_oracle(0x03, 0, 1, 2, 300, 0));
    EXPECT_EQ(f[2], 1);
    EXPECT_EQ(f[5], 2);
    EXPECT_EQ(f[7], 44);
    EXPECT_EQ(f[8], 1);
}

TEST(Encode, FieldOverflowAndReservedFlags) {
    Instruction in = make_nop();
    in.ub_addr = kMaxUbAddr + 1;
    EXPECT_THROW(encode(in), EncodeError);
    in = make_halt();
    in.flags = 1;
    EXPECT_THROW(encode(in), EncodeError);
    in = make_read_weights(0, 1);
    in.flags = 0x80;
    EXPECT_THROW(encode(in), EncodeError);
}

TEST(Encode, RoundTripRandom) {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 10000; ++i) {
        const auto in = random_instruction(rng);
        const auto f = encode(in);
        ASSERT_EQ(f, layout_oracle(static_cast<std::uint8_t>(in.opcode), in.flags, in.ub_addr, in.acc_addr, in.length,
                                   in.repeat));
        ASSERT_EQ(decode(f), in) << disassemble(in);
    }
}

TEST(Decode, UnknownOpcode) {
    Frame f{};
    f[0] = 0xFF;
    try {
        decode(f);
        FAIL();
    } catch (const DecodeError& e) {
        EXPECT_EQ(e.kind(), DecodeErrorKind::UnknownOpcode);
    }
}

TEST(Decode, TotalUnderFuzzing) {
    std::mt19937_64 rng(99);
    int ok = 0, rejected = 0;
    for (int i = 0; i < 200000; ++i) {
        Frame f;
        for (auto& b : f) b = std::uint8_t(rng());
        if (i % 2) f[0] = std::uint8_t(f[0] % 16);  // bias toward known opcodes
        try {
            const auto in = decode(f);
            EXPECT_EQ(encode(in), f);
            ++ok;
        } catch (const DecodeError&) {
            ++rejected;
        }
    }
    EXPECT_GT(ok, 0);
    EXPECT_GT(rejected, 0);
}

TEST(Program, SerializeRoundTrip) {
    std::mt19937_64 rng(1);
    Program p;
    p.name = "rt";
    for (int i = 0; i < 100; ++i) p.instructions.push_back(random_instruction(rng));
    p.instructions.push_back(make_halt());
    const auto bytes = serialize(p);
    EXPECT_EQ(bytes.size(), 4 + 2 + 4 + 12 * p.instructions.size());
    EXPECT_TRUE(std::equal(bytes.begin(), bytes.begin() + 4, kProgramMagic.begin()));
    EXPECT_EQ(deserialize(bytes).instructions, p.instructions);

    std::istringstream text(to_jsonl(p));
    EXPECT_EQ(from_jsonl(text).instructions, p.instructions);

    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize(bad), Error);
    bad = bytes;
    bad.pop_back();
    EXPECT_THROW(deserialize(bad), Error);
}

TEST(Program, DisassembleEveryOpcode) {
    for (Opcode op : kAllOpcodes) {
        Instruction in;
        in.opcode = op;
        EXPECT_NE(disassemble(in).find(std::string(to_string(op))), std::string::npos);
    }
}

TEST(Validate, EmptyProgram) {
    const auto d = validate(Program{}, arch::TpuConfig{});
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].kind, DiagnosticKind::MissingHalt);
}

TEST(Validate, AccBoundary) {
    const arch::TpuConfig cfg;
    Program p;
    p.instructions = {make_read_weights(0, 1), make_matmul(0, std::uint16_t(cfg.acc_entries - 1), 1, MatMulFlag::kSwitchTile),
                      make_halt()};
    EXPECT_FALSE(has(validate(p, cfg, {std::nullopt, 1}), DiagnosticKind::AccOutOfRange));
    p.instructions[1] = make_matmul(0, std::uint16_t(cfg.acc_entries), 1, MatMulFlag::kSwitchTile);
    EXPECT_TRUE(has(validate(p, cfg, {std::nullopt, 1}), DiagnosticKind::AccOutOfRange));
}

TEST(Validate, HazardsAndHaltPlacement) {
    const arch::TpuConfig cfg;
    Program p;
    p.instructions = {make_read_weights(0, 1), make_matmul(0, 0, 4, MatMulFlag::kSwitchTile), make_halt()};
    EXPECT_TRUE(has(validate(p, cfg), DiagnosticKind::UninitializedUbRead));
    EXPECT_FALSE(has(validate(p, cfg, {std::nullopt, 4}), DiagnosticKind::UninitializedUbRead));

    p.instructions = {make_activate(0, 0, 4, ActivationFn::ReLU), make_halt()};
    EXPECT_TRUE(has(validate(p, cfg), DiagnosticKind::UninitializedAccRead));

    p.instructions = {make_matmul(0, 0, 4, 0), make_halt()};
    EXPECT_TRUE(has(validate(p, cfg, {std::nullopt, 4}), DiagnosticKind::FifoUnderflow));

    p.instructions = {make_halt(), make_nop()};
    EXPECT_TRUE(has(validate(p, cfg), DiagnosticKind::InstructionAfterHalt));

    p.instructions = {make_read_host(std::uint32_t(cfg.ub_rows()), 1), make_halt()};
    EXPECT_TRUE(has(validate(p, cfg), DiagnosticKind::UbOutOfRange));
}

TEST(Validate, LoweredFcProgramIsClean) {
    const arch::TpuConfig cfg;
    workloads::WorkloadSpec ws{"fc", {workloads::fc(256, 256)}, 16, 8};
    const auto lp = lowering::lower(ws, cfg);
    const auto d = validate(lp.program, cfg, {lp.host.total_bytes(), 0});
    EXPECT_TRUE(d.empty()) << (d.empty() ? "" : d.front().message);
}
