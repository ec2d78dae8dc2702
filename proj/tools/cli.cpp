#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tpusim/analysis.hpp"
#include "tpusim/dse.hpp"
#include "tpusim/funcsim.hpp"
#include "tpusim/isa.hpp"
#include "tpusim/lowering.hpp"
#include "tpusim/timesim.hpp"
#include "tpusim/workloads.hpp"

namespace tpusim::cli {
namespace {

constexpr const char* kToolVersion = "1.0.0";

class UsageError : public Error {
public:
    using Error::Error;
};

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open \"" + path + "\" for writing");
    f << data;
    if (!f) throw Error("write failed for \"" + path + "\"");
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open \"" + path + "\" for reading");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Data goes to --out when given (with a metadata sidecar), else to `out`.
void emit(const Common& c, const std::string& command, const std::vector<std::string>& args, const std::string& data,
          std::ostream& out, std::uint64_t cfg_hash) {
    if (c.out.empty() || c.out == "-") {
        out << data;
        return;
    }
    write_file(c.out, data);
    nlohmann::json meta = {{"tool", "tpusim"},     {"version", kToolVersion}, {"command", command},
                           {"argv", args},         {"config_hash", cfg_hash}, {"output", c.out}};
    if (c.seed) meta["seed"] = *c.seed;
    write_file(c.out + ".meta.json", meta.dump(2) + "\n");
}

arch::TpuConfig tpu_config(const Common& c) { return c.config.empty() ? arch::TpuConfig{} : arch::load_tpu_config(c.config); }

std::uint64_t require_seed(const Common& c, const std::string& why) {
    if (!c.seed) throw UsageError("--seed is required " + why);
    return *c.seed;
}

workloads::WorkloadSpec resolve_workload(const std::string& name, const Common& c) {
    const auto& presets = workloads::preset_names();
    if (std::find(presets.begin(), presets.end(), name) != presets.end()) return workloads::make_preset(name);
    if (name == "random") return workloads::random_workload(require_seed(c, "for --workload random"));
    if (std::filesystem::exists(name)) return workloads::load_workload(name);
    throw UsageError("unknown workload \"" + name + "\" (a preset name, \"random\" or a JSON file)");
}

std::vector<workloads::WorkloadSpec> resolve_workloads(const std::vector<std::string>& names, const Common& c) {
    std::vector<workloads::WorkloadSpec> v;
    if (names.empty()) return workloads::all_presets();
    for (const auto& n : names) v.push_back(resolve_workload(n, c));
    return v;
}

timing::TimingResult time_workload(const workloads::WorkloadSpec& ws, const arch::TpuConfig& cfg) {
    const auto lp = lowering::lower(ws, cfg);
    timing::TimingOptions o;
    o.useful_macs = lp.useful_macs;
    return timing::simulate_timed(lp.program, cfg, o);
}

std::vector<std::uint8_t> read_bytes(const std::string& path, std::istream& in) {
    const std::string s = path.empty() || path == "-" ? std::string(std::istreambuf_iterator<char>(in), {}) : read_file(path);
    return {s.begin(), s.end()};
}

std::string counters_report_text(const timing::PerfCounters& c) {
    std::ostringstream os;
    for (const auto& [name, v] : timing::counter_report(c)) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-32s %12.4f\n", name.c_str(), v);
        os << buf;
    }
    return os.str();
}

} // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"TPU-style inference accelerator simulator and analysis tool", "tpusim"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Common common;
    std::function<int()> action;
    std::string command;

    auto add_common = [&](CLI::App* sub, bool config, bool seed) {
        if (config) sub->add_option("--config", common.config, "TpuConfig JSON file (defaults when omitted)");
        sub->add_option("--out", common.out, "Output file (stdout when omitted); writes <out>.meta.json alongside");
        if (seed) sub->add_option("--seed", common.seed, "Seed for synthetic weights, inputs and random workloads");
    };

    // simulate
    std::string sim_workload, sim_format = "csv", sim_timeline;
    bool timing_only = false;
    auto* sim = app.add_subcommand("simulate", "Lower a workload, execute it and report performance counters");
    sim->add_option("--workload", sim_workload, "Preset name, \"random\" or workload JSON file")->required();
    sim->add_flag("--timing-only", timing_only, "Skip functional execution (no --seed needed)");
    sim->add_option("--format", sim_format, "csv | json | report")->check(CLI::IsMember({"csv", "json", "report"}));
    sim->add_option("--timeline", sim_timeline, "Write the unit timeline as JSON lines to this file");
    add_common(sim, true, true);
    sim->callback([&] {
        command = "simulate";
        action = [&] {
            const auto cfg = tpu_config(common);
            const auto ws = resolve_workload(sim_workload, common);
            timing::TimingOptions o;
            o.record_timeline = !sim_timeline.empty();
            timing::TimingResult t;
            if (timing_only) {
                const auto lp = lowering::lower(ws, cfg);
                o.useful_macs = lp.useful_macs;
                t = timing::simulate_timed(lp.program, cfg, o);
            } else {
                const auto seed = require_seed(common, "for functional simulation (or pass --timing-only)");
                const auto model = workloads::synthetic_model(ws, seed);
                const auto lp = lowering::lower(ws, cfg, &model);
                func::TpuState state(cfg);
                lowering::load_weights(lp, state);
                auto host = lowering::pack_input(lp, workloads::synthetic_inputs(ws, seed), cfg);
                o.useful_macs = lp.useful_macs;
                auto r = timing::simulate(lp.program, state, host, o);
                if (!r.exec.halted) throw Error("program did not reach Halt");
                t = std::move(r.timing);
            }
            if (!sim_timeline.empty()) write_file(sim_timeline, timing::timeline_to_jsonl(t.timeline));
            std::string data;
            if (sim_format == "csv") {
                data = timing::counters_csv_header() + "\n" + timing::counters_csv_row(ws.name, t.counters) + "\n";
            } else if (sim_format == "json") {
                nlohmann::json j = t.counters;
                j["workload"] = ws.name;
                data = j.dump(2) + "\n";
            } else {
                data = counters_report_text(t.counters);
            }
            emit(common, command, args, data, out, arch::config_hash(cfg));
            return kExitOk;
        };
    });

    // lower
    std::string low_workload, low_program, low_program_format = "bin";
    auto* low = app.add_subcommand("lower", "Lower a workload and print its tiling plan as JSON");
    low->add_option("--workload", low_workload, "Preset name, \"random\" or workload JSON file")->required();
    low->add_option("--program", low_program, "Also write the instruction stream to this file");
    low->add_option("--program-format", low_program_format, "bin | jsonl")->check(CLI::IsMember({"bin", "jsonl"}));
    add_common(low, true, true);
    low->callback([&] {
        command = "lower";
        action = [&] {
            const auto cfg = tpu_config(common);
            const auto ws = resolve_workload(low_workload, common);
            const auto lp = lowering::lower(ws, cfg);
            if (!low_program.empty()) {
                if (low_program_format == "bin") isa::write_program(low_program, lp.program);
                else write_file(low_program, isa::to_jsonl(lp.program));
            }
            emit(common, command, args, lowering::plan_report(lp, cfg).dump(2) + "\n", out, arch::config_hash(cfg));
            return kExitOk;
        };
    });

    // roofline
    std::string devices = "all";
    std::vector<std::string> roof_workloads;
    bool no_measure = false;
    auto* roof = app.add_subcommand("roofline", "Roofline points (attainable and simulated MAC/s) per device and workload");
    roof->add_option("--devices", devices, "tpu | haswell | k80 | all")
        ->check(CLI::IsMember({"tpu", "haswell", "k80", "all"}));
    roof->add_option("--workloads", roof_workloads, "Workloads (default: the six presets)")->delimiter(',');
    roof->add_flag("--no-measure", no_measure, "Skip the timing simulation of TPU points");
    add_common(roof, true, true);
    roof->callback([&] {
        command = "roofline";
        action = [&] {
            const auto cfg = tpu_config(common);
            const auto wls = resolve_workloads(roof_workloads, common);
            std::vector<arch::RooflineDevice> devs;
            if (devices == "all" || devices == "tpu") {
                devs.push_back(arch::roofline_device(cfg));
                devs.back().reference_ridge = arch::tpu_device().reference_ridge;
            }
            if (devices == "all" || devices == "haswell") devs.push_back(arch::haswell_device());
            if (devices == "all" || devices == "k80") devs.push_back(arch::k80_device());
            std::string data = analysis::roofline_csv_header() + "\n";
            for (const auto& d : devs) {
                const bool tpu = d.name == "TPU";
                data += analysis::roofline_csv_row(
                            analysis::roofline_point("ridge", d, arch::ridge_point(d, arch::OpsConvention::Macs))) +
                        "\n";
                if (d.reference_ridge)
                    data += analysis::roofline_csv_row(
                                analysis::roofline_point("ridge_reference", d, *d.reference_ridge)) +
                            "\n";
                for (const auto& ws : wls) {
                    std::optional<double> measured;
                    if (tpu && !no_measure) measured = time_workload(ws, cfg).counters.achieved_macs_per_s;
                    data += analysis::roofline_csv_row(
                                analysis::roofline_point(ws.name, d, workloads::operational_intensity(ws), measured)) +
                            "\n";
                }
            }
            emit(common, command, args, data, out, arch::config_hash(cfg));
            return kExitOk;
        };
    });

    // sweep
    std::string knob_name;
    std::vector<double> factors = {0.25, 0.5, 1, 2, 4};
    std::vector<std::string> sweep_workloads;
    auto* sw = app.add_subcommand("sweep", "Scale one design knob and report estimated speedups");
    sw->add_option("--knob", knob_name, "memory | clock | clock+ | matrix | matrix+ | all")
        ->required()
        ->check(CLI::IsMember({"memory", "clock", "clock+", "matrix", "matrix+", "all"}));
    sw->add_option("--factors", factors, "Comma-separated factors in [0.25, 4]")->delimiter(',');
    sw->add_option("--workloads", sweep_workloads, "Workloads (default: the six presets)")->delimiter(',');
    add_common(sw, true, true);
    sw->callback([&] {
        command = "sweep";
        action = [&] {
            const auto cfg = tpu_config(common);
            const auto wls = resolve_workloads(sweep_workloads, common);
            std::vector<dse::Knob> knobs;
            if (knob_name == "all") knobs = dse::all_knobs();
            else knobs.push_back(dse::knob_from_string(knob_name));
            std::string data;
            for (std::size_t i = 0; i < knobs.size(); ++i) {
                const auto csv = dse::sweep_csv(dse::sweep(wls, knobs[i], factors, cfg));
                data += i == 0 ? csv : csv.substr(csv.find('\n') + 1);
            }
            emit(common, command, args, data, out, arch::config_hash(cfg));
            return kExitOk;
        };
    });

    // tpu-prime
    double host_scale = 1.0;
    std::string prime_format = "csv";
    auto* prime = app.add_subcommand("tpu-prime", "Faster clock and/or 5x weight bandwidth variants");
    prime->add_option("--host-scale", host_scale, "Multiplier on host interaction time (0 disables)")
        ->check(CLI::NonNegativeNumber);
    prime->add_option("--format", prime_format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    add_common(prime, true, false);
    prime->callback([&] {
        command = "tpu-prime";
        action = [&] {
            const auto cfg = tpu_config(common);
            const auto r = dse::tpu_prime(cfg, host_scale);
            std::string data;
            if (prime_format == "csv") data = dse::prime_csv(r);
            else data = nlohmann::json(r).dump(2) + "\n";
            emit(common, command, args, data, out, arch::config_hash(cfg));
            return kExitOk;
        };
    });

    // latency
    double limit_ms = 7.0, lat_h = 0.0;
    std::vector<std::uint32_t> candidates = {16, 32, 64, 128, 200, 250, 512, 1024};
    auto* lat = app.add_subcommand("latency", "Fit the batch/latency model to the stored MLP0 rows and pick a batch");
    lat->add_option("--limit-ms", limit_ms, "99th-percentile response time limit in milliseconds")
        ->check(CLI::PositiveNumber);
    lat->add_option("--host-share", lat_h, "Host share of response time h in [0, 1)")->check(CLI::Range(0.0, 0.999999));
    lat->add_option("--candidates", candidates, "Comma-separated candidate batch sizes")->delimiter(',');
    add_common(lat, false, false);
    lat->callback([&] {
        command = "latency";
        action = [&] {
            const auto pts = analysis::tpu_mlp0_points();
            const auto m = analysis::fit_latency_model(pts[0], pts[1], lat_h);
            nlohmann::json j = {{"model", {{"a", m.a}, {"c", m.c}, {"h", m.h}, {"d", m.d}}}};
            auto& rows = j["stored_rows"] = nlohmann::json::array();
            for (const auto& p : pts)
                rows.push_back({{"batch", p.batch},
                                {"stored_latency_ms", p.latency_s * 1e3},
                                {"stored_ips", p.ips},
                                {"model_latency_ms", m.latency(p.batch) * 1e3},
                                {"model_ips", m.throughput(p.batch)}});
            j["limit_ms"] = limit_ms;
            int code = kExitOk;
            try {
                const auto c = analysis::max_throughput_under_latency(m, candidates, limit_ms * 1e-3);
                j["choice"] = {{"batch", c.batch}, {"latency_ms", c.latency_s * 1e3}, {"ips", c.throughput}};
            } catch (const analysis::NoFeasibleBatch& e) {
                j["choice"] = nullptr;
                err << "tpusim: " << e.what() << "\n";
                code = kExitFailure;
            }
            emit(common, command, args, j.dump(2) + "\n", out, 0);
            return code;
        };
    });

    // power
    std::string power_device = "tpu", power_baseline = "haswell", power_format = "csv";
    bool curve = false;
    auto* pw = app.add_subcommand("power", "Relative performance/Watt report, or the power-vs-load curve");
    pw->add_option("--device", power_device, "tpu | k80 | haswell")->check(CLI::IsMember({"tpu", "k80", "haswell"}));
    pw->add_option("--baseline", power_baseline, "tpu | k80 | haswell")->check(CLI::IsMember({"tpu", "k80", "haswell"}));
    pw->add_option("--format", power_format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    pw->add_flag("--curve", curve, "Emit die power at 0..100% load in 10% steps instead");
    add_common(pw, false, false);
    pw->callback([&] {
        command = "power";
        action = [&] {
            const auto dev = arch::device_by_name(power_device);
            std::string data;
            if (curve) {
                data = "device,workload,utilization,die_watts\n";
                for (const std::string w : {"", "LSTM1"})
                    for (int i = 0; i <= 10; ++i)
                        data += dev.name + "," + (w.empty() ? "all" : w) + "," + fmt("%.1f", i / 10.0) + "," +
                                fmt("%.3f", analysis::power_at_load(dev, i / 10.0, w)) + "\n";
            } else {
                const auto base = arch::device_by_name(power_baseline);
                const auto r = analysis::power_report(dev, base, analysis::stored_relative_perf(power_device));
                if (power_format == "json") {
                    data = nlohmann::json(r).dump(2) + "\n";
                } else {
                    data = "device,baseline,workload,total_ratio,incremental_ratio\n";
                    for (const auto& row : r.rows)
                        data += r.device + "," + r.baseline + "," + row.workload + "," + fmt("%.4f", row.total_ratio) +
                                "," + fmt("%.4f", row.incremental_ratio) + "\n";
                    data += r.device + "," + r.baseline + ",GM," + fmt("%.4f", r.total_gm) + "," +
                            fmt("%.4f", r.incremental_gm) + "\n";
                    data += r.device + "," + r.baseline + ",WM," + fmt("%.4f", r.total_wm) + "," +
                            fmt("%.4f", r.incremental_wm) + "\n";
                }
            }
            emit(common, command, args, data, out, 0);
            return kExitOk;
        };
    });

    // validate-model
    double tolerance = 0.10;
    std::vector<std::string> val_workloads;
    auto* val = app.add_subcommand("validate-model", "Closed-form estimate vs timing simulation, per workload");
    val->add_option("--tolerance", tolerance, "Maximum relative cycle error")->check(CLI::PositiveNumber);
    val->add_option("--workloads", val_workloads, "Workloads (default: the six presets)")->delimiter(',');
    add_common(val, true, true);
    val->callback([&] {
        command = "validate-model";
        action = [&] {
            const auto cfg = tpu_config(common);
            std::string data = "workload,estimated_cycles,simulated_cycles,delta_pct,status\n";
            bool ok = true;
            double sum = 0;
            const auto wls = resolve_workloads(val_workloads, common);
            for (const auto& ws : wls) {
                const auto est = analysis::estimate_perf(ws, cfg);
                const auto sim = time_workload(ws, cfg).counters;
                const double e = analysis::relative_cycle_error(est, sim);
                const bool pass = std::abs(e) <= tolerance;
                ok = ok && pass;
                sum += std::abs(e);
                data += ws.name + "," + std::to_string(est.cycles) + "," + std::to_string(sim.total_cycles) + "," +
                        fmt("%.2f", 100 * e) + "," + (pass ? "ok" : "FAIL") + "\n";
            }
            data += "mean_abs,,," + fmt("%.2f", 100 * sum / static_cast<double>(wls.size())) + "," +
                    (ok ? "ok" : "FAIL") + "\n";
            emit(common, command, args, data, out, arch::config_hash(cfg));
            return ok ? kExitOk : kExitFailure;
        };
    });

    // encode / decode
    std::string enc_in;
    auto* enc = app.add_subcommand("encode", "JSON-lines program text to the binary container");
    enc->add_option("--in", enc_in, "Input JSON-lines file (stdin when omitted)");
    add_common(enc, false, false);
    enc->callback([&] {
        command = "encode";
        action = [&] {
            isa::Program p;
            if (enc_in.empty() || enc_in == "-") {
                p = isa::from_jsonl(in);
            } else {
                std::istringstream is(read_file(enc_in));
                p = isa::from_jsonl(is);
            }
            const auto bytes = isa::serialize(p);
            emit(common, command, args, std::string(bytes.begin(), bytes.end()), out, p.config_hash);
            return kExitOk;
        };
    });
    std::string dec_in;
    auto* dec = app.add_subcommand("decode", "Binary program container to JSON-lines text");
    dec->add_option("--in", dec_in, "Input binary program (stdin when omitted)");
    add_common(dec, false, false);
    dec->callback([&] {
        command = "decode";
        action = [&] {
            const auto bytes = read_bytes(dec_in, in);
            const auto p = isa::deserialize(bytes);
            emit(common, command, args, isa::to_jsonl(p), out, p.config_hash);
            return kExitOk;
        };
    });

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        return action();
    } catch (const UsageError& e) {
        err << "tpusim " << command << ": " << e.what() << "\n" << app.get_subcommand(command)->help();
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "tpusim " << command << ": " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace tpusim::cli
