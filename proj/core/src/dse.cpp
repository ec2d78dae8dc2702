#include "tpusim/dse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tpusim/analysis.hpp"
#include "tpusim/lowering.hpp"

namespace tpusim::dse {

std::string to_string(Knob k) {
    switch (k) {
    case Knob::Memory: return "memory";
    case Knob::Clock: return "clock";
    case Knob::ClockPlus: return "clock+";
    case Knob::Matrix: return "matrix";
    case Knob::MatrixPlus: return "matrix+";
    }
    return "?";
}

Knob knob_from_string(const std::string& s) {
    for (Knob k : all_knobs())
        if (to_string(k) == s) return k;
    throw ConfigError("knob", "unknown knob \"" + s + "\" (memory, clock, clock+, matrix, matrix+)");
}

const std::vector<Knob>& all_knobs() {
    static const std::vector<Knob> k = {Knob::Memory, Knob::Clock, Knob::ClockPlus, Knob::Matrix, Knob::MatrixPlus};
    return k;
}

arch::TpuConfig apply_knob(const arch::TpuConfig& cfg, Knob knob, double factor) {
    if (!(factor >= kMinFactor && factor <= kMaxFactor))
        throw ConfigError("factor", "must be in [0.25, 4], got " + std::to_string(factor));
    arch::TpuConfig c = cfg;
    auto scale_acc = [&](double f) {
        c.acc_entries = static_cast<std::uint32_t>(std::max(1.0, std::round(cfg.acc_entries * f)));
    };
    switch (knob) {
    case Knob::Memory: c.weight_bw = cfg.weight_bw * factor; break;
    case Knob::ClockPlus: scale_acc(factor); [[fallthrough]];
    case Knob::Clock: c.clock_hz = cfg.clock_hz * factor; break;
    case Knob::MatrixPlus: scale_acc(factor * factor); [[fallthrough]];
    case Knob::Matrix:
        c.matrix_dim = static_cast<std::uint32_t>(std::max(1.0, std::round(cfg.matrix_dim * factor)));
        break;
    }
    c.validate();
    return c;
}

SweepResult sweep(const std::vector<workloads::WorkloadSpec>& presets, Knob knob, const std::vector<double>& factors,
                  const arch::TpuConfig& cfg) {
    for (double f : factors) apply_knob(cfg, knob, f);
    std::map<std::string, double> base;
    for (const auto& ws : presets) base[ws.name] = analysis::estimate_perf(ws, cfg).ops_per_s;

    SweepResult r;
    for (double f : factors) {
        const auto scaled = apply_knob(cfg, knob, f);
        std::vector<double> ups;
        std::map<std::string, double> weighted;
        for (const auto& ws : presets) {
            SweepCell cell;
            cell.knob = knob;
            cell.factor = f;
            cell.workload = ws.name;
            try {
                cell.ops_per_s = analysis::estimate_perf(ws, scaled).ops_per_s;
                cell.speedup = cell.ops_per_s / base[ws.name];
                ups.push_back(cell.speedup);
                weighted[ws.name] = cell.speedup;
            } catch (const lowering::DoesNotFit& e) {
                cell.error = e.resource();
            }
            r.cells.push_back(cell);
        }
        SweepMean m{knob, f};
        if (!ups.empty()) m.geometric = analysis::geometric_mean(ups);
        bool all_named = !weighted.empty();
        const auto& names = workloads::preset_names();
        for (const auto& [n, v] : weighted)
            if (std::find(names.begin(), names.end(), n) == names.end()) all_named = false;
        if (all_named) m.weighted = analysis::weighted_mean(weighted);
        r.means.push_back(m);
    }
    return r;
}

std::string sweep_csv_header() { return "knob,factor,workload,ops_per_s,speedup,status"; }

std::string sweep_csv(const SweepResult& r) {
    std::ostringstream os;
    char buf[256];
    os << sweep_csv_header() << '\n';
    for (const auto& c : r.cells) {
        std::snprintf(buf, sizeof buf, "%s,%g,%s,%.6e,%.6f,%s\n", to_string(c.knob).c_str(), c.factor,
                      c.workload.c_str(), c.ops_per_s, c.speedup,
                      c.error.empty() ? "ok" : ("does_not_fit:" + c.error).c_str());
        os << buf;
    }
    for (const auto& m : r.means) {
        std::snprintf(buf, sizeof buf, "%s,%g,GM,,%.6f,mean\n%s,%g,WM,,%.6f,mean\n", to_string(m.knob).c_str(),
                      m.factor, m.geometric, to_string(m.knob).c_str(), m.factor, m.weighted);
        os << buf;
    }
    return os.str();
}

TilingCost tiling_cost(std::uint64_t n, std::uint64_t m, std::uint64_t tile_dim, double weight_bw) {
    if (n == 0 || m == 0 || tile_dim == 0 || !(weight_bw > 0)) throw Error("tiling_cost: arguments must be positive");
    TilingCost c;
    c.steps = ((n + tile_dim - 1) / tile_dim) * ((m + tile_dim - 1) / tile_dim);
    c.seconds = static_cast<double>(c.steps) * static_cast<double>(tile_dim * tile_dim) / weight_bw;
    return c;
}

double host_fraction(const std::string& workload) {
    static const std::map<std::string, double> f = {{"MLP0", 0.21}, {"MLP1", 0.76}, {"LSTM0", 0.11},
                                                    {"LSTM1", 0.20}, {"CNN0", 0.51}, {"CNN1", 0.14}};
    const auto it = f.find(workload);
    if (it == f.end()) throw ConfigError("workload", "no host fraction for \"" + workload + "\"");
    return it->second;
}

double host_share(double fraction) {
    if (!(fraction >= 0)) throw Error("host_share: fraction must be >= 0");
    return fraction / (1.0 + fraction);
}

double host_adjusted(double speedup, double h) {
    if (!(h >= 0 && h < 1)) throw Error("host_adjusted: h must be in [0, 1)");
    if (!(speedup > 0)) throw Error("host_adjusted: speedup must be > 0");
    if (std::isinf(speedup)) return 1.0 / h;
    return 1.0 / (h + (1.0 - h) / speedup);
}

PrimeReport tpu_prime(const arch::TpuConfig& cfg, double host_scale) {
    PrimeReport r;
    r.baseline_ridge = cfg.peak_macs_per_s() / cfg.weight_bw;
    const auto presets = workloads::all_presets();
    std::map<std::string, double> base;
    for (const auto& ws : presets) base[ws.name] = analysis::estimate_perf(ws, cfg).ops_per_s;

    arch::TpuConfig clock = cfg, memory = cfg, both = cfg;
    clock.clock_hz = 1050e6;
    memory.weight_bw = cfg.weight_bw * 5;
    both.clock_hz = 1050e6;
    both.weight_bw = cfg.weight_bw * 5;
    for (const auto& [name, vcfg] : std::vector<std::pair<std::string, arch::TpuConfig>>{
             {"clock", clock}, {"memory", memory}, {"clock+memory", both}}) {
        PrimeVariant v;
        v.name = name;
        v.cfg = vcfg;
        v.ridge = vcfg.peak_macs_per_s() / vcfg.weight_bw;
        std::vector<double> ups, adj;
        for (const auto& ws : presets) {
            const double s = analysis::estimate_perf(ws, vcfg).ops_per_s / base[ws.name];
            const double h = host_share(host_fraction(ws.name) * host_scale);
            // The host time is fixed, so the baseline carries it too: (1) -> (h + (1-h)/s) relative.
            const double a = host_adjusted(s, h);
            v.speedups[ws.name] = s;
            v.adjusted[ws.name] = a;
            ups.push_back(s);
            adj.push_back(a);
        }
        v.gm = analysis::geometric_mean(ups);
        v.wm = analysis::weighted_mean(v.speedups);
        v.adjusted_gm = analysis::geometric_mean(adj);
        v.adjusted_wm = analysis::weighted_mean(v.adjusted);
        r.variants.push_back(std::move(v));
    }
    return r;
}

void to_json(nlohmann::json& j, const PrimeReport& r) {
    j = {{"baseline_ridge", r.baseline_ridge}, {"reference_ridge", r.reference_ridge}};
    auto& vs = j["variants"] = nlohmann::json::array();
    for (const auto& v : r.variants)
        vs.push_back({{"name", v.name},
                      {"clock_hz", v.cfg.clock_hz},
                      {"weight_bw", v.cfg.weight_bw},
                      {"ridge", v.ridge},
                      {"speedups", v.speedups},
                      {"host_adjusted", v.adjusted},
                      {"gm", v.gm},
                      {"wm", v.wm},
                      {"adjusted_gm", v.adjusted_gm},
                      {"adjusted_wm", v.adjusted_wm}});
}

std::string prime_csv_header() { return "variant,clock_hz,weight_bw,ridge,gm,wm,adjusted_gm,adjusted_wm"; }

std::string prime_csv(const PrimeReport& r) {
    std::ostringstream os;
    char buf[256];
    os << prime_csv_header() << '\n';
    for (const auto& v : r.variants) {
        std::snprintf(buf, sizeof buf, "%s,%.0f,%.6e,%.2f,%.4f,%.4f,%.4f,%.4f\n", v.name.c_str(), v.cfg.clock_hz,
                      v.cfg.weight_bw, v.ridge, v.gm, v.wm, v.adjusted_gm, v.adjusted_wm);
        os << buf;
    }
    return os.str();
}

} // namespace tpusim::dse
