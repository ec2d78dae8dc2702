#include "tpusim/workloads.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <map>
#include <random>

namespace tpusim::workloads {

namespace {

std::string fn_name(ActivationFn fn) {
    switch (fn) {
    case ActivationFn::Identity: return "identity";
    case ActivationFn::ReLU: return "relu";
    case ActivationFn::Sigmoid: return "sigmoid";
    case ActivationFn::Tanh: return "tanh";
    }
    return "identity";
}

ActivationFn fn_from_name(const std::string& s) {
    if (s == "identity") return ActivationFn::Identity;
    if (s == "relu") return ActivationFn::ReLU;
    if (s == "sigmoid") return ActivationFn::Sigmoid;
    if (s == "tanh") return ActivationFn::Tanh;
    throw ConfigError("activation", "unknown activation '" + s + "'");
}

std::string pool_name(PoolKind k) { return k == PoolKind::Average ? "average" : "max"; }

PoolKind pool_from_name(const std::string& s) {
    if (s == "max") return PoolKind::Max;
    if (s == "average" || s == "avg") return PoolKind::Average;
    throw ConfigError("kind", "unknown pool kind '" + s + "'");
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
            throw ConfigError(it.key(), "unknown field in " + where);
    }
}

} // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::FC: return "FC";
    case LayerKind::Conv: return "Conv";
    case LayerKind::Vector: return "Vector";
    case LayerKind::Pool: return "Pool";
    }
    return "?";
}

std::uint64_t LayerSpec::weight_count() const {
    if (const auto* f = std::get_if<FcShape>(&shape)) return std::uint64_t{f->in_dim} * f->out_dim;
    if (const auto* c = std::get_if<ConvShape>(&shape))
        return std::uint64_t{c->in_channels} * c->out_channels * c->kernel_h * c->kernel_w;
    return 0;
}

std::uint64_t LayerSpec::macs_per_sample() const {
    if (const auto* c = std::get_if<ConvShape>(&shape)) return weight_count() * c->out_h() * c->out_w();
    return weight_count();
}

LayerSpec fc(std::uint32_t in, std::uint32_t out, ActivationFn fn) {
    LayerSpec l;
    l.shape = FcShape{in, out};
    l.activation = fn;
    return l;
}

LayerSpec conv(std::uint32_t c, std::uint32_t m, std::uint32_t r, std::uint32_t s, std::uint32_t h, std::uint32_t w,
               std::uint32_t stride, std::uint32_t pad, ActivationFn fn) {
    LayerSpec l;
    l.shape = ConvShape{c, m, r, s, h, w, stride, pad};
    l.activation = fn;
    return l;
}

LayerSpec vector(std::uint32_t dim, ActivationFn fn) {
    LayerSpec l;
    l.shape = VectorShape{dim};
    l.activation = fn;
    return l;
}

LayerSpec pool(std::uint32_t window, std::uint32_t stride, std::uint32_t pad, PoolKind kind) {
    LayerSpec l;
    l.shape = PoolShape{window, stride, pad, kind};
    l.activation = ActivationFn::Identity;
    return l;
}

std::uint64_t WorkloadSpec::total_weights() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.weight_count();
    return n;
}

std::uint64_t WorkloadSpec::total_weight_bytes() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.weight_bytes();
    return n;
}

std::uint64_t WorkloadSpec::total_macs() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.macs_per_sample();
    return n * batch;
}

std::size_t WorkloadSpec::count(LayerKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.kind() == kind; }));
}

TensorShape WorkloadSpec::input_shape() const {
    if (layers.empty()) throw ConfigError("layers", "workload has no layers");
    const auto& l = layers.front();
    switch (l.kind()) {
    case LayerKind::FC: return {std::get<FcShape>(l.shape).in_dim, 1, 1};
    case LayerKind::Conv: {
        const auto& c = std::get<ConvShape>(l.shape);
        return {c.in_channels, c.image_h, c.image_w};
    }
    case LayerKind::Vector: return {std::get<VectorShape>(l.shape).dim, 1, 1};
    case LayerKind::Pool: break;
    }
    throw ConfigError("layers", "first layer cannot be a pool");
}

std::vector<TensorShape> WorkloadSpec::layer_outputs() const {
    std::vector<TensorShape> out;
    TensorShape cur = input_shape();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string where = "layers[" + std::to_string(i) + "]";
        switch (l.kind()) {
        case LayerKind::FC: {
            const auto& f = std::get<FcShape>(l.shape);
            if (cur.h != 1 || cur.w != 1) throw ConfigError(where, "FC input must be 1x1 spatially");
            if (cur.channels != f.in_dim) throw ConfigError(where, "FC in_dim does not match previous layer");
            cur = {f.out_dim, 1, 1};
            break;
        }
        case LayerKind::Conv: {
            const auto& c = std::get<ConvShape>(l.shape);
            if (cur != TensorShape{c.in_channels, c.image_h, c.image_w})
                throw ConfigError(where, "conv input shape does not match previous layer");
            cur = {c.out_channels, c.out_h(), c.out_w()};
            break;
        }
        case LayerKind::Vector: {
            const auto& v = std::get<VectorShape>(l.shape);
            if (cur.channels != v.dim) throw ConfigError(where, "vector dim does not match previous layer");
            break;
        }
        case LayerKind::Pool: {
            const auto& p = std::get<PoolShape>(l.shape);
            if (i == 0 || layers[i - 1].kind() != LayerKind::Conv)
                throw ConfigError(where, "pool must directly follow a convolution");
            if (p.pad >= p.window || cur.h + 2 * p.pad < p.window || cur.w + 2 * p.pad < p.window)
                throw ConfigError(where, "invalid pool window");
            cur = {cur.channels, (cur.h + 2 * p.pad - p.window) / p.stride + 1,
                   (cur.w + 2 * p.pad - p.window) / p.stride + 1};
            break;
        }
        }
        out.push_back(cur);
    }
    return out;
}

void WorkloadSpec::validate() const {
    if (batch == 0) throw ConfigError("batch", "must be at least 1");
    if (activation_bits != 8 && activation_bits != 16) throw ConfigError("activation_bits", "must be 8 or 16");
    if (layers.empty()) throw ConfigError("layers", "workload has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string where = "layers[" + std::to_string(i) + "]";
        if (l.weight_bits != 8 && l.weight_bits != 16) throw ConfigError(where, "weight_bits must be 8 or 16");
        if (l.requant.shift > 62) throw ConfigError(where, "requant shift above 62");
        if (const auto* f = std::get_if<FcShape>(&l.shape)) {
            if (f->in_dim == 0 || f->out_dim == 0) throw ConfigError(where, "dims must be positive");
        } else if (const auto* c = std::get_if<ConvShape>(&l.shape)) {
            if (c->in_channels == 0 || c->out_channels == 0 || c->kernel_h == 0 || c->kernel_w == 0 ||
                c->image_h == 0 || c->image_w == 0 || c->stride == 0)
                throw ConfigError(where, "dims must be positive");
            if (c->image_h + 2 * c->pad < c->kernel_h || c->image_w + 2 * c->pad < c->kernel_w)
                throw ConfigError(where, "kernel larger than padded image");
        } else if (const auto* v = std::get_if<VectorShape>(&l.shape)) {
            if (v->dim == 0) throw ConfigError(where, "dims must be positive");
        } else if (const auto* p = std::get_if<PoolShape>(&l.shape)) {
            if (p->window == 0 || p->stride == 0) throw ConfigError(where, "dims must be positive");
        }
    }
    (void)layer_outputs();
}

double operational_intensity(const WorkloadSpec& ws) {
    const std::uint64_t bytes = ws.total_weight_bytes();
    if (bytes == 0) throw Error("operational_intensity: workload '" + ws.name + "' has no weights");
    return static_cast<double>(ws.total_macs()) / static_cast<double>(bytes);
}

double published_intensity(const std::string& name) {
    static const std::map<std::string, double> v = {{"MLP0", 200},  {"MLP1", 168},  {"LSTM0", 64},
                                                    {"LSTM1", 96},  {"CNN0", 2888}, {"CNN1", 1750}};
    auto it = v.find(name);
    if (it == v.end()) throw ConfigError("name", "unknown preset '" + name + "'");
    return it->second;
}

double deployment_weight(const std::string& name) {
    static const std::map<std::string, double> v = {{"MLP0", 0.305},  {"MLP1", 0.305}, {"LSTM0", 0.145},
                                                    {"LSTM1", 0.145}, {"CNN0", 0.025}, {"CNN1", 0.025}};
    auto it = v.find(name);
    if (it == v.end()) throw ConfigError("name", "unknown preset '" + name + "'");
    return it->second;
}

namespace {

WorkloadSpec fc_stack(const std::string& name, std::uint32_t dim, std::size_t n, std::uint32_t batch) {
    WorkloadSpec ws{name, {}, batch, 8};
    for (std::size_t i = 0; i < n; ++i) ws.layers.push_back(fc(dim, dim, ActivationFn::ReLU));
    return ws;
}

// FC gate blocks with elementwise layers spread evenly between them.
WorkloadSpec lstm(const std::string& name, std::uint32_t dim, std::size_t n_fc, std::size_t n_vec,
                  std::uint32_t batch) {
    WorkloadSpec ws{name, {}, batch, 8};
    std::size_t placed = 0;
    for (std::size_t i = 0; i < n_fc; ++i) {
        ws.layers.push_back(fc(dim, dim, ActivationFn::Identity));
        const std::size_t target = (i + 1) * n_vec / n_fc;
        for (; placed < target; ++placed)
            ws.layers.push_back(vector(dim, placed % 2 == 0 ? ActivationFn::Sigmoid : ActivationFn::Tanh));
    }
    return ws;
}

} // namespace

WorkloadSpec make_preset(const std::string& name) {
    if (name == "MLP0") return fc_stack(name, 2000, 5, 200);
    if (name == "MLP1") return fc_stack(name, 1118, 4, 168);
    if (name == "LSTM0") return lstm(name, 1472, 24, 34, 64);
    if (name == "LSTM1") return lstm(name, 959, 37, 19, 96);
    if (name == "CNN0") {
        WorkloadSpec ws{name, {}, 8, 8};
        for (int i = 0; i < 16; ++i) ws.layers.push_back(conv(236, 236, 3, 3, 19, 19, 1, 1));
        return ws;
    }
    if (name == "CNN1") {
        WorkloadSpec ws{name, {}, 32, 8};
        for (int i = 1; i <= 72; ++i) {
            ws.layers.push_back(conv(322, 322, 3, 3, 9, 9, 1, 1));
            if (i == 72) ws.layers.push_back(pool(9, 1, 0, PoolKind::Average));
            else if (i % 6 == 0 || i == 70) ws.layers.push_back(pool(3, 1, 1, PoolKind::Max));
        }
        ws.layers.push_back(fc(322, 3258));
        for (int i = 0; i < 3; ++i) ws.layers.push_back(fc(3258, 3258, i == 2 ? ActivationFn::Identity : ActivationFn::ReLU));
        return ws;
    }
    throw ConfigError("name", "unknown preset '" + name + "'");
}

std::vector<WorkloadSpec> all_presets() {
    std::vector<WorkloadSpec> v;
    for (const auto& n : preset_names()) v.push_back(make_preset(n));
    return v;
}

WorkloadSpec random_workload(std::uint64_t seed, std::uint32_t max_dim, bool allow_conv) {
    std::mt19937_64 rng(seed);
    auto uni = [&](std::uint32_t lo, std::uint32_t hi) {
        return lo + static_cast<std::uint32_t>(rng() % (std::uint64_t{hi} - lo + 1));
    };
    auto any_fn = [&] { return static_cast<ActivationFn>(uni(0, 3)); };
    max_dim = std::max<std::uint32_t>(max_dim, 2);
    WorkloadSpec ws;
    ws.name = "random-" + std::to_string(seed);
    ws.batch = uni(1, 256);
    ws.activation_bits = uni(0, 7) == 0 ? 16 : 8;
    auto wbits = [&] { return uni(0, 7) == 0 ? 16u : 8u; };
    std::uint32_t width;
    if (allow_conv && uni(0, 2) == 0) {
        ws.batch = uni(1, 24);
        std::uint32_t h = uni(3, 10);
        std::uint32_t c = uni(1, std::min<std::uint32_t>(max_dim, 96));
        const std::uint32_t n_conv = uni(1, 3);
        for (std::uint32_t i = 0; i < n_conv; ++i) {
            const std::uint32_t k = uni(0, 1) ? 3 : 1;
            const std::uint32_t pad = k == 3 && (h < 3 || uni(0, 1)) ? 1 : 0;
            const std::uint32_t stride = h + 2 * pad >= k + 2 && uni(0, 3) == 0 ? 2 : 1;
            const std::uint32_t m = uni(1, std::min<std::uint32_t>(max_dim, 96));
            auto layer = conv(c, m, k, k, h, h, stride, pad, any_fn());
            layer.weight_bits = wbits();
            ws.layers.push_back(layer);
            h = std::get<ConvShape>(layer.shape).out_h();
            c = m;
            if (i + 1 == n_conv) {
                // Global pool down to 1x1 so FC layers can follow.
                ws.layers.push_back(pool(h, 1, 0, uni(0, 1) ? PoolKind::Max : PoolKind::Average));
            } else if (uni(0, 2) == 0 && h >= 2) {
                const std::uint32_t win = uni(2, 3);
                const std::uint32_t ppad = uni(0, 1);
                if (h + 2 * ppad >= win) {
                    const std::uint32_t ps = uni(1, 2);
                    ws.layers.push_back(pool(win, ps, ppad, uni(0, 1) ? PoolKind::Max : PoolKind::Average));
                    h = (h + 2 * ppad - win) / ps + 1;
                }
            }
        }
        width = c;
    } else {
        width = uni(1, max_dim);
        auto first = fc(width, uni(1, max_dim), any_fn());
        first.weight_bits = wbits();
        ws.layers.push_back(first);
        width = std::get<FcShape>(first.shape).out_dim;
    }
    const std::uint32_t n_fc = uni(0, 3);
    for (std::uint32_t i = 0; i < n_fc; ++i) {
        if (uni(0, 3) == 0) ws.layers.push_back(vector(width, any_fn()));
        const std::uint32_t out = uni(1, max_dim);
        auto l = fc(width, out, any_fn());
        l.weight_bits = wbits();
        ws.layers.push_back(l);
        width = out;
    }
    if (uni(0, 3) == 0) ws.layers.push_back(vector(width, any_fn()));
    ws.validate();
    return ws;
}

// JSON ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const LayerSpec& l) {
    switch (l.kind()) {
    case LayerKind::FC: {
        const auto& f = std::get<FcShape>(l.shape);
        j = {{"type", "fc"}, {"in", f.in_dim}, {"out", f.out_dim}};
        break;
    }
    case LayerKind::Conv: {
        const auto& c = std::get<ConvShape>(l.shape);
        j = {{"type", "conv"},
             {"in_channels", c.in_channels},
             {"out_channels", c.out_channels},
             {"kernel", {c.kernel_h, c.kernel_w}},
             {"image", {c.image_h, c.image_w}},
             {"stride", c.stride},
             {"pad", c.pad}};
        break;
    }
    case LayerKind::Vector:
        j = {{"type", "vector"}, {"dim", std::get<VectorShape>(l.shape).dim}};
        break;
    case LayerKind::Pool: {
        const auto& p = std::get<PoolShape>(l.shape);
        j = {{"type", "pool"}, {"window", p.window}, {"stride", p.stride}, {"pad", p.pad}, {"kind", pool_name(p.kind)}};
        break;
    }
    }
    if (l.kind() != LayerKind::Pool) j["activation"] = fn_name(l.activation);
    if (l.kind() == LayerKind::FC || l.kind() == LayerKind::Conv) j["weight_bits"] = l.weight_bits;
    if (l.kind() != LayerKind::Pool) j["requant"] = {{"scale", l.requant.scale}, {"shift", l.requant.shift}};
}

void from_json(const nlohmann::json& j, LayerSpec& l) {
    const auto type = j.at("type").get<std::string>();
    l = LayerSpec{};
    if (type == "fc") {
        check_keys(j, {"type", "in", "out", "activation", "weight_bits", "requant"}, "fc layer");
        l.shape = FcShape{j.at("in").get<std::uint32_t>(), j.at("out").get<std::uint32_t>()};
    } else if (type == "conv") {
        check_keys(j, {"type", "in_channels", "out_channels", "kernel", "image", "stride", "pad", "activation",
                       "weight_bits", "requant"},
                   "conv layer");
        ConvShape c;
        c.in_channels = j.at("in_channels").get<std::uint32_t>();
        c.out_channels = j.at("out_channels").get<std::uint32_t>();
        const auto k = j.at("kernel");
        c.kernel_h = k.at(0).get<std::uint32_t>();
        c.kernel_w = k.at(1).get<std::uint32_t>();
        const auto im = j.at("image");
        c.image_h = im.at(0).get<std::uint32_t>();
        c.image_w = im.at(1).get<std::uint32_t>();
        c.stride = get_or<std::uint32_t>(j, "stride", 1);
        c.pad = get_or<std::uint32_t>(j, "pad", 0);
        l.shape = c;
    } else if (type == "vector") {
        check_keys(j, {"type", "dim", "activation", "requant"}, "vector layer");
        l.shape = VectorShape{j.at("dim").get<std::uint32_t>()};
    } else if (type == "pool") {
        check_keys(j, {"type", "window", "stride", "pad", "kind"}, "pool layer");
        PoolShape p;
        p.window = j.at("window").get<std::uint32_t>();
        p.stride = get_or<std::uint32_t>(j, "stride", 1);
        p.pad = get_or<std::uint32_t>(j, "pad", 0);
        p.kind = pool_from_name(get_or<std::string>(j, "kind", "max"));
        l.shape = p;
        l.activation = ActivationFn::Identity;
        return;
    } else {
        throw ConfigError("type", "unknown layer type '" + type + "'");
    }
    l.activation = fn_from_name(get_or<std::string>(j, "activation", type == "vector" ? "identity" : "relu"));
    l.weight_bits = get_or<std::uint32_t>(j, "weight_bits", 8);
    if (j.contains("requant")) {
        const auto& r = j.at("requant");
        l.requant.scale = get_or<std::int32_t>(r, "scale", 1);
        l.requant.shift = get_or<std::uint32_t>(r, "shift", 0);
    }
}

void to_json(nlohmann::json& j, const WorkloadSpec& ws) {
    j = {{"name", ws.name}, {"batch", ws.batch}, {"activation_bits", ws.activation_bits}, {"layers", ws.layers}};
}

void from_json(const nlohmann::json& j, WorkloadSpec& ws) {
    check_keys(j, {"name", "batch", "activation_bits", "layers"}, "workload");
    ws.name = get_or<std::string>(j, "name", "workload");
    ws.batch = get_or<std::uint32_t>(j, "batch", 1);
    ws.activation_bits = get_or<std::uint32_t>(j, "activation_bits", 8);
    ws.layers = j.at("layers").get<std::vector<LayerSpec>>();
    ws.validate();
}

WorkloadSpec load_workload(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(path + ": cannot open workload file");
    try {
        return nlohmann::json::parse(in).get<WorkloadSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("", path + ": " + e.what());
    }
}

// Synthetic integer models ------------------------------------------------------------

namespace {

std::uint32_t fan_in(const LayerSpec& l) {
    if (const auto* f = std::get_if<FcShape>(&l.shape)) return f->in_dim;
    if (const auto* c = std::get_if<ConvShape>(&l.shape)) return c->in_channels * c->kernel_h * c->kernel_w;
    return 1;
}

std::int32_t qmax_for(std::uint32_t bits) { return bits == 16 ? 32767 : 127; }

} // namespace

QuantizedModel synthetic_model(const WorkloadSpec& ws, std::uint64_t seed) {
    ws.validate();
    std::mt19937_64 rng(seed);
    QuantizedModel m;
    m.spec = ws;
    m.weights.resize(ws.layers.size());
    m.output_scales.assign(ws.layers.size(), 1.0);
    const double act_sigma = ws.activation_bits == 16 ? 12000.0 : 48.0;
    for (std::size_t i = 0; i < ws.layers.size(); ++i) {
        auto& l = m.spec.layers[i];
        const std::int32_t qw = qmax_for(l.weight_bits);
        const std::uint64_t n = l.weight_count();
        auto& w = m.weights[i];
        w.resize(n);
        for (auto& v : w) v = static_cast<std::int32_t>(rng() % (2 * static_cast<std::uint64_t>(qw) + 1)) - qw;
        if (l.kind() == LayerKind::Pool) continue;
        // Target an output spread comparable to the input spread.
        const double w_sigma = l.kind() == LayerKind::Vector ? 1.0 : qw / std::sqrt(3.0);
        const double acc_sigma = std::sqrt(static_cast<double>(fan_in(l))) * act_sigma * w_sigma;
        const bool lut = l.activation == ActivationFn::Sigmoid || l.activation == ActivationFn::Tanh;
        const double target = lut ? 32.0 : act_sigma;
        l.requant = requant_for(target / std::max(acc_sigma, 1.0));
    }
    return m;
}

std::vector<std::vector<std::int32_t>> synthetic_inputs(const WorkloadSpec& ws, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const std::uint64_t n = ws.input_shape().elements();
    const std::int32_t q = qmax_for(ws.activation_bits);
    std::vector<std::vector<std::int32_t>> out(ws.batch, std::vector<std::int32_t>(n));
    for (auto& s : out)
        for (auto& v : s) v = static_cast<std::int32_t>(rng() % (2 * static_cast<std::uint64_t>(q) + 1)) - q;
    return out;
}

// Float models and quantization --------------------------------------------------------

namespace {

float apply_fn(ActivationFn fn, float x) {
    switch (fn) {
    case ActivationFn::Identity: return x;
    case ActivationFn::ReLU: return std::max(x, 0.0f);
    case ActivationFn::Sigmoid: return 1.0f / (1.0f + std::exp(-x));
    case ActivationFn::Tanh: return std::tanh(x);
    }
    return x;
}

// Runs the float model and returns every layer's output. A pool right after a
// convolution pools the convolution's pre-activation sums; the convolution's
// activation is applied after pooling (the same order the hardware uses).
std::vector<std::vector<float>> float_trace(const FloatModel& model, const std::vector<float>& input) {
    const auto& ws = model.spec;
    const auto shapes = ws.layer_outputs();
    std::vector<std::vector<float>> outs(ws.layers.size());
    std::vector<float> x = input;
    TensorShape xs = ws.input_shape();
    if (x.size() != xs.elements()) throw Error("float_forward: input has the wrong size");
    for (std::size_t li = 0; li < ws.layers.size(); ++li) {
        const auto& l = ws.layers[li];
        const auto& w = model.weights[li];
        std::vector<float> y(shapes[li].elements(), 0.0f);
        const bool pooled_next = li + 1 < ws.layers.size() && ws.layers[li + 1].kind() == LayerKind::Pool;
        switch (l.kind()) {
        case LayerKind::FC: {
            const auto& f = std::get<FcShape>(l.shape);
            for (std::uint32_t i = 0; i < f.in_dim; ++i)
                for (std::uint32_t o = 0; o < f.out_dim; ++o) y[o] += x[i] * w[std::size_t{i} * f.out_dim + o];
            for (auto& v : y) v = apply_fn(l.activation, v);
            break;
        }
        case LayerKind::Conv: {
            const auto& c = std::get<ConvShape>(l.shape);
            const std::uint32_t oh = c.out_h(), ow = c.out_w();
            for (std::uint32_t oy = 0; oy < oh; ++oy)
                for (std::uint32_t ox = 0; ox < ow; ++ox)
                    for (std::uint32_t r = 0; r < c.kernel_h; ++r)
                        for (std::uint32_t s = 0; s < c.kernel_w; ++s) {
                            const std::int64_t iy = std::int64_t{oy} * c.stride + r - c.pad;
                            const std::int64_t ix = std::int64_t{ox} * c.stride + s - c.pad;
                            if (iy < 0 || ix < 0 || iy >= c.image_h || ix >= c.image_w) continue;
                            for (std::uint32_t ci = 0; ci < c.in_channels; ++ci) {
                                const float xv = x[(static_cast<std::size_t>(iy) * c.image_w + ix) * c.in_channels + ci];
                                const float* wr =
                                    &w[((std::size_t{r} * c.kernel_w + s) * c.in_channels + ci) * c.out_channels];
                                float* yr = &y[(std::size_t{oy} * ow + ox) * c.out_channels];
                                for (std::uint32_t m = 0; m < c.out_channels; ++m) yr[m] += xv * wr[m];
                            }
                        }
            if (!pooled_next)
                for (auto& v : y) v = apply_fn(l.activation, v);
            break;
        }
        case LayerKind::Vector:
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = apply_fn(l.activation, x[i]);
            break;
        case LayerKind::Pool: {
            const auto& p = std::get<PoolShape>(l.shape);
            const auto& ys = shapes[li];
            for (std::uint32_t py = 0; py < ys.h; ++py)
                for (std::uint32_t px = 0; px < ys.w; ++px)
                    for (std::uint32_t ch = 0; ch < ys.channels; ++ch) {
                        float best = -std::numeric_limits<float>::infinity();
                        float sum = 0.0f;
                        int count = 0;
                        for (std::uint32_t ky = 0; ky < p.window; ++ky)
                            for (std::uint32_t kx = 0; kx < p.window; ++kx) {
                                const std::int64_t iy = std::int64_t{py} * p.stride + ky - p.pad;
                                const std::int64_t ix = std::int64_t{px} * p.stride + kx - p.pad;
                                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                                const float v = x[(static_cast<std::size_t>(iy) * xs.w + ix) * xs.channels + ch];
                                best = std::max(best, v);
                                sum += v;
                                ++count;
                            }
                        const float v = p.kind == PoolKind::Max ? best : sum / static_cast<float>(count);
                        y[(std::size_t{py} * ys.w + px) * ys.channels + ch] = apply_fn(ws.layers[li - 1].activation, v);
                    }
            break;
        }
        }
        outs[li] = y;
        x = std::move(y);
        xs = shapes[li];
    }
    return outs;
}

} // namespace

std::vector<float> float_forward(const FloatModel& model, const std::vector<float>& input) {
    return float_trace(model, input).back();
}

double symmetric_scale(const std::vector<float>& values, int qmax) {
    float m = 0.0f;
    for (float v : values) m = std::max(m, std::fabs(v));
    return m == 0.0f ? 1.0 : static_cast<double>(m) / qmax;
}

func::Requant requant_for(double multiplier) {
    if (!(multiplier > 0.0) || !std::isfinite(multiplier)) throw Error("requant multiplier must be positive");
    if (multiplier >= 2147483647.0) throw Error("requant multiplier too large");
    std::uint32_t shift = 0;
    while (shift < 62 && multiplier * std::ldexp(1.0, static_cast<int>(shift) + 1) < 2147483647.0) ++shift;
    const double scaled = std::round(multiplier * std::ldexp(1.0, static_cast<int>(shift)));
    return {static_cast<std::int32_t>(std::max(scaled, 1.0)), shift};
}

QuantizedModel quantize(const FloatModel& model, const std::vector<std::vector<float>>& calibration) {
    const auto& ws = model.spec;
    ws.validate();
    if (calibration.empty()) throw Error("quantize: calibration set is empty");
    const int qa = qmax_for(ws.activation_bits);
    std::vector<float> in_abs;
    std::vector<float> out_abs(ws.layers.size(), 0.0f);
    for (const auto& sample : calibration) {
        for (float v : sample) {
            if (!std::isfinite(v)) throw Error("quantize: non-finite calibration input");
            in_abs.push_back(std::fabs(v));
        }
        const auto trace = float_trace(model, sample);
        for (std::size_t i = 0; i < trace.size(); ++i)
            for (float v : trace[i]) out_abs[i] = std::max(out_abs[i], std::fabs(v));
    }
    QuantizedModel q;
    q.spec = ws;
    q.weights.resize(ws.layers.size());
    q.output_scales.resize(ws.layers.size());
    q.input_scale = symmetric_scale(in_abs, qa);
    double s_x = q.input_scale;
    for (std::size_t i = 0; i < ws.layers.size(); ++i) {
        auto& l = q.spec.layers[i];
        if (l.kind() == LayerKind::Pool) {
            q.output_scales[i] = s_x;
            continue;
        }
        const auto& wf = model.weights[i];
        for (float v : wf)
            if (!std::isfinite(v)) throw Error("quantize: non-finite weight");
        double s_w = 1.0;
        if (l.kind() != LayerKind::Vector) {
            const int qw = qmax_for(l.weight_bits);
            s_w = symmetric_scale(wf, qw);
            auto& wq = q.weights[i];
            wq.resize(wf.size());
            for (std::size_t k = 0; k < wf.size(); ++k)
                wq[k] = static_cast<std::int32_t>(std::clamp<long>(std::lround(wf[k] / s_w), -qw, qw));
        }
        double s_y, s_pre;
        switch (l.activation) {
        case ActivationFn::Sigmoid:
            s_y = 1.0 / 256.0;
            s_pre = 1.0 / func::kLutInputScale;
            break;
        case ActivationFn::Tanh:
            s_y = 1.0 / 127.0;
            s_pre = 1.0 / func::kLutInputScale;
            break;
        default:
            s_y = out_abs[i] == 0.0f ? 1.0 : out_abs[i] / qa;
            s_pre = s_y;
            break;
        }
        l.requant = requant_for(s_x * s_w / s_pre);
        q.output_scales[i] = s_y;
        s_x = s_y;
    }
    return q;
}

std::vector<std::int32_t> quantize_input(const QuantizedModel& model, const std::vector<float>& input) {
    const long qa = qmax_for(model.spec.activation_bits);
    std::vector<std::int32_t> out(input.size());
    for (std::size_t i = 0; i < input.size(); ++i)
        out[i] = static_cast<std::int32_t>(std::clamp<long>(std::lround(input[i] / model.input_scale), -qa, qa));
    return out;
}

FloatModel load_float_model(const std::string& manifest_path, const std::string& tensor_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw Error(manifest_path + ": cannot open manifest");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("", manifest_path + ": " + e.what());
    }
    FloatModel m;
    m.spec = j.at("workload").get<WorkloadSpec>();
    m.weights.resize(m.spec.layers.size());
    std::ifstream tf(tensor_path, std::ios::binary);
    if (!tf) throw Error(tensor_path + ": cannot open tensor file");
    std::vector<char> blob((std::istreambuf_iterator<char>(tf)), std::istreambuf_iterator<char>());
    for (const auto& t : j.at("tensors")) {
        const auto layer = t.at("layer").get<std::size_t>();
        const auto offset = t.at("offset").get<std::uint64_t>();
        const auto count = t.at("count").get<std::uint64_t>();
        if (layer >= m.weights.size()) throw ConfigError("tensors", "layer index out of range");
        if (count != m.spec.layers[layer].weight_count())
            throw ConfigError("tensors", "layer " + std::to_string(layer) + " weight count mismatch");
        if (offset + count * 4 > blob.size()) throw ConfigError("tensors", tensor_path + ": tensor out of range");
        auto& w = m.weights[layer];
        w.resize(count);
        for (std::uint64_t k = 0; k < count; ++k) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= std::uint32_t{static_cast<std::uint8_t>(blob[offset + 4 * k + b])} << (8 * b);
            std::memcpy(&w[k], &bits, 4);
        }
    }
    for (std::size_t i = 0; i < m.weights.size(); ++i)
        if (m.weights[i].size() != m.spec.layers[i].weight_count())
            throw ConfigError("tensors", "missing weights for layer " + std::to_string(i));
    return m;
}

void save_float_model(const FloatModel& model, const std::string& manifest_path, const std::string& tensor_path) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<char> blob;
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
        if (model.weights[i].empty()) continue;
        tensors.push_back({{"layer", i}, {"offset", blob.size()}, {"count", model.weights[i].size()}});
        for (float v : model.weights[i]) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
        }
    }
    std::ofstream mf(manifest_path);
    if (!mf) throw Error(manifest_path + ": cannot write manifest");
    mf << nlohmann::json{{"workload", model.spec}, {"tensors", tensors}}.dump(2) << '\n';
    std::ofstream tf(tensor_path, std::ios::binary);
    if (!tf) throw Error(tensor_path + ": cannot write tensor file");
    tf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

} // namespace tpusim::workloads
