#include "spinres/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "spinres/biasdyn.hpp"
#include "spinres/deer.hpp"
#include "spinres/errors.hpp"
#include "spinres/fieldmap.hpp"
#include "spinres/kinet.hpp"
#include "spinres/netmodel.hpp"
#include "spinres/rng.hpp"
#include "spinres/spinsim.hpp"

namespace spinres {

using nlohmann::json;
using namespace constants;
namespace fs = std::filesystem;

std::string ExperimentSpec::resolve(const std::string& rel) const {
    fs::path p(rel);
    if (p.is_absolute()) return rel;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

namespace {

const std::map<std::string, ExperimentKind> kKinds = {
    {"fit_tuning", ExperimentKind::fit_tuning},
    {"s21_sweep", ExperimentKind::s21_sweep},
    {"tune_time", ExperimentKind::tune_time},
    {"field_sweep", ExperimentKind::field_sweep},
    {"t2_decay", ExperimentKind::t2_decay},
    {"deer", ExperimentKind::deer}};

double param(const json& p, const std::string& key, double fallback) {
    return p.value(key, fallback);
}

}  // namespace

ExperimentSpec parse_spec(const json& j, const std::string& base_dir) {
    ExperimentSpec spec;
    spec.base_dir = base_dir;
    spec.kind_name = j.value("kind", "");
    auto it = kKinds.find(spec.kind_name);
    if (it == kKinds.end())
        throw ParseError("spec: unknown kind '" + spec.kind_name + "'");
    spec.kind = it->second;
    spec.device_ref = j.value("device", "");
    spec.seed = j.value("seed", 1);
    spec.output = j.value("output", "result");
    spec.parameters = j.value("parameters", json::object());
    return spec;
}

ExperimentSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open spec: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("spec: ") + e.what());
    }
    return parse_spec(j, fs::path(path).parent_path().string());
}

namespace {

struct LoadedContext {
    DeviceTuningParams dev;
    CpwGeometry geom;
    SpinSystemConfig spins;
};

LoadedContext load_context(const ExperimentSpec& spec) {
    LoadedContext ctx;
    if (!spec.device_ref.empty())
        ctx.dev = load_device(spec.resolve(spec.device_ref));
    if (spec.parameters.contains("geometry"))
        ctx.geom = load_geometry(
            spec.resolve(spec.parameters.at("geometry").get<std::string>()));
    else if (!spec.device_ref.empty() && ctx.dev.center_pin_width > 0.0)
        ctx.geom.center_width = ctx.dev.center_pin_width;
    if (spec.parameters.contains("spin_config"))
        ctx.spins = load_spin_config(
            spec.resolve(spec.parameters.at("spin_config").get<std::string>()));
    return ctx;
}

SpinContext make_spin_context(const ExperimentSpec& spec,
                              const LoadedContext& loaded) {
    SpinContext ctx;
    ctx.dev = loaded.dev;
    ctx.geom = loaded.geom;
    ctx.spins = loaded.spins;
    const json& p = spec.parameters;
    ctx.tau = param(p, "tau_us", 60.0) * 1e-6;
    ctx.theta = param(p, "misalignment_deg", 0.0) * pi / 180.0;
    ctx.ens.gh_points = static_cast<int>(param(p, "gh_points", 16));
    ctx.ens.ny = static_cast<int>(param(p, "spatial_ny", 12));
    ctx.ens.nz = static_cast<int>(param(p, "spatial_nz", 12));
    ctx.ens.spatial = p.value("spatial", true);
    ctx.ens.seed = spec.seed;
    return ctx;
}

PulseStyle style_from(const json& p) {
    std::string s = p.value("pulse_style", "adiabatic");
    if (s == "rect") return PulseStyle::rect;
    if (s == "adiabatic") return PulseStyle::adiabatic;
    throw ParseError("spec: pulse_style must be rect or adiabatic");
}

ExperimentResult run_fit_tuning(const ExperimentSpec& spec,
                                const LoadedContext& loaded, Warnings&) {
    const json& p = spec.parameters;
    ExperimentResult out;
    out.x_label = "current_ma";
    out.y_labels = {"delta_f_mhz"};

    TuningDataset data;
    double f0 = 0.0;
    if (p.contains("data_csv")) {
        auto table = read_csv(spec.resolve(p.at("data_csv").get<std::string>()));
        for (const auto& r : table.rows)
            data.points.push_back({r[0] * 1e-3, r[1] * 1e6});
        f0 = p.at("f0_hz").get<double>();
        for (const auto& [i, d] : data.points) out.rows.push_back({i * 1e3, d / 1e6});
    } else {
        const auto& dev = loaded.dev;
        f0 = dev.f0;
        int n = static_cast<int>(param(p, "points", 40));
        double noise_pct = param(p, "noise_pct", 0.0);
        Rng rng(spec.seed, "fit-tuning-noise");
        for (int k = 0; k <= n; ++k) {
            double i = dev.i_critical * k / (n + 0.2);
            double d = delta_f(i, dev);
            if (noise_pct > 0.0 && k > 0)
                d *= 1.0 + 0.01 * noise_pct * rng.normal();
            out.rows.push_back({i * 1e3, d / 1e6});
            if (k > 0) data.points.push_back({i, d});
        }
    }

    auto fit = fit_tuning_params(data, f0);
    out.metadata["i2_star_ma"] = format_double(fit.i2_star * 1e3);
    out.metadata["i4_star_ma"] = format_double(fit.i4_star * 1e3);
    out.metadata["i2_star_stderr_ma"] = format_double(fit.i2_star_stderr * 1e3);
    out.metadata["i4_star_stderr_ma"] = format_double(fit.i4_star_stderr * 1e3);
    out.metadata["residual_rms"] = format_double(fit.residual_rms);
    return out;
}

ExperimentResult run_s21_sweep(const ExperimentSpec& spec,
                               const LoadedContext&, Warnings& warnings) {
    const json& p = spec.parameters;
    auto net = load_network(spec.resolve(p.at("network").get<std::string>()));
    double f_lo = p.at("f_start_hz").get<double>();
    double f_hi = p.at("f_stop_hz").get<double>();
    int n = static_cast<int>(param(p, "points", 2001));

    ExperimentResult out;
    out.x_label = "freq_hz";
    out.y_labels = {"s21_re", "s21_im", "s21_mag_db"};
    for (int k = 0; k < n; ++k) {
        double f = f_lo + (f_hi - f_lo) * k / (n - 1.0);
        Complex s = s21(net, f);
        out.rows.push_back(
            {f, s.real(), s.imag(), 20.0 * std::log10(std::abs(s))});
    }
    try {
        auto sum = find_resonance(net, f_lo, f_hi,
                                  net.internal_q > 0 ? net.internal_q : 1e6,
                                  6000.0, &warnings);
        out.metadata["f_res_mhz"] = format_double(sum.f_res / 1e6);
        out.metadata["q_loaded"] = format_double(sum.q_loaded);
        out.metadata["coupling"] = format_double(sum.coupling);
        out.metadata["peak_s21_mag"] = format_double(sum.peak_s21_mag);
    } catch (const Error&) {
        // Band without a clean single peak: sweep data is still valid.
    }
    return out;
}

ExperimentResult run_tune_time(const ExperimentSpec& spec,
                               const LoadedContext& loaded, Warnings&) {
    const json& p = spec.parameters;
    const auto& dev = loaded.dev;

    ExperimentResult out;
    if (p.contains("targets_mhz")) {
        out.x_label = "target_mhz";
        out.y_labels = {"tuning_time_ns", "step_current_ma"};
        for (const auto& jt : p.at("targets_mhz")) {
            double target = jt.get<double>() * 1e6;
            if (target > 0.0) target = -target;
            double i_step = invert_delta_f(target, dev);
            auto sched = BiasSchedule::step(i_step, 0.0, 40e-6, dev.tuning_lag);
            double t = tuning_time(sched, dev, target);
            out.rows.push_back({target / 1e6, t * 1e9, i_step * 1e3});
        }
        return out;
    }

    double target = param(p, "target_mhz", -31.2) * 1e6;
    if (target > 0.0) target = -target;
    double duration = param(p, "duration_us", 2.0) * 1e-6;
    double i_step = p.contains("current_ma")
                        ? p.at("current_ma").get<double>() * 1e-3
                        : invert_delta_f(target, dev);
    auto sched = BiasSchedule::step(i_step, 0.0, duration + 40e-6, dev.tuning_lag);
    auto trace = cavity_trace(dev.f0 + target, sched, dev, duration);
    out.x_label = "time_ns";
    out.y_labels = {"f_res_mhz", "transmitted_amp"};
    for (std::size_t k = 0; k < trace.times.size(); ++k)
        out.rows.push_back({trace.times[k] * 1e9, trace.f_res_of_t[k] / 1e6,
                            trace.transmitted_amplitude[k]});
    out.metadata["tuning_time_ns"] =
        format_double(tuning_time(sched, dev, target) * 1e9);
    out.metadata["step_current_ma"] = format_double(i_step * 1e3);
    return out;
}

ExperimentResult run_field_sweep(const ExperimentSpec& spec,
                                 const LoadedContext& loaded,
                                 Warnings& warnings) {
    const json& p = spec.parameters;
    SpinContext ctx = make_spin_context(spec, loaded);
    double bias = param(p, "bias_ma", 0.0) * 1e-3;
    PulseStyle style = style_from(p);

    double center = ctx.spins.p31.line_center_field;
    if (bias != 0.0)
        center += delta_f(bias, ctx.dev) / ctx.spins.p31.gamma_eff;
    double span = param(p, "field_span_mt", 0.16) * 1e-3;
    double step = param(p, "field_step_mt", 0.005) * 1e-3;
    if (p.contains("field_center_mt")) center = p.at("field_center_mt").get<double>() * 1e-3;

    std::vector<double> grid;
    for (double b = center - 0.5 * span; b <= center + 0.5 * span + 1e-12;
         b += step)
        grid.push_back(b);

    auto out = field_sweep(ctx, bias, style, grid, &warnings);
    out.x_label = "x_value";
    out.metadata["x_unit"] = "tesla";
    out.metadata["peak_field_mt"] = format_double(peak_location(out) * 1e3);
    double amax = 0.0;
    for (const auto& r : out.rows) amax = std::max(amax, r[1]);
    out.metadata["peak_amp"] = format_double(amax);
    return out;
}

ExperimentResult run_t2_decay(const ExperimentSpec& spec,
                              const LoadedContext& loaded, Warnings& warnings) {
    const json& p = spec.parameters;
    SpinContext ctx = make_spin_context(spec, loaded);
    double bias = param(p, "bias_ma", 0.0) * 1e-3;
    PulseStyle style = style_from(p);

    std::optional<CompensationKind> comp;
    std::string comp_name = p.value("compensation", "none");
    if (comp_name == "symmetric_pair")
        comp = CompensationKind::symmetric_pair;
    else if (comp_name == "bipolar")
        comp = CompensationKind::bipolar;
    else if (comp_name != "none")
        throw ParseError("spec: unknown compensation '" + comp_name + "'");

    double tau_lo = param(p, "tau_start_us", 40.0) * 1e-6;
    double tau_hi = param(p, "tau_stop_us", 500.0) * 1e-6;
    int n = static_cast<int>(param(p, "tau_points", 10));
    std::vector<double> taus;
    for (int k = 0; k < n; ++k)
        taus.push_back(tau_lo + (tau_hi - tau_lo) * k / (n - 1.0));

    auto out = t2_decay(ctx, style, taus, bias, comp, &warnings);
    out.x_label = "x_value";
    out.metadata["x_unit"] = "seconds";
    try {
        auto fit = fit_t2(out, ctx.spins.stretch_exponent);
        out.metadata["t2_us"] = format_double(fit.t2 * 1e6);
        out.metadata["t2_stderr_us"] = format_double(fit.stderr_t2 * 1e6);
    } catch (const FitDiverged& e) {
        out.metadata["t2_fit_error"] = e.what();
    }
    return out;
}

ExperimentResult run_deer(const ExperimentSpec& spec,
                          const LoadedContext& loaded, Warnings& warnings) {
    const json& p = spec.parameters;
    DeerConfig cfg;
    if (p.contains("deer_config"))
        cfg = load_deer_config(
            spec.resolve(p.at("deer_config").get<std::string>()));
    cfg.seed = spec.seed;
    if (p.contains("observers")) cfg.observers = p.at("observers").get<int>();

    double t_lo = param(p, "t_start_us", 6.0) * 1e-6;
    double t_hi = param(p, "t_stop_us", 30.0) * 1e-6;
    int n = static_cast<int>(param(p, "t_points", 13));
    std::vector<double> grid;
    for (int k = 0; k < n; ++k)
        grid.push_back(t_lo + (t_hi - t_lo) * k / (n - 1.0));

    DeerMode mode = DeerMode::analytic;
    std::string mode_name = p.value("mode", "analytic");
    if (mode_name == "full")
        mode = DeerMode::full;
    else if (mode_name != "analytic")
        throw ParseError("spec: deer mode must be analytic or full");

    SpinContext ctx = make_spin_context(spec, loaded);
    auto out = deer_curve(cfg, grid, mode,
                          mode == DeerMode::full ? &ctx : nullptr, &warnings);
    out.metadata["flip_fraction"] = format_double(cfg.flip_fraction);
    out.metadata["mode"] = mode_name;
    return out;
}

}  // namespace

std::vector<std::string> validate(const ExperimentSpec& spec) {
    std::vector<std::string> v;
    const json& p = spec.parameters;

    auto need_file = [&](const std::string& label, const std::string& rel) {
        if (rel.empty()) {
            v.push_back(label + ": missing");
        } else if (!fs::exists(spec.resolve(rel))) {
            v.push_back(label + ": file not found: " + spec.resolve(rel));
        }
    };

    const bool needs_device = spec.kind != ExperimentKind::s21_sweep;
    if (needs_device) need_file("device", spec.device_ref);

    DeviceTuningParams dev;
    bool have_dev = false;
    if (needs_device && v.empty()) {
        try {
            dev = load_device(spec.resolve(spec.device_ref));
            have_dev = true;
        } catch (const std::exception& e) {
            v.push_back(std::string("device: ") + e.what());
        }
    }

    for (const char* key : {"geometry", "spin_config", "deer_config", "network",
                            "data_csv"})
        if (p.contains(key))
            need_file(key, p.at(key).get<std::string>());

    auto check_bias = [&](double bias_ma) {
        if (have_dev && std::fabs(bias_ma) * 1e-3 >= dev.i_critical)
            v.push_back("bias_ma: exceeds i_critical " +
                        format_double(dev.i_critical * 1e3) + " mA");
    };

    switch (spec.kind) {
        case ExperimentKind::s21_sweep:
            if (!p.contains("network")) v.push_back("network: missing");
            if (param(p, "f_start_hz", 0.0) <= 0.0 ||
                param(p, "f_stop_hz", 0.0) <= param(p, "f_start_hz", 0.0))
                v.push_back("f_start_hz/f_stop_hz: need 0 < start < stop");
            break;
        case ExperimentKind::tune_time: {
            if (have_dev && p.contains("targets_mhz")) {
                for (const auto& jt : p.at("targets_mhz")) {
                    double t = -std::fabs(jt.get<double>()) * 1e6;
                    if (std::fabs(t) > max_delta_f_magnitude(dev))
                        v.push_back("targets_mhz: " + format_double(t / 1e6) +
                                    " MHz beyond the device tuning range");
                }
            }
            if (have_dev && p.contains("current_ma"))
                check_bias(p.at("current_ma").get<double>());
            break;
        }
        case ExperimentKind::field_sweep:
            check_bias(param(p, "bias_ma", 0.0));
            if (param(p, "field_step_mt", 0.005) <= 0.0)
                v.push_back("field_step_mt: must be > 0");
            break;
        case ExperimentKind::t2_decay:
            check_bias(param(p, "bias_ma", 0.0));
            if (param(p, "tau_points", 10) < 6)
                v.push_back("tau_points: need >= 6 points for the T2 fit");
            break;
        case ExperimentKind::deer: {
            DeerConfig cfg;
            if (p.contains("deer_config")) {
                try {
                    cfg = load_deer_config(
                        spec.resolve(p.at("deer_config").get<std::string>()));
                } catch (const std::exception& e) {
                    v.push_back(std::string("deer_config: ") + e.what());
                    break;
                }
            }
            double t_lo = param(p, "t_start_us", 6.0) * 1e-6;
            double t_hi = param(p, "t_stop_us", 30.0) * 1e-6;
            if (t_lo < cfg.t_min)
                v.push_back("t_start_us: t < t_min (" +
                            format_double(cfg.t_min * 1e6) + " us)");
            if (t_hi > cfg.tau - cfg.pump_duration)
                v.push_back("t_stop_us: pump would overlap the observer pi pulse");
            if (have_dev) {
                try {
                    invert_delta_f(cfg.pump_offset, dev);
                } catch (const TargetUnreachable&) {
                    v.push_back("pump_offset_mhz: beyond the device tuning range");
                }
            }
            break;
        }
        case ExperimentKind::fit_tuning:
            if (p.contains("data_csv") && !p.contains("f0_hz"))
                v.push_back("f0_hz: required when fitting external data");
            break;
    }
    return v;
}

RunOutput run(const ExperimentSpec& spec, const std::string& out_dir) {
    auto violations = validate(spec);
    if (!violations.empty()) {
        std::string msg = "spec validation failed:";
        for (const auto& s : violations) msg += "\n  - " + s;
        throw Error(msg);
    }

    auto t0 = std::chrono::steady_clock::now();
    LoadedContext loaded = load_context(spec);

    RunOutput out;
    switch (spec.kind) {
        case ExperimentKind::fit_tuning:
            out.result = run_fit_tuning(spec, loaded, out.warnings);
            break;
        case ExperimentKind::s21_sweep:
            out.result = run_s21_sweep(spec, loaded, out.warnings);
            break;
        case ExperimentKind::tune_time:
            out.result = run_tune_time(spec, loaded, out.warnings);
            break;
        case ExperimentKind::field_sweep:
            out.result = run_field_sweep(spec, loaded, out.warnings);
            break;
        case ExperimentKind::t2_decay:
            out.result = run_t2_decay(spec, loaded, out.warnings);
            break;
        case ExperimentKind::deer:
            out.result = run_deer(spec, loaded, out.warnings);
            break;
    }
    auto t1 = std::chrono::steady_clock::now();

    out.result.metadata["kind"] = spec.kind_name;
    out.result.metadata["device"] =
        spec.device_ref.empty() ? "none" : loaded.dev.name;
    out.result.metadata["seed"] = std::to_string(spec.seed);
    out.result.metadata["toolkit_version"] = kVersion;
    out.result.metadata["wall_ms"] = std::to_string(
        std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
    for (std::size_t k = 0; k < out.warnings.messages.size(); ++k)
        out.result.metadata["warning_" + std::to_string(k)] =
            out.warnings.messages[k];

    fs::create_directories(out_dir);
    out.csv_path = (fs::path(out_dir) / (spec.output + ".csv")).string();
    out.sidecar_path = (fs::path(out_dir) / (spec.output + ".json")).string();
    write_csv(out.result, out.csv_path);
    write_sidecar(out.result, out.sidecar_path);
    return out;
}

void apply_override(json& spec_json, const std::string& dotted_key,
                    const std::string& value) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t dot = dotted_key.find('.', start);
        parts.push_back(dotted_key.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json* node = &spec_json;
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        if (!node->contains(parts[k]))
            throw ParseError("override: unknown key '" + dotted_key + "'");
        node = &(*node)[parts[k]];
    }
    const std::string& leaf = parts.back();
    if (!node->contains(leaf))
        throw ParseError("override: unknown key '" + dotted_key + "'");
    json& slot = (*node)[leaf];
    if (slot.is_number()) {
        slot = parse_si_number(value);
    } else if (slot.is_boolean()) {
        if (value == "true")
            slot = true;
        else if (value == "false")
            slot = false;
        else
            throw ParseError("override: '" + dotted_key + "' expects a boolean");
    } else if (slot.is_string()) {
        slot = value;
    } else {
        throw ParseError("override: '" + dotted_key +
                         "' is not a scalar field");
    }
}

double parse_si_number(const std::string& text) {
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str()) throw ParseError("not a number: " + text);
    std::string suffix(end);
    while (!suffix.empty() && suffix.front() == ' ') suffix.erase(0, 1);
    if (suffix.empty()) return v;
    static const std::map<std::string, double> kScales = {
        {"A", 1.0},    {"mA", 1e-3},  {"uA", 1e-6},  {"Hz", 1.0},
        {"kHz", 1e3},  {"MHz", 1e6},  {"GHz", 1e9},  {"s", 1.0},
        {"ms", 1e-3},  {"us", 1e-6},  {"ns", 1e-9},  {"T", 1.0},
        {"mT", 1e-3},  {"uT", 1e-6},  {"m", 1.0},    {"mm", 1e-3},
        {"um", 1e-6},  {"nm", 1e-9},  {"dBm", 1.0},  {"rad", 1.0},
        {"deg", pi / 180.0}};
    auto it = kScales.find(suffix);
    if (it == kScales.end())
        throw ParseError("unknown unit suffix '" + suffix + "' in " + text);
    return v * it->second;
}

}  // namespace spinres
