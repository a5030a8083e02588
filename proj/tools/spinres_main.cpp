#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spinres/common.hpp"
#include "spinres/csvio.hpp"
#include "spinres/errors.hpp"
#include "spinres/fieldmap.hpp"
#include "spinres/kinet.hpp"
#include "spinres/protocol.hpp"
#include "spinres/svgplot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spinres;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitUsage = 64;

struct CommonOpts {
    std::string spec_path;
    std::vector<std::string> overrides;
    std::string out_dir = ".";
    int threads = 0;
    long long seed = -1;
};

void add_common(CLI::App* sub, CommonOpts& o, bool spec_required = true) {
    auto* opt = sub->add_option("--spec", o.spec_path, "experiment spec (JSON)");
    if (spec_required) opt->required();
    sub->add_option("--set", o.overrides,
                    "override a spec field, dotted key=value (repeatable)");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--threads", o.threads, "worker thread cap");
    sub->add_option("--seed", o.seed, "override the spec seed");
}

ExperimentSpec load_spec_with_overrides(const CommonOpts& o,
                                        const std::string& expected_kind) {
    std::ifstream in(o.spec_path);
    if (!in) throw ParseError("cannot open spec: " + o.spec_path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("spec: ") + e.what());
    }
    for (const auto& kv : o.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ParseError("override must be key=value: " + kv);
        apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed >= 0) j["seed"] = static_cast<std::uint64_t>(o.seed);
    auto spec = parse_spec(j, fs::path(o.spec_path).parent_path().string());
    if (!expected_kind.empty() && spec.kind_name != expected_kind)
        throw ParseError("spec kind '" + spec.kind_name + "' does not match the '" +
                         expected_kind + "' subcommand");
    return spec;
}

int run_experiment(const CommonOpts& o, const std::string& expected_kind) {
    if (o.threads > 0) set_max_threads(o.threads);
    auto spec = load_spec_with_overrides(o, expected_kind);
    auto violations = validate(spec);
    if (!violations.empty()) {
        std::fprintf(stderr, "spec validation failed:\n");
        for (const auto& v : violations)
            std::fprintf(stderr, "  - %s\n", v.c_str());
        return kExitValidation;
    }
    auto out = run(spec, o.out_dir);
    std::string svg_path =
        (fs::path(o.out_dir) / (spec.output + ".svg")).string();
    write_svg_plot(out.result, svg_path, spec.output);
    for (const auto& w : out.warnings.messages)
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("%s\n%s\n%s\n", out.csv_path.c_str(), out.sidecar_path.c_str(),
                svg_path.c_str());
    return kExitOk;
}

int cmd_fit(const CommonOpts& o, const std::string& data_csv, double f0) {
    if (!data_csv.empty()) {
        if (!(f0 > 0.0)) throw ParseError("fit: --f0 is required with --data");
        // Direct fit of a measured (current_ma, delta_f_mhz) table.
        auto table = read_csv(data_csv);
        TuningDataset data;
        for (const auto& r : table.rows)
            data.points.push_back({r[0] * 1e-3, r[1] * 1e6});
        auto fit = fit_tuning_params(data, f0);
        json j;
        j["i2_star_ma"] = fit.i2_star * 1e3;
        j["i4_star_ma"] = fit.i4_star * 1e3;
        j["i2_star_stderr_ma"] = fit.i2_star_stderr * 1e3;
        j["i4_star_stderr_ma"] = fit.i4_star_stderr * 1e3;
        j["residual_rms_hz"] = fit.residual_rms;
        j["covariance"] = fit.covariance;
        fs::create_directories(o.out_dir);
        std::string path = (fs::path(o.out_dir) / "fit.json").string();
        std::ofstream out(path);
        out << j.dump(2) << "\n";
        std::printf("%s\n", path.c_str());
        return kExitOk;
    }
    return run_experiment(o, "fit_tuning");
}

int cmd_fieldmap(const std::string& geometry_path, double power_dbm,
                 const std::string& device_path, const std::string& out_dir) {
    CpwGeometry geom =
        geometry_path.empty() ? CpwGeometry{} : load_geometry(geometry_path);
    double anchor_dbm = -15.0, anchor_tesla = 0.2e-6, cap = 1e9;
    if (!device_path.empty()) {
        auto dev = load_device(device_path);
        cap = dev.max_power_no_bias_dbm;
        if (dev.center_pin_width > 0.0) geom.center_width = dev.center_pin_width;
        std::ifstream in(device_path);
        json j = json::parse(in);
        anchor_dbm = j.value("b1_anchor_dbm", anchor_dbm);
        anchor_tesla = j.value("b1_anchor_tesla", anchor_tesla);
    }
    Warnings warnings;
    auto samples = b1_map(geom, power_dbm, anchor_dbm, anchor_tesla, 64, 16,
                          &warnings, cap);
    double p_watt = 1e-3 * std::pow(10.0, power_dbm / 10.0);

    ExperimentResult out;
    out.x_label = "y_um";
    out.y_labels = {"z_um", "bbias_x_uT_per_ma", "bbias_y_uT_per_ma", "b1_uT"};
    for (const auto& s : samples) {
        out.rows.push_back({s.position[0] * 1e6, s.position[1] * 1e6,
                            s.b_bias_per_amp[0] * 1e6 * 1e-3,
                            s.b_bias_per_amp[1] * 1e6 * 1e-3,
                            s.b1_per_sqrt_watt * std::sqrt(p_watt) * 1e6});
    }
    fs::create_directories(out_dir);
    std::string path = (fs::path(out_dir) / "fieldmap.csv").string();
    write_csv(out, path);
    for (const auto& w : warnings.messages)
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("%s\n", path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spinres: tunable superconducting ESR resonator toolkit"};
    app.require_subcommand(1);

    CommonOpts fit_o, s21_o, tune_o, sweep_o, t2_o, deer_o, val_o;
    std::string fit_data, fit_f0 = "0";
    std::string deer_mode;
    std::string fm_geometry, fm_device, fm_out = ".";
    std::string fm_power = "-15dBm";
    std::string plot_csv, plot_svg;

    auto* fit = app.add_subcommand("fit", "fit tuning-law parameters");
    add_common(fit, fit_o, false);
    fit->add_option("--data", fit_data, "CSV of current_ma, delta_f_mhz");
    fit->add_option("--f0", fit_f0, "zero-bias resonance frequency (SI suffixes ok)");

    auto* s21c = app.add_subcommand("s21", "network transmission sweep");
    add_common(s21c, s21_o);
    auto* tune = app.add_subcommand("tune", "bias retuning dynamics");
    add_common(tune, tune_o);
    auto* fsw = app.add_subcommand("fieldsweep", "echo-detected field sweep");
    add_common(fsw, sweep_o);
    auto* t2c = app.add_subcommand("t2", "Hahn-echo coherence decay");
    add_common(t2c, t2_o);
    auto* deerc = app.add_subcommand("deer", "two-species DEER experiment");
    add_common(deerc, deer_o);
    deerc->add_option("--mode", deer_mode, "analytic or full");

    auto* fm = app.add_subcommand("fieldmap", "bias-current and B1 field maps");
    fm->add_option("--geometry", fm_geometry, "geometry JSON");
    fm->add_option("--device", fm_device, "device JSON (anchors the B1 scale)");
    fm->add_option("--power", fm_power, "input power (e.g. -15dBm)");
    fm->add_option("--out", fm_out, "output directory");

    auto* val = app.add_subcommand("validate", "validate a spec file");
    add_common(val, val_o);

    auto* plot = app.add_subcommand("plot", "render a result CSV as SVG");
    plot->add_option("--csv", plot_csv, "input CSV")->required();
    plot->add_option("--svg", plot_svg, "output SVG (default: CSV basename)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (fit->parsed()) {
            if (fit_data.empty() && fit_o.spec_path.empty())
                throw ParseError("fit: need --data or --spec");
            return cmd_fit(fit_o, fit_data, parse_si_number(fit_f0));
        }
        if (s21c->parsed()) return run_experiment(s21_o, "s21_sweep");
        if (tune->parsed()) return run_experiment(tune_o, "tune_time");
        if (fsw->parsed()) return run_experiment(sweep_o, "field_sweep");
        if (t2c->parsed()) return run_experiment(t2_o, "t2_decay");
        if (deerc->parsed()) {
            if (!deer_mode.empty())
                deer_o.overrides.push_back("parameters.mode=" + deer_mode);
            return run_experiment(deer_o, "deer");
        }
        if (fm->parsed())
            return cmd_fieldmap(fm_geometry, parse_si_number(fm_power),
                                fm_device, fm_out);
        if (val->parsed()) {
            auto spec = load_spec_with_overrides(val_o, "");
            auto violations = validate(spec);
            if (violations.empty()) {
                std::printf("ok\n");
                return kExitOk;
            }
            for (const auto& v : violations)
                std::fprintf(stderr, "violation: %s\n", v.c_str());
            return kExitValidation;
        }
        if (plot->parsed()) {
            auto table = read_csv(plot_csv);
            if (plot_svg.empty())
                plot_svg = fs::path(plot_csv).replace_extension(".svg").string();
            write_svg_plot(table, plot_svg, fs::path(plot_csv).stem().string());
            std::printf("%s\n", plot_svg.c_str());
            return kExitOk;
        }
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        std::string what = e.what();
        return what.find("validation failed") != std::string::npos
                   ? kExitValidation
                   : kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
