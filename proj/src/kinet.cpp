#include "spinres/kinet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "spinres/errors.hpp"

namespace spinres {

using nlohmann::json;

void DeviceTuningParams::validate() const {
    if (f0 <= 0.0) throw Error(name + ": f0 must be positive");
    if (i4_star <= 0.0) throw Error(name + ": i4_star must be positive");
    if (!(i_critical > 0.0 && i_critical < i2_star))
        throw Error(name + ": requires 0 < i_critical < i2_star");
    if (max_power_biased_dbm > max_power_no_bias_dbm)
        throw Error(name + ": biased power cap above unbiased cap");
}

double DeviceTuningParams::power_dbm_for_omega1(double omega1) const {
    return power_ref_dbm + 20.0 * std::log10(std::fabs(omega1) / omega1_ref);
}

double DeviceTuningParams::omega1_for_power_dbm(double dbm) const {
    return omega1_ref * std::pow(10.0, (dbm - power_ref_dbm) / 20.0);
}

DeviceTuningParams load_device(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open device file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("device file: ") + e.what());
    }
    DeviceTuningParams p;
    p.name = j.value("name", path);
    p.f0 = j.at("f0_hz").get<double>();
    p.i2_star = j.at("i2_star_a").get<double>();
    p.i4_star = j.at("i4_star_a").get<double>();
    p.i_critical = j.at("i_critical_a").get<double>();
    p.q_loaded = j.at("q_loaded").get<double>();
    p.coupling = j.value("coupling", 0.0);
    p.max_power_no_bias_dbm = j.at("max_power_no_bias_dbm").get<double>();
    p.max_power_biased_dbm = j.at("max_power_biased_dbm").get<double>();
    p.center_pin_width = j.value("center_pin_width_m", 0.0);
    p.omega1_ref = j.value("omega1_ref_rad_s", 7.853981633974483e6);
    p.power_ref_dbm = j.value("power_ref_dbm", -29.0);
    p.tuning_lag = j.value("tuning_lag_s", 0.0);
    p.validate();
    return p;
}

void TuningDataset::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].first < 0.0) throw Error("tuning data: negative current");
        if (points[i].second > 0.0) throw Error("tuning data: delta_f must be <= 0");
        for (std::size_t k = i + 1; k < points.size(); ++k)
            if (points[i].first == points[k].first)
                throw Error("tuning data: duplicate current value");
    }
}

double delta_f(double current, const DeviceTuningParams& p, Warnings* warnings,
               double drive_power_dbm) {
    const double i = std::fabs(current);
    if (i >= p.i_critical)
        throw CriticalCurrentExceeded(p.name + ": |i| >= i_critical");
    if (drive_power_dbm > p.power_cap_dbm(i > 0.0)) {
        warn(warnings, p.name + ": drive power above " +
                           (i > 0.0 ? std::string("biased") : std::string("no-bias")) +
                           " cap");
    }
    const double q = i / p.i2_star;
    const double r = i / p.i4_star;
    return -p.f0 * (q * q + r * r * r * r);
}

double max_delta_f_magnitude(const DeviceTuningParams& p) {
    const double i = std::nextafter(p.i_critical, 0.0);
    const double q = i / p.i2_star;
    const double r = i / p.i4_star;
    return p.f0 * (q * q + r * r * r * r);
}

double invert_delta_f(double target, const DeviceTuningParams& p) {
    if (target > 0.0) throw TargetUnreachable(p.name + ": target must be <= 0");
    const double mag = -target;
    if (mag == 0.0) return 0.0;
    if (mag > max_delta_f_magnitude(p))
        throw TargetUnreachable(p.name + ": |target| beyond reach before i_critical");

    // delta_f is quadratic in x = i^2: f0*(a*x + b*x^2) = mag.
    const double a = 1.0 / (p.i2_star * p.i2_star);
    const double b = 1.0 / (p.i4_star * p.i4_star * p.i4_star * p.i4_star);
    const double c = mag / p.f0;
    const double x = (-a + std::sqrt(a * a + 4.0 * b * c)) / (2.0 * b);
    double i = std::sqrt(std::max(0.0, x));

    // Newton polish to the 1 Hz contract.
    for (int k = 0; k < 8; ++k) {
        const double q = i / p.i2_star;
        const double r = i / p.i4_star;
        const double f = p.f0 * (q * q + r * r * r * r) - mag;
        const double df = p.f0 * (2.0 * i * a + 4.0 * i * i * i * b);
        if (df <= 0.0) break;
        i -= f / df;
        if (std::fabs(f) < 0.1) break;
    }
    return std::clamp(i, 0.0, std::nextafter(p.i_critical, 0.0));
}

TuningFit fit_tuning_params(const TuningDataset& data, double f0) {
    data.validate();
    if (data.points.size() < 4)
        throw Error("fit_tuning_params: need at least 4 data points");

    // Residuals of delta_f + f0*(a*i^2 + b*i^4) over params (a, b);
    // linear, so the damped Gauss-Newton step is exact.  Residuals are
    // scaled by 1/|delta_f| since measurement noise on these curves is
    // multiplicative.
    const auto& pts = data.points;
    double dmag_max = 0.0;
    for (const auto& [i, d] : pts) dmag_max = std::max(dmag_max, -d);
    if (dmag_max <= 0.0) throw Error("fit_tuning_params: all shifts are zero");
    const double floor = 1e-3 * dmag_max;
    auto residual = [&, floor](const std::vector<double>& p) {
        std::vector<double> r(pts.size());
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const double i2 = pts[k].first * pts[k].first;
            const double w = 1.0 / (std::fabs(pts[k].second) + floor);
            r[k] = (pts[k].second + f0 * (p[0] * i2 + p[1] * i2 * i2)) * w;
        }
        return r;
    };

    // Seed from a quadratic-only guess at the largest current.
    double imax = 0.0, dmax = 0.0;
    for (const auto& [i, d] : pts)
        if (i > imax) { imax = i; dmax = -d; }
    if (imax <= 0.0 || dmax <= 0.0)
        throw Error("fit_tuning_params: need nonzero currents and shifts");
    double a0 = dmax / (f0 * imax * imax);
    FitResult fit = levenberg_marquardt(residual, {a0, 0.0}, 200);

    TuningFit out;
    out.covariance = fit.covariance;
    out.residual_rms = fit.residual_rms;
    const double a = fit.params[0];
    const double b = fit.params[1];
    if (a <= 0.0) throw FitDiverged("fit_tuning_params: non-positive quadratic term");
    out.i2_star = 1.0 / std::sqrt(a);
    // Error propagation: I2 = a^-1/2, I4 = b^-1/4.
    out.i2_star_stderr = 0.5 * std::pow(a, -1.5) * fit.stderrs[0];
    if (b > 0.0 && fit.stderrs[1] < b) {
        out.i4_star = std::pow(b, -0.25);
        out.i4_star_stderr = 0.25 * std::pow(b, -1.25) * fit.stderrs[1];
    } else {
        // Quartic term indistinguishable from zero (degenerate limit).
        out.i4_star = std::numeric_limits<double>::infinity();
        out.i4_star_stderr = std::numeric_limits<double>::infinity();
    }
    return out;
}

double q_requirement(double f_center, double span) {
    if (span <= 0.0) throw Error("q_requirement: span must be positive");
    return f_center / span;
}

}  // namespace spinres
