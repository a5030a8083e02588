#include "spinres/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "spinres/errors.hpp"

namespace spinres {

using nlohmann::json;
using namespace constants;

void LineSegment::validate() const {
    if (!(length > 0.0)) throw Error("segment length must be > 0");
    if (!(z0 > 0.0)) throw Error("segment impedance must be > 0");
    if (!(v_phase > 0.0 && v_phase <= speed_of_light))
        throw Error("segment phase velocity must be in (0, c]");
    if (!(kinetic_fraction >= 0.0 && kinetic_fraction < 1.0))
        throw Error("kinetic_fraction must be in [0, 1)");
}

void NetworkSpec::validate() const {
    if (segments.empty()) throw Error("network needs at least one segment");
    if (!(port_impedance > 0.0)) throw Error("port impedance must be > 0");
    if (internal_q < 0.0) throw Error("internal_q must be >= 0");
    for (const auto& s : segments) s.validate();
}

bool NetworkSpec::is_mirror_symmetric(double rel_tol) const {
    auto close = [&](double a, double b) {
        return std::fabs(a - b) <= rel_tol * std::max(std::fabs(a), std::fabs(b));
    };
    std::size_t n = segments.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
        const auto& a = segments[i];
        const auto& b = segments[n - 1 - i];
        if (!close(a.length, b.length) || !close(a.z0, b.z0) ||
            !close(a.v_phase, b.v_phase))
            return false;
    }
    return true;
}

AbcdMatrix abcd_segment(const LineSegment& seg, double f) {
    if (!(f > 0.0)) throw Error("frequency must be > 0");
    if (seg.length == 0.0) return {Complex(1), Complex(0), Complex(0), Complex(1)};
    const double beta = two_pi * f / seg.v_phase;
    const double bl = beta * seg.length;
    const double c = std::cos(bl), s = std::sin(bl);
    return {Complex(c, 0), Complex(0, seg.z0 * s), Complex(0, s / seg.z0), Complex(c, 0)};
}

AbcdMatrix abcd_segment_lossy(const LineSegment& seg, double f, double q_internal) {
    if (q_internal <= 0.0) return abcd_segment(seg, f);
    const double beta = two_pi * f / seg.v_phase;
    const double alpha = beta / (2.0 * q_internal);
    const Complex gl(alpha * seg.length, beta * seg.length);
    const Complex ch = std::cosh(gl), sh = std::sinh(gl);
    return {ch, seg.z0 * sh, sh / seg.z0, ch};
}

AbcdMatrix abcd_multiply(const AbcdMatrix& a, const AbcdMatrix& b) {
    return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
}

namespace {

AbcdMatrix network_abcd(const NetworkSpec& net, double f, bool reversed) {
    AbcdMatrix m{Complex(1), Complex(0), Complex(0), Complex(1)};
    const std::size_t n = net.segments.size();
    const std::size_t cavity = net.cavity_index();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t i = reversed ? n - 1 - k : k;
        AbcdMatrix seg = (i == cavity && net.internal_q > 0.0)
                             ? abcd_segment_lossy(net.segments[i], f, net.internal_q)
                             : abcd_segment(net.segments[i], f);
        m = abcd_multiply(m, seg);
    }
    return m;
}

Complex s21_from_abcd(const AbcdMatrix& m, double z0) {
    return 2.0 / (m[0] + m[1] / z0 + m[2] * z0 + m[3]);
}

}  // namespace

Complex s21(const NetworkSpec& net, double f) {
    net.validate();
    return s21_from_abcd(network_abcd(net, f, false), net.port_impedance);
}

Complex s12(const NetworkSpec& net, double f) {
    net.validate();
    return s21_from_abcd(network_abcd(net, f, true), net.port_impedance);
}

namespace {

// Ternary-search refinement of a smooth single maximum in [lo, hi].
double refine_peak(const std::function<double(double)>& fn, double lo, double hi,
                   double tol) {
    while (hi - lo > tol) {
        double m1 = lo + (hi - lo) / 3.0;
        double m2 = hi - (hi - lo) / 3.0;
        if (fn(m1) < fn(m2))
            lo = m1;
        else
            hi = m2;
    }
    return 0.5 * (lo + hi);
}

// Bisection for fn(f) == level, fn monotone on [lo, hi].
double bisect_level(const std::function<double(double)>& fn, double lo, double hi,
                    double level) {
    double flo = fn(lo) - level;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        double fm = fn(mid) - level;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-3) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

ResonanceSummary find_resonance_of(const std::function<double(double)>& s21_mag,
                                   double f_lo, double f_hi,
                                   double loss_q_internal, double q_hint,
                                   Warnings* warnings) {
    if (!(f_hi > f_lo && f_lo > 0.0)) throw Error("invalid frequency band");
    if (!(loss_q_internal > 0.0)) throw Error("loss_q_internal must be > 0");

    const double f_mid = 0.5 * (f_lo + f_hi);
    const double step = f_mid / (20.0 * std::max(q_hint, 1.0));
    const std::size_t n = std::max<std::size_t>(
        16, static_cast<std::size_t>(std::ceil((f_hi - f_lo) / step)) + 1);

    std::vector<double> fs(n), mags(n);
    for (std::size_t i = 0; i < n; ++i) {
        fs[i] = f_lo + (f_hi - f_lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        mags[i] = s21_mag(fs[i]);
    }

    double global_max = *std::max_element(mags.begin(), mags.end());
    double global_min = *std::min_element(mags.begin(), mags.end());
    if (!(global_max > global_min * (1.0 + 1e-9)) || global_max <= 0.0)
        throw NoPeakFound("no transmission peak in band (flat response)");

    // Local maxima above half the global peak.
    std::vector<std::size_t> peaks;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (mags[i] >= mags[i - 1] && mags[i] > mags[i + 1] &&
            mags[i] > 0.5 * global_max)
            peaks.push_back(i);
    }
    if (peaks.empty()) throw NoPeakFound("no interior local maximum in band");
    if (peaks.size() > 1) {
        // Plateau tolerance: treat adjacent-grid maxima as one peak.
        std::vector<std::size_t> distinct{peaks.front()};
        for (std::size_t p : peaks)
            if (p > distinct.back() + 2) distinct.push_back(p);
        if (distinct.size() > 1)
            throw MultiplePeaks("multiple maxima above half the global peak");
    }

    std::size_t pk = peaks.front();
    double lo = fs[pk > 0 ? pk - 1 : 0];
    double hi = fs[std::min(pk + 1, n - 1)];
    const double f_res = refine_peak(s21_mag, lo, hi, 1e2);  // 100 Hz grid, < 1 kHz
    const double peak = s21_mag(f_res);

    // Half-power points of |S21|^2.
    const double level = peak / std::sqrt(2.0);
    std::size_t il = pk, ir = pk;
    while (il > 0 && mags[il] > level) --il;
    while (ir + 1 < n && mags[ir] > level) ++ir;
    if (mags[il] > level || mags[ir] > level)
        throw NoPeakFound("half-power points fall outside the band");
    const double f1 = bisect_level(s21_mag, fs[il], f_res, level);
    const double f2 = bisect_level(s21_mag, f_res, fs[ir], level);
    const double fwhm = f2 - f1;
    if (!(fwhm > 0.0)) throw NoPeakFound("degenerate linewidth");

    ResonanceSummary out;
    out.f_res = f_res;
    out.q_loaded = f_res / fwhm;
    out.peak_s21_mag = peak;
    out.coupling = peak < 1.0 ? peak / (1.0 - peak) : std::numeric_limits<double>::infinity();

    // loss_q_internal cross-check: the insertion loss implies an internal Q
    // of q_loaded/(1-peak); flag gross disagreement with the stated value.
    const double q_int_implied = out.q_loaded / std::max(1e-12, 1.0 - peak);
    if (std::fabs(q_int_implied / loss_q_internal - 1.0) > 0.5)
        warn(warnings, "internal Q implied by insertion loss (" +
                           std::to_string(q_int_implied) +
                           ") differs from stated loss_q_internal");
    return out;
}

ResonanceSummary find_resonance(const NetworkSpec& net, double f_lo, double f_hi,
                                double loss_q_internal, double q_hint,
                                Warnings* warnings) {
    net.validate();
    auto mag = [&](double f) { return std::abs(s21(net, f)); };
    return find_resonance_of(mag, f_lo, f_hi, loss_q_internal, q_hint, warnings);
}

NetworkSpec load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open network file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("network file: ") + e.what());
    }
    NetworkSpec net;
    net.port_impedance = j.value("port_impedance", 50.0);
    net.internal_q = j.value("internal_q", 0.0);
    for (const auto& js : j.at("segments")) {
        LineSegment s;
        s.length = js.at("length_m").get<double>();
        s.z0 = js.at("z0_ohm").get<double>();
        s.v_phase = js.at("v_phase_m_s").get<double>();
        s.kinetic_fraction = js.value("kinetic_fraction", 0.0);
        net.segments.push_back(s);
    }
    net.validate();
    return net;
}

void save_network(const NetworkSpec& net, const std::string& path) {
    json j;
    j["port_impedance"] = net.port_impedance;
    j["internal_q"] = net.internal_q;
    j["segments"] = json::array();
    for (const auto& s : net.segments) {
        j["segments"].push_back({{"length_m", s.length},
                                 {"z0_ohm", s.z0},
                                 {"v_phase_m_s", s.v_phase},
                                 {"kinetic_fraction", s.kinetic_fraction}});
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write network file: " + path);
    out << j.dump(2) << "\n";
}

NetworkSpec build_pbg_network(int n_periods, double z_low, double z_high,
                              double z_cavity, double f_bragg,
                              double cavity_length, double internal_q,
                              double v_low, double v_high, double v_cavity,
                              double kinetic_fraction_cavity) {
    NetworkSpec net;
    net.internal_q = internal_q;
    LineSegment low{v_low / (4.0 * f_bragg), z_low, v_low, 0.10};
    LineSegment high{v_high / (4.0 * f_bragg), z_high, v_high, 0.35};
    LineSegment cavity{cavity_length, z_cavity, v_cavity, kinetic_fraction_cavity};
    for (int p = 0; p < n_periods; ++p) {
        net.segments.push_back(low);
        net.segments.push_back(high);
    }
    net.segments.push_back(cavity);
    for (int p = 0; p < n_periods; ++p) {
        net.segments.push_back(high);
        net.segments.push_back(low);
    }
    return net;
}

PbgCalibration calibrate_pbg(double f_target, double q_target, double beta_target) {
    // CPW on sapphire, eps_eff ~ 5.5; kinetic inductance slows the narrow
    // high-impedance sections further.  Exact values are absorbed by the
    // length calibration.
    const double v_base = speed_of_light / std::sqrt(5.5);
    const double v_low = v_base * std::sqrt(1.0 - 0.10);
    const double v_high = v_base * std::sqrt(1.0 - 0.35);
    const double v_cavity = v_high;

    const double peak_target = beta_target / (1.0 + beta_target);
    const double q_ext_target = q_target / peak_target;

    double cavity_length = v_cavity / (2.0 * f_target);
    double f_bragg = 1.05 * f_target;  // detuned mirror sets the external Q
    double internal_q = q_target / (1.0 - peak_target);

    auto make = [&](double len, double fb, double qi) {
        return build_pbg_network(4, 35.0, 137.0, 137.0, fb, len, qi, v_low, v_high,
                                 v_cavity);
    };
    auto resonance = [&](const NetworkSpec& net) {
        return find_resonance(net, f_target - 0.4e9, f_target + 0.4e9,
                              std::max(internal_q, 1.0), 6000.0);
    };

    ResonanceSummary sum;
    for (int round = 0; round < 60; ++round) {
        // Cavity length -> f_res (secant; f_res is nearly linear in 1/length).
        for (int it = 0; it < 40; ++it) {
            sum = resonance(make(cavity_length, f_bragg, internal_q));
            double err = sum.f_res - f_target;
            if (std::fabs(err) < 10.0) break;
            cavity_length *= sum.f_res / f_target;
        }
        // Mirror detuning -> external Q (= q_loaded / peak).
        double q_ext = sum.q_loaded / sum.peak_s21_mag;
        double ratio = q_ext / q_ext_target;
        // Internal loss -> loaded Q at fixed coupling.
        double q_int_eff = sum.q_loaded / (1.0 - sum.peak_s21_mag);
        bool done = std::fabs(sum.f_res - f_target) < 50.0 &&
                    std::fabs(sum.q_loaded / q_target - 1.0) < 2e-4 &&
                    std::fabs(sum.peak_s21_mag / peak_target - 1.0) < 2e-4;
        if (done) break;
        // Wider detuning lowers the mirror reflectivity at f_res, so Q_ext
        // shrinks as |f_bragg - f_target| grows.
        double det = f_bragg - f_target;
        det *= std::pow(ratio, 0.5);
        f_bragg = f_target + det;
        internal_q *= (q_target / (1.0 - peak_target)) / q_int_eff;
    }

    PbgCalibration cal;
    cal.cavity_length = cavity_length;
    cal.f_bragg = f_bragg;
    cal.internal_q = internal_q;
    cal.network = make(cavity_length, f_bragg, internal_q);
    cal.summary = resonance(cal.network);
    return cal;
}

}  // namespace spinres
