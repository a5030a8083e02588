#include "spinres/fieldmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "spinres/errors.hpp"

namespace spinres {

using nlohmann::json;
using namespace constants;

void CpwGeometry::validate() const {
    for (double v : {center_width, gap, ground_width, film_thickness,
                     sample_standoff, epi_thickness, implant_depth})
        if (!(v > 0.0)) throw Error("geometry fields must all be positive");
}

CpwGeometry load_geometry(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open geometry file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("geometry file: ") + e.what());
    }
    CpwGeometry g;
    g.center_width = j.at("center_width_m").get<double>();
    g.gap = j.at("gap_m").get<double>();
    g.ground_width = j.value("ground_width_m", 10.0 * g.center_width);
    g.film_thickness = j.value("film_thickness_m", 20e-9);
    g.sample_standoff = j.value("sample_standoff_m", 0.5e-6);
    g.epi_thickness = j.value("epi_thickness_m", 2e-6);
    g.implant_depth = j.value("implant_depth_m", 200e-9);
    g.validate();
    return g;
}

std::array<double, 2> strip_sheet_field(double y_lo, double y_hi, double y,
                                        double z) {
    // Thin sheet at z=0 carrying 1 A along +x, uniform density K = 1/w.
    const double w = y_hi - y_lo;
    const double k_over = mu0 / (two_pi * w);
    const double a1 = std::atan2(y - y_lo, z);
    const double a2 = std::atan2(y - y_hi, z);
    const double r1 = (y - y_lo) * (y - y_lo) + z * z;
    const double r2 = (y - y_hi) * (y - y_hi) + z * z;
    double by = -k_over * (a1 - a2);
    double bz = 0.5 * k_over * std::log(r1 / r2);
    return {by, bz};
}

std::array<double, 2> strip_field(const CpwGeometry& geom, double y, double z) {
    geom.validate();
    if (std::fabs(z) <= geom.film_thickness)
        throw Error("strip_field: point inside the film volume");
    const double hw = 0.5 * geom.center_width;
    const double g0 = hw + geom.gap;
    const double g1 = g0 + geom.ground_width;
    auto pin = strip_sheet_field(-hw, hw, y, z);
    auto gl = strip_sheet_field(-g1, -g0, y, z);
    auto gr = strip_sheet_field(g0, g1, y, z);
    return {pin[0] - 0.5 * (gl[0] + gr[0]), pin[1] - 0.5 * (gl[1] + gr[1])};
}

std::array<double, 2> b1_reference_point(const CpwGeometry& geom) {
    return {0.0, geom.sample_standoff + 0.5 * geom.epi_thickness};
}

namespace {

double b1_pattern(const CpwGeometry& geom, double y, double z) {
    auto b = strip_field(geom, y, z);
    return std::hypot(b[0], b[1]);
}

double dbm_to_watt(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }

}  // namespace

double b1_at(const CpwGeometry& geom, double y, double z, double power_dbm,
             double anchor_dbm, double anchor_tesla, Warnings* warnings,
             double cap_dbm) {
    if (power_dbm > cap_dbm)
        warn(warnings, "b1_map: power above the linear-regime cap");
    auto ref = b1_reference_point(geom);
    double pattern_ref = b1_pattern(geom, ref[0], ref[1]);
    double scale = anchor_tesla * std::pow(10.0, (power_dbm - anchor_dbm) / 20.0);
    return scale * b1_pattern(geom, y, z) / pattern_ref;
}

std::vector<FieldSample> b1_map(const CpwGeometry& geom, double power_dbm,
                                double anchor_dbm, double anchor_tesla,
                                int ny, int nz, Warnings* warnings,
                                double cap_dbm) {
    if (power_dbm > cap_dbm)
        warn(warnings, "b1_map: power above the linear-regime cap");
    auto ref = b1_reference_point(geom);
    const double pattern_ref = b1_pattern(geom, ref[0], ref[1]);
    const double p_anchor_w = dbm_to_watt(anchor_dbm);
    const double b1_per_sqrt_w_ref = anchor_tesla / std::sqrt(p_anchor_w);

    // Window: pin, both gaps, and a slice of ground on each side.
    const double half_span = 0.5 * geom.center_width + geom.gap +
                             0.5 * geom.center_width;
    std::vector<FieldSample> out;
    out.reserve(static_cast<std::size_t>(ny) * nz);
    for (int iy = 0; iy < ny; ++iy) {
        double y = -half_span + (2.0 * half_span) * (iy + 0.5) / ny;
        for (int iz = 0; iz < nz; ++iz) {
            double z = geom.sample_standoff +
                       geom.epi_thickness * (iz + 0.5) / nz;
            FieldSample s;
            s.position = {y, z};
            s.b_bias_per_amp = strip_field(geom, y, z);
            s.b1_per_sqrt_watt =
                b1_per_sqrt_w_ref * b1_pattern(geom, y, z) / pattern_ref;
            out.push_back(s);
        }
    }
    return out;
}

namespace {

struct WeightedDist {
    double mean = 0.0;
    double sigma = 0.0;
};

WeightedDist parallel_distribution(const CpwGeometry& geom, double i,
                                   double theta, SampleRegion region) {
    geom.validate();
    if (std::fabs(theta) >= 0.2)
        throw Error("misalignment must satisfy |theta| < 0.2 rad");
    const double hw = 0.5 * geom.center_width;
    const int ny = 48, nz = 40;
    // Central band of each window ("directly above"); the edge zones are
    // crossovers shared by both regions.
    const double frac = 0.4;

    double wsum = 0.0, m1 = 0.0, m2 = 0.0;
    auto accumulate = [&](double y_lo, double y_hi) {
        for (int iy = 0; iy < ny; ++iy) {
            double y = y_lo + (y_hi - y_lo) * (iy + 0.5) / ny;
            for (int iz = 0; iz < nz; ++iz) {
                double z = geom.sample_standoff +
                           geom.epi_thickness * (iz + 0.5) / nz;
                auto b = strip_field(geom, y, z);
                // B0 lies in the film plane; a misalignment theta away from
                // the line axis picks up the in-plane transverse component.
                double par = b[0] * std::sin(theta) * i;
                double w = b1_pattern(geom, y, z);
                w *= w;  // echo detection weighting ~ B1^2
                wsum += w;
                m1 += w * par;
                m2 += w * par * par;
            }
        }
    };
    if (region == SampleRegion::above_pin) {
        accumulate(-frac * hw, frac * hw);
    } else {
        double mid = hw + 0.5 * geom.gap;
        double half = 0.5 * frac * geom.gap;
        accumulate(-mid - half, -mid + half);
        accumulate(mid - half, mid + half);
    }
    WeightedDist d;
    d.mean = m1 / wsum;
    double var = std::max(0.0, m2 / wsum - d.mean * d.mean);
    d.sigma = std::sqrt(var);
    return d;
}

}  // namespace

double mean_parallel_component(const CpwGeometry& geom, double i, double theta,
                               SampleRegion region) {
    return parallel_distribution(geom, i, theta, region).mean;
}

double broadening_vs_misalignment(const CpwGeometry& geom, double i,
                                  double theta, SampleRegion region) {
    return 2.3548200450309493 * parallel_distribution(geom, i, theta, region).sigma;
}

double quadrature_shift(const CpwGeometry& geom, double i, double b0, double y,
                        double z) {
    auto b = strip_field(geom, y, z);
    double by = b[0] * i, bz = b[1] * i;
    return std::sqrt(b0 * b0 + by * by + bz * bz) - b0;
}

double echo_phase_integral(const BiasSchedule& sched, double t_flip,
                           double t_echo) {
    return current_integral(sched, 0.0, t_flip) -
           current_integral(sched, t_flip, t_echo);
}

BiasSchedule compensation_schedule(CompensationKind kind,
                                   const DeerTiming& timing, double i,
                                   double lag_time_constant) {
    const double t_pi = timing.t_pi;
    const double lobe_start = timing.t_pump - 0.5 * timing.pump_duration -
                              timing.settle_time;
    const double lobe_end = timing.t_pump + 0.5 * timing.pump_duration;
    const double lobe_len = lobe_end - lobe_start;
    if (lobe_start < 0.0)
        throw DoesNotFit("retune lobe starts before the pi/2 pulse");
    if (lobe_end > t_pi - timing.guard)
        throw DoesNotFit("retune lobe reaches into the pi pulse window");

    auto make = [&](double a2, double c_start, double c_end) {
        BiasSchedule s;
        s.lag_time_constant = lag_time_constant;
        if (c_start < lobe_start) {
            s.elements.push_back({c_start, c_end, a2});
            s.elements.push_back({lobe_start, lobe_end, i});
        } else {
            s.elements.push_back({lobe_start, lobe_end, i});
            s.elements.push_back({c_start, c_end, a2});
        }
        s.validate();
        return s;
    };

    double c_start = 0.0, c_end = 0.0;
    if (kind == CompensationKind::symmetric_pair) {
        // Mirror the lobe about the pi pulse.
        c_start = 2.0 * t_pi - lobe_end;
        c_end = 2.0 * t_pi - lobe_start;
        if (c_start < t_pi + timing.guard)
            throw DoesNotFit("mirror lobe overlaps the pi pulse window");
        if (c_end > timing.t_echo - timing.guard)
            throw DoesNotFit("mirror lobe reaches into the echo window");
    } else {
        // Opposite-sign lobe immediately after, still before the pi pulse.
        c_start = lobe_end;
        c_end = lobe_end + lobe_len;
        if (c_end > t_pi - timing.guard)
            throw DoesNotFit("bipolar return lobe reaches into the pi pulse window");
    }

    // The lag response is linear in the commanded amplitudes, so the
    // echo phase is affine in a2; two evaluations solve it exactly.
    const double t_echo = timing.t_echo;
    double phi0 = echo_phase_integral(make(0.0, c_start, c_end), t_pi, t_echo);
    double phi1 = echo_phase_integral(make(1.0, c_start, c_end), t_pi, t_echo);
    double slope = phi1 - phi0;
    if (std::fabs(slope) < 1e-300)
        throw DoesNotFit("compensation lobe has no leverage on the echo phase");
    double a2 = -phi0 / slope;
    return make(a2, c_start, c_end);
}

}  // namespace spinres
