#include "spinres/biasdyn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "spinres/errors.hpp"

namespace spinres {

using nlohmann::json;
using namespace constants;

void BiasSchedule::validate() const {
    for (std::size_t k = 0; k < elements.size(); ++k) {
        if (!(elements[k].t_end > elements[k].t_start))
            throw Error("bias element must have t_end > t_start");
        if (k > 0 && elements[k].t_start < elements[k - 1].t_end - 1e-15)
            throw Error("bias elements overlap or are out of order");
    }
    if (lag_time_constant < 0.0) throw Error("lag must be >= 0");
}

void BiasSchedule::validate_against(const DeviceTuningParams& dev) const {
    validate();
    for (const auto& e : elements)
        if (std::fabs(e.amplitude) >= dev.i_critical)
            throw CriticalCurrentExceeded(dev.name +
                                          ": schedule amplitude >= i_critical");
}

double BiasSchedule::end_time() const {
    return elements.empty() ? 0.0 : elements.back().t_end;
}

BiasSchedule BiasSchedule::step(double amplitude, double t_on, double t_off,
                                double lag) {
    BiasSchedule s;
    s.elements.push_back({t_on, t_off, amplitude});
    s.lag_time_constant = lag;
    return s;
}

BiasSchedule load_schedule(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schedule file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("schedule file: ") + e.what());
    }
    BiasSchedule s;
    s.lag_time_constant = j.value("lag_ns", 0.0) * 1e-9;
    for (const auto& je : j.at("elements")) {
        s.elements.push_back({je.at("t_start_us").get<double>() * 1e-6,
                              je.at("t_end_us").get<double>() * 1e-6,
                              je.at("amplitude_ma").get<double>() * 1e-3});
    }
    s.validate();
    return s;
}

BiasCurrentSampler::BiasCurrentSampler(const BiasSchedule& s)
    : tau_(s.lag_time_constant) {
    s.validate();
    t_.push_back(0.0);
    target_.push_back(0.0);
    for (const auto& e : s.elements) {
        if (e.t_start > t_.back()) {
            t_.push_back(e.t_start);
            target_.push_back(e.amplitude);
        } else {
            target_.back() = e.amplitude;
        }
        t_.push_back(e.t_end);
        target_.push_back(0.0);
    }
    i_at_.assign(t_.size(), 0.0);
    for (std::size_t k = 1; k < t_.size(); ++k)
        i_at_[k] = evolve(i_at_[k - 1], target_[k - 1], t_[k] - t_[k - 1]);
}

double BiasCurrentSampler::evolve(double i0, double goal, double dt) const {
    if (tau_ <= 0.0) return goal;
    return goal + (i0 - goal) * std::exp(-dt / tau_);
}

double BiasCurrentSampler::at(double time) const {
    if (time <= 0.0) return 0.0;
    auto it = std::upper_bound(t_.begin(), t_.end(), time);
    std::size_t k = static_cast<std::size_t>(it - t_.begin()) - 1;
    return evolve(i_at_[k], target_[k], time - t_[k]);
}

double BiasCurrentSampler::integral(double a, double b) const {
    if (b <= a) return 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < t_.size(); ++k) {
        double seg_lo = t_[k];
        double seg_hi = (k + 1 < t_.size()) ? t_[k + 1] : std::max(b, seg_lo);
        double lo = std::max(a, seg_lo), hi = std::min(b, seg_hi);
        if (hi <= lo) continue;
        double i0 = evolve(i_at_[k], target_[k], lo - seg_lo);
        double goal = target_[k];
        double span = hi - lo;
        if (tau_ <= 0.0) {
            total += goal * span;
        } else {
            total += goal * span +
                     (i0 - goal) * tau_ * (1.0 - std::exp(-span / tau_));
        }
    }
    return total;
}

double current_at(const BiasSchedule& sched, double t) {
    if (t < 0.0) throw Error("current_at: t must be >= 0");
    return BiasCurrentSampler(sched).at(t);
}

double current_integral(const BiasSchedule& sched, double t0, double t1) {
    return BiasCurrentSampler(sched).integral(t0, t1);
}

CavityTrace cavity_trace(double probe_f, const BiasSchedule& sched,
                         const DeviceTuningParams& dev, double duration) {
    sched.validate_against(dev);
    if (duration < sched.end_time() * (1.0 - 1e-12))
        throw Error("cavity_trace: duration does not cover the schedule");

    const double kappa = two_pi * dev.f0 / dev.q_loaded;
    const double tau = sched.lag_time_constant;
    const double t_scale = std::min(tau > 0.0 ? tau : 1.0 / kappa, 1.0 / kappa);
    const double dt = t_scale / 20.0;
    const std::size_t n = static_cast<std::size_t>(std::ceil(duration / dt)) + 1;

    BiasCurrentSampler lag(sched);
    CavityTrace out;
    out.times.resize(n);
    out.transmitted_amplitude.resize(n);
    out.f_res_of_t.resize(n);

    auto f_res = [&](double t) { return dev.f0 + delta_f(lag.at(t), dev); };

    // Probe is on well before the pulse, so start from the static response.
    const double half_kappa = 0.5 * kappa;
    Complex a;
    {
        double delta0 = two_pi * (f_res(0.0) - probe_f);
        a = 1.0 / Complex(half_kappa, -delta0);
    }
    const double norm = half_kappa;  // static resonant |a| is 1/half_kappa

    for (std::size_t k = 0; k < n; ++k) {
        double t = dt * static_cast<double>(k);
        out.times[k] = t;
        out.f_res_of_t[k] = f_res(t);
        out.transmitted_amplitude[k] = std::abs(a) * norm;
        // Advance with the detuning frozen at the step midpoint.
        double delta_mid = two_pi * (f_res(t + 0.5 * dt) - probe_f);
        Complex lambda(-half_kappa, delta_mid);
        Complex e = std::exp(lambda * dt);
        a = e * a + (e - 1.0) / lambda;
    }
    return out;
}

double tuning_time(const BiasSchedule& sched, const DeviceTuningParams& dev,
                   double target_delta_f) {
    sched.validate_against(dev);
    if (sched.elements.empty()) throw TargetUnreachable("empty schedule");
    const double i_final = sched.elements.back().amplitude;
    if (std::fabs(delta_f(i_final, dev)) + 1.0 < std::fabs(target_delta_f))
        throw TargetUnreachable(dev.name +
                                ": schedule current cannot reach the target shift");

    const double kappa = two_pi * dev.f0 / dev.q_loaded;
    const double tau = sched.lag_time_constant;
    double duration = std::max(sched.end_time(),
                               sched.elements.front().t_start +
                                   20.0 * std::max(tau, 2.0 / kappa));
    auto trace = cavity_trace(dev.f0 + target_delta_f, sched, dev, duration);

    double peak = *std::max_element(trace.transmitted_amplitude.begin(),
                                    trace.transmitted_amplitude.end());
    // With a matched step the resonance approaches the probe asymptotically
    // and the amplitude maximum sits on a flat tail, so "time of the peak"
    // is read off at the knee of the rise: the 80%-of-maximum crossing.
    const double level = peak * 0.80;
    for (std::size_t k = 0; k < trace.times.size(); ++k)
        if (trace.transmitted_amplitude[k] >= level) return trace.times[k];
    return trace.times.back();
}

double calibrate_lag(const DeviceTuningParams& dev, double target_delta_f,
                     double arrival) {
    const double i_step = invert_delta_f(target_delta_f, dev);
    auto arrival_for = [&](double tau) {
        auto sched = BiasSchedule::step(i_step, 0.0, 40e-6, tau);
        return tuning_time(sched, dev, target_delta_f);
    };
    double lo = 1e-10, hi = 1e-6;
    for (int it = 0; it < 60; ++it) {
        double mid = std::sqrt(lo * hi);
        if (arrival_for(mid) < arrival)
            lo = mid;
        else
            hi = mid;
        if (hi / lo < 1.0 + 1e-6) break;
    }
    return std::sqrt(lo * hi);
}

ChirpSchedule chirp_tracking_schedule(const ChirpSpec& chirp,
                                      const DeviceTuningParams& dev) {
    if (!(chirp.duration > 0.0)) throw Error("chirp duration must be > 0");
    const double d_start = chirp.f_start - dev.f0;
    const double d_end = chirp.f_end - dev.f0;
    const double max_mag = max_delta_f_magnitude(dev);
    const double tau = dev.tuning_lag;

    // Slew feasibility first: compares the required sweep rate to the best
    // achievable |df_res/dt| anywhere in the current range.
    const double required_rate =
        std::fabs(chirp.f_end - chirp.f_start) / chirp.duration;
    if (tau > 0.0) {
        double best = 0.0;
        for (int k = 1; k < 200; ++k) {
            double i = dev.i_critical * k / 200.0;
            double slope =
                dev.f0 * (2.0 * i / (dev.i2_star * dev.i2_star) +
                          4.0 * i * i * i /
                              (dev.i4_star * dev.i4_star * dev.i4_star * dev.i4_star));
            best = std::max(best, slope * (dev.i_critical - i) / tau);
        }
        if (required_rate > best)
            throw SlewTooFast("chirp sweep rate exceeds what the bias lag permits");
    }

    for (double d : {d_start, d_end})
        if (d > 0.0 || std::fabs(d) > max_mag)
            throw TargetUnreachable("chirp endpoint outside the tuning range");

    ChirpSchedule out;
    out.schedule.lag_time_constant = tau;

    const double i0 = invert_delta_f(d_start, dev);
    if (d_start == d_end) {
        out.schedule.elements.push_back({0.0, chirp.duration, i0});
        out.chirp_begin = 0.0;
        out.chirp_end = chirp.duration;
        return out;
    }

    const double settle = std::max(12.0 * tau, 100e-9);
    out.schedule.elements.push_back({0.0, settle, i0});
    out.chirp_begin = settle;
    out.chirp_end = settle + chirp.duration;

    const int n_steps =
        std::max(50, static_cast<int>(std::ceil(chirp.duration / 100e-9)));
    const double dt = chirp.duration / n_steps;
    auto delta_at = [&](double t_rel) {
        double x = std::clamp(t_rel / chirp.duration, 0.0, 1.0);
        return d_start + (d_end - d_start) * x;
    };
    const double i_max = std::nextafter(dev.i_critical, 0.0);
    for (int k = 0; k < n_steps; ++k) {
        double tm = (k + 0.5) * dt;
        double i_des = invert_delta_f(delta_at(tm), dev);
        // Feed-forward of the first-order lag: command = i + tau * di/dt.
        double h = 0.5 * dt;
        double hi_t = std::min(tm + h, chirp.duration);
        double lo_t = std::max(tm - h, 0.0);
        double di_dt = (invert_delta_f(delta_at(hi_t), dev) -
                        invert_delta_f(delta_at(lo_t), dev)) /
                       (hi_t - lo_t);
        double cmd = i_des + tau * di_dt;
        if (cmd >= dev.i_critical || cmd < 0.0)
            throw SlewTooFast("feed-forward command exceeds the current range");
        cmd = std::clamp(cmd, 0.0, i_max);
        out.schedule.elements.push_back(
            {settle + k * dt, settle + (k + 1) * dt, cmd});
    }
    out.schedule.validate();
    return out;
}

}  // namespace spinres
