#include "spinres/spinsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include <nlohmann/json.hpp>

#include "spinres/errors.hpp"
#include "spinres/rng.hpp"

namespace spinres {

using nlohmann::json;
using namespace constants;

namespace {

SpeciesConfig species_from_json(const json& j, const SpeciesConfig& defaults) {
    SpeciesConfig s = defaults;
    s.gamma_eff = j.value("gamma_eff_hz_per_t", s.gamma_eff);
    s.line_center_field = j.value("line_center_field_t", s.line_center_field);
    s.line_fwhm = j.value("line_fwhm_t", s.line_fwhm);
    if (j.contains("t2_s") && !j.at("t2_s").is_null()) s.t2 = j.at("t2_s").get<double>();
    if (j.contains("t1_s") && !j.at("t1_s").is_null()) s.t1 = j.at("t1_s").get<double>();
    if (!(s.line_fwhm > 0.0) || !(s.t2 > 0.0) || !(s.t1 > 0.0))
        throw Error("spin config: widths and times must be positive");
    return s;
}

}  // namespace

SpinSystemConfig load_spin_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open spin config: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("spin config: ") + e.what());
    }
    SpinSystemConfig cfg;
    // As75 sits 33 MHz below the P31 transition at fixed field, i.e. its
    // line center field is higher by 33 MHz / gamma.
    cfg.as75.line_center_field =
        cfg.p31.line_center_field + 33e6 / cfg.p31.gamma_eff;
    if (j.contains("P31")) cfg.p31 = species_from_json(j.at("P31"), cfg.p31);
    if (j.contains("As75")) cfg.as75 = species_from_json(j.at("As75"), cfg.as75);
    cfg.stretch_exponent = j.value("stretch_exponent", 1.0);
    return cfg;
}

PulseElement PulseElement::rect(double duration, double amplitude, double phase,
                                double carrier_offset) {
    PulseElement p;
    p.kind = PulseKind::rect;
    p.duration = duration;
    p.amplitude = amplitude;
    p.phase = phase;
    p.carrier_offset = carrier_offset;
    return p;
}

PulseElement PulseElement::bir4(double duration, double amplitude, double flip,
                                double chirp_halfwidth, double phase,
                                double carrier_offset) {
    PulseElement p;
    p.kind = PulseKind::bir4_wurst20;
    p.duration = duration;
    p.amplitude = amplitude;
    p.flip_angle = flip;
    p.chirp_halfwidth = chirp_halfwidth;
    p.phase = phase;
    p.carrier_offset = carrier_offset;
    return p;
}

PulseElement PulseElement::delay(double duration) {
    PulseElement p;
    p.kind = PulseKind::delay;
    p.duration = duration;
    return p;
}

PulseElement PulseElement::acquire(double duration) {
    PulseElement p;
    p.kind = PulseKind::acquire;
    p.duration = duration;
    return p;
}

std::vector<PulseElement> load_sequence(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open sequence file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("sequence file: ") + e.what());
    }
    std::vector<PulseElement> seq;
    for (const auto& je : j) {
        PulseElement p;
        std::string kind = je.at("kind").get<std::string>();
        if (kind == "rect")
            p.kind = PulseKind::rect;
        else if (kind == "bir4_wurst20")
            p.kind = PulseKind::bir4_wurst20;
        else if (kind == "delay")
            p.kind = PulseKind::delay;
        else if (kind == "acquire")
            p.kind = PulseKind::acquire;
        else
            throw ParseError("sequence: unknown pulse kind '" + kind + "'");
        p.duration = je.at("duration_us").get<double>() * 1e-6;
        p.amplitude = je.value("amplitude_rad_per_s", 0.0);
        p.phase = je.value("phase_rad", 0.0);
        p.flip_angle = je.value("flip_angle_rad", 0.0);
        p.chirp_halfwidth = je.value("chirp_halfwidth_mhz", 0.0) * 1e6;
        p.carrier_offset = je.value("carrier_offset_mhz", 0.0) * 1e6;
        seq.push_back(p);
    }
    return seq;
}

std::vector<WaveformSample> waveform(const PulseElement& p, double dt) {
    if (p.kind == PulseKind::delay || p.kind == PulseKind::acquire)
        return {};
    if (!(p.duration > 0.0)) throw Error("pulse duration must be > 0");
    if (dt > p.duration / 50.0 * (1.0 + 1e-9))
        throw Error("waveform: dt must be <= duration/50");
    const std::size_t n =
        static_cast<std::size_t>(std::llround(p.duration / dt));
    const double step = p.duration / static_cast<double>(n);

    std::vector<WaveformSample> out(n);
    const double carrier = two_pi * p.carrier_offset;
    if (p.kind == PulseKind::rect) {
        for (std::size_t k = 0; k < n; ++k)
            out[k] = {p.amplitude, p.phase, carrier};
        return out;
    }

    // BIR4-WURST20: four adiabatic quarter segments.  The WURST-20 envelope
    // is maximal at the ends and center of the pulse and vanishes at the
    // quarter points, where the BIR-4 phase jumps +-(pi + flip/2) occur.
    // Each quarter sweeps linearly over half the chirp band so the full
    // band +-chirp_halfwidth is traversed across a segment pair.
    const double t_total = p.duration;
    const double amp_max = p.amplitude;
    const double a_chirp = p.chirp_halfwidth;
    const double jump = pi + 0.5 * p.flip_angle;
    for (std::size_t k = 0; k < n; ++k) {
        double t = (static_cast<double>(k) + 0.5) * step;
        double x = t / t_total;  // 0..1
        double env = amp_max * (1.0 - std::pow(std::fabs(std::sin(two_pi * x)), 20.0));
        int quarter = std::min(3, static_cast<int>(x * 4.0));
        double u = x * 4.0 - quarter;  // 0..1 inside the quarter
        double f_sweep = 0.0;
        switch (quarter) {
            case 0: f_sweep = a_chirp * u; break;          // 0 -> +A
            case 1: f_sweep = -a_chirp * (1.0 - u); break; // -A -> 0
            case 2: f_sweep = a_chirp * u; break;
            case 3: f_sweep = -a_chirp * (1.0 - u); break;
        }
        double phase = p.phase;
        if (quarter == 1 || quarter == 2) phase += jump;
        out[k] = {env, phase, carrier + two_pi * f_sweep};
    }
    return out;
}

void bloch_step(std::array<double, 3>& m, double wx, double wy, double wz,
                double dt) {
    const double mag = std::sqrt(wx * wx + wy * wy + wz * wz);
    if (mag <= 0.0) return;
    const double inv = 1.0 / mag;
    const double ux = wx * inv, uy = wy * inv, uz = wz * inv;
    // dm/dt = m x Omega: rotation about Omega-hat by -|Omega| dt.
    const double a = -mag * dt;
    const double c = std::cos(a), s = std::sin(a), oc = 1.0 - c;
    const double dot = ux * m[0] + uy * m[1] + uz * m[2];
    const double cx = uy * m[2] - uz * m[1];
    const double cy = uz * m[0] - ux * m[2];
    const double cz = ux * m[1] - uy * m[0];
    m = {m[0] * c + cx * s + ux * dot * oc,
         m[1] * c + cy * s + uy * dot * oc,
         m[2] * c + cz * s + uz * dot * oc};
}

namespace {

inline void relax_step(std::array<double, 3>& m, double e2, double e1) {
    m[0] *= e2;
    m[1] *= e2;
    m[2] = m[2] * e1 + (1.0 - e1);
}

}  // namespace

SpinPacket propagate_sampled(SpinPacket packet,
                             const std::vector<WaveformSample>& wf, double dt,
                             const std::vector<double>* bias_samples,
                             const Relaxation& relax) {
    const double e2 = std::isinf(relax.t2) ? 1.0 : std::exp(-dt / relax.t2);
    const double e1 = std::isinf(relax.t1) ? 1.0 : std::exp(-dt / relax.t1);
    const bool do_relax = (e2 != 1.0) || (e1 != 1.0);
    for (std::size_t k = 0; k < wf.size(); ++k) {
        const auto& s = wf[k];
        const double bias = bias_samples ? (*bias_samples)[k] : 0.0;
        const double delta = packet.detuning0 + packet.bias_shift * bias -
                             s.freq_offset;
        const double w1 = s.omega1 * packet.b1_scale;
        const double wx = w1 * std::cos(s.phase);
        const double wy = w1 * std::sin(s.phase);
        const double mag = std::sqrt(wx * wx + wy * wy + delta * delta);
        if (dt * mag > 0.1)
            throw StepTooLarge("propagate: dt * |Omega| exceeds 0.1 rad");
        bloch_step(packet.m, wx, wy, delta, dt);
        if (do_relax) relax_step(packet.m, e2, e1);
    }
    return packet;
}

SpinPacket propagate(SpinPacket packet, const std::vector<WaveformSample>& wf,
                     double dt,
                     const std::function<double(double)>& bias_current_of_t,
                     double t0, const Relaxation& relax) {
    if (!bias_current_of_t)
        return propagate_sampled(std::move(packet), wf, dt, nullptr, relax);
    std::vector<double> bias(wf.size());
    for (std::size_t k = 0; k < wf.size(); ++k)
        bias[k] = bias_current_of_t(t0 + (static_cast<double>(k) + 0.5) * dt);
    return propagate_sampled(std::move(packet), wf, dt, &bias, relax);
}

void evolve_free(SpinPacket& packet, double duration, double extra_phase,
                 const Relaxation& relax) {
    const double phi = packet.detuning0 * duration + extra_phase;
    const double c = std::cos(phi), s = std::sin(phi);
    const double mx = packet.m[0], my = packet.m[1];
    // Rotation about z by -phi (same convention as bloch_step).
    packet.m[0] = mx * c + my * s;
    packet.m[1] = -mx * s + my * c;
    const double e2 = std::isinf(relax.t2) ? 1.0 : std::exp(-duration / relax.t2);
    const double e1 = std::isinf(relax.t1) ? 1.0 : std::exp(-duration / relax.t1);
    relax_step(packet.m, e2, e1);
}

void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    const int m = (n + 1) / 2;
    double z = 0.0, pp = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) -
                1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        else if (i == 1)
            z -= 1.14 * std::pow(n, 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * nodes[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * nodes[1];
        else
            z = 2.0 * z - nodes[i - 2];
        for (int it = 0; it < 100; ++it) {
            double p1 = 0.7511255444649425;  // pi^{-1/4}
            double p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            double z1 = z;
            z = z1 - p1 / pp;
            if (std::fabs(z - z1) < 1e-14) break;
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Normalize to a probability measure over the Gaussian.
    double sum = 0.0;
    for (double w : weights) sum += w;
    for (double& w : weights) w /= sum;
}

std::vector<SpinPacket> build_ensemble(const SpeciesConfig& sp, Species species,
                                       double field_offset_t,
                                       double drive_offset_hz,
                                       const CpwGeometry* geom, double theta,
                                       const EnsembleOptions& opt) {
    const double sigma_b = sp.line_fwhm / 2.3548200450309493;

    struct Spatial {
        double b1 = 1.0;
        double shift = 0.0;  // rad/s per A
        double w = 1.0;
    };
    std::vector<Spatial> spatial;
    if (geom != nullptr && opt.spatial) {
        auto ref = b1_reference_point(*geom);
        double b1_ref = std::hypot(strip_field(*geom, ref[0], ref[1])[0],
                                   strip_field(*geom, ref[0], ref[1])[1]);
        // Window where the detection weight is non-negligible: the pin and
        // the near part of the gaps.
        const double half_span = 2.5 * geom->center_width;
        for (int iy = 0; iy < opt.ny; ++iy) {
            double y = -half_span + 2.0 * half_span * (iy + 0.5) / opt.ny;
            for (int iz = 0; iz < opt.nz; ++iz) {
                double zp = geom->sample_standoff +
                            geom->epi_thickness * (iz + 0.5) / opt.nz;
                auto b = strip_field(*geom, y, zp);
                Spatial s;
                s.b1 = std::hypot(b[0], b[1]) / b1_ref;
                s.shift = two_pi * sp.gamma_eff * b[0] * std::sin(theta);
                s.w = s.b1;  // detection weighting
                spatial.push_back(s);
            }
        }
    } else {
        spatial.push_back({});
    }

    std::vector<SpinPacket> packets;
    if (!opt.monte_carlo) {
        std::vector<double> nodes, gw;
        gauss_hermite(opt.gh_points, nodes, gw);
        packets.reserve(spatial.size() * nodes.size());
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (gw[k] < opt.min_node_weight) continue;
            double db = std::sqrt(2.0) * sigma_b * nodes[k];
            for (const auto& s : spatial) {
                SpinPacket p;
                p.species = species;
                p.detuning0 = two_pi * (sp.gamma_eff * (field_offset_t + db) -
                                        drive_offset_hz);
                p.b1_scale = s.b1;
                p.bias_shift = s.shift;
                p.weight = gw[k] * s.w;
                packets.push_back(p);
            }
        }
    } else {
        Rng rng(opt.seed, "ensemble-mc");
        packets.reserve(opt.mc_samples);
        for (int k = 0; k < opt.mc_samples; ++k) {
            const auto& s = spatial[rng.next_u64() % spatial.size()];
            SpinPacket p;
            p.species = species;
            double db = sigma_b * rng.normal();
            p.detuning0 = two_pi * (sp.gamma_eff * (field_offset_t + db) -
                                    drive_offset_hz);
            p.b1_scale = s.b1;
            p.bias_shift = s.shift;
            p.weight = s.w;
            packets.push_back(p);
        }
    }

    double wsum = 0.0;
    for (const auto& p : packets) wsum += p.weight;
    for (auto& p : packets) p.weight /= wsum;
    return packets;
}

namespace {

struct Timeline {
    struct Item {
        const PulseElement* elem;
        double t_start;
    };
    std::vector<Item> items;
    double acquire_start = 0.0;
    double acquire_duration = 0.0;
    double total = 0.0;
};

Timeline build_timeline(const std::vector<PulseElement>& seq) {
    Timeline tl;
    int acquires = 0;
    double t = 0.0;
    for (const auto& e : seq) {
        tl.items.push_back({&e, t});
        if (e.kind == PulseKind::acquire) {
            ++acquires;
            tl.acquire_start = t;
            tl.acquire_duration = e.duration;
        }
        t += e.duration;
    }
    tl.total = t;
    if (acquires != 1)
        throw Error("run_sequence: sequence must contain exactly one acquire");
    return tl;
}

}  // namespace

SequenceResult run_sequence(const std::vector<SpinPacket>& ensemble,
                            const std::vector<PulseElement>& seq,
                            const BiasSchedule& bias,
                            const SpinSystemConfig& cfg,
                            const DeviceTuningParams* dev,
                            const SequenceOptions& opt) {
    Timeline tl = build_timeline(seq);

    SequenceResult result;

    // Power-cap bookkeeping goes through the tuning module so the warning
    // logic lives in one place.
    double i_peak = 0.0;
    for (const auto& e : bias.elements)
        i_peak = std::max(i_peak, std::fabs(e.amplitude));
    if (dev != nullptr) {
        for (const auto& e : seq) {
            if (e.kind != PulseKind::rect && e.kind != PulseKind::bir4_wurst20)
                continue;
            double dbm = dev->power_dbm_for_omega1(e.amplitude);
            delta_f(i_peak, *dev, &result.warnings, dbm);
        }
    }

    const bool has_bias = i_peak > 0.0;
    BiasCurrentSampler sampler(bias);

    // Acquire grid.
    const std::size_t n_acq = std::max<std::size_t>(
        4, static_cast<std::size_t>(std::round(tl.acquire_duration /
                                               opt.acquire_sample_dt)));
    const double acq_dt = tl.acquire_duration / static_cast<double>(n_acq);
    result.times.resize(n_acq);
    for (std::size_t k = 0; k < n_acq; ++k)
        result.times[k] = tl.acquire_start + acq_dt * (static_cast<double>(k) + 0.5);

    // Bias phase integrals over free-evolution windows are packet
    // independent; precompute them per element and per acquire sample.
    std::vector<double> elem_bias_integral(seq.size(), 0.0);
    std::vector<double> acq_bias_integral(n_acq, 0.0);
    if (has_bias) {
        for (std::size_t i = 0; i < tl.items.size(); ++i) {
            const auto& it = tl.items[i];
            if (it.elem->kind == PulseKind::delay)
                elem_bias_integral[i] =
                    current_integral(bias, it.t_start, it.t_start + it.elem->duration);
        }
        double prev = tl.acquire_start;
        for (std::size_t k = 0; k < n_acq; ++k) {
            acq_bias_integral[k] = current_integral(bias, prev, result.times[k]);
            prev = result.times[k];
        }
    }

    // Per-pulse waveform cache keyed by step count; step counts are chosen
    // per packet from the budget, so packets with similar detunings share.
    struct PulseCache {
        std::vector<WaveformSample> wf;
        std::vector<double> bias;
    };
    std::vector<std::map<long, PulseCache>> wf_cache(seq.size());
    auto steps_for = [&](const SpinPacket& p, const PulseElement& e) {
        double omega_max = e.amplitude * p.b1_scale +
                           std::fabs(p.detuning0 - two_pi * e.carrier_offset) +
                           std::fabs(p.bias_shift) * i_peak +
                           two_pi * e.chirp_halfwidth;
        long n = static_cast<long>(
            std::ceil(e.duration * omega_max / opt.step_phase_budget));
        return std::max<long>(opt.min_steps_per_pulse, n);
    };
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto& e = seq[i];
        if (e.kind != PulseKind::rect && e.kind != PulseKind::bir4_wurst20)
            continue;
        for (const auto& p : ensemble) {
            long n = steps_for(p, e);
            if (wf_cache[i].count(n)) continue;
            PulseCache pc;
            double dt = e.duration / static_cast<double>(n);
            pc.wf = waveform(e, dt);
            if (has_bias) {
                pc.bias.resize(pc.wf.size());
                for (std::size_t k = 0; k < pc.wf.size(); ++k)
                    pc.bias[k] = sampler.at(tl.items[i].t_start +
                                            (static_cast<double>(k) + 0.5) * dt);
            }
            wf_cache[i][n] = std::move(pc);
        }
    }

    // Fixed-size packet blocks with per-block accumulators keep the
    // reduction order independent of the thread count.
    constexpr std::size_t kBlock = 64;
    const std::size_t n_packets = ensemble.size();
    const std::size_t n_blocks = (n_packets + kBlock - 1) / kBlock;
    std::vector<std::vector<Complex>> block_sig(n_blocks,
                                                std::vector<Complex>(n_acq));

    std::mutex err_mutex;
    std::exception_ptr first_error = nullptr;

    parallel_for(n_blocks, [&](std::size_t b) {
        try {
            auto& sig = block_sig[b];
            std::size_t lo = b * kBlock, hi = std::min(n_packets, lo + kBlock);
            for (std::size_t pi = lo; pi < hi; ++pi) {
                SpinPacket p = ensemble[pi];
                const SpeciesConfig& sp = cfg.of(p.species);
                Relaxation relax{sp.t2, sp.t1};
                for (std::size_t i = 0; i < tl.items.size(); ++i) {
                    const auto& it = tl.items[i];
                    const PulseElement& e = *it.elem;
                    switch (e.kind) {
                        case PulseKind::delay: {
                            evolve_free(p, e.duration,
                                        p.bias_shift * elem_bias_integral[i], relax);
                            break;
                        }
                        case PulseKind::rect:
                        case PulseKind::bir4_wurst20: {
                            long n = steps_for(p, e);
                            const auto& pc = wf_cache[i].at(n);
                            p = propagate_sampled(
                                p, pc.wf, e.duration / static_cast<double>(n),
                                has_bias ? &pc.bias : nullptr, relax);
                            break;
                        }
                        case PulseKind::acquire: {
                            double prev = it.t_start;
                            for (std::size_t k = 0; k < n_acq; ++k) {
                                double tk = result.times[k];
                                evolve_free(p, tk - prev,
                                            p.bias_shift * acq_bias_integral[k],
                                            relax);
                                prev = tk;
                                sig[k] += p.weight * Complex(p.m[0], p.m[1]);
                            }
                            break;
                        }
                    }
                }
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    });
    if (first_error) std::rethrow_exception(first_error);

    result.signal.assign(n_acq, Complex(0.0));
    for (const auto& sig : block_sig)
        for (std::size_t k = 0; k < n_acq; ++k) result.signal[k] += sig[k];

    std::size_t best = 0;
    Complex area(0.0);
    for (std::size_t k = 0; k < n_acq; ++k) {
        if (std::abs(result.signal[k]) > std::abs(result.signal[best])) best = k;
        area += result.signal[k] * acq_dt;
    }
    result.echo_amp = std::abs(result.signal[best]);
    result.echo_phase = std::arg(result.signal[best]);
    result.echo_time = result.times[best];
    result.echo_area = std::abs(area);
    return result;
}

std::vector<PulseElement> hahn_sequence(const SpinContext& ctx, PulseStyle style,
                                        double tau, bool biased) {
    double w1 = 0.0, w2 = 0.0;
    PulseElement p1, p2;
    if (style == PulseStyle::rect) {
        double omega = ctx.rect_omega1;
        if (biased) {
            // Drive is capped by the superconductor nonlinearity once a
            // bias current flows.
            double cap = ctx.dev.omega1_for_power_dbm(ctx.dev.max_power_biased_dbm);
            omega = std::min(omega, cap);
        }
        w1 = ctx.rect_pi2_duration;
        w2 = 2.0 * ctx.rect_pi2_duration;
        p1 = PulseElement::rect(w1, omega, 0.0);
        p2 = PulseElement::rect(w2, omega, pi / 2.0);
    } else {
        w1 = ctx.adiabatic_duration;
        w2 = ctx.adiabatic_duration;
        p1 = PulseElement::bir4(w1, ctx.adiabatic_omega1, pi / 2.0,
                                ctx.chirp_halfwidth, 0.0);
        p2 = PulseElement::bir4(w2, ctx.adiabatic_omega1, pi,
                                ctx.chirp_halfwidth, pi / 2.0);
    }
    double d1 = tau - 0.5 * w1 - 0.5 * w2;
    double d2 = tau - 0.5 * w2 - 0.5 * ctx.acquire_window;
    if (d1 <= 0.0 || d2 <= 0.0)
        throw TimingViolation("hahn_sequence: tau too short for the pulses");
    return {p1, PulseElement::delay(d1), p2, PulseElement::delay(d2),
            PulseElement::acquire(ctx.acquire_window)};
}

double hahn_echo_time(const SpinContext& ctx, PulseStyle style, double tau) {
    double w1 = style == PulseStyle::rect ? ctx.rect_pi2_duration
                                          : ctx.adiabatic_duration;
    return 0.5 * w1 + 2.0 * tau;
}

ExperimentResult field_sweep(const SpinContext& ctx, double bias_current,
                             PulseStyle style,
                             const std::vector<double>& field_grid,
                             Warnings* warnings) {
    const bool biased = bias_current != 0.0;
    double drive_offset = biased ? delta_f(bias_current, ctx.dev) : 0.0;
    auto seq = hahn_sequence(ctx, style, ctx.tau, biased);
    double seq_len = 0.0;
    for (const auto& e : seq) seq_len += e.duration;

    // Bias applied throughout: treat it as settled (no lag transient).
    BiasSchedule sched;
    if (biased) sched = BiasSchedule::step(bias_current, 0.0, seq_len + 1e-6, 0.0);

    ExperimentResult out;
    out.x_label = "field_t";
    out.y_labels = {"echo_amp", "echo_phase"};
    const SpeciesConfig& sp = ctx.spins.p31;
    for (double b0 : field_grid) {
        auto ens = build_ensemble(sp, Species::P31, b0 - sp.line_center_field,
                                  drive_offset, ctx.ens.spatial ? &ctx.geom : nullptr,
                                  ctx.theta, ctx.ens);
        auto res = run_sequence(ens, seq, sched, ctx.spins, &ctx.dev, ctx.seq);
        if (warnings != nullptr)
            for (auto& msg : res.warnings.messages) warnings->add(msg);
        out.rows.push_back({b0, res.echo_amp, res.echo_phase});
    }
    return out;
}

ExperimentResult t2_decay(const SpinContext& ctx, PulseStyle style,
                          const std::vector<double>& tau_values,
                          double bias_current,
                          std::optional<CompensationKind> compensation,
                          Warnings* warnings) {
    ExperimentResult out;
    out.x_label = "evolution_time_s";
    out.y_labels = {"echo_amp", "echo_phase"};
    const SpeciesConfig& sp = ctx.spins.p31;

    for (double tau : tau_values) {
        auto seq = hahn_sequence(ctx, style, tau, bias_current != 0.0 && !compensation);
        double seq_len = 0.0;
        for (const auto& e : seq) seq_len += e.duration;
        double w1 = seq.front().duration;

        BiasSchedule sched;
        if (bias_current != 0.0) {
            if (compensation) {
                DeerTiming timing;
                timing.t_pi = 0.5 * w1 + tau;
                timing.t_echo = 0.5 * w1 + 2.0 * tau;
                timing.pump_duration = 2e-6;
                timing.settle_time = 1e-6;
                timing.guard = std::max(1e-6, 0.75 * seq[2].duration);
                timing.t_pump = 0.5 * w1 + 0.55 * tau;
                sched = compensation_schedule(*compensation, timing, bias_current,
                                              ctx.dev.tuning_lag);
            } else {
                sched = BiasSchedule::step(bias_current, 0.0, seq_len + 1e-6, 0.0);
            }
        }
        auto ens = build_ensemble(sp, Species::P31, 0.0, 0.0,
                                  ctx.ens.spatial ? &ctx.geom : nullptr, ctx.theta,
                                  ctx.ens);
        auto res = run_sequence(ens, seq, sched, ctx.spins, &ctx.dev, ctx.seq);
        if (warnings != nullptr)
            for (auto& msg : res.warnings.messages) warnings->add(msg);
        out.rows.push_back({2.0 * tau, res.echo_amp, res.echo_phase});
    }
    return out;
}

T2Fit fit_t2(const ExperimentResult& decay, double stretch_exponent) {
    if (decay.rows.size() < 6)
        throw Error("fit_t2: need at least 6 points");
    std::vector<double> x, y;
    for (const auto& r : decay.rows) {
        x.push_back(r[0]);
        y.push_back(r[1]);
    }
    // Monotone-trend check and log-slope seed.
    double ymax = *std::max_element(y.begin(), y.end());
    if (ymax <= 0.0) throw FitDiverged("fit_t2: no signal");
    double x_span = x.back() - x.front();
    double t2_init;
    if (y.front() > 0.0 && y.back() > 0.0 && y.back() < y.front()) {
        t2_init = x_span / std::log(y.front() / y.back());
    } else {
        t2_init = 100.0 * x.back();
    }
    t2_init = std::clamp(t2_init, 1e-3 * x_span, 200.0 * x.back());

    auto residual = [&](const std::vector<double>& p) {
        std::vector<double> r(x.size());
        for (std::size_t k = 0; k < x.size(); ++k)
            r[k] = y[k] - p[0] * std::exp(-std::pow(x[k] / p[1], stretch_exponent));
        return r;
    };
    auto fit = levenberg_marquardt(residual, {ymax, t2_init}, 200);
    T2Fit out;
    out.amplitude = fit.params[0];
    out.t2 = fit.params[1];
    out.stderr_t2 = fit.stderrs[1];
    if (!(out.t2 > 0.0) || out.t2 > 100.0 * x.back())
        throw FitDiverged("fit_t2: no measurable decay in the sampled window");
    return out;
}

double peak_location(const ExperimentResult& result, std::size_t y_column) {
    const auto& rows = result.rows;
    if (rows.size() < 3) throw Error("peak_location: need at least 3 rows");
    std::size_t best = 0;
    for (std::size_t k = 1; k < rows.size(); ++k)
        if (rows[k][y_column + 1] > rows[best][y_column + 1]) best = k;
    if (best == 0 || best + 1 == rows.size()) return rows[best][0];
    double x0 = rows[best - 1][0], x1 = rows[best][0], x2 = rows[best + 1][0];
    double y0 = rows[best - 1][y_column + 1], y1 = rows[best][y_column + 1],
           y2 = rows[best + 1][y_column + 1];
    double denom = (y0 - 2.0 * y1 + y2);
    if (std::fabs(denom) < 1e-30) return x1;
    double dx = 0.5 * (x2 - x0) * 0.5 * (y0 - y2) / denom;
    return x1 + std::clamp(dx, x0 - x1, x2 - x1);
}

double inversion_efficiency(const PulseElement& pulse, double b1_scale,
                            double detuning_hz, double step_phase_budget) {
    SpinPacket p;
    p.b1_scale = b1_scale;
    p.detuning0 = two_pi * detuning_hz;
    double omega_max = pulse.amplitude * b1_scale + std::fabs(p.detuning0) +
                       two_pi * pulse.chirp_halfwidth;
    long n = std::max<long>(
        200, static_cast<long>(std::ceil(pulse.duration * omega_max /
                                         step_phase_budget)));
    double dt = pulse.duration / static_cast<double>(n);
    auto wf = waveform(pulse, dt);
    auto done = propagate(p, wf, dt, nullptr, 0.0, {});
    return 0.5 * (1.0 - done.m[2]);
}

}  // namespace spinres
