#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spinres/common.hpp"
#include "spinres/csvio.hpp"
#include "spinres/fieldmap.hpp"
#include "spinres/spinsim.hpp"

namespace spinres {

struct DeerConfig {
    double tau = 34e-6;            // s, first free evolution period
    double t_min = 6e-6;           // s, earliest allowed pump position
    double settle_time = 1e-6;     // s, resonator settle before the pump
    double pump_offset = -33e6;    // Hz, pump carrier relative to observer
    double as_concentration = 5e22;  // partners per m^3
    double flip_fraction = 0.270;  // resonant/inverted fraction (calibrated)
    double cutoff_radius = 0.0;    // m; 0 selects the radius where D=0.05/tau
    std::uint64_t seed = 1;
    int observers = 10000;
    // Full-propagation mode.
    double pump_duration = 400e-9;              // s
    double pump_omega1 = constants::pi / 400e-9;  // rad/s, rect pi
    bool retune_resonator = true;
    std::optional<CompensationKind> compensation = CompensationKind::symmetric_pair;

    void validate() const;
};

DeerConfig load_deer_config(const std::string& path);

struct PartnerSet {
    std::vector<double> couplings;  // rad/s
    std::vector<bool> flipped;      // pump-resonant partners
};

// Secular dipolar coupling D = (mu0 gamma^2 hbar / 4 pi) (1 - 3 cos^2)/r^3.
double dipolar_coupling(double r, double theta);

double auto_cutoff_radius(const DeerConfig& cfg);

// Poisson partner configuration around one observer, deterministic per
// (seed, observer_index).
PartnerSet sample_partners(const DeerConfig& cfg, std::uint64_t observer_index);

// Analytic pump-induced echo factor at pump position t: ensemble average of
// prod_flipped cos(D_k t).  Perfect instantaneous pump.
double deer_echo(double t, const DeerConfig& cfg);

// Same product for one explicit partner set (used against the exhaustive
// enumeration oracle).
double deer_echo_single(const PartnerSet& partners, double t);

enum class DeerMode { analytic, full };

// Full Bloch propagation of observers through the Hahn + pump sequence,
// including the retune bias schedule and resonator filtering of the pump
// when it is not retuned.  Returns the absolute echo amplitude.
double deer_echo_full(double t, const DeerConfig& cfg, const SpinContext& ctx,
                      bool pump_on, Warnings* warnings = nullptr);

// Echo-vs-t curves (on-resonant pump and off-resonant control), normalized
// to the control level.  Columns: t_us, echo_norm_on_res, echo_norm_off_res.
ExperimentResult deer_curve(const DeerConfig& cfg,
                            const std::vector<double>& t_grid, DeerMode mode,
                            const SpinContext* ctx = nullptr,
                            Warnings* warnings = nullptr);

}  // namespace spinres
