#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spinres/common.hpp"
#include "spinres/csvio.hpp"

namespace spinres {

enum class ExperimentKind {
    fit_tuning,
    s21_sweep,
    tune_time,
    field_sweep,
    t2_decay,
    deer
};

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::fit_tuning;
    std::string kind_name;
    std::string device_ref;   // path, resolved against base_dir
    std::uint64_t seed = 1;
    std::string output;       // basename for the CSV/JSON/SVG outputs
    nlohmann::json parameters;
    std::string base_dir;     // directory of the spec file

    std::string resolve(const std::string& rel) const;
};

ExperimentSpec load_spec(const std::string& path);
// Parses a spec from JSON already in memory (base_dir for relative paths).
ExperimentSpec parse_spec(const nlohmann::json& j, const std::string& base_dir);

// Empty list iff runnable.  Each violation names the offending field and
// the constraint it breaks.
std::vector<std::string> validate(const ExperimentSpec& spec);

struct RunOutput {
    ExperimentResult result;
    std::string csv_path;
    std::string sidecar_path;
    Warnings warnings;
};

// Runs a validated spec and writes CSV plus a JSON metadata sidecar into
// out_dir.  Deterministic for a fixed seed (the sidecar's wall time is the
// only field allowed to differ between reruns).
RunOutput run(const ExperimentSpec& spec, const std::string& out_dir);

// Applies one dotted-key override (e.g. "parameters.bias_ma=4.2") to the
// spec JSON; unknown keys are rejected and types must match.
void apply_override(nlohmann::json& spec_json, const std::string& dotted_key,
                    const std::string& value);

// Parses a number with an optional SI unit suffix (mA, MHz, us, mT, ...)
// into base SI units.
double parse_si_number(const std::string& text);

}  // namespace spinres
