#pragma once

// Experiment configuration and orchestration behind the gapeig command line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gapeig/augment.hpp"
#include "gapeig/bloch.hpp"
#include "gapeig/fem1d.hpp"
#include "gapeig/model.hpp"

namespace gapeig::cli {

using Json = nlohmann::ordered_json;

enum class Command { bands, gap, supercell, galerkin, dislocation, augment, pollution_scan };

const char* to_string(Command c);
std::optional<Command> parse_command(const std::string& name);

/// Where a gap window comes from.
struct WindowSpec {
    enum class Source { bloch, fem, explicit_values, file };
    Source source = Source::bloch;
    double alpha = 0.0;
    double beta = 0.0;
    std::filesystem::path file;
};

struct BandsConfig {
    int cutoff = 32;       // M_pw
    int grid_points = 64;  // M_q per axis
    int count = 3;
};

struct ReferenceConfig {
    std::vector<double> values;  // explicit reference; empty means compute by supercell
    int L = 40;
    int ratio = 16;
};

struct SupercellConfig {
    std::vector<int> L{40};
    int ratio = 16;
    std::optional<WindowSpec> window;
};

struct GalerkinConfig {
    int cells = 100;
    double n_half = 10.0;
    double offset = 0.0;
    double match_tol = 0.05;
    bool dump_vectors = false;
    std::optional<WindowSpec> window;
};

struct DislocationConfig {
    std::vector<fem::Dislocation> variants{fem::Dislocation::halfline_plus, fem::Dislocation::halfline_minus};
    double t = 0.5;
    double l_half = 40.0;  // periods
    int cells = 100;
    std::optional<WindowSpec> window;
};

struct A2Config {
    bool enabled = true;
    int samples = 50;
    int iterations = 40;
    int cutoff = 32;
    std::uint64_t seed = 20240801;
};

struct AugmentConfig {
    int cells = 100;
    int qpoints = 64;
    double margin = 8.0;
    double svd_tol = 1e-8;
    double tau = 1e-10;
    std::vector<int> L{20, 40, 60};  // total domain width in periods
    std::vector<double> offsets{0.0};
    augment::Route route = augment::Route::automatic;
    double match_tol = 0.05;
    A2Config a2;
    std::optional<WindowSpec> window;
};

struct PollutionConfig {
    enum class Mode { fem, supercell_mismatch, augment };
    Mode mode = Mode::fem;
    std::vector<double> n_half{5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    double offset = 0.5;
    std::vector<int> L{21};
    std::vector<double> t{0.5};
    int ratio = 16;
    bool predict = true;
};

struct ExperimentConfig {
    Command command = Command::bands;
    PeriodicPotential potential;
    Perturbation perturbation;
    BandsConfig bands;
    int band = 1;  // J
    ReferenceConfig reference;
    SupercellConfig supercell;
    GalerkinConfig galerkin;
    DislocationConfig dislocation;
    AugmentConfig augment;
    PollutionConfig pollution;
    int threads = 1;
    Json echo;  // the validated input, written back into the summary
};

/// Command-line values that take precedence over the config file.
struct Overrides {
    std::optional<int> threads;
    std::optional<int> cells;
    std::optional<double> n_half;
    std::optional<double> offset;
    std::optional<std::string> window_file;
    std::optional<std::string> variant;
    std::optional<double> t;
    std::optional<double> l_half;
    std::optional<int> band;
    std::optional<int> qpoints;
    std::optional<double> margin;
    std::optional<double> svd_tol;
    std::optional<std::vector<int>> L;
    std::optional<std::string> mode;
};

/// Validates `input` for `command`; throws ConfigError on any problem.
/// Relative file references resolve against `base_dir`.
ExperimentConfig parse_config(const Json& input, Command command, const Overrides& overrides = {},
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path, Command command, const Overrides& overrides = {});

struct Artifact {
    std::string filename;
    std::string content;
};

struct RunOutput {
    Json summary;  // method, params, results, diagnostics (wall_time_s added by the caller)
    std::vector<Artifact> files;
};

/// Runs the experiment. Numerical failures propagate as gapeig::Error.
RunOutput run(const ExperimentConfig& config);

/// Summary written when a module raises: error name and message in diagnostics.
Json failure_summary(const ExperimentConfig& config, const Error& e);

/// Full command-line entry point; returns the process exit status.
int main(int argc, char** argv);

}  // namespace gapeig::cli
