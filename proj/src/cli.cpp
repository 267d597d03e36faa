#include "gapeig/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gapeig/spectrum.hpp"
#include "gapeig/supercell.hpp"

namespace gapeig::cli {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where.empty() ? what : where + ": " + what);
}

/// A JSON object whose keys are consumed one by one; leftovers are rejected.
class Section {
 public:
    Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) fail(where_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const Json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    Section sub(const std::string& key) { return Section(raw(key), path(key)); }

    double number(const std::string& key, double def, double lo, double hi) {
        if (!has(key)) return def;
        return check_number(raw(key), path(key), lo, hi);
    }

    int integer(const std::string& key, int def, int lo, int hi) {
        if (!has(key)) return def;
        return check_integer(raw(key), path(key), lo, hi);
    }

    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        const Json& v = raw(key);
        if (!v.is_boolean()) fail(path(key), "expected true or false");
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& def) {
        if (!has(key)) return def;
        const Json& v = raw(key);
        if (!v.is_string()) fail(path(key), "expected a string");
        return v.get<std::string>();
    }

    std::vector<int> integers(const std::string& key, std::vector<int> def, int lo, int hi) {
        if (!has(key)) return def;
        const Json& v = raw(key);
        if (!v.is_array() || v.empty()) fail(path(key), "expected a nonempty array");
        std::vector<int> out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(check_integer(v[i], path(key) + "[" + std::to_string(i) + "]", lo, hi));
        return out;
    }

    std::vector<double> numbers(const std::string& key, std::vector<double> def, double lo, double hi) {
        if (!has(key)) return def;
        const Json& v = raw(key);
        if (!v.is_array() || v.empty()) fail(path(key), "expected a nonempty array");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(check_number(v[i], path(key) + "[" + std::to_string(i) + "]", lo, hi));
        return out;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail(path(it.key()), "unknown key");
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

    static double check_number(const Json& v, const std::string& where, double lo, double hi) {
        if (!v.is_number()) fail(where, "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x) || x < lo || x > hi)
            fail(where, "value " + v.dump() + " outside [" + Json(lo).dump() + ", " + Json(hi).dump() + "]");
        return x;
    }

    static int check_integer(const Json& v, const std::string& where, int lo, int hi) {
        if (!v.is_number_integer()) fail(where, "expected an integer");
        const auto x = v.get<long long>();
        if (x < lo || x > hi)
            fail(where, "value " + v.dump() + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return static_cast<int>(x);
    }

 private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

constexpr double kBig = 1e12;

bool is_half_integer(double x) { return std::abs(2.0 * x - std::round(2.0 * x)) < 1e-12; }

std::vector<double> checked_n_half(std::vector<double> v, const std::string& where) {
    for (double x : v)
        if (!is_half_integer(x)) fail(where, "n_half must be an integer or half-integer");
    return v;
}

Lattice parse_lattice(Section s) {
    Lattice l;
    l.dimension = s.integer("dimension", 1, 1, 2);
    const bool plain = s.has("period");
    const bool over_pi = s.has("period_over_pi");
    if (plain == over_pi) fail(s.path("period"), "give exactly one of period, period_over_pi");
    l.period = plain ? s.number("period", 0.0, 1e-6, kBig) : kPi * s.number("period_over_pi", 0.0, 1e-6, kBig);
    s.finish();
    return l;
}

Index parse_index(const Json& v, const std::string& where, int dim) {
    if (!v.is_array() || static_cast<int>(v.size()) != dim)
        fail(where, "expected " + std::to_string(dim) + " integers");
    Index m{0, 0};
    for (int i = 0; i < dim; ++i)
        m[static_cast<std::size_t>(i)] = Section::check_integer(v[static_cast<std::size_t>(i)], where, -64, 64);
    return m;
}

Point parse_point(const Json& v, const std::string& where, int dim) {
    if (!v.is_array() || static_cast<int>(v.size()) != dim) fail(where, "expected " + std::to_string(dim) + " numbers");
    Point p{0.0, 0.0};
    for (int i = 0; i < dim; ++i)
        p[static_cast<std::size_t>(i)] = Section::check_number(v[static_cast<std::size_t>(i)], where, -kBig, kBig);
    return p;
}

std::vector<TrigTerm> parse_potential(const Json& v, const std::string& where, int dim) {
    if (!v.is_array()) fail(where, "expected an array of terms");
    std::vector<TrigTerm> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        Section s(v[i], where + "[" + std::to_string(i) + "]");
        TrigTerm t;
        t.amplitude = s.number("amplitude", 0.0, -kBig, kBig);
        const std::string kind = s.text("kind", "cos");
        if (kind == "cos") t.kind = TrigKind::cos;
        else if (kind == "sin") t.kind = TrigKind::sin;
        else fail(s.path("kind"), "expected cos or sin");
        if (!s.has("wavevector")) fail(s.path("wavevector"), "missing");
        t.wavevector = parse_index(s.raw("wavevector"), s.path("wavevector"), dim);
        t.phase = s.number("phase", 0.0, -kBig, kBig);
        s.finish();
        out.push_back(t);
    }
    return out;
}

std::vector<GaussianTerm> parse_perturbation(const Json& v, const std::string& where, int dim) {
    if (!v.is_array()) fail(where, "expected an array of terms");
    std::vector<GaussianTerm> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        Section s(v[i], where + "[" + std::to_string(i) + "]");
        GaussianTerm g;
        g.coefficient = s.number("coefficient", 0.0, -kBig, kBig);
        g.sigma = s.number("sigma", 1.0, 1e-6, kBig);
        if (s.has("center")) g.center = parse_point(s.raw("center"), s.path("center"), dim);
        if (s.has("factors")) {
            const Json& f = s.raw("factors");
            if (!f.is_array() || static_cast<int>(f.size()) != dim)
                fail(s.path("factors"), "expected one factor per axis");
            for (int a = 0; a < dim; ++a) {
                Section fs(f[static_cast<std::size_t>(a)], s.path("factors") + "[" + std::to_string(a) + "]");
                g.factors[static_cast<std::size_t>(a)].shift = fs.number("shift", 0.0, -kBig, kBig);
                g.factors[static_cast<std::size_t>(a)].power = fs.integer("power", 0, 0, 16);
                fs.finish();
            }
        }
        s.finish();
        out.push_back(g);
    }
    return out;
}

WindowSpec read_gap_file(const fs::path& file, const std::string& where) {
    std::ifstream in(file);
    if (!in) fail(where, "cannot read gap file " + file.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        fail(where, "gap file " + file.string() + " is not valid JSON");
    }
    const Json* body = &j;
    if (j.is_object() && j.contains("results") && j["results"].is_object()) body = &j["results"];
    if (!body->is_object() || !body->contains("alpha") || !body->contains("beta") || !(*body)["alpha"].is_number() ||
        !(*body)["beta"].is_number())
        fail(where, "gap file " + file.string() + " has no numeric alpha and beta");
    WindowSpec w;
    w.source = WindowSpec::Source::file;
    w.file = file;
    w.alpha = (*body)["alpha"].get<double>();
    w.beta = (*body)["beta"].get<double>();
    if (!(w.alpha < w.beta)) fail(where, "gap file window is empty");
    return w;
}

std::optional<WindowSpec> parse_window(Section& s, const fs::path& base) {
    if (!s.has("window")) return std::nullopt;
    const std::string where = s.path("window");
    const Json& v = s.raw("window");
    WindowSpec w;
    if (v.is_string()) {
        const auto name = v.get<std::string>();
        if (name == "bloch") w.source = WindowSpec::Source::bloch;
        else if (name == "fem") w.source = WindowSpec::Source::fem;
        else fail(where, "expected bloch, fem, {alpha, beta} or {gap_file}");
        return w;
    }
    Section o(v, where);
    if (o.has("gap_file")) {
        fs::path file = o.text("gap_file", "");
        if (file.is_relative()) file = base / file;
        o.finish();
        return read_gap_file(file, where);
    }
    w.source = WindowSpec::Source::explicit_values;
    if (!o.has("alpha") || !o.has("beta")) fail(where, "explicit window needs alpha and beta");
    w.alpha = o.number("alpha", 0.0, -kBig, kBig);
    w.beta = o.number("beta", 0.0, -kBig, kBig);
    o.finish();
    if (!(w.alpha < w.beta)) fail(where, "alpha must be below beta");
    return w;
}

fem::Dislocation parse_variant(const std::string& name, const std::string& where) {
    if (name == "halfline+" || name == "halfline_plus") return fem::Dislocation::halfline_plus;
    if (name == "halfline-" || name == "halfline_minus") return fem::Dislocation::halfline_minus;
    if (name == "junction") return fem::Dislocation::junction;
    fail(where, "unknown variant " + name + " (halfline+, halfline-, junction)");
}

augment::Route parse_route(const std::string& name, const std::string& where) {
    if (name == "automatic") return augment::Route::automatic;
    if (name == "literal") return augment::Route::literal;
    if (name == "compressed") return augment::Route::compressed;
    fail(where, "unknown route " + name);
}

const char* route_name(augment::Route r) {
    switch (r) {
        case augment::Route::literal: return "literal";
        case augment::Route::compressed: return "compressed";
        default: return "automatic";
    }
}

PollutionConfig::Mode parse_mode(const std::string& name, const std::string& where) {
    if (name == "fem") return PollutionConfig::Mode::fem;
    if (name == "supercell-mismatch") return PollutionConfig::Mode::supercell_mismatch;
    if (name == "augment") return PollutionConfig::Mode::augment;
    fail(where, "unknown mode " + name + " (fem, supercell-mismatch, augment)");
}

bool needs_1d(const ExperimentConfig& c) {
    switch (c.command) {
        case Command::galerkin:
        case Command::dislocation:
        case Command::augment: return true;
        case Command::pollution_scan: return c.pollution.mode != PollutionConfig::Mode::supercell_mismatch;
        default: return false;
    }
}

/// Writes command-line values into the input document before validation,
/// so they pass the same checks as file values.
Json apply_overrides(Json j, Command command, const Overrides& o) {
    if (!j.is_object()) return j;
    auto section = [&](const char* name) -> Json& {
        if (!j.contains(name)) j[name] = Json::object();
        return j[name];
    };
    const char* own = nullptr;
    switch (command) {
        case Command::supercell: own = "supercell"; break;
        case Command::galerkin: own = "galerkin"; break;
        case Command::dislocation: own = "dislocation"; break;
        case Command::augment: own = "augment"; break;
        case Command::pollution_scan: own = "pollution_scan"; break;
        default: break;
    }
    if (o.threads) j["threads"] = *o.threads;
    if (o.band) j["J"] = *o.band;
    if (o.cells) {
        if (command == Command::galerkin || command == Command::pollution_scan) section("galerkin")["n_cells"] = *o.cells;
        if (command == Command::dislocation || command == Command::pollution_scan)
            section("dislocation")["n_cells"] = *o.cells;
        if (command == Command::augment || command == Command::pollution_scan) section("augment")["n_cells"] = *o.cells;
    }
    if (o.n_half) section("galerkin")["n_half"] = *o.n_half;
    if (o.offset) {
        if (command == Command::augment) section("augment")["offsets"] = Json::array({*o.offset});
        else if (command == Command::pollution_scan) section("pollution_scan")["offset"] = *o.offset;
        else section("galerkin")["offset"] = *o.offset;
    }
    if (o.window_file && own) {
        const Json w{{"gap_file", fs::absolute(*o.window_file).string()}};
        if (command == Command::pollution_scan) {
            for (const char* name : {"galerkin", "dislocation", "augment", "supercell"}) section(name)["window"] = w;
        } else {
            section(own)["window"] = w;
        }
    }
    if (o.variant) section("dislocation")["variant"] = *o.variant;
    if (o.t) {
        if (command == Command::pollution_scan) section("pollution_scan")["t"] = Json::array({*o.t});
        else section("dislocation")["t"] = *o.t;
    }
    if (o.l_half) section("dislocation")["L_half"] = *o.l_half;
    if (o.qpoints) section("augment")["M_q"] = *o.qpoints;
    if (o.margin) section("augment")["window_margin"] = *o.margin;
    if (o.svd_tol) section("augment")["svd_tol"] = *o.svd_tol;
    if (o.L) {
        const char* target = own && command != Command::galerkin && command != Command::dislocation ? own : "supercell";
        section(target)["L"] = *o.L;
    }
    if (o.mode) section("pollution_scan")["mode"] = *o.mode;
    return j;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

Json window_json(const bloch::GapWindow& w, const std::string& source) {
    return Json{{"source", source}, {"J", w.band}, {"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma()}};
}

const char* source_name(WindowSpec::Source s) {
    switch (s) {
        case WindowSpec::Source::bloch: return "bloch";
        case WindowSpec::Source::fem: return "fem";
        case WindowSpec::Source::file: return "file";
        default: return "explicit";
    }
}

/// Runs of one experiment share the window, reference and timing notes.
struct Context {
    const ExperimentConfig& c;
    Json diagnostics = Json::object();

    bloch::GapWindow bloch_window() const {
        const auto bs = bloch::band_structure(c.potential, c.bands.cutoff, c.bands.grid_points,
                                              std::max(c.bands.count, c.band + 1), false, c.threads);
        return bloch::find_gap(bs, c.band);
    }

    bloch::GapWindow window(const std::optional<WindowSpec>& spec, WindowSpec::Source fallback, int cells,
                            int qpoints) {
        WindowSpec w;
        w.source = fallback;
        if (spec) w = *spec;
        bloch::GapWindow g;
        switch (w.source) {
            case WindowSpec::Source::bloch: g = bloch_window(); break;
            case WindowSpec::Source::fem: g = augment::fem_gap(c.potential, cells, qpoints, c.band, c.threads); break;
            default: g = {c.band, w.alpha, w.beta}; break;
        }
        Json info = window_json(g, source_name(w.source));
        if (w.source == WindowSpec::Source::fem) {
            info["n_cells"] = cells;
            info["M_q"] = qpoints;
        }
        if (w.source == WindowSpec::Source::file) info["file"] = w.file.string();
        diagnostics["window"] = info;
        return g;
    }

    std::vector<double> reference(const bloch::GapWindow& window) {
        std::vector<double> ref = c.reference.values;
        std::string how = "explicit";
        if (ref.empty()) {
            const auto r = supercell::supercell_spectrum(c.potential, c.perturbation, c.reference.L,
                                                         c.reference.ratio * c.reference.L, window);
            ref = r.eigenvalues;
            how = "supercell";
        }
        diagnostics["reference"] = Json{{"source", how}, {"values", ref}};
        if (how == "supercell") {
            diagnostics["reference"]["L"] = c.reference.L;
            diagnostics["reference"]["N"] = c.reference.ratio * c.reference.L;
        }
        return ref;
    }
};

Json modes_json(const std::vector<fem::LocalizationReport>& reps) {
    Json out = Json::array();
    for (const auto& r : reps)
        out.push_back({{"eigenvalue", r.eigenvalue},
                       {"mu_boundary", r.mu_boundary},
                       {"mu_compact", r.mu_compact},
                       {"class", fem::to_string(r.classification)}});
    return out;
}

int count_class(const std::vector<fem::LocalizationReport>& reps, fem::ModeClass k) {
    return static_cast<int>(std::count_if(reps.begin(), reps.end(), [&](const auto& r) { return r.classification == k; }));
}

constexpr const char* kModeHeader = "n_half,t,x_lo,x_hi,h,eigenvalue,mu_boundary,mu_compact,class\n";

void mode_rows(std::ostringstream& csv, double n_half, double t, const fem::Mesh1D& mesh,
               const std::vector<fem::LocalizationReport>& reps) {
    for (const auto& r : reps)
        csv << fmt(n_half) << ',' << fmt(t) << ',' << fmt(mesh.x_lo()) << ',' << fmt(mesh.x_hi()) << ','
            << fmt(mesh.h()) << ',' << fmt(r.eigenvalue) << ',' << fmt(r.mu_boundary) << ',' << fmt(r.mu_compact)
            << ',' << fem::to_string(r.classification) << '\n';
}

/// Unmatched values present, within `tol`, in two consecutive runs.
std::vector<double> persistent(const std::vector<std::vector<double>>& runs, double tol = 0.01) {
    std::vector<double> out;
    for (std::size_t i = 1; i < runs.size(); ++i)
        for (double x : runs[i])
            if (distance_to_set(x, runs[i - 1]) <= tol && distance_to_set(x, out) > tol) out.push_back(x);
    return out;
}

std::vector<double> unmatched(const std::vector<fem::LocalizationReport>& reps) {
    std::vector<double> out;
    for (const auto& r : reps)
        if (r.classification != fem::ModeClass::true_mode) out.push_back(r.eigenvalue);
    return out;
}

// --- commands ---------------------------------------------------------------

RunOutput run_bands(Context& ctx) {
    const auto& c = ctx.c;
    const int count = std::max(c.bands.count, c.band + 1);
    const auto bs = bloch::band_structure(c.potential, c.bands.cutoff, c.bands.grid_points, count, false, c.threads);
    std::ostringstream csv;
    csv << (bs.dimension == 1 ? "q_1,j,epsilon\n" : "q_1,q_2,j,epsilon\n");
    for (std::size_t iq = 0; iq < bs.q_count(); ++iq)
        for (int j = 0; j < bs.bands; ++j) {
            csv << fmt(bs.qpoints[iq][0]) << ',';
            if (bs.dimension == 2) csv << fmt(bs.qpoints[iq][1]) << ',';
            csv << j + 1 << ',' << fmt(bs.energies(j, static_cast<Eigen::Index>(iq))) << '\n';
        }
    Json ranges = Json::array();
    for (int j = 0; j < bs.bands; ++j)
        ranges.push_back({{"j", j + 1}, {"min", bs.energies.row(j).minCoeff()}, {"max", bs.energies.row(j).maxCoeff()}});
    RunOutput out;
    out.summary["results"] = {{"M_pw", c.bands.cutoff}, {"M_q", c.bands.grid_points}, {"q_points", bs.q_count()},
                              {"bands", ranges}};
    out.files.push_back({"bands.csv", csv.str()});
    return out;
}

RunOutput run_gap(Context& ctx) {
    const auto& c = ctx.c;
    const auto g = ctx.bloch_window();
    const Json gap = {{"J", g.band},        {"alpha", g.alpha}, {"beta", g.beta}, {"gamma", g.gamma()},
                      {"M_pw", c.bands.cutoff}, {"M_q", c.bands.grid_points}};
    RunOutput out;
    out.summary["results"] = gap;
    out.files.push_back({"gap.json", gap.dump(2) + "\n"});
    return out;
}

RunOutput run_supercell(Context& ctx) {
    const auto& c = ctx.c;
    const auto window = ctx.window(c.supercell.window, WindowSpec::Source::bloch, 0, 0);
    const auto rows = supercell::convergence_scan(c.potential, c.perturbation, c.supercell.L, c.supercell.ratio,
                                                  window, c.threads);
    std::ostringstream csv;
    csv << "L,t,N,eigenvalue\n";
    Json runs = Json::array();
    Json deltas = Json::array();
    for (const auto& r : rows) {
        for (double e : r.eigenvalues) csv << r.L << ",0," << r.N << ',' << fmt(e) << '\n';
        Json run = {{"L", r.L},
                    {"N", r.N},
                    {"planewaves", supercell::make_basis(c.potential.lattice, r.L, r.N).size()},
                    {"eigenvalues", r.eigenvalues}};
        if (r.delta) {
            run["hausdorff_to_previous"] = *r.delta;
            deltas.push_back(*r.delta);
        }
        runs.push_back(run);
    }
    RunOutput out;
    out.summary["results"] = {{"runs", runs}, {"hausdorff_deltas", deltas}};
    out.files.push_back({"supercell.csv", csv.str()});
    return out;
}

struct FemScan {
    std::vector<fem::LocalizationReport> reports;
    fem::Mesh1D mesh;
};

FemScan fem_run(const ExperimentConfig& c, double n_half, double t, const bloch::GapWindow& window,
                const std::vector<double>& ref) {
    const auto mesh = fem::build_mesh(c.potential.lattice, c.galerkin.cells, n_half, t);
    const auto spec = fem::galerkin_spectrum(c.potential, c.perturbation, mesh, window, true);
    return {fem::classify_modes(spec, mesh, ref, c.galerkin.match_tol), mesh};
}

void dump_vectors(RunOutput& out, const ExperimentConfig& c, double n_half, double t, const bloch::GapWindow& window) {
    const auto mesh = fem::build_mesh(c.potential.lattice, c.galerkin.cells, n_half, t);
    const auto spec = fem::galerkin_spectrum(c.potential, c.perturbation, mesh, window, true);
    for (std::size_t k = 0; k < spec.eigenvalues.size(); ++k) {
        std::ostringstream v;
        v << "node,value\n";
        const auto f = fem::make_function(mesh, spec.vectors->col(static_cast<Eigen::Index>(k)));
        for (long i = mesh.i_lo; i <= mesh.i_hi; ++i) v << i << ',' << fmt(f.nodal(i)) << '\n';
        out.files.push_back({"galerkin_vector_" + std::to_string(k + 1) + ".csv", v.str()});
    }
}

RunOutput run_galerkin(Context& ctx) {
    const auto& c = ctx.c;
    const auto window = ctx.window(c.galerkin.window, WindowSpec::Source::fem, c.galerkin.cells, c.bands.grid_points);
    const auto ref = ctx.reference(window);
    const auto scan = fem_run(c, c.galerkin.n_half, c.galerkin.offset, window, ref);
    std::ostringstream csv;
    csv << kModeHeader;
    mode_rows(csv, c.galerkin.n_half, c.galerkin.offset, scan.mesh, scan.reports);
    RunOutput out;
    out.summary["results"] = {{"x_lo", scan.mesh.x_lo()},
                              {"x_hi", scan.mesh.x_hi()},
                              {"dofs", scan.mesh.dofs()},
                              {"modes", modes_json(scan.reports)},
                              {"spurious_count", count_class(scan.reports, fem::ModeClass::spurious)}};
    out.files.push_back({"galerkin.csv", csv.str()});
    if (c.galerkin.dump_vectors) dump_vectors(out, c, c.galerkin.n_half, c.galerkin.offset, window);
    return out;
}

/// Gap eigenvalues of each configured dislocation variant, with localization.
Json dislocation_runs(const ExperimentConfig& c, const bloch::GapWindow& window, double t, std::ostringstream* csv,
                      std::vector<double>* all) {
    Json runs = Json::array();
    const double b = c.potential.lattice.period;
    for (auto variant : c.dislocation.variants) {
        const auto spec = fem::dislocation_spectrum(c.potential, variant, t, c.dislocation.l_half * b,
                                                    c.dislocation.cells, window, true);
        const auto mesh = fem::interval_mesh(c.potential.lattice, c.dislocation.cells, spec.param("x_lo"),
                                             spec.param("x_hi"));
        fem::ConcentrationProbe probe;
        const double mid = 0.5 * (mesh.x_lo() + mesh.x_hi());
        probe.K = {mid - 4.0 * kPi, mid + 4.0 * kPi};
        const auto reps = fem::classify_modes(spec, mesh, std::vector<double>{}, c.galerkin.match_tol, probe);
        for (const auto& r : reps) {
            if (csv)
                *csv << fem::to_string(variant) << ',' << fmt(t) << ',' << fmt(c.dislocation.l_half) << ','
                     << fmt(r.eigenvalue) << ',' << fmt(r.mu_boundary) << ',' << fmt(r.mu_compact) << ','
                     << fem::to_string(r.classification) << '\n';
            if (all) all->push_back(r.eigenvalue);
        }
        runs.push_back({{"variant", fem::to_string(variant)},
                        {"x_lo", mesh.x_lo()},
                        {"x_hi", mesh.x_hi()},
                        {"modes", modes_json(reps)}});
    }
    return runs;
}

RunOutput run_dislocation(Context& ctx) {
    const auto& c = ctx.c;
    const auto window =
        ctx.window(c.dislocation.window, WindowSpec::Source::fem, c.dislocation.cells, c.bands.grid_points);
    std::ostringstream csv;
    csv << "variant,t,L_half,eigenvalue,mu_boundary,mu_compact,class\n";
    RunOutput out;
    out.summary["results"] = {{"t", c.dislocation.t}, {"runs", dislocation_runs(c, window, c.dislocation.t, &csv, nullptr)}};
    out.files.push_back({"dislocation.csv", csv.str()});
    return out;
}

RunOutput run_fem_scan(Context& ctx) {
    const auto& c = ctx.c;
    const auto& p = c.pollution;
    const auto window = ctx.window(c.galerkin.window, WindowSpec::Source::fem, c.galerkin.cells, c.bands.grid_points);
    const auto ref = ctx.reference(window);
    auto scans = parallel_map(p.n_half.size(), c.threads,
                              [&](std::size_t i) { return fem_run(c, p.n_half[i], p.offset, window, ref); });
    std::ostringstream csv;
    csv << kModeHeader;
    Json runs = Json::array();
    int polluted = 0;
    std::vector<double> spurious;
    for (std::size_t i = 0; i < scans.size(); ++i) {
        mode_rows(csv, p.n_half[i], p.offset, scans[i].mesh, scans[i].reports);
        const int n = count_class(scans[i].reports, fem::ModeClass::spurious);
        polluted += n > 0;
        for (const auto& r : scans[i].reports)
            if (r.classification == fem::ModeClass::spurious) spurious.push_back(r.eigenvalue);
        runs.push_back({{"n_half", p.n_half[i]},
                        {"x_lo", scans[i].mesh.x_lo()},
                        {"x_hi", scans[i].mesh.x_hi()},
                        {"modes", modes_json(scans[i].reports)},
                        {"spurious_count", n}});
    }
    RunOutput out;
    out.summary["results"] = {{"t", p.offset}, {"runs", runs}, {"runs_with_spurious", polluted},
                              {"run_count", scans.size()}};
    if (p.predict && p.offset > 0.0) {
        std::vector<double> predicted;
        const Json dis = dislocation_runs(c, window, p.offset, nullptr, &predicted);
        double worst = 0.0;
        for (double s : spurious) worst = std::max(worst, distance_to_set(s, predicted));
        out.summary["results"]["prediction"] = {
            {"dislocation", dis}, {"max_distance", spurious.empty() ? Json(nullptr) : Json(worst)}};
    }
    out.files.push_back({"pollution_fem.csv", csv.str()});
    return out;
}

RunOutput run_mismatch_scan(Context& ctx) {
    const auto& c = ctx.c;
    const auto& p = c.pollution;
    const auto window = ctx.window(c.supercell.window, WindowSpec::Source::bloch, 0, 0);
    const auto ref = ctx.reference(window);
    struct Job {
        int L;
        double t;
    };
    std::vector<Job> jobs;
    for (double t : p.t)
        for (int L : p.L) jobs.push_back({L, t});
    auto spectra = parallel_map(jobs.size(), c.threads, [&](std::size_t i) {
        return supercell::mismatched_supercell_spectrum(c.potential, c.perturbation, jobs[i].L, jobs[i].t,
                                                        p.ratio * jobs[i].L, window)
            .eigenvalues;
    });
    std::ostringstream csv;
    csv << "L,t,N,eigenvalue\n";
    Json runs = Json::array();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const int n = p.ratio * jobs[i].L;
        for (double e : spectra[i]) csv << jobs[i].L << ',' << fmt(jobs[i].t) << ',' << n << ',' << fmt(e) << '\n';
        std::vector<double> extra;
        for (double e : spectra[i])
            if (distance_to_set(e, ref) > c.galerkin.match_tol) extra.push_back(e);
        Json run = {{"L", jobs[i].L}, {"t", jobs[i].t}, {"N", n}, {"eigenvalues", spectra[i]}, {"extra", extra}};
        if (i > 0 && jobs[i - 1].t == jobs[i].t) run["hausdorff_to_previous"] = hausdorff(spectra[i - 1], spectra[i]);
        runs.push_back(run);
    }
    RunOutput out;
    out.summary["results"] = {{"runs", runs}};
    out.files.push_back({"pollution_supercell_mismatch.csv", csv.str()});
    return out;
}

RunOutput run_augment_sweep(Context& ctx, const std::string& csv_name) {
    const auto& c = ctx.c;
    const auto& a = c.augment;
    const auto window = ctx.window(a.window, WindowSpec::Source::fem, a.cells, a.qpoints);
    const auto ref = ctx.reference(window);
    std::optional<augment::PlanewaveProjector> exact;
    if (a.a2.enabled) exact = augment::planewave_projector(c.potential, c.band, a.a2.cutoff, a.qpoints, c.threads);

    std::ostringstream csv;
    csv << kModeHeader;
    Json runs = Json::array();
    Json persistence = Json::array();
    for (double t : a.offsets) {
        std::vector<std::vector<double>> family;
        for (int L : a.L) {
            const double n_half = 0.5 * L;
            const auto domain = fem::build_mesh(c.potential.lattice, a.cells, n_half, t);
            const auto win = augment::window_mesh(domain, a.margin);
            const auto k = augment::build_projector(c.potential, c.band, a.cells, a.qpoints, win, a.tau, c.threads);
            const auto space = augment::augmented_space(domain, k, a.svd_tol, a.route);
            const auto spec = augment::augmented_spectrum(c.potential, c.perturbation, space, window, true);
            // Localization is measured against the computational domain
            // edges, not the padded window.
            fem::ConcentrationProbe probe;
            const double strip = 2.0 * c.potential.lattice.period;
            auto reps = fem::classify_modes(spec, win, ref, a.match_tol, probe);
            for (std::size_t i = 0; i < reps.size(); ++i) {
                const auto f = fem::make_function(win, spec.vectors->col(static_cast<Eigen::Index>(i)));
                reps[i].mu_boundary = fem::interval_mass(f, domain.x_lo() - strip, domain.x_lo() + strip) +
                                      fem::interval_mass(f, domain.x_hi() - strip, domain.x_hi() + strip);
            }
            mode_rows(csv, n_half, t, domain, reps);
            family.push_back(unmatched(reps));
            Json report = {{"idempotency_residual", k.report.idempotency_residual},
                           {"kernel_decay", k.report.kernel_decay},
                           {"a2_estimate", nullptr},
                           {"symmetry_residual", k.report.symmetry_residual},
                           {"trace_error", k.report.trace_error},
                           {"realness_residue", k.report.realness_residue},
                           {"edge_ratio", k.report.edge_ratio},
                           {"reach", k.reach},
                           {"cross_mass", space.cross_mass},
                           {"retained_ratio", space.retained_ratio}};
            if (exact) {
                const auto est = augment::a2_estimate(k, *exact, domain, a.a2.samples, a.a2.iterations, a.a2.seed);
                report["a2_estimate"] = {{"random", est.random}, {"power", est.power}, {"value", std::max(est.random, est.power)}};
            }
            runs.push_back({{"L", L},
                            {"t", t},
                            {"n_half", n_half},
                            {"x_lo", domain.x_lo()},
                            {"x_hi", domain.x_hi()},
                            {"dimension", space.dimension()},
                            {"route", route_name(space.route)},
                            {"modes", modes_json(reps)},
                            {"projector", report}});
        }
        persistence.push_back({{"t", t}, {"persistent_unmatched", persistent(family)}});
    }
    RunOutput out;
    out.summary["results"] = {{"runs", runs}, {"persistence", persistence}};
    out.files.push_back({csv_name, csv.str()});
    return out;
}

}  // namespace

const char* to_string(Command c) {
    switch (c) {
        case Command::bands: return "bands";
        case Command::gap: return "gap";
        case Command::supercell: return "supercell";
        case Command::galerkin: return "galerkin";
        case Command::dislocation: return "dislocation";
        case Command::augment: return "augment";
        default: return "pollution-scan";
    }
}

std::optional<Command> parse_command(const std::string& name) {
    for (auto c : {Command::bands, Command::gap, Command::supercell, Command::galerkin, Command::dislocation,
                   Command::augment, Command::pollution_scan})
        if (name == to_string(c)) return c;
    return std::nullopt;
}

ExperimentConfig parse_config(const Json& raw_input, Command command, const Overrides& overrides,
                              const fs::path& base_dir) {
    const Json input = apply_overrides(raw_input, command, overrides);
    Section top(input, "");
    ExperimentConfig c;
    c.command = command;
    top.text("description", "");
    if (!top.has("lattice")) fail("lattice", "missing");
    const Lattice lattice = parse_lattice(top.sub("lattice"));
    const int dim = lattice.dimension;
    c.potential.lattice = lattice;
    if (top.has("potential")) c.potential.terms = parse_potential(top.raw("potential"), "potential", dim);
    c.perturbation.dimension = dim;
    if (top.has("perturbation")) c.perturbation.terms = parse_perturbation(top.raw("perturbation"), "perturbation", dim);
    c.threads = top.integer("threads", 1, 1, 256);
    c.band = top.integer("J", 1, 1, 64);

    if (top.has("bands")) {
        Section s = top.sub("bands");
        c.bands.cutoff = s.integer("M_pw", dim == 1 ? 32 : 8, 1, dim == 1 ? 512 : 48);
        c.bands.grid_points = s.integer("M_q", dim == 1 ? 64 : 32, 2, dim == 1 ? 8192 : 256);
        c.bands.count = s.integer("count", c.band + 2, 2, 256);
        s.finish();
    } else if (dim == 2) {
        c.bands.cutoff = 8;
        c.bands.grid_points = 32;
    }
    if (c.bands.grid_points % 2) fail("bands.M_q", "must be even");
    c.bands.count = std::max(c.bands.count, c.band + 1);
    {
        const int per_axis = 2 * c.bands.cutoff + 1;
        if (c.bands.count > (dim == 1 ? per_axis : per_axis * per_axis))
            fail("bands.count", "exceeds the planewave basis size");
    }

    if (top.has("reference")) {
        Section s = top.sub("reference");
        c.reference.values = s.numbers("values", {}, -kBig, kBig);
        c.reference.L = s.integer("L", 40, 1, 1000);
        c.reference.ratio = s.integer("N_over_L", 16, 4, 64);
        s.finish();
    }
    if (top.has("supercell")) {
        Section s = top.sub("supercell");
        c.supercell.L = s.integers("L", c.supercell.L, 1, 1000);
        c.supercell.ratio = s.integer("N_over_L", 16, 4, 64);
        c.supercell.window = parse_window(s, base_dir);
        s.finish();
        for (std::size_t i = 1; i < c.supercell.L.size(); ++i)
            if (c.supercell.L[i] <= c.supercell.L[i - 1]) fail("supercell.L", "must be strictly ascending");
    }
    if (top.has("galerkin")) {
        Section s = top.sub("galerkin");
        c.galerkin.cells = s.integer("n_cells", 100, 10, 5000);
        c.galerkin.n_half = checked_n_half({s.number("n_half", 10.0, 2.0, 1000.0)}, s.path("n_half"))[0];
        c.galerkin.offset = s.number("offset", 0.0, 0.0, 0.999999);
        c.galerkin.match_tol = s.number("match_tol", 0.05, 1e-9, 10.0);
        c.galerkin.dump_vectors = s.boolean("dump_vectors", false);
        c.galerkin.window = parse_window(s, base_dir);
        s.finish();
    }
    if (top.has("dislocation")) {
        Section s = top.sub("dislocation");
        if (s.has("variant")) {
            const Json& v = s.raw("variant");
            c.dislocation.variants.clear();
            if (v.is_string()) {
                c.dislocation.variants.push_back(parse_variant(v.get<std::string>(), s.path("variant")));
            } else if (v.is_array() && !v.empty()) {
                for (const auto& e : v) {
                    if (!e.is_string()) fail(s.path("variant"), "expected variant names");
                    c.dislocation.variants.push_back(parse_variant(e.get<std::string>(), s.path("variant")));
                }
            } else {
                fail(s.path("variant"), "expected a variant name or a list of them");
            }
        }
        c.dislocation.t = s.number("t", 0.5, 0.0, 0.999999);
        c.dislocation.l_half = s.number("L_half", 40.0, 20.0, 1000.0);
        c.dislocation.cells = s.integer("n_cells", 100, 10, 5000);
        c.dislocation.window = parse_window(s, base_dir);
        s.finish();
        const double nodes = c.dislocation.l_half * c.dislocation.cells;
        if (std::abs(nodes - std::round(nodes)) > 1e-9) fail("dislocation.L_half", "must be a multiple of h / b");
    }
    if (top.has("augment")) {
        Section s = top.sub("augment");
        c.augment.cells = s.integer("n_cells", 100, 10, 5000);
        c.augment.qpoints = s.integer("M_q", 64, 2, 8192);
        if (c.augment.qpoints % 2) fail(s.path("M_q"), "must be even");
        c.augment.margin = s.number("window_margin", 8.0, 1.0, 1000.0);
        c.augment.svd_tol = s.number("svd_tol", 1e-8, 1e-16, 1e-2);
        c.augment.tau = s.number("tau", 1e-10, 1e-16, 1e-4);
        c.augment.L = s.integers("L", c.augment.L, 4, 2000);
        c.augment.offsets = s.numbers("offsets", c.augment.offsets, 0.0, 0.999999);
        c.augment.route = parse_route(s.text("route", "automatic"), s.path("route"));
        c.augment.match_tol = s.number("match_tol", 0.05, 1e-9, 10.0);
        if (s.has("a2")) {
            Section a = s.sub("a2");
            c.augment.a2.enabled = a.boolean("enabled", true);
            c.augment.a2.samples = a.integer("samples", 50, 1, 100000);
            c.augment.a2.iterations = a.integer("iterations", 40, 1, 10000);
            c.augment.a2.cutoff = a.integer("M_pw", 32, 32, 512);
            c.augment.a2.seed = static_cast<std::uint64_t>(a.integer("seed", 20240801, 0, 2147483647));
            a.finish();
        }
        c.augment.window = parse_window(s, base_dir);
        s.finish();
    }
    if (top.has("pollution_scan")) {
        Section s = top.sub("pollution_scan");
        c.pollution.mode = parse_mode(s.text("mode", "fem"), s.path("mode"));
        c.pollution.n_half = checked_n_half(s.numbers("n_half", c.pollution.n_half, 2.0, 1000.0), s.path("n_half"));
        c.pollution.offset = s.number("offset", 0.5, 0.0, 0.999999);
        c.pollution.L = s.integers("L", c.pollution.L, 1, 1000);
        c.pollution.t = s.numbers("t", c.pollution.t, 1e-6, 0.999999);
        c.pollution.ratio = s.integer("N_over_L", 16, 4, 64);
        c.pollution.predict = s.boolean("predict", true);
        s.finish();
    }
    top.finish();
    if (needs_1d(c) && dim != 1) fail("lattice.dimension", std::string(to_string(command)) + " needs a 1D lattice");
    c.echo = input;
    return c;
}

ExperimentConfig load_config(const fs::path& path, Command command, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j, command, overrides, path.parent_path());
}

RunOutput run(const ExperimentConfig& config) {
    Context ctx{config};
    RunOutput out;
    switch (config.command) {
        case Command::bands: out = run_bands(ctx); break;
        case Command::gap: out = run_gap(ctx); break;
        case Command::supercell: out = run_supercell(ctx); break;
        case Command::galerkin: out = run_galerkin(ctx); break;
        case Command::dislocation: out = run_dislocation(ctx); break;
        case Command::augment: out = run_augment_sweep(ctx, "augment.csv"); break;
        case Command::pollution_scan:
            switch (config.pollution.mode) {
                case PollutionConfig::Mode::fem: out = run_fem_scan(ctx); break;
                case PollutionConfig::Mode::supercell_mismatch: out = run_mismatch_scan(ctx); break;
                default: out = run_augment_sweep(ctx, "pollution_augment.csv"); break;
            }
            break;
    }
    Json summary;
    summary["method"] = to_string(config.command);
    summary["params"] = config.echo;
    summary["results"] = out.summary["results"];
    summary["diagnostics"] = ctx.diagnostics;
    out.summary = std::move(summary);
    return out;
}

Json failure_summary(const ExperimentConfig& config, const Error& e) {
    Json s;
    s["method"] = to_string(config.command);
    s["params"] = config.echo;
    s["results"] = nullptr;
    s["diagnostics"] = {{"error", e.name()}, {"message", e.what()}};
    return s;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete eigenvalues of perturbed periodic Schrodinger operators in spectral gaps"};
    app.require_subcommand(1);
    std::string config_path;
    std::string out_dir = "gapeig-out";
    Overrides o;
    std::vector<CLI::App*> subs;
    for (const char* name : {"bands", "gap", "supercell", "galerkin", "dislocation", "augment", "pollution-scan"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option_function<int>("--threads", [&](int v) { o.threads = v; }, "worker threads");
        subs.push_back(sub);
    }
    for (const char* s : {"galerkin", "dislocation", "augment", "pollution-scan"})
        app.get_subcommand(s)->add_option_function<int>("--n-cells", [&](int v) { o.cells = v; });
    app.get_subcommand("galerkin")->add_option_function<double>("--n-half", [&](double v) { o.n_half = v; });
    for (const char* s : {"galerkin", "augment", "pollution-scan"})
        app.get_subcommand(s)->add_option_function<double>("--offset", [&](double v) { o.offset = v; });
    for (const char* s : {"supercell", "galerkin", "dislocation", "augment", "pollution-scan"})
        app.get_subcommand(s)->add_option_function<std::string>(
            "--window", [&](const std::string& v) { o.window_file = v; }, "gap JSON file giving the window");
    app.get_subcommand("dislocation")->add_option_function<std::string>("--variant", [&](const std::string& v) {
        o.variant = v;
    });
    for (const char* s : {"dislocation", "pollution-scan"})
        app.get_subcommand(s)->add_option_function<double>("--t", [&](double v) { o.t = v; });
    app.get_subcommand("dislocation")->add_option_function<double>("--L-half", [&](double v) { o.l_half = v; });
    for (auto* sub : subs) sub->add_option_function<int>("--J", [&](int v) { o.band = v; });
    app.get_subcommand("augment")->add_option_function<int>("--M-q", [&](int v) { o.qpoints = v; });
    app.get_subcommand("augment")->add_option_function<double>("--window-margin", [&](double v) { o.margin = v; });
    app.get_subcommand("augment")->add_option_function<double>("--svd-tol", [&](double v) { o.svd_tol = v; });
    for (const char* s : {"supercell", "augment", "pollution-scan"})
        app.get_subcommand(s)->add_option_function<std::vector<int>>(
            "--L", [&](const std::vector<int>& v) { o.L = v; }, "L sweep");
    app.get_subcommand("pollution-scan")->add_option_function<std::string>("--mode", [&](const std::string& v) {
        o.mode = v;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    Command command = Command::bands;
    for (auto* sub : subs)
        if (sub->parsed()) command = *parse_command(sub->get_name());

    ExperimentConfig config;
    try {
        config = load_config(config_path, command, o);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        std::cerr << "ConfigError: cannot create output directory " << out_dir << ": " << ec.message() << '\n';
        return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    try {
        RunOutput result = run(config);
        for (const auto& f : result.files) write_file(fs::path(out_dir) / f.filename, f.content);
        result.summary["wall_time_s"] = elapsed();
        write_file(fs::path(out_dir) / "summary.json", result.summary.dump(2) + "\n");
    } catch (const Error& e) {
        Json s = failure_summary(config, e);
        s["wall_time_s"] = elapsed();
        write_file(fs::path(out_dir) / "summary.json", s.dump(2) + "\n");
        std::cerr << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        const Error wrapped("InternalError", e.what());
        Json s = failure_summary(config, wrapped);
        s["wall_time_s"] = elapsed();
        write_file(fs::path(out_dir) / "summary.json", s.dump(2) + "\n");
        std::cerr << wrapped.what() << '\n';
        return 3;
    }
    return 0;
}

}  // namespace gapeig::cli
