#include "ionlattice/cli.hpp"

#include "ionlattice/crystal.hpp"
#include "ionlattice/error.hpp"
#include "ionlattice/format.hpp"
#include "ionlattice/micromotion.hpp"
#include "ionlattice/pendulum.hpp"
#include "ionlattice/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace ionlattice::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& what)
{
    throw Error(ErrorCode::Config, "config key '" + key + "': " + what);
}

const std::map<std::string, double>& units_for(Dimension dim)
{
    constexpr double two_pi = 2.0 * constants::pi;
    static const std::map<Dimension, std::map<std::string, double>> table = {
        {Dimension::Dimensionless, {}},
        {Dimension::Length,
         {{"m", 1.0}, {"cm", 1e-2}, {"mm", 1e-3}, {"um", 1e-6}, {"µm", 1e-6}, {"nm", 1e-9}}},
        {Dimension::Time, {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"µs", 1e-6}, {"ns", 1e-9}}},
        {Dimension::Frequency,
         {{"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9}, {"THz", 1e12}}},
        {Dimension::AngularFrequency,
         {{"Hz", two_pi}, {"kHz", two_pi * 1e3}, {"MHz", two_pi * 1e6}, {"GHz", two_pi * 1e9},
          {"THz", two_pi * 1e12}, {"rad/s", 1.0}}},
        {Dimension::Rate, {{"1/s", 1.0}, {"/s", 1.0}, {"s^-1", 1.0}}},
        {Dimension::Temperature,
         {{"K", 1.0}, {"mK", 1e-3}, {"uK", 1e-6}, {"µK", 1e-6}, {"nK", 1e-9}}},
        {Dimension::Mass, {{"kg", 1.0}, {"u", constants::atomic_mass_unit},
                           {"amu", constants::atomic_mass_unit}}},
        {Dimension::Angle, {{"rad", 1.0}, {"deg", constants::pi / 180.0}}},
        {Dimension::Intensity, {{"W/m^2", 1.0}, {"W/cm^2", 1e4}}},
        {Dimension::Area, {{"m^2", 1.0}, {"cm^2", 1e-4}, {"um^2", 1e-12}, {"nm^2", 1e-18}}},
    };
    return table.at(dim);
}

// Reads one mapping, tracking which keys were consumed so leftovers can be
// reported as unknown.
class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path))
    {
        if (node_ && !node_.IsNull() && !node_.IsMap())
            config_error(path_, "expected a mapping");
    }

    bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    std::string scalar(const std::string& k)
    {
        used_.insert(k);
        const YAML::Node n = node_[k];
        if (!n.IsScalar())
            config_error(key(k), "expected a scalar");
        return n.Scalar();
    }

    double quantity(const std::string& k, Dimension dim)
    {
        return parse_quantity(scalar(k), dim, key(k));
    }

    double quantity(const std::string& k, Dimension dim, double fallback)
    {
        return has(k) ? quantity(k, dim) : fallback;
    }

    std::optional<double> optional_quantity(const std::string& k, Dimension dim)
    {
        if (!has(k))
            return std::nullopt;
        return quantity(k, dim);
    }

    long long integer(const std::string& k)
    {
        const std::string s = scalar(k);
        try {
            std::size_t used = 0;
            const long long v = std::stoll(s, &used);
            if (used != s.size())
                throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            config_error(key(k), "expected an integer, got '" + s + "'");
        }
    }

    std::uint64_t seed(const std::string& k)
    {
        const std::string s = scalar(k);
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(s, &used);
            if (used != s.size() || s.front() == '-')
                throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            config_error(key(k), "expected a non-negative integer seed, got '" + s + "'");
        }
    }

    bool boolean(const std::string& k, bool fallback)
    {
        if (!has(k))
            return fallback;
        const std::string s = scalar(k);
        if (s == "true")
            return true;
        if (s == "false")
            return false;
        config_error(key(k), "expected true or false, got '" + s + "'");
    }

    Section child(const std::string& k)
    {
        used_.insert(k);
        return Section(node_ ? node_[k] : YAML::Node(), key(k));
    }

    void finish() const
    {
        if (!node_ || !node_.IsMap())
            return;
        for (const auto& kv : node_) {
            const std::string k = kv.first.as<std::string>();
            if (!used_.count(k))
                config_error(key(k), "unknown key");
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::set<std::string> used_;
};

void require_positive(double v, const std::string& key)
{
    if (!(v > 0.0))
        config_error(key, "must be positive");
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
    out << text;
    out.close();
    if (!out)
        throw Error(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

void prepare_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw Error(ErrorCode::Io, "cannot create output directory '" + dir.string() + "'");
}

json meta(const RunConfig& c, const std::string& file)
{
    return json{{"config_hash", c.hash}, {"file", file}, {"version", version},
                {"schema_version", schema_version}};
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

crystal::CrystalState solve_crystal(const RunConfig& c)
{
    crystal::EquilibriumOptions opt;
    opt.seed = c.seed;
    opt.starts = c.starts;
    return crystal::equilibrium(c.n_ions, c.trap, c.species, std::nullopt, opt);
}

std::string num(double v) { return format_number(v); }

}  // namespace

double parse_quantity(const std::string& text, Dimension dim, const std::string& key)
{
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        config_error(key, "expected a number with unit, got '" + text + "'");
    }
    if (!std::isfinite(value))
        config_error(key, "value must be finite");
    std::string unit = text.substr(used);
    const auto b = unit.find_first_not_of(" \t");
    unit = b == std::string::npos ? std::string() : unit.substr(b);
    while (!unit.empty() && (unit.back() == ' ' || unit.back() == '\t'))
        unit.pop_back();
    const auto& units = units_for(dim);
    if (dim == Dimension::Dimensionless) {
        if (!unit.empty())
            config_error(key, "dimensionless value must not carry a unit, got '" + unit + "'");
        return value;
    }
    if (unit.empty())
        config_error(key, "missing unit in '" + text + "'");
    const auto it = units.find(unit);
    if (it == units.end())
        config_error(key, "unit '" + unit + "' not valid here");
    return value * it->second;
}

std::string fnv1a_hex(const std::string& data)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig parse_config(const std::string& text)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::Config, std::string("config is not valid YAML/JSON: ") + e.what());
    }
    if (!root.IsMap())
        throw Error(ErrorCode::Config, "config must be a mapping at the top level");
    Section top(root, "");
    RunConfig c;

    if (!top.has("schema_version"))
        config_error("schema_version", "missing");
    if (top.integer("schema_version") != schema_version)
        config_error("schema_version", "unsupported, expected " + std::to_string(schema_version));

    // species
    {
        Section s = top.child("species");
        c.species = IonSpecies::calcium40();
        c.species.mass = s.quantity("mass", Dimension::Mass, c.species.mass);
        c.species.lattice_transition_wavelength = s.quantity(
            "lattice_wavelength", Dimension::Length, c.species.lattice_transition_wavelength);
        c.species.detection_wavelength =
            s.quantity("detection_wavelength", Dimension::Length, c.species.detection_wavelength);
        c.species.gamma_p_total = s.quantity("gamma_p_total", Dimension::Rate, c.species.gamma_p_total);
        c.species.gamma_397 = s.quantity("gamma_397", Dimension::Rate, c.species.gamma_397);
        c.species.branching_leave =
            s.quantity("branching_leave", Dimension::Dimensionless, c.species.branching_leave);
        if (s.has("fine_structure_splitting"))
            c.species.fine_structure_splitting =
                s.quantity("fine_structure_splitting", Dimension::AngularFrequency);
        s.finish();
        try {
            c.species.validate();
        } catch (const Error& e) {
            config_error("species", e.what());
        }
    }

    // trap
    {
        Section s = top.child("trap");
        for (const char* k : {"axial", "radial"})
            if (!s.has(k))
                config_error(s.key(k), "missing");
        const double axial = s.quantity("axial", Dimension::Frequency);
        const double radial = s.quantity("radial", Dimension::Frequency);
        c.radial_asymmetry = s.quantity("asymmetry", Dimension::Dimensionless, 0.0);
        const double rf = s.quantity("rf", Dimension::Frequency, 0.0);
        require_positive(axial, "trap.axial");
        require_positive(radial, "trap.radial");
        if (!(std::abs(c.radial_asymmetry) < 1.0))
            config_error("trap.asymmetry", "must satisfy |asymmetry| < 1");
        if (rf < 0.0)
            config_error("trap.rf", "must be >= 0");
        try {
            c.trap = TrapConfig::from_frequencies(axial, radial, c.radial_asymmetry, rf);
        } catch (const Error& e) {
            config_error("trap.rf", e.what());
        }
        if (s.has("q_radial"))
            c.trap.q_radial = s.quantity("q_radial", Dimension::Dimensionless);
        c.trap.q_axial = s.quantity("q_axial", Dimension::Dimensionless, 0.0);
        s.finish();
        try {
            c.trap.validate();
        } catch (const Error& e) {
            config_error("trap", e.what());
        }
    }

    // lattice
    {
        Section s = top.child("lattice");
        const double wavelength =
            s.quantity("wavelength", Dimension::Length, c.species.lattice_transition_wavelength);
        require_positive(wavelength, "lattice.wavelength");
        if (!s.has("detuning"))
            config_error(s.key("detuning"), "missing");
        const double detuning = s.quantity("detuning", Dimension::AngularFrequency);
        if (detuning == 0.0)
            config_error("lattice.detuning", "must be non-zero");
        double t_latt = 0.0;
        if (s.has("depth") && s.has("nu_latt"))
            config_error("lattice", "give either depth or nu_latt, not both");
        if (s.has("depth")) {
            t_latt = s.quantity("depth", Dimension::Temperature);
        } else if (s.has("nu_latt")) {
            const double nu = s.quantity("nu_latt", Dimension::Frequency);
            t_latt = pendulum::depth_for_lattice_frequency(nu, c.species, 2.0 * constants::pi / wavelength) /
                     constants::boltzmann;
        } else {
            config_error(s.key("depth"), "missing (or give nu_latt)");
        }
        if (t_latt < 0.0)
            config_error("lattice.depth", "must be >= 0");
        c.lattice = LatticeConfig::from_temperature(t_latt, wavelength, detuning);
        c.lattice.phase = s.quantity("phase", Dimension::Angle, 0.0);
        c.lattice.p32_channel_weight = s.quantity("p32_channel_weight", Dimension::Dimensionless, 0.0);
        if (s.has("antinode_intensity"))
            c.lattice.antinode_intensity = s.quantity("antinode_intensity", Dimension::Intensity);
        if (s.has("cross_section_397"))
            c.lattice.cross_section_397 = s.quantity("cross_section_397", Dimension::Area);
        c.beam.waist_radius = s.quantity("waist", Dimension::Length, c.beam.waist_radius);
        require_positive(c.beam.waist_radius, "lattice.waist");
        s.finish();
        try {
            c.lattice.validate();
        } catch (const Error& e) {
            config_error("lattice", e.what());
        }
    }

    // ramp
    {
        Section s = top.child("ramp");
        c.ramp.ramp_duration = s.quantity("duration", Dimension::Time, c.ramp.ramp_duration);
        c.ramp.hold_duration = s.quantity("hold", Dimension::Time, c.ramp.hold_duration);
        if (s.has("shape")) {
            const std::string shape = s.scalar("shape");
            if (shape == "linear")
                c.ramp.shape = RampShape::Linear;
            else if (shape == "sine_squared")
                c.ramp.shape = RampShape::SineSquared;
            else
                config_error("ramp.shape", "expected linear or sine_squared, got '" + shape + "'");
        }
        s.finish();
        try {
            c.ramp.validate();
        } catch (const Error& e) {
            config_error("ramp", e.what());
        }
    }

    // crystal
    {
        Section s = top.child("crystal");
        if (!s.has("ions"))
            config_error(s.key("ions"), "missing");
        const long long n = s.integer("ions");
        if (n < 1 || n > 200)
            config_error("crystal.ions", "must lie in [1, 200]");
        c.n_ions = static_cast<std::size_t>(n);
        if (!s.has("seed"))
            config_error(s.key("seed"), "missing (seeds are mandatory)");
        c.seed = s.seed("seed");
        if (s.has("starts")) {
            const long long st = s.integer("starts");
            if (st < 1)
                config_error("crystal.starts", "must be >= 1");
            c.starts = static_cast<int>(st);
        }
        s.finish();
    }

    // scatter
    {
        Section s = top.child("scatter");
        c.initial_temperature = s.optional_quantity("initial_temperature", Dimension::Temperature);
        if (c.initial_temperature && !(*c.initial_temperature > 0.0))
            config_error("scatter.initial_temperature", "must be positive");
        c.pumping_efficiency = s.quantity("pumping_efficiency", Dimension::Dimensionless, 1.0);
        if (!(c.pumping_efficiency >= 0.0 && c.pumping_efficiency <= 1.0))
            config_error("scatter.pumping_efficiency", "must lie in [0, 1]");
        if (s.has("points")) {
            const long long p = s.integer("points");
            if (p < 1)
                config_error("scatter.points", "must be >= 1");
            c.scatter_points = static_cast<int>(p);
        }
        s.finish();
    }

    // modes
    {
        Section s = top.child("modes");
        c.modes_nu_max = s.optional_quantity("nu_max", Dimension::Frequency);
        if (c.modes_nu_max)
            require_positive(*c.modes_nu_max, "modes.nu_max");
        c.modes_nu_min = s.quantity("nu_min", Dimension::Frequency, 0.0);
        if (s.has("points")) {
            const long long p = s.integer("points");
            if (p < 2)
                config_error("modes.points", "must be >= 2");
            c.modes_points = static_cast<int>(p);
        }
        s.finish();
    }

    // thermometry
    {
        Section s = top.child("thermometry");
        auto& t = c.thermometry;
        t.imaging.sigma_res_axial =
            s.quantity("sigma_res_axial", Dimension::Length, t.imaging.sigma_res_axial);
        t.imaging.sigma_res_radial =
            s.quantity("sigma_res_radial", Dimension::Length, t.imaging.sigma_res_radial);
        t.imaging.pixel_pitch = s.quantity("pixel_pitch", Dimension::Length, t.imaging.pixel_pitch);
        t.include_radial = s.boolean("radial", false);
        t.temperature = s.optional_quantity("temperature", Dimension::Temperature);
        if (t.temperature && *t.temperature < 0.0)
            config_error("thermometry.temperature", "must be >= 0");
        t.photon_budget = s.quantity("photon_budget", Dimension::Dimensionless, t.photon_budget);
        t.background = s.quantity("background", Dimension::Dimensionless, t.background);
        t.poisson_noise = s.boolean("noise", true);
        if (s.has("seed"))
            t.seed = s.seed("seed");
        s.finish();
        try {
            t.imaging.validate();
        } catch (const Error& e) {
            config_error("thermometry", e.what());
        }
        if (!(t.photon_budget > 0.0) || !(t.background >= 0.0))
            config_error("thermometry", "photon_budget must be positive and background >= 0");
    }
    top.finish();

    json j;
    j["schema_version"] = schema_version;
    j["species"] = {{"mass_kg", c.species.mass},
                    {"lattice_wavelength_m", c.species.lattice_transition_wavelength},
                    {"detection_wavelength_m", c.species.detection_wavelength},
                    {"gamma_p_total_per_s", c.species.gamma_p_total},
                    {"gamma_397_per_s", c.species.gamma_397},
                    {"branching_leave", c.species.branching_leave},
                    {"fine_structure_rad_per_s",
                     c.species.fine_structure_splitting ? json(*c.species.fine_structure_splitting)
                                                        : json(nullptr)}};
    j["trap"] = {{"omega_x", c.trap.omega_x}, {"omega_y", c.trap.omega_y},
                 {"omega_z", c.trap.omega_z}, {"omega_rf", c.trap.omega_rf},
                 {"q_radial", c.trap.q_radial}, {"q_axial", c.trap.q_axial},
                 {"asymmetry", c.radial_asymmetry}};
    j["lattice"] = {{"depth_J", c.lattice.depth}, {"wavevector_per_m", c.lattice.wavevector},
                    {"detuning_rad_per_s", c.lattice.detuning}, {"phase_rad", c.lattice.phase},
                    {"p32_channel_weight", c.lattice.p32_channel_weight},
                    {"antinode_intensity", c.lattice.antinode_intensity
                                               ? json(*c.lattice.antinode_intensity)
                                               : json(nullptr)},
                    {"cross_section_397", c.lattice.cross_section_397
                                              ? json(*c.lattice.cross_section_397)
                                              : json(nullptr)},
                    {"waist_m", c.beam.waist_radius}};
    j["ramp"] = {{"duration_s", c.ramp.ramp_duration}, {"hold_s", c.ramp.hold_duration},
                 {"shape", c.ramp.shape == RampShape::Linear ? "linear" : "sine_squared"}};
    j["crystal"] = {{"ions", c.n_ions}, {"seed", c.seed}, {"starts", c.starts}};
    j["scatter"] = {{"initial_temperature_K",
                     c.initial_temperature ? json(*c.initial_temperature) : json(nullptr)},
                    {"pumping_efficiency", c.pumping_efficiency},
                    {"points", c.scatter_points}};
    j["modes"] = {{"nu_max_Hz", c.modes_nu_max ? json(*c.modes_nu_max) : json(nullptr)},
                  {"nu_min_Hz", c.modes_nu_min},
                  {"points", c.modes_points}};
    const auto& t = c.thermometry;
    j["thermometry"] = {{"sigma_res_axial_m", t.imaging.sigma_res_axial},
                        {"sigma_res_radial_m", t.imaging.sigma_res_radial},
                        {"pixel_pitch_m", t.imaging.pixel_pitch},
                        {"radial", t.include_radial},
                        {"temperature_K", t.temperature ? json(*t.temperature) : json(nullptr)},
                        {"photon_budget", t.photon_budget},
                        {"background", t.background},
                        {"noise", t.poisson_noise},
                        {"seed", t.seed ? json(*t.seed) : json(nullptr)}};
    c.canonical_json = j.dump();
    c.hash = fnv1a_hex(c.canonical_json);
    return c;
}

RunConfig load_config(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, "cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::vector<double> GridSpec::values() const
{
    std::vector<double> v;
    if (count == 1)
        return {start};
    if (geometric) {
        if (start == 0.0)
            return crystal::lattice_frequency_grid(stop, count);
        for (int i = 0; i < count; ++i)
            v.push_back(start * std::pow(stop / start, static_cast<double>(i) / (count - 1)));
    } else {
        for (int i = 0; i < count; ++i)
            v.push_back(start + (stop - start) * static_cast<double>(i) / (count - 1));
    }
    v.back() = stop;
    return v;
}

GridSpec parse_grid(const std::string& text)
{
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':'))
        parts.push_back(item);
    if (parts.size() != 4)
        config_error("--grid", "expected start:stop:count:{lin|geom}, got '" + text + "'");
    GridSpec g;
    try {
        std::size_t u1 = 0, u2 = 0, u3 = 0;
        g.start = std::stod(parts[0], &u1);
        g.stop = std::stod(parts[1], &u2);
        const long long count = std::stoll(parts[2], &u3);
        if (u1 != parts[0].size() || u2 != parts[1].size() || u3 != parts[2].size())
            throw std::invalid_argument(text);
        if (count < 1 || count > 100000)
            config_error("--grid", "count must lie in [1, 100000]");
        g.count = static_cast<int>(count);
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        config_error("--grid", "non-numeric field in '" + text + "'");
    }
    if (parts[3] == "lin")
        g.geometric = false;
    else if (parts[3] == "geom")
        g.geometric = true;
    else
        config_error("--grid", "spacing must be lin or geom, got '" + parts[3] + "'");
    if (!(g.start >= 0.0) || !(g.stop >= g.start))
        config_error("--grid", "need 0 <= start <= stop");
    if (g.count > 1 && !(g.stop > g.start))
        config_error("--grid", "need start < stop for more than one point");
    if (g.geometric && g.start == 0.0 && g.count < 2)
        config_error("--grid", "geometric grid from 0 needs at least 2 points");
    return g;
}

void cmd_equilibrium(const RunConfig& config, const fs::path& out_dir)
{
    prepare_dir(out_dir);
    const crystal::CrystalState state = solve_crystal(config);
    std::ostringstream csv;
    csv << "ion, x_um, y_um, z_um\n";
    for (Eigen::Index i = 0; i < state.positions.rows(); ++i) {
        csv << i << ", " << num(state.positions(i, 0) * 1e6) << ", "
            << num(state.positions(i, 1) * 1e6) << ", " << num(state.positions(i, 2) * 1e6)
            << '\n';
    }
    write_text(out_dir / "positions.csv", csv.str());
    const auto info = crystal::classify_structure(state.positions, config.trap);
    json m = meta(config, "positions.csv");
    m["structure"] = crystal::to_string(info.kind);
    m["out_of_plane_ions"] = info.out_of_plane;
    m["length_scale_um"] = crystal::length_scale(config.trap, config.species) * 1e6;
    m["saddle"] = state.saddle;
    m["seed"] = config.seed;
    write_json(out_dir / "positions.meta.json", m);
}

void cmd_modes(const RunConfig& config, const fs::path& out_dir, const std::optional<GridSpec>& grid)
{
    prepare_dir(out_dir);
    std::vector<double> nu_grid;
    if (grid) {
        for (double v : grid->values())
            nu_grid.push_back(v * 1e6);
    } else {
        const double nu_max = config.modes_nu_max
                                  ? *config.modes_nu_max
                                  : pendulum::lattice_frequency(config.lattice.temperature(),
                                                                config.species,
                                                                config.lattice.wavevector);
        if (!(nu_max > 0.0))
            config_error("modes.nu_max", "zero lattice depth and no nu_max given");
        nu_grid = crystal::lattice_frequency_grid(nu_max, config.modes_points, config.modes_nu_min);
    }
    crystal::ContinuationOptions opt;
    opt.equilibrium.seed = config.seed;
    opt.equilibrium.starts = config.starts;
    const crystal::ContinuationResult r =
        crystal::continuation(config.n_ions, config.trap, config.species, config.lattice, nu_grid, opt);

    std::ostringstream csv;
    csv << "nu_latt_MHz, branch_id, freq_kHz, plane_weight, axial_weight\n";
    for (std::size_t s = 0; s < r.nu_latt.size(); ++s) {
        for (Eigen::Index b = 0; b < r.frequencies[s].size(); ++b) {
            csv << num(r.nu_latt[s] * 1e-6) << ", " << b << ", " << num(r.frequencies[s](b) * 1e-3)
                << ", " << num(r.plane_weights[s](b)) << ", " << num(r.axial_weights[s](b)) << '\n';
        }
    }
    write_text(out_dir / "modes.csv", csv.str());

    json warnings = json::array();
    for (const auto& f : r.crossings) {
        warnings.push_back({{"nu_latt_MHz", f.nu_latt * 1e-6},
                            {"grid_index", f.step},
                            {"branch_id", f.branch},
                            {"chosen_mode", f.chosen},
                            {"alternative_mode", f.alternative},
                            {"overlap_chosen", f.overlap_chosen},
                            {"overlap_alternative", f.overlap_alternative}});
    }
    json w = meta(config, "modes.csv");
    w["flagged_crossings"] = warnings;
    w["inserted_points"] = r.extra_points;
    w["saddle_encountered"] = r.saddle_encountered;
    w["saddle_escapes"] = r.saddle_escapes;
    w["plane_normal"] = {r.plane_normal(0), r.plane_normal(1), r.plane_normal(2)};
    write_json(out_dir / "modes_warnings.json", w);
    json m = meta(config, "modes.csv");
    m["grid_points"] = r.nu_latt.size();
    m["seed"] = config.seed;
    write_json(out_dir / "modes.meta.json", m);
}

void cmd_scatter(const RunConfig& config, const fs::path& out_dir,
                 const std::optional<GridSpec>& grid)
{
    if (!config.initial_temperature)
        config_error("scatter.initial_temperature", "missing, required by scatter");
    prepare_dir(out_dir);
    std::vector<double> depths;
    if (grid) {
        for (double v : grid->values())
            depths.push_back(v * 1e-3 * constants::boltzmann);
    } else {
        const GridSpec g{0.0, config.lattice.temperature() * 1e3, config.scatter_points, false};
        for (double v : g.values())
            depths.push_back(v * 1e-3 * constants::boltzmann);
    }
    ensemble::ScatteringScenario sc;
    sc.crystal = solve_crystal(config);
    sc.species = config.species;
    sc.lattice = config.lattice;
    sc.ramp = config.ramp;
    sc.initial_temperature = *config.initial_temperature;
    sc.pumping_efficiency = config.pumping_efficiency;
    const auto rows = ensemble::scan_depth(sc, config.beam, depths);

    std::ostringstream csv, baseline;
    ensemble::write_scan_csv(csv, rows, false);
    ensemble::write_scan_csv(baseline, rows, true);
    write_text(out_dir / "scatter.csv", csv.str());
    write_text(out_dir / "scatter_delocalized.csv", baseline.str());

    json m = meta(config, "scatter.csv");
    m["baseline_file"] = "scatter_delocalized.csv";
    m["seed"] = config.seed;
    m["ions"] = config.n_ions;
    m["initial_temperature_mK"] = *config.initial_temperature * 1e3;
    m["detuning"] = config.lattice.blue_detuned() ? "blue" : "red";
    const LatticeConfig last = config.lattice.with_magnitude(depths.back());
    const auto warn = pendulum::adiabaticity_warning(config.ramp, last, config.species);
    m["adiabaticity_warning"] = warn ? json(*warn) : json(nullptr);
    write_json(out_dir / "scatter.meta.json", m);
}

void cmd_thermometry(const RunConfig& config, const fs::path& out_dir, const fs::path& spots_csv)
{
    std::ifstream in(spots_csv, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, "cannot read spots file '" + spots_csv.string() + "'");
    std::vector<thermometry::SpotMeasurement> spots = thermometry::read_spots_csv(in);
    if (spots.empty())
        throw Error(ErrorCode::Parse, "spots file '" + spots_csv.string() + "' has no rows");
    prepare_dir(out_dir);
    const auto& settings = config.thermometry;
    for (auto& s : spots)
        thermometry::measure_spot(s, settings.imaging);

    const crystal::CrystalState state = solve_crystal(config);
    const crystal::ModeDecomposition modes = crystal::normal_modes(state, config.trap, config.species);
    const crystal::GammaTable gamma = crystal::gamma_parameters(modes);
    thermometry::EstimateOptions opt;
    opt.include_radial = settings.include_radial;
    const thermometry::TemperatureEstimate est = thermometry::estimate_temperature(
        spots, gamma, config.trap, config.species, settings.imaging, opt);

    json j = meta(config, "temperature.json");
    j["temperature_mK"] = est.temperature * 1e3;
    j["ci95_mK"] = est.ci95 * 1e3;
    j["chi2_reduced"] = est.chi2_reduced;
    j["used_ions"] = est.used_ions;
    json residuals = json::array();
    for (double r : est.per_ion_residuals)
        residuals.push_back(r * 1e12);
    j["per_ion_residuals_um2"] = residuals;
    json fits = json::array();
    for (const auto& s : spots) {
        fits.push_back({{"ion_index", s.ion_index},
                        {"axis", thermometry::to_string(s.axis)},
                        {"center_um", s.fitted_center * 1e6},
                        {"sigma_um", s.fitted_sigma * 1e6},
                        {"sigma_ci95_um", s.sigma_ci95 * 1e6}});
    }
    j["spots"] = fits;
    json g;
    for (int u = 0; u < 3; ++u) {
        std::vector<double> col(gamma.gamma.rows());
        for (Eigen::Index i = 0; i < gamma.gamma.rows(); ++i)
            col[i] = gamma.gamma(i, u);
        g[u == 0 ? "x" : u == 1 ? "y" : "z"] = col;
    }
    g["radial_projected"] = std::vector<double>(gamma.gamma_radial_projected.data(),
                                                gamma.gamma_radial_projected.data() +
                                                    gamma.gamma_radial_projected.size());
    j["gamma"] = g;
    write_json(out_dir / "temperature.json", j);
}

void cmd_micromotion(const RunConfig& config, const fs::path& out_dir)
{
    if (!(config.trap.omega_rf > 0.0))
        config_error("trap.rf", "missing, required by micromotion");
    prepare_dir(out_dir);
    const crystal::CrystalState state = solve_crystal(config);
    const auto report = micromotion::excess_micromotion(state, config.trap, config.species);
    json j = meta(config, "micromotion.json");
    j["q_radial"] = report.q_radial;
    j["effective_q_axial"] = report.effective_q_axial;
    j["variance_broadening_factor"] = report.variance_broadening_factor;
    json ions = json::array();
    double hottest = 0.0;
    for (std::size_t i = 0; i < report.ions.size(); ++i) {
        const auto& m = report.ions[i];
        ions.push_back(
            {{"ion", i},
             {"position_um",
              {state.positions(i, 0) * 1e6, state.positions(i, 1) * 1e6, state.positions(i, 2) * 1e6}},
             {"amplitude_nm", {m.amplitude(0) * 1e9, m.amplitude(1) * 1e9, m.amplitude(2) * 1e9}},
             {"kinetic_energy_J", {m.kinetic_energy(0), m.kinetic_energy(1), m.kinetic_energy(2)}},
             {"equivalent_temperature_mK",
              {m.equivalent_temperature(0) * 1e3, m.equivalent_temperature(1) * 1e3,
               m.equivalent_temperature(2) * 1e3}},
             {"radial_temperature_mK", m.radial_temperature * 1e3}});
        hottest = std::max(hottest, m.radial_temperature);
    }
    j["ions"] = ions;
    j["max_radial_temperature_mK"] = hottest * 1e3;
    write_json(out_dir / "micromotion.json", j);
}

void cmd_synthesize_spots(const RunConfig& config, const fs::path& out_dir)
{
    const auto& t = config.thermometry;
    if (!t.temperature)
        config_error("thermometry.temperature", "missing, required by synthesize-spots");
    if (!t.seed)
        config_error("thermometry.seed", "missing (seeds are mandatory)");
    prepare_dir(out_dir);
    const crystal::CrystalState state = solve_crystal(config);
    const crystal::ModeDecomposition modes = crystal::normal_modes(state, config.trap, config.species);
    const crystal::GammaTable gamma = crystal::gamma_parameters(modes);
    thermometry::SynthesisOptions opt;
    opt.photon_budget = t.photon_budget;
    opt.background = t.background;
    opt.seed = *t.seed;
    opt.poisson_noise = t.poisson_noise;
    opt.radial = t.include_radial;
    const auto spots = thermometry::synthesize_spots(*t.temperature, state, gamma, config.trap,
                                                     config.species, t.imaging, opt);
    std::ostringstream csv;
    thermometry::write_spots_csv(csv, spots);
    write_text(out_dir / "spots.csv", csv.str());
    json m = meta(config, "spots.csv");
    json overlapping = json::array();
    for (const auto& s : spots)
        if (s.overlapping)
            overlapping.push_back({{"ion_index", s.ion_index}, {"axis", thermometry::to_string(s.axis)}});
    m["overlapping_spots"] = overlapping;
    m["seed"] = *t.seed;
    write_json(out_dir / "spots.meta.json", m);
}

int exit_code_for(const std::exception& e)
{
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        switch (err->code()) {
        case ErrorCode::Config:
        case ErrorCode::Parse:
            return ConfigError;
        case ErrorCode::Io:
            return IoError;
        default:
            return SolverError;
        }
    }
    if (dynamic_cast<const fs::filesystem_error*>(&e))
        return IoError;
    return SolverError;
}

int run(int argc, char** argv)
{
    CLI::App app{"Ion Coulomb crystals in an optical lattice"};
    app.set_version_flag("--version", std::string(version));
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string grid_text;
    std::string spots_path;

    auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "Config file (YAML or JSON)")->required();
        sub->add_option("--out", out_dir, "Output directory")->required();
        return sub;
    };
    CLI::App* eq = add("equilibrium", "Equilibrium positions -> positions.csv");
    CLI::App* modes = add("modes", "Mode continuation in lattice depth -> modes.csv");
    modes->add_option("--grid", grid_text, "nu_latt grid in MHz, start:stop:count:{lin|geom}");
    CLI::App* scatter = add("scatter", "Scattering probability vs depth -> scatter.csv");
    scatter->add_option("--grid", grid_text, "Depth grid in mK, start:stop:count:{lin|geom}");
    CLI::App* thermo = add("thermometry", "Temperature from spot profiles -> temperature.json");
    thermo->add_option("--spots", spots_path, "Spot profile CSV")->required();
    CLI::App* micro = add("micromotion", "Excess micromotion report -> micromotion.json");
    CLI::App* synth = add("synthesize-spots", "Synthetic spot profiles -> spots.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Success : ConfigError;
    }

    try {
        const RunConfig config = load_config(config_path);
        std::optional<GridSpec> grid;
        if (!grid_text.empty())
            grid = parse_grid(grid_text);
        if (eq->parsed())
            cmd_equilibrium(config, out_dir);
        else if (modes->parsed())
            cmd_modes(config, out_dir, grid);
        else if (scatter->parsed())
            cmd_scatter(config, out_dir, grid);
        else if (thermo->parsed())
            cmd_thermometry(config, out_dir, spots_path);
        else if (micro->parsed())
            cmd_micromotion(config, out_dir);
        else if (synth->parsed())
            cmd_synthesize_spots(config, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return Success;
}

}  // namespace ionlattice::cli
