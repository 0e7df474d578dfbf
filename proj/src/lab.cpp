#include "tonelab/lab.hpp"

#include "tonelab/entropy.hpp"
#include "tonelab/flow.hpp"
#include "tonelab/franks.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace tonelab {

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw numerical("digest", "SHA-256 failed");
    std::ostringstream s;
    for (unsigned i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return s.str();
}

uint64_t derived_seed(unsigned root, const std::string& subsystem)
{
    const std::string h = sha256_hex(std::to_string(root) + ":" + subsystem);
    return std::stoull(h.substr(0, 16), nullptr, 16);
}

namespace {

const std::set<std::string> kCommands{"orbits", "classify", "franks", "phin", "entropy", "constants"};

std::string canonical_preset(const std::string& name) { return name == "pendulum" ? "pendulum-torus" : name; }

const PresetInfo& preset_info(const std::string& name)
{
    static const std::vector<PresetInfo> cat = list_presets();
    for (const auto& p : cat)
        if (p.name == name) return p;
    throw validation("config", "scenario.preset: unknown preset '" + name + "'");
}

json vec_json(const std::vector<double>& v) { return json(v); }

json section_defaults(const std::string& preset, int d)
{
    json j;
    std::vector<int> w(static_cast<size_t>(std::max(d, 2)), 0);
    w.back() = 1;
    j["orbits"] = {{"windings", json::array({w})}, {"seeds", 4}, {"max_return_time", 50.0}};
    j["constants"] = {{"samples", 8}, {"neighborhood_radius", 0.0}};
    j["franks"] = {{"eps_C2", 1e4}, {"trials", 2}, {"t0_factor", 1.5}, {"targets", 2}};
    j["phin"] = {{"theta_samples", 4}, {"t_grid", 11}};
    if (preset == "cat-suspension") {
        j["entropy"] = {{"method", "bowen"},
                        {"deltas", vec_json({0.05, 0.1, 0.2})},
                        {"T", vec_json({0, 1, 2, 3, 4, 5, 6, 7})},
                        {"region", {{"lo", vec_json({0, 0})}, {"hi", vec_json({1, 1})}, {"shape", {400, 400}}}},
                        {"budget", 200000},
                        {"sample_dt", 1.0},
                        {"registry_period", 12}};
    } else {
        std::vector<double> T;
        for (int k = 0; k <= 16; ++k) T.push_back(10.0 * k);
        j["entropy"] = {{"method", "bowen"},
                        {"deltas", vec_json({0.1, 0.2})},
                        {"T", T},
                        {"region", {{"lo", vec_json({0.5, 0.5, 0})}, {"hi", vec_json({0.5, 0.5, 0.05})}, {"shape", {1, 1, 480}}}},
                        {"budget", 100000},
                        {"sample_dt", 0.25},
                        {"registry_period", 200.0}};
    }
    return j;
}

double number_at(const json& j, const std::string& key, const std::string& path)
{
    if (!j.contains(key)) throw validation("config", path + "." + key + ": missing");
    if (!j.at(key).is_number()) throw validation("config", path + "." + key + ": must be a number");
    return j.at(key).get<double>();
}

LagrangianModel model_of(const json& r) { return make_preset(r.at("preset").get<std::string>(), r.at("parameters")); }

}  // namespace

json Scenario::resolve() const
{
    if (!doc.is_object()) throw validation("config", "scenario: must be an object");
    static const std::set<std::string> top{"preset", "parameters", "c", "command", "seed", "threads", "orbits",
                                           "constants", "franks", "phin", "entropy"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!top.count(it.key())) throw validation("config", "scenario." + it.key() + ": unknown field");
    if (!doc.contains("preset") || !doc.at("preset").is_string())
        throw validation("config", "scenario.preset: missing or not a string");
    const std::string preset = canonical_preset(doc.at("preset").get<std::string>());
    const PresetInfo& info = preset_info(preset);

    json r;
    r["preset"] = preset;
    if (!doc.contains("command") || !doc.at("command").is_string())
        throw validation("config", "scenario.command: missing or not a string");
    const std::string cmd = doc.at("command").get<std::string>();
    if (!kCommands.count(cmd)) throw validation("config", "scenario.command: unknown command '" + cmd + "'");
    r["command"] = cmd;

    const json user_params = doc.value("parameters", json::object());
    if (!user_params.is_object()) throw validation("config", "scenario.parameters: must be an object");
    json params = json::object();
    for (auto it = info.parameters.begin(); it != info.parameters.end(); ++it)
        params[it.key()] = it.value().at("default");
    for (auto it = user_params.begin(); it != user_params.end(); ++it) {
        if (!info.parameters.contains(it.key()))
            throw validation("config", "scenario.parameters." + it.key() + ": unknown for " + preset);
        if (!it.value().is_number())
            throw validation("config", "scenario.parameters." + it.key() + ": must be a number");
        params[it.key()] = it.value();
    }
    r["parameters"] = params;

    const json seed = doc.value("seed", json(1));
    if (!seed.is_number_integer() || seed.get<long long>() < 0)
        throw validation("config", "scenario.seed: must be a non-negative integer");
    r["seed"] = seed;
    const json threads = doc.value("threads", json(1));
    if (!threads.is_number_integer() || threads.get<long long>() < 1)
        throw validation("config", "scenario.threads: must be a positive integer");
    r["threads"] = threads;

    int d = 2;
    if (info.synthetic) {
        if (cmd != "entropy") throw validation("config", "scenario.command: " + preset + " supports entropy only");
        r["c"] = nullptr;
    } else {
        const LagrangianModel m = make_preset(preset, params);
        d = m.dim();
        const double c = number_at(doc, "c", "scenario");
        const double E0 = e0(m, 64).value;
        if (!(c > E0 + 1e-12)) {
            std::ostringstream s;
            s << "scenario.c: c = " << c << " must exceed e0 = " << E0;
            throw validation("energy-regime", s.str());
        }
        tonelli_check(m);
        r["c"] = c;
    }

    const json defs = section_defaults(preset, d);
    for (auto it = defs.begin(); it != defs.end(); ++it) {
        json sec = it.value();
        if (doc.contains(it.key())) {
            const json& u = doc.at(it.key());
            if (!u.is_object()) throw validation("config", "scenario." + it.key() + ": must be an object");
            for (auto jt = u.begin(); jt != u.end(); ++jt) {
                if (!sec.contains(jt.key()))
                    throw validation("config", "scenario." + it.key() + "." + jt.key() + ": unknown field");
                if (sec[jt.key()].is_number() && !jt.value().is_number())
                    throw validation("config", "scenario." + it.key() + "." + jt.key() + ": must be a number");
                sec[jt.key()] = jt.value();
            }
        }
        r[it.key()] = sec;
    }
    return r;
}

std::string Scenario::hash() const { return sha256_hex(resolve().dump()); }

json RunRecord::to_json() const
{
    json j;
    j["scenario_hash"] = scenario_hash;
    j["tool_version"] = tool_version;
    j["wall_time"] = wall_time;
    j["scenario"] = scenario;
    j["out_dir"] = out_dir;
    j["manifest"] = json::array();
    for (const auto& m : manifest) j["manifest"].push_back({{"file", m.file}, {"sha256", m.sha256}, {"bytes", m.bytes}});
    j["results"] = results;
    j["model"] = model;
    return j;
}

RunRecord RunRecord::from_json(const json& j)
{
    RunRecord r;
    try {
        r.scenario_hash = j.at("scenario_hash").get<std::string>();
        r.tool_version = j.at("tool_version").get<std::string>();
        r.wall_time = j.at("wall_time").get<double>();
        r.scenario = j.at("scenario");
        r.out_dir = j.at("out_dir").get<std::string>();
        for (const auto& m : j.at("manifest"))
            r.manifest.push_back({m.at("file").get<std::string>(), m.at("sha256").get<std::string>(),
                                  m.at("bytes").get<size_t>()});
        r.results = j.value("results", json::object());
        r.model = j.value("model", json());
    } catch (const json::exception& e) {
        throw validation("config", std::string("run record: ") + e.what());
    }
    return r;
}

namespace {

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw validation("io", "cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Writer {
    fs::path dir;
    std::vector<ManifestEntry> manifest;

    void put(const std::string& name, const std::string& content)
    {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw validation("io", "cannot write " + (dir / name).string());
        out << content;
        manifest.push_back({name, sha256_hex(content), content.size()});
    }
};

Eigen::VectorXi winding_of(const json& w, int d)
{
    if (!w.is_array() || static_cast<int>(w.size()) != d)
        throw validation("config", "scenario.orbits.windings: each winding needs d integers");
    Eigen::VectorXi k(d);
    for (int i = 0; i < d; ++i) k(i) = w[i].get<int>();
    if (k.isZero()) throw validation("config", "scenario.orbits.windings: zero winding");
    return k;
}

// Shooting from a row of seeds across one transverse axis, duplicates dropped.
std::vector<ClosedOrbit> find_orbits(const LagrangianModel& model, double c, const json& sec)
{
    const int d = model.dim();
    const int seeds = static_cast<int>(number_at(sec, "seeds", "scenario.orbits"));
    ShootingOptions so;
    so.max_return_time = number_at(sec, "max_return_time", "scenario.orbits");
    std::vector<ClosedOrbit> found;
    for (const auto& wj : sec.at("windings")) {
        const Eigen::VectorXi k = winding_of(wj, d);
        int axis = 0;
        while (axis < d && k(axis) != 0) ++axis;
        if (axis == d) axis = 0;
        for (int s = 0; s < seeds; ++s) {
            Vec x = Vec::Zero(d);
            x(axis) = static_cast<double>(s) / seeds;
            const Vec v = k.cast<double>().normalized();
            try {
                const PhaseState seed = project_to_energy(model, PhaseState::tangent(x, v), c);
                ClosedOrbit o = find_closed_orbit_shooting(model, c, seed, k, so);
                bool dup = false;
                for (const auto& f : found)
                    if (f.winding == o.winding && orbit_distance(model, f, o) < 1e-6) dup = true;
                if (!dup) found.push_back(std::move(o));
            } catch (const NumericalError&) {
                // a seed that does not converge is not an error of the run
            }
        }
    }
    return found;
}

json orbit_row(const ClosedOrbit& o)
{
    json j;
    j["winding"] = std::vector<int>(o.winding.data(), o.winding.data() + o.winding.size());
    j["period"] = o.period;
    j["class"] = o.spectral.name();
    j["residual"] = o.residual;
    if (o.dP.rows() == 2) j["trace"] = o.dP.trace();
    return j;
}

json run_orbits(const json& r, Writer& w, bool classify)
{
    const LagrangianModel m = model_of(r);
    const double c = r.at("c").get<double>();
    const auto orbits = find_orbits(m, c, r.at("orbits"));
    if (orbits.empty()) throw numerical("no-orbits", "no closed orbit found from the seeds");
    std::string lines;
    json rows = json::array();
    std::set<std::string> classes;
    for (const auto& o : orbits) {
        lines += orbit_to_json(o).dump() + "\n";
        rows.push_back(orbit_row(o));
        classes.insert(o.spectral.name());
    }
    w.put("orbits.jsonl", lines);
    json res;
    res["orbits"] = rows;
    if (classify) res["classes"] = std::vector<std::string>(classes.begin(), classes.end());
    return res;
}

ConstantsLedger ledger_of(const json& r)
{
    const json& s = r.at("constants");
    return estimate_constants(model_of(r), r.at("c").get<double>(),
                              number_at(s, "neighborhood_radius", "scenario.constants"),
                              static_cast<int>(number_at(s, "samples", "scenario.constants")),
                              static_cast<unsigned>(derived_seed(r.at("seed").get<unsigned>(), "constants")));
}

json ledger_summary(const ConstantsLedger& L)
{
    return {{"k0", L.k0}, {"k1", L.k1}, {"k2", L.k2}, {"k3", L.k3}, {"k4", L.k4},
            {"k5", L.k5}, {"k6", L.k6}, {"k7", L.k7}, {"lambda", L.lambda_width}, {"rho", L.rho}};
}

json run_constants(const json& r, Writer& w)
{
    const ConstantsLedger L = ledger_of(r);
    w.put("ledger.json", L.to_json().dump(2) + "\n");
    return ledger_summary(L);
}

json run_franks(const json& r, Writer& w)
{
    const LagrangianModel m = model_of(r);
    const double c = r.at("c").get<double>();
    const json& s = r.at("franks");
    const ConstantsLedger L = ledger_of(r);
    w.put("ledger.json", L.to_json().dump(2) + "\n");
    const auto orbits = find_orbits(m, c, r.at("orbits"));
    if (orbits.empty()) throw numerical("no-orbits", "no closed orbit found from the seeds");
    const ClosedOrbit* pick = &orbits.front();
    for (const auto& o : orbits)
        if (o.spectral.kind == SpectralKind::Elliptic) {
            pick = &o;
            break;
        }
    const double t0 = number_at(s, "t0_factor", "scenario.franks") * L.k0;
    const double eps = number_at(s, "eps_C2", "scenario.franks");
    const SegmentContext ctx = prepare_orbit_segment(m, *pick, t0, L);
    const unsigned seed = r.at("seed").get<unsigned>();
    const RadiusEstimate R = reachable_radius_estimate(ctx, eps, static_cast<int>(number_at(s, "trials", "scenario.franks")),
                                                       static_cast<unsigned>(derived_seed(seed, "franks-radius")));
    if (!(R.delta_hat > 0))
        throw numerical("radius", "reachable radius is below the resolution of the reduced map");
    std::mt19937_64 rng(derived_seed(seed, "franks-targets"));
    json targets = json::array();
    int realized = 0;
    const int nt = static_cast<int>(number_at(s, "targets", "scenario.franks"));
    for (int i = 0; i < nt; ++i) {
        const Mat X = random_sp_direction(ctx.n(), rng);
        const Mat target = target_at_distance(ctx.base_dP, X, 0.5 * R.delta_hat);
        json t{{"distance", 0.5 * R.delta_hat}};
        try {
            const Realization re = realize_target(ctx, target, eps);
            t["error"] = re.error;
            t["c2_norm"] = re.c2_norm;
            t["orbit_drift"] = re.orbit_drift;
            t["realized"] = true;
            ++realized;
        } catch (const RealizationFailure& f) {
            t["realized"] = false;
            t["failure"] = f.kind();
            t["best_error"] = f.best_error;
        }
        targets.push_back(t);
    }
    json res{{"orbit", orbit_row(*pick)}, {"t0", t0},         {"eps_C2", eps},        {"delta_hat", R.delta_hat},
             {"floor", R.floor},          {"radii", R.radii}, {"targets", targets}, {"realized", realized}};
    w.put("franks.json", res.dump(2) + "\n");
    return res;
}

json run_phin(const json& r, Writer& w)
{
    const json& s = r.at("phin");
    const PhiEstimate P = phi_n_estimate(model_of(r), r.at("c").get<double>(),
                                         static_cast<int>(number_at(s, "theta_samples", "scenario.phin")),
                                         static_cast<int>(number_at(s, "t_grid", "scenario.phin")),
                                         static_cast<unsigned>(derived_seed(r.at("seed").get<unsigned>(), "phin")));
    json res{{"phi_n", P.value}, {"samples", P.samples}, {"failures", P.failures}, {"k0", P.k0}};
    w.put("phin.json", res.dump(2) + "\n");
    return res;
}

PhaseRegion region_of(const json& j)
{
    PhaseRegion g;
    try {
        g.lo = j.at("lo").get<std::vector<double>>();
        g.hi = j.at("hi").get<std::vector<double>>();
        if (j.contains("shape")) g.shape = j.at("shape").get<std::vector<int>>();
    } catch (const json::exception&) {
        throw validation("config", "scenario.entropy.region: needs lo, hi and optionally shape arrays");
    }
    return g;
}

json run_entropy(const json& r, Writer& w)
{
    const json& s = r.at("entropy");
    const std::string method = s.at("method").get<std::string>();
    if (method != "bowen" && method != "periodic-growth" && method != "both")
        throw validation("config", "scenario.entropy.method: bowen, periodic-growth or both");
    const std::string preset = r.at("preset").get<std::string>();
    json out, res;
    if (method != "periodic-growth") {
        BowenOptions bo;
        bo.sample_dt = number_at(s, "sample_dt", "scenario.entropy");
        bo.seed = static_cast<unsigned>(derived_seed(r.at("seed").get<unsigned>(), "entropy-grid"));
        const auto deltas = s.at("deltas").get<std::vector<double>>();
        const auto Ts = s.at("T").get<std::vector<double>>();
        const long budget = static_cast<long>(number_at(s, "budget", "scenario.entropy"));
        EntropyEstimate e;
        if (preset == "cat-suspension") {
            e = bowen_entropy(CatSuspension(), region_of(s.at("region")), deltas, Ts, budget, bo);
        } else {
            const EnergyLevelFlow f(model_of(r), r.at("c").get<double>());
            e = bowen_entropy(f, region_of(s.at("region")), deltas, Ts, budget, bo);
        }
        out["bowen"] = estimate_to_json(e);
        res["bowen"] = e.value;
        w.put("spanning.csv", spanning_csv(e));
    }
    if (method != "bowen") {
        const double Tr = number_at(s, "registry_period", "scenario.entropy");
        OrbitRegistry reg;
        if (preset == "cat-suspension")
            reg = cat_registry(static_cast<int>(Tr));
        else if (preset == "free-torus" && model_of(r).dim() == 2)
            reg = free_torus_registry(r.at("c").get<double>(), Tr);
        else
            throw validation("config", "scenario.entropy.method: periodic growth needs an orbit registry, "
                                       "available for cat-suspension and the 2-torus");
        const EntropyEstimate e = periodic_growth_entropy(reg, Tr);
        out["periodic_growth"] = estimate_to_json(e);
        res["periodic_growth"] = e.value;
    }
    w.put("entropy.json", out.dump(2) + "\n");
    return res;
}

std::string bare_message(const Error& e)
{
    const std::string w = e.what();
    return w.substr(std::min(w.size(), e.kind().size() + 2));
}

}  // namespace

RunRecord run(const Scenario& scenario, const std::string& out_dir)
{
    const json r = scenario.resolve();
    const auto start = std::chrono::steady_clock::now();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw validation("io", "cannot create " + out_dir);
    Writer w{out_dir, {}};

    RunRecord rec;
    rec.scenario = r;
    rec.scenario_hash = sha256_hex(r.dump());
    rec.tool_version = kToolVersion;
    rec.out_dir = out_dir;
    const std::string cmd = r.at("command").get<std::string>();
    try {
        if (cmd == "orbits" || cmd == "classify")
            rec.results = run_orbits(r, w, cmd == "classify");
        else if (cmd == "constants")
            rec.results = run_constants(r, w);
        else if (cmd == "franks")
            rec.results = run_franks(r, w);
        else if (cmd == "phin")
            rec.results = run_phin(r, w);
        else
            rec.results = run_entropy(r, w);
    } catch (const ValidationError& e) {
        throw ValidationError(e.kind(), cmd + ": " + bare_message(e));
    } catch (const NumericalError& e) {
        throw NumericalError(e.kind(), cmd + ": " + bare_message(e));
    }
    if (r.at("preset") != "cat-suspension") rec.model = model_of(r).to_json();
    rec.manifest = w.manifest;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream(fs::path(out_dir) / "run.json", std::ios::trunc) << rec.to_json().dump(2) << "\n";
    return rec;
}

json ReplayReport::to_json() const
{
    return {{"status", status}, {"tampered", tampered}, {"drifted", drifted}, {"expected", expected}};
}

ReplayReport replay(const RunRecord& record, const ReplayOptions& opt)
{
    ReplayReport rep;
    for (const auto& m : record.manifest) {
        const fs::path p = fs::path(record.out_dir) / m.file;
        if (!fs::exists(p)) throw validation("replay", "artifact missing: " + p.string());
        if (sha256_hex(read_file(p)) != m.sha256) rep.tampered.push_back(m.file);
    }
    json doc = record.scenario;
    const bool reseeded = opt.seed && *opt.seed != doc.at("seed").get<unsigned>();
    if (opt.seed) doc["seed"] = *opt.seed;
    const std::string dir = opt.out_dir ? *opt.out_dir : (fs::path(record.out_dir) / "replay").string();
    rep.rerun = run(Scenario::from_json(doc), dir);

    std::map<std::string, std::string> now;
    for (const auto& m : rep.rerun.manifest) now[m.file] = m.sha256;
    for (const auto& m : record.manifest) {
        const auto it = now.find(m.file);
        if (it != now.end() && it->second == m.sha256) continue;
        (reseeded ? rep.expected : rep.drifted).push_back(m.file);
    }
    if (!rep.tampered.empty() || !rep.drifted.empty())
        rep.status = "drift";
    else if (!rep.expected.empty())
        rep.status = "expected-difference";
    else
        rep.status = "identical";
    return rep;
}

json preset_catalog()
{
    json cat = json::array();
    for (const auto& p : list_presets()) {
        json j{{"name", p.name}, {"parameters", p.parameters}, {"synthetic", p.synthetic}, {"note", p.note}};
        if (p.synthetic) {
            j["tonelli"] = "synthetic, not Tonelli";
        } else {
            const TonelliReport t = tonelli_check(make_preset(p.name));
            j["tonelli"] = t.pass ? "pass" : "fail";
            j["convexity_margin"] = t.margin;
        }
        cat.push_back(j);
    }
    return cat;
}

}  // namespace tonelab
