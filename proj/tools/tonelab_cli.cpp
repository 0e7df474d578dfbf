#include "tonelab/lab.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using tonelab::json;

namespace {

struct Common {
    std::string config, out = "out", preset;
    std::optional<double> c;
    std::optional<unsigned> seed;
    std::optional<int> threads;
};

void add_common(CLI::App* app, Common& o)
{
    app->add_option("--config", o.config, "scenario document (JSON)");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--seed", o.seed, "root seed");
    app->add_option("--threads", o.threads, "worker count");
    app->add_option("--preset", o.preset, "preset name, overrides the config");
    app->add_option("--c", o.c, "energy level, overrides the config");
}

json load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw tonelab::validation("config", "cannot read " + path);
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw tonelab::validation("config", path + ": " + e.what());
    }
}

int run_command(const std::string& cmd, const Common& o)
{
    json doc = o.config.empty() ? json::object() : load(o.config);
    doc["command"] = cmd;
    if (!o.preset.empty()) doc["preset"] = o.preset;
    if (o.c) doc["c"] = *o.c;
    if (o.seed) doc["seed"] = *o.seed;
    if (o.threads) doc["threads"] = *o.threads;
    const auto rec = tonelab::run(tonelab::Scenario::from_json(doc), o.out);
    std::cout << rec.results.dump(2) << "\n";
    std::cerr << "wrote " << rec.manifest.size() << " artifacts and run.json to " << o.out << " ("
              << rec.wall_time << " s)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"tonelab: closed orbits, Franks perturbations and entropy of Tonelli flows"};
    app.require_subcommand(1);

    const std::vector<std::string> cmds{"orbits", "classify", "franks", "phin", "entropy", "constants"};
    std::map<std::string, Common> opts;
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : cmds) {
        subs[c] = app.add_subcommand(c, "run the " + c + " pipeline");
        add_common(subs[c], opts[c]);
    }

    std::string record_path;
    std::optional<unsigned> replay_seed;
    std::optional<std::string> replay_out;
    auto* rp = app.add_subcommand("replay", "re-run a recorded scenario and compare checksums");
    rp->add_option("record", record_path, "run.json of the original run")->required();
    rp->add_option("--seed", replay_seed, "replace the root seed; mismatches become expected");
    rp->add_option("--out", replay_out, "directory of the rerun");

    auto* pr = app.add_subcommand("presets", "list presets with parameter schemas");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        for (const auto& c : cmds)
            if (subs[c]->parsed()) return run_command(c, opts[c]);
        if (pr->parsed()) {
            std::cout << tonelab::preset_catalog().dump(2) << "\n";
            return 0;
        }
        if (rp->parsed()) {
            const auto rec = tonelab::RunRecord::from_json(load(record_path));
            tonelab::ReplayOptions ro;
            ro.seed = replay_seed;
            ro.out_dir = replay_out;
            const auto rep = tonelab::replay(rec, ro);
            std::cout << rep.to_json().dump(2) << "\n";
            return rep.status == "drift" ? 3 : 0;
        }
    } catch (const tonelab::ValidationError& e) {
        std::cerr << "validation error " << e.what() << "\n";
        return 2;
    } catch (const tonelab::NumericalError& e) {
        std::cerr << "numerical failure " << e.what() << "\n";
        return 3;
    }
    return 0;
}
