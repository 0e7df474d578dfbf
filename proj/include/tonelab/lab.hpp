#pragma once

#include "tonelab/presets.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace tonelab {

inline constexpr const char* kToolVersion = "tonelab 0.4.0";

// A scenario document.  resolve() fills every default in, so the stored
// copy is self-describing; the hash is taken over the resolved form.
struct Scenario {
    json doc;

    static Scenario from_json(const json& j) { return Scenario{j}; }
    // Validates and returns the resolved document.  Errors carry the field
    // path ("scenario.c: ...").  Rejects c <= e0 before anything is computed.
    json resolve() const;
    std::string hash() const;  // SHA-256 of the resolved document
};

struct ManifestEntry {
    std::string file;
    std::string sha256;
    size_t bytes = 0;
};

struct RunRecord {
    std::string scenario_hash;
    std::string tool_version;
    double wall_time = 0.0;
    json scenario;  // resolved
    std::string out_dir;
    std::vector<ManifestEntry> manifest;  // every artifact except run.json itself
    json results;
    json model;  // every coefficient of the Lagrangian that was run

    json to_json() const;
    static RunRecord from_json(const json& j);
};

// Dispatches to the module pipeline, writes the artifacts and out_dir/run.json.
RunRecord run(const Scenario& scenario, const std::string& out_dir);

struct ReplayOptions {
    std::optional<std::string> out_dir;  // default: <record dir>/replay
    std::optional<unsigned> seed;        // a different seed makes mismatches expected
};

struct ReplayReport {
    std::string status;                 // identical | drift | expected-difference
    std::vector<std::string> tampered;  // on-disk artifact differs from the record
    std::vector<std::string> drifted;   // rerun differs under the same seed
    std::vector<std::string> expected;  // rerun differs under a changed seed
    RunRecord rerun;
    json to_json() const;
};

ReplayReport replay(const RunRecord& record, const ReplayOptions& opt = {});

// Presets with their parameter schemas and a Tonelli grid check.
json preset_catalog();

// Hex SHA-256.
std::string sha256_hex(const std::string& bytes);
// 64-bit stream seed for one subsystem, derived from the root seed.
uint64_t derived_seed(unsigned root, const std::string& subsystem);

}  // namespace tonelab
