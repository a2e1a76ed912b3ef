#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbsde/errors.hpp"

namespace gbsde {

/// One verified inequality or tolerance. anchor names the structural claim
/// the check exercises; margin = bound - value, so pass iff margin >= 0
/// (up to explicitly recorded slack already folded into bound).
struct CheckRow {
    std::string check_id;
    std::string anchor;
    std::optional<int> n; // ladder index when applicable
    double value = 0.0;
    double bound = 0.0;
    double margin = 0.0;
    bool pass = true;
};

inline CheckRow make_check(std::string id, std::string anchor, std::optional<int> n, double value,
                           double bound) {
    CheckRow row;
    row.check_id = std::move(id);
    row.anchor = std::move(anchor);
    row.n = n;
    row.value = value;
    row.bound = bound;
    row.margin = bound - value;
    row.pass = row.margin >= 0.0 && std::isfinite(row.margin);
    return row;
}

struct RunReport {
    std::string subcommand;
    nlohmann::json environment; // grid sizes, seeds, sigma levels, ...
    std::vector<CheckRow> rows;

    bool all_pass() const {
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["subcommand"] = subcommand;
        j["environment"] = environment;
        j["all_pass"] = all_pass();
        auto& arr = j["checks"] = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json c;
            c["check_id"] = r.check_id;
            c["anchor"] = r.anchor;
            if (r.n) c["n"] = *r.n; else c["n"] = nullptr;
            c["value"] = r.value;
            c["bound"] = r.bound;
            c["margin"] = r.margin;
            c["pass"] = r.pass;
            arr.push_back(std::move(c));
        }
        return j;
    }

    static RunReport from_json(const nlohmann::json& j) {
        RunReport rep;
        rep.subcommand = j.at("subcommand").get<std::string>();
        rep.environment = j.at("environment");
        for (const auto& c : j.at("checks")) {
            CheckRow r;
            r.check_id = c.at("check_id").get<std::string>();
            r.anchor = c.at("anchor").get<std::string>();
            if (!c.at("n").is_null()) r.n = c.at("n").get<int>();
            r.value = c.at("value").get<double>();
            r.bound = c.at("bound").get<double>();
            r.margin = c.at("margin").get<double>();
            r.pass = c.at("pass").get<bool>();
            rep.rows.push_back(std::move(r));
        }
        return rep;
    }

    /// Fixed-column CSV; floats carry 17 significant digits so parsing the
    /// file reproduces the doubles bit-exactly.
    std::string to_csv() const {
        std::string out = "check_id,anchor,n,value,bound,margin,pass\n";
        char buf[512];
        for (const auto& r : rows) {
            std::string n_str = r.n ? std::to_string(*r.n) : std::string{};
            std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.17g,%.17g,%.17g,%s\n", r.check_id.c_str(),
                          r.anchor.c_str(), n_str.c_str(), r.value, r.bound, r.margin,
                          r.pass ? "true" : "false");
            out += buf;
        }
        return out;
    }

    /// Writes <dir>/report.json and <dir>/checks.csv.
    void write_artifacts(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        {
            std::ofstream os(dir / "report.json");
            if (!os) throw ConfigError("cannot write " + (dir / "report.json").string());
            os << to_json().dump(2) << "\n";
        }
        {
            std::ofstream os(dir / "checks.csv");
            if (!os) throw ConfigError("cannot write " + (dir / "checks.csv").string());
            os << to_csv();
        }
    }
};

} // namespace gbsde
