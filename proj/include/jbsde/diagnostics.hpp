#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace jbsde {

struct CheckEntry {
    std::string name;
    bool pass = true;
    double observed = 0.0;  // worst ratio / max error seen
    double bound = 0.0;     // the threshold it was held against
    std::string witness;    // where the worst case occurred
};

struct DiagnosticsReport {
    std::vector<CheckEntry> entries;

    bool all_pass() const {
        for (const auto& e : entries)
            if (!e.pass) return false;
        return true;
    }
    const CheckEntry* find(std::string_view name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
    void add(std::string name, bool pass, double observed, double bound,
             std::string witness = "") {
        entries.push_back({std::move(name), pass, observed, bound, std::move(witness)});
    }
    void write_csv(std::ostream& os) const;
};

}  // namespace jbsde
