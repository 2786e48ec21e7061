#include "jbsde/diagnostics.hpp"

#include <cstdio>

namespace jbsde {

void DiagnosticsReport::write_csv(std::ostream& os) const {
    os << "check,pass,observed,bound,witness\n";
    char buf[64];
    for (const auto& e : entries) {
        os << e.name << "," << (e.pass ? 1 : 0) << ",";
        std::snprintf(buf, sizeof(buf), "%.12g", e.observed);
        os << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.12g", e.bound);
        os << buf << ",";
        // commas inside witnesses would break the row
        std::string w = e.witness;
        for (auto& c : w)
            if (c == ',') c = ';';
        os << w << "\n";
    }
}

}  // namespace jbsde
