#include "jbsde/report.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "jbsde/common.hpp"

namespace jbsde {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_report_atomic(const std::string& path,
                         const std::function<void(std::ostream&)>& writer,
                         bool timestamp_header) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
        if (timestamp_header) {
            std::time_t now = std::time(nullptr);
            char ts[64];
            std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
            os << "# generated: " << ts << "\n";
        }
        writer(os);
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

}  // namespace jbsde
