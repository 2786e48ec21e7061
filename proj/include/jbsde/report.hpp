#pragma once

#include <functional>
#include <ostream>
#include <string>

namespace jbsde {

// fixed-width float formatting so report bytes are reproducible
std::string fmt(double v);

// Writes through a temp file and renames into place.  The writer
// receives the stream; a "# generated:" timestamp line is prepended
// unless disabled (comparisons exclude that line).
void write_report_atomic(const std::string& path,
                         const std::function<void(std::ostream&)>& writer,
                         bool timestamp_header = true);

}  // namespace jbsde
