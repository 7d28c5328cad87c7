#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pixcon::tools {

// Metrics CSV held as text so series files reproduce it exactly.
struct MetricsTable {
  std::vector<std::string> columns;            // columns[0] == "step"
  std::vector<std::vector<std::string>> rows;
};

/// Throws ParseError with the offending line number.
MetricsTable read_metrics_csv(std::istream& in);

/// Tab-separated "step\t<metric>" series for column `column` (>= 1).
void write_series(std::ostream& out, const MetricsTable& table, std::size_t column);

/// Writes <directory>/<metric>.tsv for every metric column; returns the paths.
std::vector<std::string> emit_plot_data(const MetricsTable& table,
                                        const std::string& directory);

}  // namespace pixcon::tools
