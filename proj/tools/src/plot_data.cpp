#include "pixcon/tools/plot_data.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "pixcon/errors.hpp"

namespace pixcon::tools {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

MetricsTable read_metrics_csv(std::istream& in) {
  MetricsTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      table.columns = split_fields(line);
      if (table.columns.empty() || table.columns[0] != "step") {
        throw ParseError("metrics header must start with 'step'", line_no);
      }
      for (const auto& c : table.columns) {
        if (c.empty()) throw ParseError("empty column name in header", line_no);
      }
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != table.columns.size()) {
      throw ParseError("expected " + std::to_string(table.columns.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    long step = 0;
    const auto& f = fields[0];
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), step);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      throw ParseError("step '" + f + "' is not an integer", line_no);
    }
    table.rows.push_back(std::move(fields));
  }
  if (line_no == 0) throw ParseError("missing header", 1);
  return table;
}

void write_series(std::ostream& out, const MetricsTable& table, std::size_t column) {
  if (column == 0 || column >= table.columns.size()) {
    throw InvalidParameter("write_series: column out of range");
  }
  out << "step\t" << table.columns[column] << '\n';
  for (const auto& row : table.rows) out << row[0] << '\t' << row[column] << '\n';
}

std::vector<std::string> emit_plot_data(const MetricsTable& table,
                                        const std::string& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory + ": " + ec.message());
  std::vector<std::string> paths;
  for (std::size_t c = 1; c < table.columns.size(); ++c) {
    const std::string path = (fs::path(directory) / (table.columns[c] + ".tsv")).string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_series(out, table, c);
    if (!out) throw IoError("failed writing " + path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace pixcon::tools
