#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pgrpo::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column index or npos.
  [[nodiscard]] std::size_t column(std::string_view name) const;
};

/// Comma-separated, first line is the header, double-quoted fields allowed,
/// blank lines skipped. Throws std::runtime_error naming the line on ragged rows.
Table parse(std::string_view text);
Table read_file(const std::filesystem::path& path);

/// Quotes a field if it contains a comma, quote or newline.
std::string escape(std::string_view field);

}  // namespace pgrpo::csv
