#pragma once

#include <string>
#include <vector>

namespace stagerl::io {

/// Whole-file read. Throws ParseError(path, 0, ...) when unreadable.
std::string read_file(const std::string& path);

/// Writes to `path.tmp` then renames over `path`; readers never observe a
/// partially written file. Creates parent directories.
void write_file_atomic(const std::string& path, const std::string& content);

/// Appends one line (newline added) to `path`, creating it if needed.
void append_line(const std::string& path, const std::string& line);

/// Non-empty lines of a file, paired with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> read_nonempty_lines(const std::string& path);

}  // namespace stagerl::io
