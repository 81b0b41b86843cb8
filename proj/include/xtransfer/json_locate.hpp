#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

namespace xtransfer {

// Maps every JSON pointer in `text` ("" for the root, "/a/0/b", ...) to the
// 1-based line where its value starts. Best effort: stops at the first syntax
// error and returns what it has.
std::map<std::string, std::size_t> json_pointer_lines(std::string_view text);

// Line of `pointer`, falling back to its nearest ancestor; 0 when unknown.
std::size_t line_of_pointer(const std::map<std::string, std::size_t>& lines, std::string pointer);

}  // namespace xtransfer
