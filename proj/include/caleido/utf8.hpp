#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace caleido::utf8 {

bool valid(std::string_view text);

// Byte offset of the first malformed sequence, or text.size() if valid.
std::size_t first_invalid(std::string_view text);

// Appends the UTF-8 encoding of `cp` to `out`.
void append(std::string& out, char32_t cp);

// Number of code points. Assumes valid input.
std::size_t length(std::string_view text);

// Byte offset of each code point plus a final entry equal to text.size().
std::vector<std::size_t> boundaries(std::string_view text);

// ASCII-only case folding; non-ASCII bytes are copied unchanged.
std::string ascii_lower(std::string_view text);

bool is_space(std::string_view text, std::size_t pos, std::size_t* width);

}  // namespace caleido::utf8
