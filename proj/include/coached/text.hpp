#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace coached::text {

// Invalid byte sequences decode to U+FFFD, one replacement per offending byte.
std::u32string decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view code_points);
void append_utf8(std::string& out, char32_t cp);

// Number of code points; the library's unit of "characters".
std::size_t char_count(std::string_view utf8);

bool is_word_char(char32_t cp);
bool is_lower(char32_t cp);
char32_t to_lower(char32_t cp);

// Lowercased runs of alphanumeric code points. No stemming, no stop words.
std::vector<std::string> tokenize(std::string_view utf8);
inline constexpr std::string_view kTokenizerConfig = "lowercase+unicode-alnum-runs/v1";

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

std::string trim(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix);
// Byte offset of the first case-insensitive (ASCII folding) match, or npos.
std::size_t find_icase(std::string_view haystack, std::string_view needle, std::size_t from = 0);
std::size_t rfind_icase(std::string_view haystack, std::string_view needle);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

std::string utc_timestamp_now();

}  // namespace coached::text
