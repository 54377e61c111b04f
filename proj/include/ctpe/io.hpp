#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ctpe::io {

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a64(std::string_view s);

std::string hash_hex(uint64_t h);

std::vector<char> read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, const void* data, size_t len);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// key=value lines; '#' starts a comment; blank lines skipped.
// Later duplicates overwrite earlier ones.
std::vector<std::pair<std::string, std::string>> parse_kv_lines(const std::string& text);

std::vector<double> parse_csv_doubles(const std::string& s);
std::vector<int> parse_csv_ints(const std::string& s);

std::string join_csv(const std::vector<double>& v, int precision = 17);
std::string join_csv(const std::vector<int>& v);

std::string trim(const std::string& s);

} // namespace ctpe::io
