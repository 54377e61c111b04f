#include "ctpe/io.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctpe/error.hpp"

namespace ctpe::io {

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hash_hex(uint64_t h) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<char> read_binary(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open file: " + path.string());
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<char> buf(static_cast<size_t>(size));
    if (size > 0) f.read(buf.data(), size);
    if (!f) throw data_error("short read: " + path.string());
    return buf;
}

void write_binary(const std::filesystem::path& path, const void* data, size_t len) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot write file: " + path.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!f) throw data_error("short write: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    auto buf = read_binary(path);
    return std::string(buf.begin(), buf.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_binary(path, text.data(), text.size());
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::pair<std::string, std::string>> parse_kv_lines(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw data_error("malformed key=value line: '" + line + "'");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

std::vector<double> parse_csv_doubles(const std::string& s) {
    std::vector<double> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        size_t pos = 0;
        double v;
        try {
            v = std::stod(tok, &pos);
        } catch (const std::exception&) {
            throw data_error("bad numeric value: '" + tok + "'");
        }
        if (pos != tok.size()) throw data_error("bad numeric value: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<int> parse_csv_ints(const std::string& s) {
    std::vector<int> out;
    for (double v : parse_csv_doubles(s)) out.push_back(static_cast<int>(v));
    return out;
}

std::string join_csv(const std::vector<double>& v, int precision) {
    std::ostringstream ss;
    ss.precision(precision);
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) ss << ',';
        ss << v[i];
    }
    return ss.str();
}

std::string join_csv(const std::vector<int>& v) {
    std::ostringstream ss;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) ss << ',';
        ss << v[i];
    }
    return ss.str();
}

} // namespace ctpe::io
