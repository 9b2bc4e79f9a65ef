#include "dfm/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dfm {

std::string format_double_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::strtod(item.c_str(), nullptr));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        out.push_back(static_cast<int>(std::strtol(item.c_str(), nullptr, 10)));
    }
    return out;
}

const std::string* Config::find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return &v;
    return nullptr;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

void Config::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

void Config::set_double(const std::string& key, double value) {
    set(key, format_double_exact(value));
}
void Config::set_int(const std::string& key, long long value) { set(key, std::to_string(value)); }
void Config::set_bool(const std::string& key, bool value) { set(key, value ? "true" : "false"); }

std::string Config::get(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw std::runtime_error("config: missing key " + key);
    return *v;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

double Config::get_double(const std::string& key) const {
    return std::strtod(get(key).c_str(), nullptr);
}
double Config::get_double_or(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? std::strtod(v->c_str(), nullptr) : fallback;
}
long long Config::get_int(const std::string& key) const {
    return std::strtoll(get(key).c_str(), nullptr, 10);
}
long long Config::get_int_or(const std::string& key, long long fallback) const {
    const std::string* v = find(key);
    return v ? std::strtoll(v->c_str(), nullptr, 10) : fallback;
}
bool Config::get_bool_or(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    return *v == "true" || *v == "1" || *v == "yes" || *v == "on";
}

std::string Config::serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
    return os.str();
}

Config Config::parse_text(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!key.empty()) cfg.set(key, val);
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

void Config::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << serialize();
}

}  // namespace dfm
