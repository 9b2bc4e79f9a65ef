#pragma once

// Line-oriented "key = value" configuration with namespaced keys
// (schedule.*, model.*, loss.*, train.*, sampler.*, data.*). Values keep
// their original text; doubles are printed with 17 significant digits so
// tabulated schedules round-trip exactly.

#include <string>
#include <utility>
#include <vector>

namespace dfm {

class Config {
public:
    bool has(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, long long value);
    void set_bool(const std::string& key, bool value);

    std::string get(const std::string& key) const;  // throws if missing
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int_or(const std::string& key, long long fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    std::string serialize() const;
    static Config parse_text(const std::string& text);
    static Config load(const std::string& path);
    void save(const std::string& path) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    const std::string* find(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_double_exact(double v);  // %.17g
std::vector<double> parse_double_list(const std::string& csv);
std::vector<int> parse_int_list(const std::string& csv);

}  // namespace dfm
