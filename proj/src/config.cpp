#include "fedlec/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fedlec {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void fail(const std::string& name, int line, const std::string& msg) {
    throw ConfigError(name + ":" + std::to_string(line) + ": " + msg);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<int> parse_int_list(const std::string& value, const std::string& name, int line) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) fail(name, line, "empty entry in integer list");
        int v = 0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || ptr != item.data() + item.size()) {
            fail(name, line, "expected integer list entry, got \"" + item + "\"");
        }
        out.push_back(v);
    }
    if (out.empty()) fail(name, line, "empty integer list");
    return out;
}

std::string join_int_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

struct Field {
    std::function<void(ExperimentConfig&, const std::string& value, const std::string& name,
                       int line)>
        set;
    std::function<std::string(const ExperimentConfig&)> get;
};

void expect_quoted(const std::string& value, const std::string& name, int line) {
    if (value.size() < 2 || value.front() != '"' || value.back() != '"') {
        fail(name, line, "expected a quoted string value");
    }
}

std::map<std::string, Field> field_table() {
    std::map<std::string, Field> t;
    auto string_field = [&t](const std::string& key, std::string ExperimentConfig::* member) {
        t[key] = {[member](ExperimentConfig& c, const std::string& v, const std::string& n,
                           int line) {
                      expect_quoted(v, n, line);
                      c.*member = v.substr(1, v.size() - 2);
                  },
                  [member](const ExperimentConfig& c) { return "\"" + c.*member + "\""; }};
    };
    auto int_field = [&t](const std::string& key, int ExperimentConfig::* member) {
        t[key] = {[member, key](ExperimentConfig& c, const std::string& v, const std::string& n,
                                int line) {
                      int value = 0;
                      auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
                      if (ec != std::errc() || ptr != v.data() + v.size()) {
                          fail(n, line, "expected integer for " + key + ", got \"" + v + "\"");
                      }
                      c.*member = value;
                  },
                  [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
    };
    auto double_field = [&t](const std::string& key, double ExperimentConfig::* member) {
        t[key] = {[member, key](ExperimentConfig& c, const std::string& v, const std::string& n,
                                int line) {
                      try {
                          std::size_t used = 0;
                          c.*member = std::stod(v, &used);
                          if (used != v.size()) throw std::invalid_argument(v);
                      } catch (const std::exception&) {
                          fail(n, line, "expected number for " + key + ", got \"" + v + "\"");
                      }
                  },
                  [member](const ExperimentConfig& c) { return format_double(c.*member); }};
    };
    auto bool_field = [&t](const std::string& key, bool ExperimentConfig::* member) {
        t[key] = {[member, key](ExperimentConfig& c, const std::string& v, const std::string& n,
                                int line) {
                      if (v == "true") {
                          c.*member = true;
                      } else if (v == "false") {
                          c.*member = false;
                      } else {
                          fail(n, line, "expected true/false for " + key + ", got \"" + v + "\"");
                      }
                  },
                  [member](const ExperimentConfig& c) {
                      return (c.*member) ? "true" : "false";
                  }};
    };

    string_field("dataset", &ExperimentConfig::dataset);
    int_field("blob_classes", &ExperimentConfig::blob_classes);
    int_field("blob_per_class", &ExperimentConfig::blob_per_class);
    int_field("blob_dim", &ExperimentConfig::blob_dim);
    double_field("blob_spread", &ExperimentConfig::blob_spread);
    int_field("blob_test_per_class", &ExperimentConfig::blob_test_per_class);
    string_field("idx_train_images", &ExperimentConfig::idx_train_images);
    string_field("idx_train_labels", &ExperimentConfig::idx_train_labels);
    string_field("idx_test_images", &ExperimentConfig::idx_test_images);
    string_field("idx_test_labels", &ExperimentConfig::idx_test_labels);
    string_field("partition", &ExperimentConfig::partition);
    double_field("alpha", &ExperimentConfig::alpha);
    int_field("cnum", &ExperimentConfig::cnum);
    int_field("n_clients", &ExperimentConfig::n_clients);
    int_field("rounds", &ExperimentConfig::rounds);
    int_field("local_epochs", &ExperimentConfig::local_epochs);
    double_field("participation_rate", &ExperimentConfig::participation_rate);
    int_field("time_steps", &ExperimentConfig::time_steps);
    double_field("tau", &ExperimentConfig::tau);
    double_field("v_threshold", &ExperimentConfig::v_threshold);
    double_field("v_reset", &ExperimentConfig::v_reset);
    bool_field("positive_leak", &ExperimentConfig::positive_leak);
    double_field("lr", &ExperimentConfig::lr);
    int_field("batch_size", &ExperimentConfig::batch_size);
    string_field("algorithm", &ExperimentConfig::algorithm);
    double_field("theta", &ExperimentConfig::theta);
    double_field("lambda", &ExperimentConfig::lambda);
    double_field("mu", &ExperimentConfig::mu);

    t["hidden"] = {[](ExperimentConfig& c, const std::string& v, const std::string& n, int line) {
                       expect_quoted(v, n, line);
                       c.hidden = parse_int_list(v.substr(1, v.size() - 2), n, line);
                   },
                   [](const ExperimentConfig& c) { return "\"" + join_int_list(c.hidden) + "\""; }};
    t["seed"] = {[](ExperimentConfig& c, const std::string& v, const std::string& n, int line) {
                     std::uint64_t value = 0;
                     auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
                     if (ec != std::errc() || ptr != v.data() + v.size()) {
                         fail(n, line, "expected unsigned integer for seed, got \"" + v + "\"");
                     }
                     c.seed = value;
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.seed); }};
    return t;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& name) {
    static const std::map<std::string, Field> fields = field_table();
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string stripped = raw;
        // strip comments outside quotes
        bool in_quote = false;
        for (std::size_t i = 0; i < stripped.size(); ++i) {
            if (stripped[i] == '"') in_quote = !in_quote;
            if (stripped[i] == '#' && !in_quote) {
                stripped.resize(i);
                break;
            }
        }
        stripped = trim(stripped);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) fail(name, line, "expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) fail(name, line, "missing key before '='");
        if (value.empty()) fail(name, line, "missing value for " + key);
        auto it = fields.find(key);
        if (it == fields.end()) fail(name, line, "unknown key \"" + key + "\"");
        it->second.set(cfg, value, name, line);
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(name + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    static const std::map<std::string, Field> fields = field_table();
    std::string out;
    for (const auto& [key, field] : fields) {  // std::map iterates sorted
        out += key + " = " + field.get(cfg) + "\n";
    }
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string canon = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace fedlec
