#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "entroguard/errors.hpp"

namespace entroguard {

// shortest round-trip decimal for a double; deterministic across runs
inline std::string format_number(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

// Named metric values with experiment provenance, emitted as CSV and a
// markdown summary table.
struct MetricsReport {
    std::string experiment_id;
    std::string config_hash;
    std::uint64_t seed = 0;

    struct Row {
        std::string metric;
        std::string condition;
        double value;
    };
    std::vector<Row> rows;

    void add(const std::string& metric, const std::string& condition, double value) {
        if (!std::isfinite(value)) throw ContractError("non-finite metric value: " + metric);
        rows.push_back({metric, condition, value});
    }

    double get(const std::string& metric, const std::string& condition) const {
        for (const auto& r : rows)
            if (r.metric == metric && r.condition == condition) return r.value;
        throw ContractError("missing report row: " + metric + "/" + condition);
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "# experiment=" << experiment_id << " config_hash=" << config_hash
            << " seed=" << seed << "\n";
        out << "metric,condition,value\n";
        for (const auto& r : rows)
            out << r.metric << ',' << r.condition << ',' << format_number(r.value) << '\n';
        return out.str();
    }

    std::string to_markdown() const {
        std::ostringstream out;
        out << "## " << experiment_id << "\n\n";
        out << "| metric | condition | value |\n|---|---|---|\n";
        for (const auto& r : rows)
            out << "| " << r.metric << " | " << r.condition << " | " << format_number(r.value)
                << " |\n";
        return out.str();
    }

    void write(const std::string& csv_path, const std::string& md_path = "") const {
        std::ofstream csv(csv_path);
        if (!csv) throw ConfigError("cannot write report: " + csv_path);
        csv << to_csv();
        if (!md_path.empty()) {
            std::ofstream md(md_path);
            md << to_markdown();
        }
    }
};

}  // namespace entroguard
