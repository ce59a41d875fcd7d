#include "iclsynth/table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace icls {

using nlohmann::json;

std::size_t TableSchema::target_index() const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i].target) return i;
    }
    throw DataError("schema: no target column");
}

void TableSchema::validate() const {
    if (columns.empty()) throw DataError("schema: no columns");
    std::unordered_set<std::string> names;
    std::size_t targets = 0;
    for (const ColumnSpec& c : columns) {
        if (!names.insert(c.name).second) {
            throw DataError("schema: duplicate column name '" + c.name + "'");
        }
        if (c.target) ++targets;
        if (c.kind == ColumnKind::Categorical) {
            if (c.categories.size() < 2) {
                throw DataError("schema: categorical column '" + c.name +
                                "' needs at least 2 categories");
            }
            std::unordered_set<std::string> cats(c.categories.begin(), c.categories.end());
            if (cats.size() != c.categories.size()) {
                throw DataError("schema: duplicate categories in column '" + c.name + "'");
            }
        } else if (!c.categories.empty()) {
            throw DataError("schema: numeric column '" + c.name + "' lists categories");
        }
    }
    if (targets != 1) {
        throw DataError("schema: expected exactly one target column, found " +
                        std::to_string(targets));
    }
}

bool TableSchema::operator==(const TableSchema& other) const {
    if (columns.size() != other.columns.size()) return false;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const ColumnSpec& a = columns[i];
        const ColumnSpec& b = other.columns[i];
        if (a.name != b.name || a.kind != b.kind || a.target != b.target ||
            a.categories != b.categories) {
            return false;
        }
    }
    return true;
}

std::string TableSchema::to_json_string() const {
    json cols = json::array();
    for (const ColumnSpec& c : columns) {
        json jc;
        jc["name"] = c.name;
        jc["kind"] = c.kind == ColumnKind::Numeric ? "numeric" : "categorical";
        if (c.kind == ColumnKind::Categorical) jc["categories"] = c.categories;
        if (c.target) jc["target"] = true;
        cols.push_back(std::move(jc));
    }
    json root;
    root["columns"] = std::move(cols);
    return root.dump(2);
}

TableSchema TableSchema::from_json_string(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("schema: invalid JSON: ") + e.what());
    }
    if (!root.contains("columns") || !root["columns"].is_array()) {
        throw DataError("schema: missing 'columns' array");
    }
    TableSchema schema;
    try {
        for (const json& jc : root["columns"]) {
            ColumnSpec c;
            c.name = jc.at("name").get<std::string>();
            const std::string kind = jc.at("kind").get<std::string>();
            if (kind == "numeric") {
                c.kind = ColumnKind::Numeric;
            } else if (kind == "categorical") {
                c.kind = ColumnKind::Categorical;
                c.categories = jc.at("categories").get<std::vector<std::string>>();
            } else {
                throw DataError("schema: unknown column kind '" + kind + "'");
            }
            c.target = jc.value("target", false);
            schema.columns.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("schema: ") + e.what());
    }
    schema.validate();
    return schema;
}

std::size_t Table::n_rows() const {
    if (cols.empty()) return 0;
    const Column& c = cols[0];
    return schema.columns[0].kind == ColumnKind::Numeric ? c.num.size() : c.cat.size();
}

void Table::validate() const {
    schema.validate();
    if (cols.size() != schema.columns.size()) {
        throw DataError("table: column count does not match schema");
    }
    const std::size_t n = n_rows();
    if (n < 1) throw DataError("table: at least one row required");
    for (std::size_t f = 0; f < cols.size(); ++f) {
        const ColumnSpec& spec = schema.columns[f];
        if (spec.kind == ColumnKind::Numeric) {
            if (cols[f].num.size() != n) {
                throw DataError("table: ragged column '" + spec.name + "'");
            }
            for (double v : cols[f].num) {
                if (!std::isfinite(v)) {
                    throw DataError("table: non-finite value in column '" + spec.name + "'");
                }
            }
        } else {
            if (cols[f].cat.size() != n) {
                throw DataError("table: ragged column '" + spec.name + "'");
            }
            for (int v : cols[f].cat) {
                if (v < 0 || static_cast<std::size_t>(v) >= spec.categories.size()) {
                    throw DataError("table: category index out of range in column '" +
                                    spec.name + "'");
                }
            }
        }
    }
}

Table Table::select_rows(const std::vector<std::size_t>& idx) const {
    Table out;
    out.schema = schema;
    out.cols.resize(cols.size());
    for (std::size_t f = 0; f < cols.size(); ++f) {
        if (schema.columns[f].kind == ColumnKind::Numeric) {
            out.cols[f].num.reserve(idx.size());
            for (std::size_t i : idx) out.cols[f].num.push_back(cols[f].num.at(i));
        } else {
            out.cols[f].cat.reserve(idx.size());
            for (std::size_t i : idx) out.cols[f].cat.push_back(cols[f].cat.at(i));
        }
    }
    return out;
}

Table Table::concat_rows(const Table& a, const Table& b) {
    if (!(a.schema == b.schema)) throw DataError("concat_rows: schema mismatch");
    Table out = a;
    for (std::size_t f = 0; f < out.cols.size(); ++f) {
        if (a.schema.columns[f].kind == ColumnKind::Numeric) {
            out.cols[f].num.insert(out.cols[f].num.end(), b.cols[f].num.begin(),
                                   b.cols[f].num.end());
        } else {
            out.cols[f].cat.insert(out.cols[f].cat.end(), b.cols[f].cat.begin(),
                                   b.cols[f].cat.end());
        }
    }
    return out;
}

ColumnStats fit_stats(const Table& table) {
    table.validate();
    const std::size_t n = table.n_rows();
    ColumnStats stats;
    stats.numeric.resize(table.n_cols());
    stats.frequencies.resize(table.n_cols());
    for (std::size_t f = 0; f < table.n_cols(); ++f) {
        const ColumnSpec& spec = table.schema.columns[f];
        if (spec.kind == ColumnKind::Numeric) {
            const auto& v = table.cols[f].num;
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(n);
            if (var <= 0.0) {
                throw DataError("fit_stats: numeric column '" + spec.name +
                                "' has zero variance");
            }
            stats.numeric[f] = {mean, std::sqrt(var)};
        } else {
            std::vector<double> freq(spec.categories.size(), 0.0);
            for (int c : table.cols[f].cat) freq[static_cast<std::size_t>(c)] += 1.0;
            for (double& x : freq) x /= static_cast<double>(n);
            stats.frequencies[f] = std::move(freq);
        }
    }
    return stats;
}

namespace {

bool needs_quoting(const std::string& field) {
    return field.find_first_of(",\"\r\n") != std::string::npos;
}

std::string quote_field(const std::string& field) {
    if (!needs_quoting(field)) return field;
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

// Splits a whole file into records of fields, honoring quoted fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool any_content = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += ch;
            }
            continue;
        }
        switch (ch) {
            case '"':
                in_quotes = true;
                any_content = true;
                break;
            case ',':
                record.push_back(std::move(field));
                field.clear();
                any_content = true;
                break;
            case '\r':
                break;
            case '\n':
                if (any_content) {
                    record.push_back(std::move(field));
                    field.clear();
                    records.push_back(std::move(record));
                    record.clear();
                    any_content = false;
                }
                break;
            default:
                field += ch;
                any_content = true;
                break;
        }
    }
    if (any_content) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("format_double: conversion failed");
    return std::string(buf, ptr);
}

Table read_csv(const std::string& csv_path, const TableSchema& schema) {
    schema.validate();
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw DataError("read_csv: cannot open '" + csv_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const auto records = parse_csv(ss.str());
    if (records.empty()) throw DataError("read_csv: empty file '" + csv_path + "'");

    const auto& header = records[0];
    if (header.size() != schema.columns.size()) {
        throw DataError("read_csv: header has " + std::to_string(header.size()) +
                        " columns, schema expects " + std::to_string(schema.columns.size()));
    }
    for (std::size_t f = 0; f < header.size(); ++f) {
        if (header[f] != schema.columns[f].name) {
            throw DataError("read_csv: header column '" + header[f] +
                            "' does not match schema '" + schema.columns[f].name + "'");
        }
    }

    Table table;
    table.schema = schema;
    table.cols.resize(schema.columns.size());
    std::vector<std::unordered_map<std::string, int>> cat_index(schema.columns.size());
    for (std::size_t f = 0; f < schema.columns.size(); ++f) {
        const ColumnSpec& spec = schema.columns[f];
        for (std::size_t c = 0; c < spec.categories.size(); ++c) {
            cat_index[f][spec.categories[c]] = static_cast<int>(c);
        }
    }

    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != schema.columns.size()) {
            throw DataError("read_csv: row " + std::to_string(r) + " has " +
                            std::to_string(rec.size()) + " fields");
        }
        for (std::size_t f = 0; f < rec.size(); ++f) {
            const ColumnSpec& spec = schema.columns[f];
            if (spec.kind == ColumnKind::Numeric) {
                double v = 0.0;
                const char* begin = rec[f].data();
                const char* end = begin + rec[f].size();
                auto [ptr, ec] = std::from_chars(begin, end, v);
                if (ec != std::errc() || ptr != end) {
                    throw DataError("read_csv: bad numeric value '" + rec[f] + "' in column '" +
                                    spec.name + "' row " + std::to_string(r));
                }
                table.cols[f].num.push_back(v);
            } else {
                auto it = cat_index[f].find(rec[f]);
                if (it == cat_index[f].end()) {
                    throw DataError("read_csv: unknown category '" + rec[f] + "' in column '" +
                                    spec.name + "' row " + std::to_string(r));
                }
                table.cols[f].cat.push_back(it->second);
            }
        }
    }
    table.validate();
    return table;
}

void write_csv(const Table& table, const std::string& csv_path) {
    table.validate();
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("write_csv: cannot open '" + csv_path + "'");
    for (std::size_t f = 0; f < table.n_cols(); ++f) {
        if (f) out << ',';
        out << quote_field(table.schema.columns[f].name);
    }
    out << '\n';
    const std::size_t n = table.n_rows();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t f = 0; f < table.n_cols(); ++f) {
            if (f) out << ',';
            const ColumnSpec& spec = table.schema.columns[f];
            if (spec.kind == ColumnKind::Numeric) {
                out << format_double(table.cols[f].num[r]);
            } else {
                out << quote_field(
                    spec.categories[static_cast<std::size_t>(table.cols[f].cat[r])]);
            }
        }
        out << '\n';
    }
}

TableSchema read_schema(const std::string& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw DataError("read_schema: cannot open '" + json_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return TableSchema::from_json_string(ss.str());
}

void write_schema(const TableSchema& schema, const std::string& json_path) {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw DataError("write_schema: cannot open '" + json_path + "'");
    out << schema.to_json_string() << '\n';
}

}  // namespace icls
