#pragma once

#include <string>
#include <vector>

#include "iclsynth/errors.hpp"

namespace icls {

enum class ColumnKind { Numeric, Categorical };

struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::vector<std::string> categories;  // categorical only, ordered
    bool target = false;
};

struct TableSchema {
    std::vector<ColumnSpec> columns;

    std::size_t n_columns() const { return columns.size(); }
    std::size_t target_index() const;
    void validate() const;
    bool operator==(const TableSchema& other) const;

    std::string to_json_string() const;
    static TableSchema from_json_string(const std::string& text);
};

// Column-major storage; numeric columns use `num`, categorical columns hold
// indices into the schema's category list.
struct Column {
    std::vector<double> num;
    std::vector<int> cat;
};

struct Table {
    TableSchema schema;
    std::vector<Column> cols;

    std::size_t n_rows() const;
    std::size_t n_cols() const { return schema.columns.size(); }
    void validate() const;

    Table select_rows(const std::vector<std::size_t>& idx) const;
    static Table concat_rows(const Table& a, const Table& b);
};

struct NumericStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

struct ColumnStats {
    std::vector<NumericStats> numeric;             // per column; valid for numeric kinds
    std::vector<std::vector<double>> frequencies;  // per column; valid for categorical kinds
};

// Per-column statistics over the table. Throws DataError naming the column
// for zero-variance numeric columns.
ColumnStats fit_stats(const Table& table);

// RFC-4180 CSV with a header row. Categorical cells must match the schema's
// category list exactly; numeric cells parse as decimal floats.
Table read_csv(const std::string& csv_path, const TableSchema& schema);
void write_csv(const Table& table, const std::string& csv_path);
TableSchema read_schema(const std::string& json_path);
void write_schema(const TableSchema& schema, const std::string& json_path);

// Shortest round-trip decimal rendering used for all CSV numerics.
std::string format_double(double v);

}  // namespace icls
