#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace macl::io {

/// Shortest round-trippable-enough form used in every CSV: printf "%.9g".
std::string fmt(double v);

/// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

class Csv {
public:
    explicit Csv(std::vector<std::string> header);

    Csv& row(std::vector<std::string> cells);
    void comment(const std::string& line) { footer_.push_back(line); }
    std::string str() const;
    void save(const std::filesystem::path& path) const { write_atomic(path, str()); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::string> footer_;
};

/// Square-or-not score table with a header row and a name column.
struct LabeledMatrix {
    std::vector<std::string> row_names;
    std::vector<std::string> col_names;
    std::vector<double> values;  // row-major

    std::size_t rows() const { return row_names.size(); }
    std::size_t cols() const { return col_names.size(); }
};

void write_matrix(const std::filesystem::path& path, const LabeledMatrix& m, const std::string& corner = "mode");
LabeledMatrix read_matrix(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Run manifest: everything the run reports plus an inventory of the files
/// under `root` it produced, each with size and checksum.
class Manifest {
public:
    Manifest(std::string command, nlohmann::ordered_json config);

    nlohmann::ordered_json& results() { return body_["results"]; }
    void add_file(const std::filesystem::path& path);
    void write(const std::filesystem::path& root, double wall_seconds);

private:
    nlohmann::ordered_json body_;
    std::vector<std::filesystem::path> files_;
};

}  // namespace macl::io
