#include "macl/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "macl/error.hpp"

namespace macl::io {

namespace fs = std::filesystem;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

Csv::Csv(std::vector<std::string> header) : header_(std::move(header)) {}

Csv& Csv::row(std::vector<std::string> cells) {
    if (cells.size() != header_.size())
        throw DimensionError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header_.size()));
    rows_.push_back(std::move(cells));
    return *this;
}

namespace {

void join(std::ostringstream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::string Csv::str() const {
    std::ostringstream os;
    join(os, header_);
    for (const auto& r : rows_) join(os, r);
    for (const auto& f : footer_) os << "# " << f << '\n';
    return os.str();
}

void write_matrix(const fs::path& path, const LabeledMatrix& m, const std::string& corner) {
    if (m.values.size() != m.rows() * m.cols()) throw DimensionError("matrix size does not match its labels");
    std::vector<std::string> header = {corner};
    header.insert(header.end(), m.col_names.begin(), m.col_names.end());
    Csv csv(header);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::vector<std::string> cells = {m.row_names[r]};
        for (std::size_t c = 0; c < m.cols(); ++c) cells.push_back(fmt(m.values[r * m.cols() + c]));
        csv.row(std::move(cells));
    }
    csv.save(path);
}

LabeledMatrix read_matrix(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    LabeledMatrix m;
    std::string line;
    std::size_t lineno = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cells = split(line);
        if (header) {
            if (cells.size() < 2) throw FormatError(path.string() + ": header needs at least one column");
            m.col_names.assign(cells.begin() + 1, cells.end());
            header = false;
            continue;
        }
        if (cells.size() != m.cols() + 1)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(m.cols() + 1) + " cells, found " + std::to_string(cells.size()));
        m.row_names.push_back(cells[0]);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            try {
                std::size_t used = 0;
                m.values.push_back(std::stod(cells[c], &used));
                if (used != cells[c].size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": '" + cells[c] +
                                  "' is not a number");
            }
        }
    }
    if (header) throw FormatError(path.string() + ": empty matrix file");
    return m;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

Manifest::Manifest(std::string command, nlohmann::ordered_json config) {
    body_["tool"] = "macl";
    body_["version"] = "0.1.0";
    body_["command"] = std::move(command);
    body_["config"] = std::move(config);
    body_["results"] = nlohmann::ordered_json::object();
}

void Manifest::add_file(const fs::path& path) { files_.push_back(path); }

void Manifest::write(const fs::path& root, double wall_seconds) {
    body_["wall_clock_seconds"] = wall_seconds;
    auto& inv = body_["files"] = nlohmann::ordered_json::array();
    for (const auto& f : files_) {
        inv.push_back({{"path", fs::relative(f, root).generic_string()},
                       {"bytes", fs::file_size(f)},
                       {"sha256", sha256_file(f)}});
    }
    write_atomic(root / "manifest.json", body_.dump(2) + "\n");
}

}  // namespace macl::io
