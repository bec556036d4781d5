#include "lgcp/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lgcp/errors.hpp"

namespace lgcp {

namespace {

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(strip(field));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_real(const std::string& s, const std::string& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw InputError(path + ":" + std::to_string(lineno) + ": cannot parse '" + s + "' as a number");
    }
}

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return in;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

// %.17g keeps doubles round-trippable and the output byte-stable
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

PointPattern read_pattern_csv(const std::string& path) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw InputError(path + ": empty file");
    ++lineno;
    auto header = split_csv(line);
    if (header.size() < 2 || header[0] != "x" || header[1] != "y")
        throw InputError(path + ": expected header 'x,y'");
    PointPattern pattern;
    while (std::getline(in, line)) {
        ++lineno;
        if (strip(line).empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() < 2)
            throw InputError(path + ":" + std::to_string(lineno) + ": expected two fields");
        pattern.x.push_back(parse_real(fields[0], path, lineno));
        pattern.y.push_back(parse_real(fields[1], path, lineno));
    }
    return pattern;
}

void write_pattern_csv(const std::string& path, const PointPattern& pattern) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << "x,y\n";
    for (std::size_t i = 0; i < pattern.size(); ++i)
        out << fmt(pattern.x[i]) << "," << fmt(pattern.y[i]) << "\n";
}

Raster read_raster_csv(const std::string& path) {
    std::ifstream in = open_or_throw(path);
    Raster raster;
    std::string line;
    std::size_t lineno = 0;
    const char* keys[6] = {"nrow", "ncol", "xmin", "xmax", "ymin", "ymax"};
    double header[6] = {0, 0, 0, 0, 0, 0};
    for (int k = 0; k < 6; ++k) {
        if (!std::getline(in, line)) throw InputError(path + ": truncated header");
        ++lineno;
        std::stringstream ss(strip(line));
        std::string key;
        ss >> key;
        if (key != keys[k])
            throw InputError(path + ":" + std::to_string(lineno) + ": expected header line '" +
                             keys[k] + "', got '" + key + "'");
        std::string value;
        ss >> value;
        header[k] = parse_real(value, path, lineno);
    }
    raster.window.nrow = static_cast<int>(header[0]);
    raster.window.ncol = static_cast<int>(header[1]);
    raster.window.xmin = header[2];
    raster.window.xmax = header[3];
    raster.window.ymin = header[4];
    raster.window.ymax = header[5];
    raster.window.validate();

    const int n = raster.window.cells();
    raster.values.resize(n);
    int got = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::stringstream ss(strip(line));
        std::string tok;
        while (ss >> tok) {
            if (got >= n)
                throw InputError(path + ":" + std::to_string(lineno) + ": more values than cells");
            raster.values[got++] = parse_real(tok, path, lineno);
        }
    }
    if (got != n)
        throw InputError(path + ": expected " + std::to_string(n) + " values, got " + std::to_string(got));
    return raster;
}

void write_raster_csv(const std::string& path, const Raster& raster) {
    raster.window.validate();
    if (raster.values.size() != raster.window.cells())
        throw InputError("raster values do not match the window cell count");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << "nrow " << raster.window.nrow << "\n";
    out << "ncol " << raster.window.ncol << "\n";
    out << "xmin " << fmt(raster.window.xmin) << "\n";
    out << "xmax " << fmt(raster.window.xmax) << "\n";
    out << "ymin " << fmt(raster.window.ymin) << "\n";
    out << "ymax " << fmt(raster.window.ymax) << "\n";
    for (int r = 0; r < raster.window.nrow; ++r) {
        for (int c = 0; c < raster.window.ncol; ++c) {
            if (c) out << " ";
            out << fmt(raster.values[r * raster.window.ncol + c]);
        }
        out << "\n";
    }
}

std::pair<std::vector<std::string>, Eigen::MatrixXd> read_wide_csv(const std::string& path) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw InputError(path + ": empty file");
    ++lineno;
    auto header = split_csv(line);
    if (header.size() < 2 || header[0] != "cell")
        throw InputError(path + ": expected header 'cell,<name>,...'");
    std::vector<std::string> names(header.begin() + 1, header.end());

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (strip(line).empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != header.size())
            throw InputError(path + ":" + std::to_string(lineno) + ": wrong field count");
        const double cell = parse_real(fields[0], path, lineno);
        if (static_cast<std::size_t>(cell) != rows.size())
            throw InputError(path + ":" + std::to_string(lineno) +
                             ": cell indices must run 0..n-1 in order");
        std::vector<double> row;
        for (std::size_t j = 1; j < fields.size(); ++j) row.push_back(parse_real(fields[j], path, lineno));
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd values(static_cast<int>(rows.size()), static_cast<int>(names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < names.size(); ++j)
            values(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    return {names, values};
}

void write_wide_csv(const std::string& path, const std::vector<std::string>& names,
                    const Eigen::MatrixXd& values) {
    if (static_cast<int>(names.size()) != values.cols())
        throw InputError("wide CSV name count does not match column count");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << "cell";
    for (const auto& name : names) out << "," << name;
    out << "\n";
    for (int i = 0; i < values.rows(); ++i) {
        out << i;
        for (int j = 0; j < values.cols(); ++j) out << "," << fmt(values(i, j));
        out << "\n";
    }
}

CovariateStack stack_rasters(const std::vector<std::string>& names,
                             const std::vector<Raster>& rasters, const Window& window) {
    if (names.size() != rasters.size())
        throw InputError("covariate name count does not match raster count");
    if (rasters.empty()) throw InputError("no covariate rasters supplied");
    CovariateStack stack;
    stack.names = names;
    stack.values.resize(window.cells(), static_cast<int>(rasters.size()));
    for (std::size_t j = 0; j < rasters.size(); ++j) {
        const Window& w = rasters[j].window;
        const bool same = w.nrow == window.nrow && w.ncol == window.ncol &&
                          std::abs(w.xmin - window.xmin) < 1e-9 && std::abs(w.xmax - window.xmax) < 1e-9 &&
                          std::abs(w.ymin - window.ymin) < 1e-9 && std::abs(w.ymax - window.ymax) < 1e-9;
        if (!same)
            throw InputError("covariate '" + names[j] + "' is not aligned to the analysis window");
        stack.values.col(static_cast<int>(j)) = rasters[j].values;
    }
    return stack;
}

}
