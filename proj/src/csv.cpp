#include "nvcavity/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace nvcavity {

namespace {

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

} // namespace

void write_csv_atomic(const std::filesystem::path& path, const std::string& header,
                      const std::vector<std::vector<double>>& rows,
                      const std::vector<std::string>& comment_lines) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        for (const auto& line : comment_lines) out << "# " << line << "\n";
        out << header << "\n";
        for (const auto& row : rows) {
            for (size_t k = 0; k < row.size(); ++k) {
                if (k) out << ",";
                out << format_number(row[k]);
            }
            out << "\n";
        }
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

ODMRSpectrum read_spectrum_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    bool header_seen = false;
    ODMRSpectrum spec;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "frequency_ghz,fluorescence")
                throw Error("unexpected spectrum header: " + line);
            header_seen = true;
            continue;
        }
        std::istringstream ss(line);
        double f_ghz = 0.0, flu = 0.0;
        char comma = 0;
        if (!(ss >> f_ghz >> comma >> flu) || comma != ',')
            throw Error("malformed spectrum row: " + line);
        spec.frequencies.push_back(f_ghz * 1e9);
        spec.fluorescence.push_back(flu);
    }
    if (!header_seen) throw Error("spectrum file has no header: " + path.string());
    for (size_t k = 0; k + 1 < spec.frequencies.size(); ++k)
        if (!(spec.frequencies[k] < spec.frequencies[k + 1]))
            throw Error("spectrum frequencies must be strictly increasing");
    return spec;
}

} // namespace nvcavity
