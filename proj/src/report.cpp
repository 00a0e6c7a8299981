#include "rowflow/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>

#include "rowflow/errors.hpp"

namespace rowflow {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_g10(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string timestamped_filename(const std::string& command, const std::string& ext) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", &tm);
    return command + "_" + stamp + "." + ext;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw RunError(dir + ": cannot create directory: " + ec.message());
}

CsvFile::CsvFile(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw RunError(path + ": cannot write");
}

void CsvFile::line(const std::string& s) { out_ << s << '\n'; }

void CsvFile::row(const std::vector<std::string>& cells) {
    std::string joined;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) joined += ',';
        joined += cells[i];
    }
    line(joined);
}

void write_manifest(const std::string& dir, std::uint64_t config_hash, std::uint64_t seed,
                    const std::string& command, const std::vector<std::string>& files) {
    const std::string path = dir + "/manifest.txt";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError(path + ": cannot write");
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
    out << "config_hash=" << hash << '\n';
    out << "seed=" << seed << '\n';
    out << "command=" << command << '\n';
    out << "files=";
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (i) out << ';';
        out << files[i];
    }
    out << '\n';
}

} // namespace rowflow
