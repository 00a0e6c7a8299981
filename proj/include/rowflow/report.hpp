#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace rowflow {

/* Shortest round-trippable formatting; all numeric CSV cells go through
 * these so identical runs produce identical bytes. */
std::string fmt_g17(double v);
std::string fmt_g10(double v);

/* <command>_<UTC stamp>.<ext>; the stamp appears only in filenames, never
 * inside file content. */
std::string timestamped_filename(const std::string& command, const std::string& ext);

void ensure_dir(const std::string& dir);

class CsvFile {
public:
    explicit CsvFile(const std::string& path);
    void line(const std::string& s);
    void row(const std::vector<std::string>& cells);
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
};

void write_manifest(const std::string& dir, std::uint64_t config_hash, std::uint64_t seed,
                    const std::string& command, const std::vector<std::string>& files);

} // namespace rowflow
