#include "rowflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rowflow/errors.hpp"
#include "rowflow/rng.hpp"

namespace rowflow {

Dataset make_blob_dataset(int n_samples, int classes, Shape3 shape, std::uint64_t seed,
                          double separation, double noise) {
    if (n_samples <= 0 || classes <= 0) throw ConfigError("blob dataset: sizes must be positive");
    Rng template_rng(Rng::derive(seed, "blob-templates"));
    std::vector<DenseTensor3> templates;
    templates.reserve(static_cast<std::size_t>(classes));
    for (int k = 0; k < classes; ++k) {
        DenseTensor3 t(shape.c, shape.h, shape.w);
        for (auto& v : t.data) v = separation * template_rng.next_normal();
        templates.push_back(std::move(t));
    }

    Rng sample_rng(Rng::derive(seed, "blob-samples"));
    Dataset d;
    d.images.reserve(static_cast<std::size_t>(n_samples));
    d.labels.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        const int label = i % classes;
        DenseTensor3 img = templates[static_cast<std::size_t>(label)];
        for (auto& v : img.data) v += noise * sample_rng.next_normal();
        d.images.push_back(std::move(img));
        d.labels.push_back(label);
    }
    return d;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(path + ": cannot open");
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>()};
    return bytes;
}

std::uint32_t read_u32_be(const std::vector<unsigned char>& b, std::size_t off,
                          const std::string& path) {
    if (off + 4 > b.size())
        throw ConfigError(path + ": truncated at byte offset " + std::to_string(off));
    return (static_cast<std::uint32_t>(b[off]) << 24) |
           (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

void write_u32_be(std::ofstream& f, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                           static_cast<char>(v >> 8), static_cast<char>(v)};
    f.write(bytes, 4);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = read_file(images_path);
    const std::uint32_t imagic = read_u32_be(ib, 0, images_path);
    if (imagic != kImagesMagic)
        throw ConfigError(images_path + ": bad magic at byte offset 0");
    const std::uint32_t n = read_u32_be(ib, 4, images_path);
    const std::uint32_t rows = read_u32_be(ib, 8, images_path);
    const std::uint32_t cols = read_u32_be(ib, 12, images_path);
    const std::size_t need = 16 + static_cast<std::size_t>(n) * rows * cols;
    if (ib.size() < need)
        throw ConfigError(images_path + ": truncated at byte offset " + std::to_string(ib.size()));

    const auto lb = read_file(labels_path);
    const std::uint32_t lmagic = read_u32_be(lb, 0, labels_path);
    if (lmagic != kLabelsMagic)
        throw ConfigError(labels_path + ": bad magic at byte offset 0");
    const std::uint32_t ln = read_u32_be(lb, 4, labels_path);
    if (ln != n)
        throw ConfigError(labels_path + ": label count " + std::to_string(ln) +
                          " does not match image count " + std::to_string(n));
    if (lb.size() < 8 + static_cast<std::size_t>(n))
        throw ConfigError(labels_path + ": truncated at byte offset " + std::to_string(lb.size()));

    Dataset d;
    d.images.reserve(n);
    d.labels.reserve(n);
    std::size_t off = 16;
    for (std::uint32_t i = 0; i < n; ++i) {
        DenseTensor3 img(1, static_cast<int>(rows), static_cast<int>(cols));
        for (auto& v : img.data) v = static_cast<double>(ib[off++]) / 255.0;
        d.images.push_back(std::move(img));
        d.labels.push_back(static_cast<int>(lb[8 + i]));
    }
    return d;
}

void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
    if (d.images.empty()) throw RunError("save_idx: empty dataset");
    const DenseTensor3& first = d.images.front();
    if (first.channels != 1) throw RunError("save_idx: only single-channel images");

    std::ofstream imf(images_path, std::ios::binary);
    if (!imf) throw RunError(images_path + ": cannot write");
    write_u32_be(imf, kImagesMagic);
    write_u32_be(imf, static_cast<std::uint32_t>(d.images.size()));
    write_u32_be(imf, static_cast<std::uint32_t>(first.height));
    write_u32_be(imf, static_cast<std::uint32_t>(first.width));
    for (const auto& img : d.images) {
        for (double v : img.data) {
            const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
            const char b = static_cast<char>(static_cast<unsigned char>(q));
            imf.write(&b, 1);
        }
    }

    std::ofstream lf(labels_path, std::ios::binary);
    if (!lf) throw RunError(labels_path + ": cannot write");
    write_u32_be(lf, kLabelsMagic);
    write_u32_be(lf, static_cast<std::uint32_t>(d.labels.size()));
    for (int l : d.labels) {
        const char b = static_cast<char>(static_cast<unsigned char>(l));
        lf.write(&b, 1);
    }
}

} // namespace rowflow
