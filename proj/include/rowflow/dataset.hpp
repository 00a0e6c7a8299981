#pragma once

#include <cstdint>
#include <string>

#include "rowflow/trainer.hpp"

namespace rowflow {

/* Synthetic classification set: each class gets a fixed template drawn
 * once from the seed, samples are the template plus pixel noise. Labels
 * cycle through the classes, so any prefix is nearly balanced. */
Dataset make_blob_dataset(int n_samples, int classes, Shape3 shape, std::uint64_t seed,
                          double separation = 1.5, double noise = 0.6);

/* Big-endian IDX pair (images magic 0x803, labels 0x801). Pixels are
 * bytes and are mapped to [0,1] on load; save quantizes back. Malformed
 * files are reported with the failing byte offset. */
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

} // namespace rowflow
