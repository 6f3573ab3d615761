#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaedef/tensor.hpp"

namespace vaedef {

// Image dataset: N flattened images with pixels in [0,1] plus integer labels.
struct Dataset {
    Tensor images;  // (N, D)
    std::vector<int> labels;
    int class_count = 0;
    std::size_t image_side = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return images.rank() == 2 ? images.dim(1) : 0; }
    Tensor image(std::size_t i) const;
    void validate() const;  // pixel range + label range invariants
};

// IDX ingestion (big-endian magic 0x803 for images, 0x801 for labels).
// 28x28 inputs are reduced to 14x14 by 2x2 mean pooling when downsample is set.
Dataset load_idx(const std::string& image_path, const std::string& label_path,
                 bool downsample_28_to_14 = true);

// Debug re-serialization of the payload region (images as bytes, labels).
void save_idx(const Dataset& ds, const std::string& image_path,
              const std::string& label_path);

// Deterministic procedural glyph classes (oriented bars / blobs with
// per-sample jitter); the no-download substitute for MNIST-family data.
Dataset generate_synthetic(std::uint64_t seed, std::size_t n_per_class,
                           int class_count, std::size_t image_side);

Dataset stratified_sample(const Dataset& ds, std::size_t per_class, std::uint64_t seed);

// Deterministic per-epoch shuffle into batches of row indices; last partial
// batch included.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);
Tensor gather_rows(const Tensor& images, const std::vector<std::size_t>& rows);

}  // namespace vaedef
