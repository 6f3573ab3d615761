#include "vaedef/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vaedef/rng.hpp"

namespace vaedef {

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated IDX file: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Tensor Dataset::image(std::size_t i) const {
    const std::size_t d = dim();
    Tensor t({d});
    const double* src = images.data() + i * d;
    std::copy(src, src + d, t.data());
    return t;
}

void Dataset::validate() const {
    if (images.rank() != 2 || images.dim(0) != labels.size())
        throw std::runtime_error("dataset: image/label count mismatch");
    for (double v : images.vec())
        if (!(v >= 0.0 && v <= 1.0))
            throw std::runtime_error("dataset: pixel outside [0,1]");
    for (int l : labels)
        if (l < 0 || l >= class_count)
            throw std::runtime_error("dataset: label outside [0, class_count)");
}

Dataset load_idx(const std::string& image_path, const std::string& label_path,
                 bool downsample_28_to_14) {
    std::ifstream imgs(image_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("cannot open " + image_path);
    std::ifstream labs(label_path, std::ios::binary);
    if (!labs) throw std::runtime_error("cannot open " + label_path);

    const std::uint32_t magic_i = read_u32_be(imgs, image_path);
    if (magic_i != 0x803)
        throw std::runtime_error("bad image magic in " + image_path);
    const std::uint32_t n = read_u32_be(imgs, image_path);
    const std::uint32_t rows = read_u32_be(imgs, image_path);
    const std::uint32_t cols = read_u32_be(imgs, image_path);
    if (rows != cols) throw std::runtime_error("non-square IDX images in " + image_path);

    const std::uint32_t magic_l = read_u32_be(labs, label_path);
    if (magic_l != 0x801)
        throw std::runtime_error("bad label magic in " + label_path);
    const std::uint32_t nl = read_u32_be(labs, label_path);
    if (nl != n)
        throw std::runtime_error("image/label count mismatch: " + std::to_string(n) +
                                 " vs " + std::to_string(nl));

    std::vector<unsigned char> raw(std::size_t(n) * rows * cols);
    imgs.read(reinterpret_cast<char*>(raw.data()), raw.size());
    if (!imgs) throw std::runtime_error("truncated IDX file: " + image_path);
    std::vector<unsigned char> lraw(n);
    labs.read(reinterpret_cast<char*>(lraw.data()), lraw.size());
    if (!labs) throw std::runtime_error("truncated IDX file: " + label_path);

    const bool pool = downsample_28_to_14 && rows == 28;
    const std::size_t side = pool ? rows / 2 : rows;
    Dataset ds;
    ds.image_side = side;
    ds.images = Tensor({n, side * side});
    ds.labels.resize(n);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        const unsigned char* im = raw.data() + std::size_t(i) * rows * cols;
        double* out = ds.images.data() + std::size_t(i) * side * side;
        if (pool) {
            for (std::size_t r = 0; r < side; ++r)
                for (std::size_t c = 0; c < side; ++c) {
                    const double s = im[(2 * r) * cols + 2 * c] +
                                     im[(2 * r) * cols + 2 * c + 1] +
                                     im[(2 * r + 1) * cols + 2 * c] +
                                     im[(2 * r + 1) * cols + 2 * c + 1];
                    out[r * side + c] = s / (4.0 * 255.0);
                }
        } else {
            for (std::size_t p = 0; p < side * side; ++p) out[p] = im[p] / 255.0;
        }
        ds.labels[i] = lraw[i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = max_label + 1;
    ds.validate();
    return ds;
}

void save_idx(const Dataset& ds, const std::string& image_path,
              const std::string& label_path) {
    std::ofstream imgs(image_path, std::ios::binary);
    std::ofstream labs(label_path, std::ios::binary);
    const std::uint32_t n = static_cast<std::uint32_t>(ds.size());
    const std::uint32_t side = static_cast<std::uint32_t>(ds.image_side);
    write_u32_be(imgs, 0x803);
    write_u32_be(imgs, n);
    write_u32_be(imgs, side);
    write_u32_be(imgs, side);
    for (double v : ds.images.vec()) {
        unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
        imgs.write(reinterpret_cast<char*>(&b), 1);
    }
    write_u32_be(labs, 0x801);
    write_u32_be(labs, n);
    for (int l : ds.labels) {
        unsigned char b = static_cast<unsigned char>(l);
        labs.write(reinterpret_cast<char*>(&b), 1);
    }
}

namespace {

// Soft-edged oriented bar: distance to a line through the centre at the
// given angle, with per-sample offset and thickness jitter.
void render_bar(double* img, std::size_t side, double angle, double off_x, double off_y,
                double thickness, double gain) {
    const double cx = 0.5 * (side - 1) + off_x;
    const double cy = 0.5 * (side - 1) + off_y;
    const double nx = -std::sin(angle), ny = std::cos(angle);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            const double d = std::abs((c - cx) * nx + (r - cy) * ny);
            const double v = gain * std::exp(-0.5 * (d / thickness) * (d / thickness));
            img[r * side + c] = std::min(1.0, img[r * side + c] + v);
        }
}

}  // namespace

Dataset generate_synthetic(std::uint64_t seed, std::size_t n_per_class, int class_count,
                           std::size_t image_side) {
    if (class_count < 1 || class_count > 10)
        throw std::invalid_argument("generate_synthetic: class_count must be in [1,10]");
    if (image_side < 8)
        throw std::invalid_argument("generate_synthetic: image_side must be >= 8");

    const std::size_t n = n_per_class * class_count;
    const std::size_t d = image_side * image_side;
    Dataset ds;
    ds.image_side = image_side;
    ds.class_count = class_count;
    ds.images = Tensor({n, d});
    ds.labels.resize(n);

    // Each class is an oriented soft bar at angle cls*pi/class_count with
    // angular, positional, thickness and brightness jitter plus uniform
    // speckle. Neighbouring orientations are close enough that classes are
    // confusable, which keeps the classification task non-trivial.
    const double angle_gap = std::numbers::pi / static_cast<double>(class_count);
    std::size_t idx = 0;
    for (int cls = 0; cls < class_count; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++idx) {
            RngStream rng = RngStream::derived(seed, "synthetic", idx);
            double* img = ds.images.data() + idx * d;
            const double s = image_side;
            const double angle = cls * angle_gap + 0.2 * rng.normal();
            const double off_x = 1.5 * rng.normal();
            const double off_y = 1.5 * rng.normal();
            const double thickness = 0.08 * s * (1.0 + 0.2 * rng.normal());
            const double gain = 0.75 + 0.15 * rng.uniform();
            render_bar(img, image_side, angle, off_x, off_y, thickness, gain);
            for (std::size_t p = 0; p < d; ++p)
                img[p] = std::min(1.0, img[p] + 0.2 * rng.uniform());
            ds.labels[idx] = cls;
        }
    }
    ds.validate();
    return ds;
}

Dataset stratified_sample(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    RngStream rng = RngStream::derived(seed, "stratified", 0);
    std::vector<std::size_t> chosen;
    for (int cls = 0; cls < ds.class_count; ++cls) {
        auto& pool = by_class[cls];
        if (pool.size() < per_class)
            throw std::runtime_error("stratified_sample: class " + std::to_string(cls) +
                                     " has only " + std::to_string(pool.size()) +
                                     " items, need " + std::to_string(per_class));
        // Fisher-Yates prefix
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t j = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    }
    // deterministic final shuffle across classes
    for (std::size_t i = chosen.size(); i > 1; --i)
        std::swap(chosen[i - 1], chosen[rng.below(i)]);

    Dataset out;
    out.class_count = ds.class_count;
    out.image_side = ds.image_side;
    out.images = gather_rows(ds.images, chosen);
    out.labels.reserve(chosen.size());
    for (auto i : chosen) out.labels.push_back(ds.labels[i]);
    return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng = RngStream::derived(seed, "batches", epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

Tensor gather_rows(const Tensor& images, const std::vector<std::size_t>& rows) {
    const std::size_t d = images.dim(1);
    if (rows.empty()) return Tensor({0, d});
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(images.data() + rows[i] * d, images.data() + (rows[i] + 1) * d,
                  out.data() + i * d);
    return out;
}

}  // namespace vaedef
