#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "srae/rng.hpp"
#include "srae/tensor.hpp"

namespace srae {

enum class ShapeKind : std::uint8_t { Circle, Square, Triangle };

std::string_view shape_kind_name(ShapeKind k);

/// Ground-truth content of a synthetic image.
struct ContentDescriptor {
    ShapeKind kind = ShapeKind::Circle;
    float cx = 0, cy = 0;  // centre in pixels
    float size = 0;        // circumradius in pixels
};

struct Dataset {
    std::vector<Tensor> images;  // H x W x C, values in [0, 1]
    std::vector<int> labels;     // domain index
    std::vector<ContentDescriptor> content;  // synthetic data only
    int num_domains = 0;

    std::size_t size() const noexcept { return images.size(); }
    Shape image_shape() const;
    std::vector<std::size_t> indices_of(int domain) const;
    /// Checks label range, per-domain coverage and image shapes.
    void validate() const;
};

/// Rendering style of one domain.
struct DomainStyle {
    float background = 0.1f;
    float foreground = 0.9f;
    bool outlined = false;
    float outline_width = 1.5f;
    float jitter = 0.05f;  // per-image uniform offset on both levels
};

struct SynthSpec {
    std::vector<int> counts{2000, 2000};  // per domain
    int image_size = 32;
    std::uint64_t seed = 0;
    std::vector<DomainStyle> styles;  // empty: default_styles(counts.size())
    float min_size = 5.0f;            // circumradius range in pixels
    float max_size = 9.0f;

    /// Domain A: filled bright shapes on a dark background. Domain B: dark
    /// outlines on a bright background. Further domains interpolate.
    static std::vector<DomainStyle> default_styles(std::size_t m);
};

Dataset generate_synthetic(const SynthSpec& spec);

/// Reads `<root>/domain<i>/*.pgm|*.ppm` for i = 0, 1, ... (contiguous),
/// area-resampling every image to height x width. Files are ordered
/// lexicographically within each domain.
Dataset load_directory(const std::filesystem::path& root, int height, int width);

/// Writes the dataset back in the layout read by load_directory.
void save_directory(const Dataset& dataset, const std::filesystem::path& root);

/// Box-filter resampling of an H x W x C image.
Tensor area_resize(const Tensor& image, int height, int width);

struct Batch {
    Tensor images;            // N x H x W x C
    std::vector<int> labels;  // N
    std::vector<std::size_t> indices;  // positions in the source dataset
};

/// Draws batch_size / m examples per domain, uniformly without replacement.
/// Returns the batch and the advanced RNG state.
std::pair<Batch, RngState> sample_batch(const Dataset& dataset, int batch_size, RngState rng);

/// Stacks the given dataset entries into a batch in the given order.
Batch gather_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

}  // namespace srae
