#include "srae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "srae/image_io.hpp"

namespace srae {

namespace {

constexpr std::uint64_t kSynthStream = 0x5e7;
constexpr std::uint64_t kBatchStream = 0xba7c;
constexpr int kSupersample = 4;

double uniform01(std::mt19937_64& engine) { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& engine, double lo, double hi) { return lo + (hi - lo) * uniform01(engine); }

// Signed distance-like field: negative inside, zero on the boundary.
double shape_field(const ContentDescriptor& c, double px, double py) {
    const double dx = px - c.cx, dy = py - c.cy;
    switch (c.kind) {
        case ShapeKind::Circle: return std::hypot(dx, dy) - c.size;
        case ShapeKind::Square: return std::max(std::abs(dx), std::abs(dy)) - 0.8 * c.size;
        case ShapeKind::Triangle: {
            // Upward-pointing equilateral triangle; inradius is half the circumradius.
            const double s3 = std::sqrt(3.0) / 2.0;
            const double d0 = dy;
            const double d1 = -s3 * dx - 0.5 * dy;
            const double d2 = s3 * dx - 0.5 * dy;
            return std::max({d0, d1, d2}) - 0.5 * c.size;
        }
    }
    return 0.0;
}

Tensor render(const ContentDescriptor& c, const DomainStyle& style, int size, double offset) {
    const double bg = std::clamp(style.background + offset, 0.0, 1.0);
    const double fg = std::clamp(style.foreground + offset, 0.0, 1.0);
    Tensor image(Shape{size, size, 1});
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = x + (sx + 0.5) / kSupersample;
                    const double py = y + (sy + 0.5) / kSupersample;
                    const double f = shape_field(c, px, py);
                    hits += style.outlined ? std::abs(f) <= 0.5 * style.outline_width : f <= 0.0;
                }
            }
            const double cover = static_cast<double>(hits) / (kSupersample * kSupersample);
            image[static_cast<std::size_t>(y) * size + x] = static_cast<float>(bg + cover * (fg - bg));
        }
    }
    return image;
}

}  // namespace

std::string_view shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
    }
    return "?";
}

Shape Dataset::image_shape() const {
    if (images.empty()) throw ContractError("empty dataset has no image shape");
    return images.front().shape();
}

std::vector<std::size_t> Dataset::indices_of(int domain) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == domain) out.push_back(i);
    }
    return out;
}

void Dataset::validate() const {
    if (images.size() != labels.size()) throw ContractError("dataset: image and label counts differ");
    if (images.empty()) throw ContractError("dataset is empty");
    if (num_domains < 1) throw ContractError("dataset: no domains");
    std::vector<int> per(static_cast<std::size_t>(num_domains), 0);
    const Shape s = images.front().shape();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_domains) {
            throw ContractError("dataset: label " + std::to_string(labels[i]) + " outside [0, " +
                                std::to_string(num_domains) + ")");
        }
        if (images[i].shape() != s) throw ShapeError("dataset: images differ in shape");
        ++per[static_cast<std::size_t>(labels[i])];
    }
    for (int d = 0; d < num_domains; ++d) {
        if (per[static_cast<std::size_t>(d)] == 0) throw ContractError("dataset: domain " + std::to_string(d) + " is empty");
    }
}

std::vector<DomainStyle> SynthSpec::default_styles(std::size_t m) {
    std::vector<DomainStyle> styles;
    for (std::size_t i = 0; i < m; ++i) {
        const float t = m > 1 ? static_cast<float>(i) / static_cast<float>(m - 1) : 0.0f;
        DomainStyle s;
        s.background = 0.1f + 0.8f * t;
        s.foreground = 0.9f - 0.8f * t;
        s.outlined = t >= 0.5f;
        styles.push_back(s);
    }
    return styles;
}

Dataset generate_synthetic(const SynthSpec& spec) {
    if (spec.counts.size() < 2) throw ConfigError("synthetic data needs at least two domains");
    for (int c : spec.counts)
        if (c <= 0) throw ConfigError("synthetic counts must be positive");
    if (!(spec.min_size > 0.0f) || spec.max_size < spec.min_size) throw ConfigError("invalid shape size range");
    if (spec.image_size < 2.0f * (spec.max_size + 1.0f)) {
        throw ConfigError("image size " + std::to_string(spec.image_size) + " too small for shapes of radius " +
                          std::to_string(spec.max_size));
    }
    const auto styles = spec.styles.empty() ? SynthSpec::default_styles(spec.counts.size()) : spec.styles;
    if (styles.size() != spec.counts.size()) throw ConfigError("one style per domain required");

    auto engine = make_engine(RngState{spec.seed, 0}, kSynthStream);
    Dataset ds;
    ds.num_domains = static_cast<int>(spec.counts.size());
    for (std::size_t d = 0; d < spec.counts.size(); ++d) {
        for (int i = 0; i < spec.counts[d]; ++i) {
            ContentDescriptor c;
            c.kind = static_cast<ShapeKind>(engine() % 3);
            c.size = static_cast<float>(uniform(engine, spec.min_size, spec.max_size));
            const double margin = c.size + 1.0;
            c.cx = static_cast<float>(uniform(engine, margin, spec.image_size - margin));
            c.cy = static_cast<float>(uniform(engine, margin, spec.image_size - margin));
            const double offset = uniform(engine, -styles[d].jitter, styles[d].jitter);
            ds.images.push_back(render(c, styles[d], spec.image_size, offset));
            ds.labels.push_back(static_cast<int>(d));
            ds.content.push_back(c);
        }
    }
    return ds;
}

Tensor area_resize(const Tensor& image, int height, int width) {
    if (image.rank() != 3) throw ShapeError("area_resize expects H x W x C");
    if (height <= 0 || width <= 0) throw ContractError("area_resize: target size must be positive");
    const int H = image.dim(0), W = image.dim(1), C = image.dim(2);
    if (H == height && W == width) return image;

    // Per output index: list of (source index, overlap weight), weights summing to 1.
    auto spans = [](int src, int dst) {
        std::vector<std::vector<std::pair<int, double>>> out(static_cast<std::size_t>(dst));
        const double scale = static_cast<double>(src) / dst;
        for (int o = 0; o < dst; ++o) {
            const double lo = o * scale, hi = (o + 1) * scale;
            for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
                const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
                if (overlap > 0) out[static_cast<std::size_t>(o)].emplace_back(s, overlap / scale);
            }
        }
        return out;
    };
    const auto rows = spans(H, height);
    const auto cols = spans(W, width);
    Tensor out(Shape{height, width, C});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (auto [sy, wy] : rows[static_cast<std::size_t>(y)])
                    for (auto [sx, wx] : cols[static_cast<std::size_t>(x)])
                        acc += wy * wx * image[(static_cast<std::size_t>(sy) * W + sx) * C + c];
                out[(static_cast<std::size_t>(y) * width + x) * C + c] = static_cast<float>(acc);
            }
    return out;
}

Dataset load_directory(const std::filesystem::path& root, int height, int width) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("dataset directory '" + root.string() + "' does not exist");
    Dataset ds;
    int channels = -1;
    for (int d = 0;; ++d) {
        const fs::path dir = root / ("domain" + std::to_string(d));
        if (!fs::is_directory(dir)) break;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path());
        }
        if (files.empty()) throw IoError("domain directory '" + dir.string() + "' contains no PGM/PPM images");
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
        for (const auto& f : files) {
            Tensor im = read_pnm(f);
            if (channels < 0) channels = im.dim(2);
            if (im.dim(2) != channels) {
                throw IoError("image '" + f.string() + "' has " + std::to_string(im.dim(2)) +
                              " channels, earlier images have " + std::to_string(channels));
            }
            ds.images.push_back(area_resize(im, height, width));
            ds.labels.push_back(d);
        }
        ds.num_domains = d + 1;
    }
    if (ds.num_domains == 0) throw IoError("no domain0/ subdirectory under '" + root.string() + "'");
    ds.validate();
    return ds;
}

void save_directory(const Dataset& dataset, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    dataset.validate();
    std::vector<int> counters(static_cast<std::size_t>(dataset.num_domains), 0);
    for (int d = 0; d < dataset.num_domains; ++d) fs::create_directories(root / ("domain" + std::to_string(d)));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const int d = dataset.labels[i];
        char name[32];
        std::snprintf(name, sizeof name, "img_%06d.%s", counters[static_cast<std::size_t>(d)]++,
                      dataset.images[i].dim(2) == 1 ? "pgm" : "ppm");
        write_pnm(root / ("domain" + std::to_string(d)) / name, dataset.images[i]);
    }
}

Batch gather_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("empty batch");
    const Shape s = dataset.image_shape();
    Shape bs{static_cast<int>(indices.size())};
    bs.insert(bs.end(), s.begin(), s.end());
    Batch batch;
    batch.images = Tensor(bs);
    const std::size_t per = shape_numel(s);
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const Tensor& im = dataset.images.at(indices[n]);
        std::copy(im.raw(), im.raw() + per, batch.images.raw() + n * per);
        batch.labels.push_back(dataset.labels.at(indices[n]));
    }
    batch.indices = indices;
    return batch;
}

std::pair<Batch, RngState> sample_batch(const Dataset& dataset, int batch_size, RngState rng) {
    const int m = dataset.num_domains;
    if (m < 1 || batch_size <= 0 || batch_size % m != 0) {
        throw ContractError("batch size " + std::to_string(batch_size) + " is not a positive multiple of " +
                            std::to_string(m) + " domains");
    }
    const int per = batch_size / m;
    auto engine = make_engine(rng, kBatchStream);
    std::vector<std::size_t> chosen;
    for (int d = 0; d < m; ++d) {
        std::vector<std::size_t> pool = dataset.indices_of(d);
        if (static_cast<int>(pool.size()) < per) {
            throw ContractError("domain " + std::to_string(d) + " has " + std::to_string(pool.size()) +
                                " examples, batch needs " + std::to_string(per));
        }
        // Partial Fisher-Yates.
        for (int i = 0; i < per; ++i) {
            const std::size_t span = pool.size() - static_cast<std::size_t>(i);
            const std::size_t pick = static_cast<std::size_t>(i) + static_cast<std::size_t>(uniform01(engine) * span);
            std::swap(pool[static_cast<std::size_t>(i)], pool[std::min(pick, pool.size() - 1)]);
            chosen.push_back(pool[static_cast<std::size_t>(i)]);
        }
    }
    ++rng.counter;
    return {gather_batch(dataset, chosen), rng};
}

}  // namespace srae
