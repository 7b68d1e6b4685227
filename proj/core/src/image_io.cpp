#include "srae/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

namespace srae {

namespace {

class PnmHeaderReader {
public:
    PnmHeaderReader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
        : bytes_(bytes), path_(path) {}

    int next_int(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail(std::string("malformed ") + what);
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > 1'000'000) fail(std::string("implausible ") + what);
        }
        return static_cast<int>(v);
    }

    // Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing raster separator");
        return pos_ + 1;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw IoError("cannot read image '" + path_.string() + "': " + why);
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& bytes_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 2;
};

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    PnmHeaderReader header(bytes, path);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        header.fail("not a binary PGM (P5) or PPM (P6) file");
    }
    const int channels = bytes[1] == '5' ? 1 : 3;
    const int width = header.next_int("width");
    const int height = header.next_int("height");
    const int maxval = header.next_int("maxval");
    if (width <= 0 || height <= 0) header.fail("zero-sized image");
    if (maxval <= 0 || maxval > 255) header.fail("maxval must be in 1..255");
    const std::size_t start = header.raster_start();
    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    if (bytes.size() < start + count) header.fail("truncated raster");

    Tensor image(Shape{height, width, channels});
    for (std::size_t i = 0; i < count; ++i) image[i] = static_cast<float>(bytes[start + i]) / static_cast<float>(maxval);
    return image;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
        throw ShapeError("write_pnm: expected H x W x 1 or H x W x 3, got " + shape_str(image.shape()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image '" + path.string() + "'");
    out << (image.dim(2) == 1 ? "P5" : "P6") << "\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
    std::vector<unsigned char> raster(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const float v = std::clamp(image[i], 0.0f, 1.0f);
        raster[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Tensor montage(const std::vector<Tensor>& images, int columns) {
    if (images.empty()) throw ContractError("montage of zero images");
    if (columns < 1) throw ContractError("montage needs at least one column");
    const Shape s = images.front().shape();
    if (s.size() != 3) throw ShapeError("montage expects H x W x C images");
    for (const auto& im : images) {
        if (im.shape() != s) throw ShapeError("montage images differ in shape");
    }
    const int h = s[0], w = s[1], c = s[2];
    const int cols = std::min<int>(columns, static_cast<int>(images.size()));
    const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
    const int H = rows * h + (rows - 1), W = cols * w + (cols - 1);
    Tensor sheet(Shape{H, W, c}, 1.0f);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const int r = static_cast<int>(n) / cols, col = static_cast<int>(n) % cols;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t dst = (static_cast<std::size_t>(r * (h + 1) + y) * W + col * (w + 1) + x) * c + ch;
                    sheet[dst] = images[n][(static_cast<std::size_t>(y) * w + x) * c + ch];
                }
    }
    return sheet;
}

}  // namespace srae
