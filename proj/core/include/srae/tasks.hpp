#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "srae/data.hpp"
#include "srae/training.hpp"

namespace srae {

/// Mean encodings of one example, flattened.
struct EncodingRecord {
    std::size_t id = 0;
    int domain = 0;
    std::vector<float> mu_c;  // a * b * k
    std::vector<float> mu_d;  // j
};

/// Mean (eps = 0) encodings of a stack of images, N x H x W x C.
LatentPair encode_mean(const Checkpoint& ckpt, const Tensor& images);

std::vector<EncodingRecord> encode_dataset(const Checkpoint& ckpt, const Dataset& dataset);

/// Decodes the source's content code with the style image's domain code.
Tensor translate(const Checkpoint& ckpt, const Tensor& x_src, const Tensor& x_style);

/// decode(encode(x, eps = 0)) for a single image or a batch.
Tensor reconstruct(const Checkpoint& ckpt, const Tensor& x);

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;
};

enum class Metric : std::uint8_t { Euclidean, Cosine };

/// Exhaustive k-nearest search; ascending distance, ties to the smaller index.
std::vector<Neighbor> nearest(const std::vector<float>& query, const std::vector<std::vector<float>>& candidates,
                              std::size_t k, Metric metric = Metric::Euclidean);

/// Nearest candidates by content code.
std::vector<Neighbor> nn_search(const Checkpoint& ckpt, const Tensor& target, const Dataset& candidates, std::size_t k,
                                Metric metric = Metric::Euclidean);

enum class EncodingField : std::uint8_t { DomainCode, ContentCode };

/// Multinomial logistic regression on standardized features.
class LogisticClassifier {
public:
    LogisticClassifier() = default;
    LogisticClassifier(std::vector<double> mean, std::vector<double> scale, std::vector<double> weights,
                       std::vector<double> bias);

    int classes() const noexcept { return static_cast<int>(bias_.size()); }
    std::size_t features() const noexcept { return mean_.size(); }
    std::vector<double> probabilities(const std::vector<float>& x) const;
    int predict(const std::vector<float>& x) const;

private:
    std::vector<double> mean_, scale_;
    std::vector<double> weights_;  // features x classes
    std::vector<double> bias_;
};

struct ClassifierFit {
    LogisticClassifier classifier;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    int epochs_run = 0;
};

/// Deterministic 80/20 split by seed, then full-batch gradient descent until
/// the loss changes by less than 1e-6 or 500 epochs have run.
ClassifierFit fit_domain_classifier(const std::vector<EncodingRecord>& records, EncodingField field,
                                    std::uint64_t split_seed);

/// Generic form used by fit_domain_classifier.
ClassifierFit fit_logistic(const std::vector<std::vector<float>>& features, const std::vector<int>& labels,
                           std::uint64_t split_seed);

std::string encodings_csv(const std::vector<EncodingRecord>& records);
void export_encodings(const Checkpoint& ckpt, const Dataset& dataset, const std::filesystem::path& path);

/// Originals and reconstructions in alternating rows of `columns` images.
Tensor reconstruction_montage(const Checkpoint& ckpt, const Dataset& dataset, std::size_t max_images = 32,
                              int columns = 8);

}  // namespace srae
