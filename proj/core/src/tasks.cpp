#include "srae/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "srae/image_io.hpp"

namespace srae {

namespace {

constexpr std::size_t kEncodeChunk = 256;
constexpr double kConvergence = 1e-6;
constexpr int kMaxEpochs = 500;

Tensor as_batch(const Tensor& x, const SraeHyper& h, const char* what) {
    if (x.shape() == h.image_shape()) return x.reshaped({1, h.image_h, h.image_w, h.image_c});
    if (x.rank() == 4 && Shape(x.shape().begin() + 1, x.shape().end()) == h.image_shape()) return x;
    throw ShapeError(std::string(what) + ": expected image " + shape_str(h.image_shape()) + ", got " +
                     shape_str(x.shape()));
}

Tensor example(const Tensor& batch, int n) {
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t per = shape_numel(s);
    return Tensor(s, std::vector<float>(batch.raw() + per * static_cast<std::size_t>(n),
                                        batch.raw() + per * static_cast<std::size_t>(n + 1)));
}

}  // namespace

LatentPair encode_mean(const Checkpoint& ckpt, const Tensor& images) {
    return encode(ckpt.params, ckpt.hyper, as_batch(images, ckpt.hyper, "encode"));
}

std::vector<EncodingRecord> encode_dataset(const Checkpoint& ckpt, const Dataset& dataset) {
    std::vector<EncodingRecord> records;
    for (std::size_t start = 0; start < dataset.size(); start += kEncodeChunk) {
        std::vector<std::size_t> idx(std::min(kEncodeChunk, dataset.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Batch batch = gather_batch(dataset, idx);
        const LatentPair lp = encode_mean(ckpt, batch.images);
        const std::size_t nc = lp.mu_c.size() / idx.size();
        const std::size_t nd = lp.mu_d_vec.size() / idx.size();
        for (std::size_t n = 0; n < idx.size(); ++n) {
            EncodingRecord r;
            r.id = idx[n];
            r.domain = dataset.labels[idx[n]];
            r.mu_c.assign(lp.mu_c.raw() + n * nc, lp.mu_c.raw() + (n + 1) * nc);
            r.mu_d.assign(lp.mu_d_vec.raw() + n * nd, lp.mu_d_vec.raw() + (n + 1) * nd);
            records.push_back(std::move(r));
        }
    }
    return records;
}

Tensor translate(const Checkpoint& ckpt, const Tensor& x_src, const Tensor& x_style) {
    const Tensor src = as_batch(x_src, ckpt.hyper, "translate source");
    const Tensor style = as_batch(x_style, ckpt.hyper, "translate style");
    if (src.dim(0) != style.dim(0)) throw ShapeError("translate: source and style batch sizes differ");
    const LatentPair content = encode(ckpt.params, ckpt.hyper, src);
    const LatentPair domain = encode(ckpt.params, ckpt.hyper, style);
    const Tensor out = decode(ckpt.params, ckpt.hyper, content.z_c, domain.z_d);
    return x_src.rank() == 3 ? example(out, 0) : out;
}

Tensor reconstruct(const Checkpoint& ckpt, const Tensor& x) {
    const LatentPair lp = encode(ckpt.params, ckpt.hyper, as_batch(x, ckpt.hyper, "reconstruct"));
    const Tensor out = decode(ckpt.params, ckpt.hyper, lp.z_c, lp.z_d);
    return x.rank() == 3 ? example(out, 0) : out;
}

std::vector<Neighbor> nearest(const std::vector<float>& query, const std::vector<std::vector<float>>& candidates,
                              std::size_t k, Metric metric) {
    if (k > candidates.size()) {
        throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(candidates.size()) +
                            " candidates");
    }
    std::vector<Neighbor> all;
    all.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        if (c.size() != query.size()) throw ShapeError("candidate " + std::to_string(i) + " has a different length");
        double d = 0.0;
        if (metric == Metric::Euclidean) {
            for (std::size_t e = 0; e < c.size(); ++e) {
                const double diff = static_cast<double>(query[e]) - c[e];
                d += diff * diff;
            }
            d = std::sqrt(d);
        } else {
            double dot = 0.0, qq = 0.0, cc = 0.0;
            for (std::size_t e = 0; e < c.size(); ++e) {
                dot += static_cast<double>(query[e]) * c[e];
                qq += static_cast<double>(query[e]) * query[e];
                cc += static_cast<double>(c[e]) * c[e];
            }
            d = 1.0 - dot / std::max(std::sqrt(qq * cc), 1e-12);
        }
        all.push_back({i, d});
    }
    std::stable_sort(all.begin(), all.end(), [](const Neighbor& x, const Neighbor& y) {
        return x.distance < y.distance || (x.distance == y.distance && x.index < y.index);
    });
    all.resize(k);
    return all;
}

std::vector<Neighbor> nn_search(const Checkpoint& ckpt, const Tensor& target, const Dataset& candidates, std::size_t k,
                                Metric metric) {
    if (k > candidates.size()) {
        throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(candidates.size()) +
                            " candidates");
    }
    const LatentPair q = encode_mean(ckpt, target);
    std::vector<float> query(q.mu_c.data().begin(), q.mu_c.data().end());
    std::vector<std::vector<float>> codes;
    for (auto& r : encode_dataset(ckpt, candidates)) codes.push_back(std::move(r.mu_c));
    return nearest(query, codes, k, metric);
}

// ---------------------------------------------------------------------------
// Logistic regression

LogisticClassifier::LogisticClassifier(std::vector<double> mean, std::vector<double> scale, std::vector<double> weights,
                                       std::vector<double> bias)
    : mean_(std::move(mean)), scale_(std::move(scale)), weights_(std::move(weights)), bias_(std::move(bias)) {}

std::vector<double> LogisticClassifier::probabilities(const std::vector<float>& x) const {
    if (x.size() != mean_.size()) throw ShapeError("classifier expects " + std::to_string(mean_.size()) + " features");
    const std::size_t m = bias_.size();
    std::vector<double> logits(bias_);
    for (std::size_t f = 0; f < x.size(); ++f) {
        const double v = (x[f] - mean_[f]) / scale_[f];
        for (std::size_t c = 0; c < m; ++c) logits[c] += v * weights_[f * m + c];
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (auto& l : logits) total += (l = std::exp(l - mx));
    for (auto& l : logits) l /= total;
    return logits;
}

int LogisticClassifier::predict(const std::vector<float>& x) const {
    const auto p = probabilities(x);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

ClassifierFit fit_logistic(const std::vector<std::vector<float>>& features, const std::vector<int>& labels,
                           std::uint64_t split_seed) {
    if (features.size() != labels.size() || features.empty()) throw ContractError("classifier: features/labels mismatch");
    const int m = *std::max_element(labels.begin(), labels.end()) + 1;
    if (*std::min_element(labels.begin(), labels.end()) < 0) throw ContractError("classifier: negative label");
    std::vector<int> per(static_cast<std::size_t>(m), 0);
    for (int l : labels) ++per[static_cast<std::size_t>(l)];
    const int present = static_cast<int>(std::count_if(per.begin(), per.end(), [](int c) { return c > 0; }));
    if (present < 2) throw ContractError("classifier: input contains a single class");
    for (int c : per) {
        if (c > 0 && c < 2) throw ContractError("classifier: every domain needs at least two records");
    }
    const std::size_t dim = features.front().size();
    for (const auto& f : features) {
        if (f.size() != dim) throw ShapeError("classifier: feature vectors differ in length");
    }

    // Deterministic shuffle, then 80/20.
    std::vector<std::size_t> order(features.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto engine = make_engine(RngState{split_seed, 0}, 0x5b117);
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
        std::swap(order[i - 1], order[std::min(static_cast<std::size_t>(u * static_cast<double>(i)), i - 1)]);
    }
    std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(order.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
    const std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

    std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
    for (std::size_t i : train)
        for (std::size_t f = 0; f < dim; ++f) mean[f] += features[i][f];
    for (auto& v : mean) v /= static_cast<double>(train.size());
    for (std::size_t i : train)
        for (std::size_t f = 0; f < dim; ++f) scale[f] += std::pow(features[i][f] - mean[f], 2);
    for (auto& v : scale) {
        v = std::sqrt(v / static_cast<double>(train.size()));
        if (v < 1e-8) v = 1.0;
    }
    std::vector<std::vector<double>> x(train.size(), std::vector<double>(dim));
    for (std::size_t r = 0; r < train.size(); ++r)
        for (std::size_t f = 0; f < dim; ++f) x[r][f] = (features[train[r]][f] - mean[f]) / scale[f];

    // Softmax cross-entropy Hessian is bounded by 0.5 E||[x, 1]||^2 = 0.5 (dim + 1)
    // on standardized inputs; 1/L steps decrease the loss monotonically.
    const double lr = 1.0 / (0.5 * static_cast<double>(dim + 1));
    const auto M = static_cast<std::size_t>(m);
    std::vector<double> w(dim * M, 0.0), b(M, 0.0), gw(dim * M), gb(M), p(M);
    double prev = std::numeric_limits<double>::infinity();
    int epochs = 0;
    for (; epochs < kMaxEpochs; ++epochs) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        double loss = 0.0;
        for (std::size_t r = 0; r < train.size(); ++r) {
            for (std::size_t c = 0; c < M; ++c) {
                double z = b[c];
                for (std::size_t f = 0; f < dim; ++f) z += x[r][f] * w[f * M + c];
                p[c] = z;
            }
            const double mx = *std::max_element(p.begin(), p.end());
            double total = 0.0;
            for (auto& v : p) total += (v = std::exp(v - mx));
            for (auto& v : p) v /= total;
            const auto y = static_cast<std::size_t>(labels[train[r]]);
            loss -= std::log(std::max(p[y], 1e-300));
            for (std::size_t c = 0; c < M; ++c) {
                const double g = p[c] - (c == y ? 1.0 : 0.0);
                gb[c] += g;
                for (std::size_t f = 0; f < dim; ++f) gw[f * M + c] += g * x[r][f];
            }
        }
        const double inv = 1.0 / static_cast<double>(train.size());
        loss *= inv;
        if (std::abs(prev - loss) < kConvergence) break;
        prev = loss;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i] * inv;
        for (std::size_t c = 0; c < M; ++c) b[c] -= lr * gb[c] * inv;
    }

    ClassifierFit fit;
    fit.classifier = LogisticClassifier(mean, scale, w, b);
    fit.epochs_run = epochs;
    auto accuracy = [&](const std::vector<std::size_t>& idx) {
        std::size_t hits = 0;
        for (std::size_t i : idx) hits += fit.classifier.predict(features[i]) == labels[i];
        return static_cast<double>(hits) / static_cast<double>(idx.size());
    };
    fit.train_accuracy = accuracy(train);
    fit.test_accuracy = accuracy(test);
    return fit;
}

ClassifierFit fit_domain_classifier(const std::vector<EncodingRecord>& records, EncodingField field,
                                    std::uint64_t split_seed) {
    std::vector<std::vector<float>> features;
    std::vector<int> labels;
    for (const auto& r : records) {
        features.push_back(field == EncodingField::DomainCode ? r.mu_d : r.mu_c);
        labels.push_back(r.domain);
    }
    return fit_logistic(features, labels, split_seed);
}

std::string encodings_csv(const std::vector<EncodingRecord>& records) {
    std::string s = "id,domain";
    if (!records.empty()) {
        for (std::size_t i = 0; i < records.front().mu_c.size(); ++i) s += ",zc_" + std::to_string(i);
        for (std::size_t i = 0; i < records.front().mu_d.size(); ++i) s += ",zd_" + std::to_string(i);
    }
    s += "\n";
    char buf[32];
    for (const auto& r : records) {
        s += std::to_string(r.id) + "," + std::to_string(r.domain);
        for (float v : r.mu_c) {
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
            s += buf;
        }
        for (float v : r.mu_d) {
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
            s += buf;
        }
        s += "\n";
    }
    return s;
}

void export_encodings(const Checkpoint& ckpt, const Dataset& dataset, const std::filesystem::path& path) {
    const std::string csv = encodings_csv(encode_dataset(ckpt, dataset));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write encodings '" + path.string() + "'");
    out << csv;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Tensor reconstruction_montage(const Checkpoint& ckpt, const Dataset& dataset, std::size_t max_images, int columns) {
    if (dataset.size() == 0) throw ContractError("montage of an empty dataset");
    if (columns < 1) throw ContractError("montage needs at least one column");
    const std::size_t n = std::min(max_images, dataset.size());
    // Spread the picks over the dataset so every domain shows up.
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i * dataset.size() / n);
    const Tensor recon = reconstruct(ckpt, gather_batch(dataset, idx).images);
    std::vector<Tensor> tiles;
    const auto cols = static_cast<std::size_t>(columns);
    for (std::size_t row = 0; row < n; row += cols) {
        const std::size_t end = std::min(n, row + cols);
        for (std::size_t i = row; i < row + cols; ++i) {
            tiles.push_back(i < end ? dataset.images[idx[i]] : Tensor(dataset.image_shape(), 1.0f));
        }
        for (std::size_t i = row; i < row + cols; ++i) {
            tiles.push_back(i < end ? example(recon, static_cast<int>(i)) : Tensor(dataset.image_shape(), 1.0f));
        }
    }
    return montage(tiles, columns);
}

}  // namespace srae
