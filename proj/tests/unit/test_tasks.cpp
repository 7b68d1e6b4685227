#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "srae/error.hpp"
#include "srae/tasks.hpp"

using namespace srae;
namespace fs = std::filesystem;

namespace {

Checkpoint fresh_checkpoint(std::uint64_t seed = 1, Variant v = Variant::TwoDisc) {
    Checkpoint c;
    c.variant = v;
    c.params = init_params(c.hyper, v, seed);
    // Non-zero biases so the latent codes depend on more than the weights.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    for (const auto& [name, t] : c.params.tensors()) {
        if (name.ends_with("/b"))
            for (auto& v2 : c.params.at(name).data()) v2 = u(rng);
    }
    return c;
}

Dataset synth(int per_domain, std::uint64_t seed = 0) {
    SynthSpec spec;
    spec.counts = {per_domain, per_domain};
    spec.seed = seed;
    return generate_synthetic(spec);
}

double euclid(const std::vector<float>& a, const std::vector<float>& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i] - b[i]) * (a[i] - b[i]);
    return static_cast<double>(std::sqrt(s));
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, sep);) out.push_back(cell);
    return out;
}

}  // namespace

TEST(Translate, IdentitySwapEqualsReconstruction) {
    const Checkpoint c = fresh_checkpoint();
    const Dataset ds = synth(5);
    for (const auto& img : ds.images) {
        EXPECT_TRUE(bitwise_equal(translate(c, img, img), reconstruct(c, img)));
    }
}

TEST(Translate, DomainCodeComesFromStyleImage) {
    const Checkpoint c = fresh_checkpoint();
    const Dataset ds = synth(2);
    const Tensor& src = ds.images[0];
    const Tensor& style = ds.images[3];
    const LatentPair ls = encode_mean(c, src), lt = encode_mean(c, style);
    const Tensor expected = decode(c.params, c.hyper, ls.mu_c, tile_domain(lt.mu_d_vec, c.hyper.a, c.hyper.b));
    EXPECT_TRUE(bitwise_equal(translate(c, src, style), expected.reshaped(c.hyper.image_shape())));
}

TEST(Translate, ShapeMismatchIsError) {
    const Checkpoint c = fresh_checkpoint();
    EXPECT_THROW(translate(c, Tensor({16, 16, 1}), Tensor({32, 32, 1})), Error);
}

TEST(Reconstruct, BatchMatchesSingles) {
    const Checkpoint c = fresh_checkpoint();
    const Dataset ds = synth(2);
    const Batch b = gather_batch(ds, {0, 1, 2, 3});
    const Tensor all = reconstruct(c, b.images);
    ASSERT_EQ(all.shape(), (Shape{4, 32, 32, 1}));
    for (int i = 0; i < 4; ++i) {
        const Tensor one = reconstruct(c, ds.images[static_cast<std::size_t>(i)]);
        for (std::size_t e = 0; e < one.size(); ++e) EXPECT_NEAR(all[i * one.size() + e], one[e], 1e-6);
    }
}

TEST(Nearest, MatchesBruteForceOracle) {
    std::mt19937_64 rng(42);
    std::normal_distribution<float> nd;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t n = 20 + inst, dim = 1 + inst % 7, k = 1 + inst % 10;
        std::vector<std::vector<float>> cands(n, std::vector<float>(dim));
        for (auto& c : cands)
            for (auto& v : c) v = nd(rng);
        if (inst % 5 == 0) cands[n - 1] = cands[2];  // a tie, broken by index
        std::vector<float> q(dim);
        for (auto& v : q) v = nd(rng);

        std::vector<std::pair<double, std::size_t>> oracle;
        for (std::size_t i = 0; i < n; ++i) oracle.emplace_back(euclid(q, cands[i]), i);
        std::stable_sort(oracle.begin(), oracle.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

        const auto got = nearest(q, cands, k);
        ASSERT_EQ(got.size(), k);
        for (std::size_t r = 0; r < k; ++r) {
            EXPECT_EQ(got[r].index, oracle[r].second) << "instance " << inst << " rank " << r;
            EXPECT_NEAR(got[r].distance, oracle[r].first, 1e-9 + 1e-6 * oracle[r].first);
        }
    }
}

TEST(Nearest, CosineMetric) {
    const std::vector<std::vector<float>> cands{{1, 0}, {0, 1}, {2, 2.1f}};
    const auto got = nearest({1, 1}, cands, 3, Metric::Cosine);
    EXPECT_EQ(got[0].index, 2u);
    EXPECT_NEAR(got[1].distance, 1.0 - std::sqrt(0.5), 1e-6);
}

TEST(Nearest, EdgeCases) {
    const std::vector<std::vector<float>> cands{{0, 0}, {1, 1}};
    EXPECT_TRUE(nearest({0, 0}, cands, 0).empty());
    EXPECT_THROW(nearest({0, 0}, cands, 3), ContractError);
    EXPECT_THROW(nearest({0, 0, 0}, cands, 1), Error);
}

TEST(NnSearch, ExactCopyRanksFirst) {
    const Checkpoint c = fresh_checkpoint();
    const Dataset ds = synth(6);
    const auto got = nn_search(c, ds.images[7], ds, 3);
    ASSERT_EQ(got.size(), 3u);
    EXPECT_EQ(got[0].index, 7u);
    EXPECT_EQ(got[0].distance, 0.0);
    EXPECT_LE(got[0].distance, got[1].distance);
    EXPECT_LE(got[1].distance, got[2].distance);
}

TEST(Logistic, SeparableOneDimensional) {
    std::vector<std::vector<float>> x;
    std::vector<int> y;
    for (int i = 0; i < 100; ++i) {
        x.push_back({static_cast<float>(i)});
        y.push_back(i < 50 ? 0 : 1);
    }
    const ClassifierFit fit = fit_logistic(x, y, 3);
    EXPECT_DOUBLE_EQ(fit.train_accuracy, 1.0);
    EXPECT_DOUBLE_EQ(fit.test_accuracy, 1.0);
    EXPECT_GT(fit.epochs_run, 0);
    EXPECT_LE(fit.epochs_run, 500);
    EXPECT_EQ(fit.classifier.predict({-10.0f}), 0);
    EXPECT_EQ(fit.classifier.predict({200.0f}), 1);
    const auto p = fit.classifier.probabilities({49.5f});
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
}

TEST(Logistic, ThreeClasses) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> nd(0.0f, 0.3f);
    std::vector<std::vector<float>> x;
    std::vector<int> y;
    const float centers[3][2] = {{0, 0}, {3, 0}, {0, 3}};
    for (int i = 0; i < 150; ++i) {
        const int c = i % 3;
        x.push_back({centers[c][0] + nd(rng), centers[c][1] + nd(rng)});
        y.push_back(c);
    }
    const ClassifierFit fit = fit_logistic(x, y, 0);
    EXPECT_EQ(fit.classifier.classes(), 3);
    EXPECT_GE(fit.test_accuracy, 0.95);
}

TEST(Logistic, ShuffledLabelsAreChance) {
    double total = 0;
    const int seeds = 24;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(s));
        std::normal_distribution<float> nd;
        std::vector<std::vector<float>> x;
        std::vector<int> y;
        for (int i = 0; i < 200; ++i) {
            x.push_back({nd(rng), nd(rng), nd(rng)});
            y.push_back(i % 2);
        }
        std::shuffle(y.begin(), y.end(), rng);
        total += fit_logistic(x, y, static_cast<std::uint64_t>(s)).test_accuracy;
    }
    const double mean = total / seeds;
    EXPECT_GE(mean, 0.35);
    EXPECT_LE(mean, 0.65);
}

TEST(Logistic, DegenerateInputsRejected) {
    EXPECT_THROW(fit_logistic({{1.0f}, {2.0f}, {3.0f}, {4.0f}, {5.0f}}, {0, 0, 0, 0, 0}, 0), Error);
    EXPECT_THROW(fit_logistic({}, {}, 0), Error);
    EXPECT_THROW(fit_logistic({{1.0f}, {2.0f}}, {0}, 0), Error);
}

TEST(Logistic, DeterministicPerSeed) {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> nd;
    std::vector<std::vector<float>> x;
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
        y.push_back(i % 2);
        x.push_back({nd(rng) + y.back(), nd(rng)});
    }
    const ClassifierFit a = fit_logistic(x, y, 8), b = fit_logistic(x, y, 8);
    EXPECT_EQ(a.test_accuracy, b.test_accuracy);
    EXPECT_EQ(a.classifier.probabilities(x[0]), b.classifier.probabilities(x[0]));
}

TEST(DomainClassifier, UsesRequestedField) {
    const Checkpoint c = fresh_checkpoint();
    const auto recs = encode_dataset(c, synth(10));
    ASSERT_EQ(recs.size(), 20u);
    EXPECT_EQ(fit_domain_classifier(recs, EncodingField::DomainCode, 0).classifier.features(), 4u);
    EXPECT_EQ(fit_domain_classifier(recs, EncodingField::ContentCode, 0).classifier.features(), 128u);
}

TEST(Export, ShapeAndHeader) {
    const Checkpoint c = fresh_checkpoint();
    const std::string csv = encodings_csv(encode_dataset(c, synth(10)));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    const auto header = split(line, ',');
    ASSERT_EQ(header.size(), 134u);
    EXPECT_EQ(header[0], "id");
    EXPECT_EQ(header[1], "domain");
    EXPECT_EQ(header[2], "zc_0");
    EXPECT_EQ(header[133], "zd_3");
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(split(line, ',').size(), 134u);
        ++rows;
    }
    EXPECT_EQ(rows, 20);
}

TEST(Export, ByteIdenticalRerunAndRoundTrip) {
    const Checkpoint c = fresh_checkpoint();
    const Dataset ds = synth(5);
    const fs::path a = fs::temp_directory_path() / "srae_export_a.csv";
    const fs::path b = fs::temp_directory_path() / "srae_export_b.csv";
    export_encodings(c, ds, a);
    export_encodings(c, ds, b);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    const std::string text = slurp(a);
    EXPECT_EQ(text, slurp(b));
    fs::remove(a);
    fs::remove(b);

    const auto recs = encode_dataset(c, ds);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    for (const auto& r : recs) {
        ASSERT_TRUE(std::getline(in, line));
        const auto cells = split(line, ',');
        EXPECT_EQ(std::stoul(cells[0]), r.id);
        EXPECT_EQ(std::stoi(cells[1]), r.domain);
        for (std::size_t i = 0; i < r.mu_c.size(); ++i) EXPECT_EQ(std::stof(cells[2 + i]), r.mu_c[i]);
        for (std::size_t i = 0; i < r.mu_d.size(); ++i) EXPECT_EQ(std::stof(cells[2 + r.mu_c.size() + i]), r.mu_d[i]);
    }
}

TEST(Montage, AlternatesOriginalsAndReconstructions) {
    const Checkpoint c = fresh_checkpoint();
    const Dataset ds = synth(3);
    const Tensor m = reconstruction_montage(c, ds, 6, 3);
    // Tiles are separated by one-pixel white gutters.
    ASSERT_EQ(m.shape(), (Shape{4 * 32 + 3, 3 * 32 + 2, 1}));
    const Tensor r0 = reconstruct(c, ds.images[0]);
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            const auto src = static_cast<std::size_t>(y * 32 + x);
            EXPECT_EQ(m[static_cast<std::size_t>(y * 98 + x)], ds.images[0][src]);
            EXPECT_EQ(m[static_cast<std::size_t>((33 + y) * 98 + x)], r0[src]);
        }
    }
    EXPECT_EQ(m[32], 1.0f);
}
