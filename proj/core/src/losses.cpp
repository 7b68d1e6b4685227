#include "srae/losses.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace srae {

namespace {

constexpr std::uint64_t kExtractorStream = 0xfea7;
constexpr std::uint64_t kNoiseStream = 0x7015e;

void check_distribution(std::span<const float> q) {
    if (q.empty()) throw ContractError("empty probability vector");
    double total = 0.0;
    for (float v : q) {
        if (v < 0.0f) throw ContractError("probability vector has a negative entry");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) {
        throw ContractError("probability vector sums to " + std::to_string(total));
    }
}

}  // namespace

FeatureExtractor::FeatureExtractor(int image_channels, std::vector<int> widths, std::uint64_t seed)
    : channels_(image_channels), widths_(std::move(widths)), seed_(seed) {
    if (image_channels <= 0) throw ConfigError("extractor: image channels must be positive");
    auto engine = make_engine(RngState{seed, 0}, kExtractorStream);
    int cin = channels_;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
        if (widths_[i] <= 0) throw ConfigError("extractor: widths must be positive");
        Tensor w(Shape{3, 3, cin, widths_[i]});
        const double bound = std::sqrt(6.0 / (9.0 * cin));
        for (auto& v : w.data()) {
            const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
            v = static_cast<float>((2.0 * u - 1.0) * bound);
        }
        const std::string name = "extractor/conv" + std::to_string(i);
        weights_.emplace(name + "/w", std::move(w));
        weights_.emplace(name + "/b", Tensor(Shape{widths_[i]}));
        cin = widths_[i];
    }
}

std::vector<NodeId> FeatureExtractor::add_taps(OpGraph& g, NodeId image) const {
    std::vector<NodeId> taps{image};
    NodeId h = image;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
        const std::string name = "extractor/conv" + std::to_string(i);
        h = g.leaky_relu(g.conv2d(h, g.input(name + "/w"), g.input(name + "/b"), 2, 1), 0.2);
        taps.push_back(h);
    }
    return taps;
}

void FeatureExtractor::bind(Bindings& bindings) const {
    for (const auto& [name, t] : weights_) bindings.insert_or_assign(name, t);
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
    Tensor x = image;
    const bool single = x.rank() == 3;
    if (single) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
    OpGraph g;
    const auto taps = add_taps(g, g.input("x"));
    std::vector<std::string> names;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        names.push_back("tap" + std::to_string(i));
        g.set_output(names.back(), taps[i]);
    }
    Bindings b;
    bind(b);
    b.insert_or_assign("x", x);
    TensorMap out = evaluate(g, b, names);
    std::vector<Tensor> result;
    for (const auto& n : names) {
        const Tensor& t = out.at(n);
        result.push_back(single ? t.reshaped(Shape(t.shape().begin() + 1, t.shape().end())) : t);
    }
    return result;
}

double perceptual_loss(const FeatureExtractor& p, const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw ShapeError("perceptual_loss: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
    }
    const auto fx = p.features(x);
    const auto fy = p.features(x_hat);
    return perceptual_loss_from_features(fx, fy);
}

double perceptual_loss_from_features(std::span<const Tensor> fx, std::span<const Tensor> fy) {
    if (fx.size() != fy.size()) throw ShapeError("perceptual_loss: differing tap counts");
    double total = 0.0;
    for (std::size_t i = 0; i < fx.size(); ++i) {
        if (fx[i].shape() != fy[i].shape()) {
            throw ShapeError("perceptual_loss: tap " + std::to_string(i) + " shapes " + shape_str(fx[i].shape()) +
                             " vs " + shape_str(fy[i].shape()));
        }
        double acc = 0.0;
        for (std::size_t e = 0; e < fx[i].size(); ++e) {
            const double d = static_cast<double>(fx[i][e]) - fy[i][e];
            acc += d * d;
        }
        total += acc / static_cast<double>(fx[i].size());
    }
    return total;
}

double cross_entropy(std::span<const float> q, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= q.size()) {
        throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(q.size()) + ")");
    }
    check_distribution(q);
    return -std::log(std::max(static_cast<double>(q[static_cast<std::size_t>(label)]), kProbFloor));
}

double entropy(std::span<const float> q) {
    check_distribution(q);
    double h = 0.0;
    for (float v : q) h -= static_cast<double>(v) * std::log(std::max(static_cast<double>(v), kProbFloor));
    return h;
}

// ---------------------------------------------------------------------------

namespace {

// Batch mean of the per-example KL(N(mu, exp(logvar)) || N(0, 1)).
NodeId kl_term(OpGraph& g, NodeId mu, NodeId logvar) {
    NodeId t = g.sub(g.sub(g.affine(logvar, 1.0, 1.0), g.mul(mu, mu)), g.exp(logvar));
    return g.affine(g.batch_mean(t), -0.5);
}

// Returns {batch-mean cross-entropy, batch-mean entropy}.
std::pair<NodeId, NodeId> classifier_terms(OpGraph& g, NodeId q, NodeId onehot) {
    NodeId log_q = g.log(g.clamp_min(q, kProbFloor));
    NodeId ce = g.affine(g.batch_mean(g.mul(onehot, log_q)), -1.0);
    NodeId neg_h = g.batch_mean(g.mul(q, log_q));
    return {ce, neg_h};
}

}  // namespace

OpGraph build_training_graph(const SraeHyper& hyper, Variant variant, const FeatureExtractor& extractor,
                             double beta_kl) {
    hyper.validate();
    OpGraph g;
    NodeId x = g.input("x");
    NodeId onehot = g.input("onehot");
    EncoderNodes e = add_encoder(g, hyper, x, g.input("eps_c"), g.input("eps_d"));
    NodeId x_hat = add_decoder(g, hyper, e.z_c, e.z_d);
    g.set_output(out::kXHat, x_hat);
    g.set_output("mu_c", e.mu_c);
    g.set_output("mu_d_vec", e.mu_d_vec);
    g.set_output("z_c", e.z_c);
    g.set_output("z_d", e.z_d);

    const auto taps_x = extractor.add_taps(g, x);
    const auto taps_y = extractor.add_taps(g, x_hat);
    std::optional<NodeId> l_r;
    for (std::size_t i = 0; i < taps_x.size(); ++i) {
        NodeId d = g.sub(taps_x[i], taps_y[i]);
        NodeId term = g.mean(g.mul(d, d));
        l_r = l_r ? g.add(*l_r, term) : term;
    }
    g.set_output(out::kLr, *l_r);

    NodeId q_c = add_discriminator(g, hyper, Group::ContentDisc, hyper.k, e.z_c);
    g.set_output(out::kQc, q_c);
    auto [l_q_c, neg_h] = classifier_terms(g, q_c, onehot);
    g.set_output(out::kLqc, l_q_c);
    g.set_output(out::kNegEntropy, neg_h);
    g.set_output(out::kEntropy, g.affine(neg_h, -1.0));

    NodeId disc_loss = l_q_c;
    if (variant == Variant::TwoDisc) {
        NodeId q_d = add_discriminator(g, hyper, Group::DomainDisc, hyper.j, e.z_d);
        g.set_output(out::kQd, q_d);
        NodeId l_q_d = classifier_terms(g, q_d, onehot).first;
        g.set_output(out::kLqd, l_q_d);
        disc_loss = g.add(l_q_c, l_q_d);
    }
    g.set_output(out::kDiscLoss, disc_loss);

    NodeId kl = g.add(kl_term(g, e.mu_c, e.logvar_c), kl_term(g, e.mu_d_vec, e.logvar_d_vec));
    g.set_output(out::kKl, kl);
    g.set_output(out::kReconLoss, beta_kl > 0.0 ? g.add(*l_r, g.affine(kl, beta_kl)) : *l_r);
    return g;
}

NoiseDraw zero_noise(const SraeHyper& hyper, int n) {
    return NoiseDraw{Tensor(Shape{n, hyper.a, hyper.b, hyper.k}), Tensor(Shape{n, 1, 1, hyper.j})};
}

NoiseDraw sample_noise(const SraeHyper& hyper, int n, const RngState& rng) {
    auto engine = make_engine(rng, kNoiseStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    NoiseDraw draw = zero_noise(hyper, n);
    for (auto& v : draw.eps_c.data()) v = static_cast<float>(normal(engine));
    for (auto& v : draw.eps_d.data()) v = static_cast<float>(normal(engine));
    return draw;
}

Tensor one_hot(const std::vector<int>& labels, int m) {
    Tensor t(Shape{static_cast<int>(labels.size()), m});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= m) throw ContractError("label " + std::to_string(labels[i]) + " out of range");
        t[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(labels[i])] = 1.0f;
    }
    return t;
}

Bindings training_bindings(const ParamStore& params, const FeatureExtractor& extractor, const Batch& batch,
                           const NoiseDraw& noise, int m) {
    Bindings b;
    params.bind(b);
    extractor.bind(b);
    b.insert_or_assign("x", batch.images);
    b.insert_or_assign("onehot", one_hot(batch.labels, m));
    b.insert_or_assign("eps_c", noise.eps_c);
    b.insert_or_assign("eps_d", noise.eps_d);
    return b;
}

LossReport srae_losses(const ParamStore& params, const SraeHyper& hyper, const FeatureExtractor& extractor,
                       const Batch& batch, const NoiseDraw& noise, Variant variant, double beta_kl) {
    if (params.variant() != variant) throw ContractError("srae_losses: parameter store variant mismatch");
    if (batch.images.rank() != 4 || static_cast<std::size_t>(batch.images.dim(0)) != batch.labels.size()) {
        throw ShapeError("srae_losses: batch images and labels disagree");
    }
    const OpGraph g = build_training_graph(hyper, variant, extractor, beta_kl);
    std::vector<std::string> wanted{out::kLr, out::kLqc, out::kEntropy};
    if (variant == Variant::TwoDisc) wanted.push_back(out::kLqd);
    if (beta_kl > 0.0) wanted.push_back(out::kKl);
    TensorMap v = evaluate(g, training_bindings(params, extractor, batch, noise, hyper.m), wanted);
    LossReport r;
    r.l_r = v.at(out::kLr).item();
    r.l_q_c = v.at(out::kLqc).item();
    r.l_c_entropy = v.at(out::kEntropy).item();
    if (variant == Variant::TwoDisc) r.l_q_d = v.at(out::kLqd).item();
    if (beta_kl > 0.0) r.kl = v.at(out::kKl).item();
    return r;
}

}  // namespace srae
