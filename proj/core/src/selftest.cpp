#include "srae/selftest.hpp"

#include <cmath>
#include <sstream>

#include "srae/losses.hpp"
#include "srae/rng.hpp"
#include "srae/training.hpp"

namespace srae {

namespace {

constexpr double kStep = 1e-3;
constexpr double kTolerance = 5e-3;

class Filler {
public:
    explicit Filler(std::uint64_t seed, std::uint64_t stream) : engine_(make_engine(RngState{seed, 0}, stream)) {}

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    Tensor tensor(Shape s, double lo = -1.0, double hi = 1.0) {
        Tensor t(std::move(s));
        for (auto& v : t.data()) v = static_cast<float>(uniform(lo, hi));
        return t;
    }

    // Values bounded away from zero so kinks at 0 are not straddled by +-h.
    Tensor away_from_zero(Shape s) {
        Tensor t(std::move(s));
        for (auto& v : t.data()) {
            const double u = uniform(-1.0, 1.0);
            v = static_cast<float>((u < 0 ? -1.0 : 1.0) * (0.05 + std::abs(u)));
        }
        return t;
    }

private:
    std::mt19937_64 engine_;
};

// loss = sum(y * R), R bound as input "proj".
GradCase projected(std::string name, OpGraph g, NodeId y, Bindings b, Filler& f) {
    g.set_output("y", y);
    const Shape y_shape = evaluate(g, b, {"y"}).at("y").shape();
    b.insert_or_assign("proj", f.tensor(y_shape));
    g.set_output("loss", g.sum(g.mul(y, g.input("proj"))));
    return GradCase{std::move(name), std::move(g), std::move(b)};
}

}  // namespace

std::vector<GradCase> operator_grad_cases(std::uint64_t seed) {
    Filler f(seed, 0x9c);
    std::vector<GradCase> cases;
    auto unary = [&](const std::string& name, auto op, Tensor x) {
        OpGraph g;
        NodeId in = g.parameter("x");
        NodeId y = op(g, in);
        cases.push_back(projected(name, std::move(g), y, Bindings{{"x", std::move(x)}}, f));
    };

    {
        OpGraph g;
        NodeId y = g.conv2d(g.parameter("x"), g.parameter("w"), g.parameter("b"), 1, 1);
        cases.push_back(projected("conv2d_s1", std::move(g), y,
                                  {{"x", f.tensor({2, 5, 5, 3})}, {"w", f.tensor({3, 3, 3, 4})}, {"b", f.tensor({4})}}, f));
    }
    {
        OpGraph g;
        NodeId y = g.conv2d(g.parameter("x"), g.parameter("w"), g.parameter("b"), 2, 1);
        cases.push_back(projected("conv2d_s2", std::move(g), y,
                                  {{"x", f.tensor({2, 6, 6, 2})}, {"w", f.tensor({3, 3, 2, 3})}, {"b", f.tensor({3})}}, f));
    }
    {
        // 3x3 conv + leaky-relu + squared-L2.
        OpGraph g;
        NodeId c = g.conv2d(g.parameter("x"), g.parameter("w"), g.parameter("b"), 1, 1);
        g.set_output("loss", g.sum_squares(g.leaky_relu(c, 0.2)));
        cases.push_back({"conv_lrelu_l2", std::move(g),
                         {{"x", f.tensor({1, 4, 4, 2})}, {"w", f.tensor({3, 3, 2, 3})}, {"b", f.tensor({3})}}});
    }
    unary("upsample2x", [](OpGraph& g, NodeId x) { return g.upsample2x(x); }, f.tensor({2, 2, 3, 2}));
    {
        OpGraph g;
        NodeId y = g.dense(g.parameter("x"), g.parameter("w"), g.parameter("b"));
        cases.push_back(projected("dense", std::move(g), y,
                                  {{"x", f.tensor({3, 2, 2})}, {"w", f.tensor({4, 5})}, {"b", f.tensor({5})}}, f));
    }
    unary("leaky_relu", [](OpGraph& g, NodeId x) { return g.leaky_relu(x, 0.2); }, f.away_from_zero({2, 3, 4}));
    unary("sigmoid", [](OpGraph& g, NodeId x) { return g.sigmoid(x); }, f.tensor({2, 7}, -3, 3));
    unary("tanh", [](OpGraph& g, NodeId x) { return g.tanh(x); }, f.tensor({2, 7}, -2, 2));
    unary("exp", [](OpGraph& g, NodeId x) { return g.exp(x); }, f.tensor({2, 7}, -2, 2));
    unary("log", [](OpGraph& g, NodeId x) { return g.log(x); }, f.tensor({2, 7}, 0.5, 2.0));
    unary("clamp_min", [](OpGraph& g, NodeId x) { return g.clamp_min(x, 0.0); }, f.away_from_zero({2, 7}));
    unary("softmax", [](OpGraph& g, NodeId x) { return g.softmax(x); }, f.tensor({3, 4}, -2, 2));
    unary("affine", [](OpGraph& g, NodeId x) { return g.affine(x, -1.5, 0.25); }, f.tensor({2, 5}));
    unary("tile_flat", [](OpGraph& g, NodeId x) { return g.tile(x, 2, 3); }, f.tensor({2, 4}));
    unary("tile_cube", [](OpGraph& g, NodeId x) { return g.tile(x, 3, 2); }, f.tensor({2, 1, 1, 3}));
    unary("global_avg_pool", [](OpGraph& g, NodeId x) { return g.global_avg_pool(x); }, f.tensor({2, 3, 3, 4}));
    unary("reshape", [](OpGraph& g, NodeId x) { return g.reshape(x, {6}); }, f.tensor({2, 2, 3}));
    for (const char* which : {"add", "sub", "mul", "concat"}) {
        OpGraph g;
        NodeId a = g.parameter("a"), b = g.parameter("b");
        const std::string w = which;
        NodeId y = w == "add" ? g.add(a, b) : w == "sub" ? g.sub(a, b) : w == "mul" ? g.mul(a, b) : g.concat(a, b);
        Bindings bind{{"a", f.tensor({2, 2, 3})}, {"b", f.tensor(w == "concat" ? Shape{2, 2, 2} : Shape{2, 2, 3})}};
        cases.push_back(projected(w, std::move(g), y, std::move(bind), f));
    }
    for (const char* which : {"sum_squares", "mean", "sum", "batch_mean"}) {
        OpGraph g;
        NodeId x = g.parameter("x");
        const std::string w = which;
        NodeId y = w == "sum_squares" ? g.sum_squares(x) : w == "mean" ? g.mean(x) : w == "sum" ? g.sum(x) : g.batch_mean(x);
        // Square afterwards so the reduction's gradient depends on the input.
        g.set_output("loss", g.mul(y, y));
        cases.push_back({w, std::move(g), {{"x", f.tensor({3, 4})}}});
    }
    return cases;
}

SraeHyper tiny_hyper() {
    SraeHyper h;
    h.image_h = h.image_w = 8;
    h.image_c = 1;
    h.a = h.b = 2;
    h.k = 2;
    h.j = 2;
    h.m = 2;
    h.trunk_widths = {4, 4};
    h.stream_width = 4;
    h.decoder_widths = {4, 3};
    h.disc_width = 4;
    return h;
}

GradCase model_grad_case(Variant variant, const std::string& loss_output, std::uint64_t seed) {
    const SraeHyper h = tiny_hyper();
    Filler f(seed, 0x90de1);
    const FeatureExtractor extractor(h.image_c, {3, 4}, seed + 11);
    OpGraph g = build_training_graph(h, variant, extractor, 0.1);
    g.set_output("loss", g.output(loss_output));

    ParamStore params = init_params(h, variant, seed);
    // Non-zero biases so every bias gradient path is exercised.
    for (const auto& [name, t] : params.tensors()) {
        if (name.ends_with("/b")) params.at(name) = f.tensor(t.shape(), -0.1, 0.1);
    }
    Batch batch;
    batch.images = f.tensor({2, h.image_h, h.image_w, h.image_c}, 0.0, 1.0);
    batch.labels = {0, 1};
    NoiseDraw noise{f.tensor({2, h.a, h.b, h.k}), f.tensor({2, 1, 1, h.j})};
    return GradCase{std::string(variant_name(variant)) + "/" + loss_output, std::move(g),
                    training_bindings(params, extractor, batch, noise, h.m)};
}

namespace {

SelftestResult grad_result(const GradCase& c, int probes) {
    const GradCheckReport rep = finite_diff_check(c.graph, c.bindings, "loss", kStep, kTolerance, probes);
    std::ostringstream ss;
    ss << "worst relative error " << rep.worst_relative_error;
    for (const auto& e : rep.entries) {
        if (!e.passed) ss << "; " << e.parameter << " rel " << e.relative_error;
    }
    return {"gradcheck " + c.name, rep.passed(), ss.str()};
}

SelftestResult invariant(const std::string& name, bool ok, std::string detail = {}) {
    return {name, ok, std::move(detail)};
}

}  // namespace

std::vector<SelftestResult> run_selftest(int seeds, const std::function<void(const SelftestResult&)>& progress) {
    std::vector<SelftestResult> results;
    auto record = [&](SelftestResult r) {
        if (progress) progress(r);
        results.push_back(std::move(r));
    };
    auto guarded = [&](const std::string& name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            record({name, false, e.what()});
        }
    };

    for (int s = 0; s < seeds; ++s) {
        guarded("gradcheck operators", [&] {
            for (const auto& c : operator_grad_cases(static_cast<std::uint64_t>(s))) record(grad_result(c, 0));
        });
    }
    for (Variant v : {Variant::OneDisc, Variant::TwoDisc}) {
        std::vector<std::string> losses{out::kDiscLoss, out::kReconLoss, out::kNegEntropy};
        if (v == Variant::TwoDisc) losses.push_back(out::kLqd);
        for (const auto& loss : losses) {
            guarded("gradcheck model", [&] { record(grad_result(model_grad_case(v, loss, 7), 12)); });
        }
    }

    guarded("invariants", [&] {
        const SraeHyper h = tiny_hyper();
        Filler f(99, 1);
        const ParamStore p = init_params(h, Variant::TwoDisc, 3);
        const Tensor x = f.tensor({4, h.image_h, h.image_w, h.image_c}, 0.0, 1.0);
        const LatentPair lp = encode(p, h, x, f.tensor({4, h.a, h.b, h.k}), f.tensor({4, 1, 1, h.j}));
        bool constant = true;
        for (int n = 0; n < 4; ++n)
            for (int pos = 0; pos < h.a * h.b; ++pos)
                for (int c = 0; c < h.j; ++c)
                    constant &= lp.z_d[(static_cast<std::size_t>(n) * h.a * h.b + pos) * h.j + c] ==
                                lp.z_d[static_cast<std::size_t>(n) * h.a * h.b * h.j + c];
        record(invariant("z_d spatially constant", constant));

        const Tensor q = discriminate(p, h, Group::ContentDisc, lp.z_c);
        bool normalized = true, bounded = true;
        for (int n = 0; n < 4; ++n) {
            std::span<const float> row(q.raw() + n * h.m, static_cast<std::size_t>(h.m));
            double total = 0.0;
            for (float v : row) total += v;
            normalized &= std::abs(total - 1.0) <= 1e-5;
            const double H = entropy(row);
            bounded &= H >= 0.0 && H <= std::log(h.m) + 1e-5;
        }
        record(invariant("softmax rows sum to 1", normalized));
        record(invariant("entropy within [0, ln m]", bounded));

        const Tensor x_hat = decode(p, h, lp.z_c, lp.z_d);
        bool in_range = x_hat.shape() == x.shape();
        for (float v : x_hat.data()) in_range &= v >= 0.0f && v <= 1.0f;
        record(invariant("decoder output in [0,1] with input shape", in_range));

        const FeatureExtractor extractor(h.image_c, {3, 4}, 5);
        const FeatureExtractor frozen = extractor;
        TrainConfig cfg;
        cfg.hyper = h;
        cfg.variant = Variant::TwoDisc;
        Batch batch;
        batch.images = x;
        batch.labels = {0, 1, 0, 1};
        ParamStore trained = p;
        const OpGraph g = build_training_graph(h, cfg.variant, extractor, 0.0);
        const Bindings data = training_bindings(trained, extractor, batch, sample_noise(h, 4, {1, 2}), h.m);
        auto isolated = [&](const char* name, auto update, std::initializer_list<Group> allowed) {
            const ParamStore before = trained;
            update();
            bool ok = true;
            for (const auto& [pname, t] : before.tensors()) {
                const bool may_change = std::find(allowed.begin(), allowed.end(), group_of(pname)) != allowed.end();
                if (!may_change) ok &= bitwise_equal(t, trained.at(pname));
            }
            record(invariant(std::string("group isolation: ") + name, ok));
        };
        isolated("discriminator", [&] { discriminator_update(trained, g, data, 0.1); },
                 {Group::ContentDisc, Group::DomainDisc});
        isolated("reconstruction", [&] { reconstruction_update(trained, g, data, 0.1); },
                 {Group::Trunk, Group::Content, Group::Domain, Group::Decoder});
        isolated("content entropy", [&] { content_entropy_update(trained, g, data, 0.1); }, {Group::Content});
        isolated("domain stream", [&] { domain_stream_update(trained, g, data, 0.1); }, {Group::Domain});
        record(invariant("feature extractor frozen", extractor.weights() == frozen.weights()));

        Checkpoint ck{h, Variant::TwoDisc, trained, 5, RngState{9, 5}};
        record(invariant("checkpoint round trip", deserialize_checkpoint(serialize_checkpoint(ck)) == ck));
    });
    return results;
}

}  // namespace srae
