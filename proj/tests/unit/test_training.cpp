#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "srae/data.hpp"
#include "srae/error.hpp"
#include "srae/losses.hpp"
#include "srae/training.hpp"

using namespace srae;
namespace fs = std::filesystem;

namespace {

SraeHyper small_hyper() {
    SraeHyper h;
    h.image_h = h.image_w = 16;
    h.a = h.b = 4;
    h.k = 3;
    h.j = 2;
    h.trunk_widths = {6, 8};
    h.stream_width = 8;
    h.decoder_widths = {8, 6};
    h.disc_width = 8;
    return h;
}

Dataset small_dataset(int per_domain, std::uint64_t seed = 0) {
    SynthSpec spec;
    spec.counts = {per_domain, per_domain};
    spec.image_size = 16;
    spec.min_size = 3.0f;
    spec.max_size = 5.0f;
    spec.seed = seed;
    return generate_synthetic(spec);
}

TrainConfig small_config(Variant v = Variant::TwoDisc) {
    TrainConfig c;
    c.hyper = small_hyper();
    c.variant = v;
    c.epochs = 1;
    c.batch_size = 4;
    c.seed = 5;
    return c;
}

// Names of tensors whose contents differ between two stores.
std::set<std::string> changed(const ParamStore& before, const ParamStore& after) {
    std::set<std::string> out;
    for (const auto& [name, t] : before.tensors()) {
        if (!bitwise_equal(t, after.at(name))) out.insert(name);
    }
    return out;
}

struct StepFixture {
    SraeHyper hyper = small_hyper();
    FeatureExtractor extractor = FeatureExtractor::standard(1, 3);
    OpGraph graph;
    Bindings data;
    ParamStore params;

    StepFixture(Variant v, std::uint64_t seed) {
        graph = build_training_graph(hyper, v, extractor, 0.0);
        params = init_params(hyper, v, seed);
        const Dataset ds = small_dataset(4, seed);
        auto [batch, next] = sample_batch(ds, 8, RngState{seed, 0});
        (void)next;
        data = training_bindings(params, extractor, batch, sample_noise(hyper, 8, RngState{seed, 1}), hyper.m);
    }
};

void expect_only(const std::set<std::string>& changed_names, const ParamStore& params,
                 std::initializer_list<Group> allowed) {
    const std::set<std::string> permitted = params.names_in(allowed);
    EXPECT_FALSE(changed_names.empty());
    for (const auto& name : changed_names) EXPECT_TRUE(permitted.count(name)) << name << " changed";
}

class TempFile {
public:
    explicit TempFile(const std::string& stem) : path_(fs::temp_directory_path() / ("srae_" + stem)) {}
    ~TempFile() { fs::remove(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

}  // namespace

TEST(UpdateRules, DiscriminatorTouchesOnlyDiscriminators) {
    for (Variant v : {Variant::OneDisc, Variant::TwoDisc}) {
        StepFixture f(v, 1);
        const ParamStore before = f.params;
        discriminator_update(f.params, f.graph, f.data, 0.1);
        expect_only(changed(before, f.params), before, {Group::ContentDisc, Group::DomainDisc});
    }
}

TEST(UpdateRules, ReconstructionTouchesOnlyAutoencoder) {
    for (Variant v : {Variant::OneDisc, Variant::TwoDisc}) {
        StepFixture f(v, 2);
        const ParamStore before = f.params;
        reconstruction_update(f.params, f.graph, f.data, 0.1);
        const auto c = changed(before, f.params);
        expect_only(c, before, {Group::Trunk, Group::Content, Group::Domain, Group::Decoder});
        for (const auto& n : before.names_in(Group::Decoder)) {
            if (n.ends_with("/w")) {
                EXPECT_TRUE(c.count(n)) << n;
            }
        }
    }
}

TEST(UpdateRules, EntropyAscentTouchesOnlyContentStream) {
    for (Variant v : {Variant::OneDisc, Variant::TwoDisc}) {
        StepFixture f(v, 3);
        const ParamStore before = f.params;
        content_entropy_update(f.params, f.graph, f.data, 0.1);
        expect_only(changed(before, f.params), before, {Group::Content});
    }
}

TEST(UpdateRules, DomainStreamTouchesOnlyDomainStream) {
    StepFixture f(Variant::TwoDisc, 4);
    const ParamStore before = f.params;
    domain_stream_update(f.params, f.graph, f.data, 0.1);
    expect_only(changed(before, f.params), before, {Group::Domain});

    StepFixture one(Variant::OneDisc, 4);
    EXPECT_THROW(domain_stream_update(one.params, one.graph, one.data, 0.1), ContractError);
}

TEST(UpdateRules, SmallDiscriminatorStepDescends) {
    int violations = 0;
    const int seeds = 24;
    for (int s = 0; s < seeds; ++s) {
        StepFixture f(Variant::TwoDisc, 100 + static_cast<std::uint64_t>(s));
        f.params.bind(f.data);
        const double before = evaluate(f.graph, f.data, {out::kDiscLoss}).at(out::kDiscLoss).item();
        discriminator_update(f.params, f.graph, f.data, 1e-3);
        f.params.bind(f.data);
        const double after = evaluate(f.graph, f.data, {out::kDiscLoss}).at(out::kDiscLoss).item();
        if (!(after < before)) ++violations;
    }
    EXPECT_LE(violations, seeds / 10);
}

TEST(UpdateRules, EntropyAscentIncreasesEntropy) {
    int violations = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        StepFixture f(Variant::TwoDisc, 300 + static_cast<std::uint64_t>(s));
        const double before = content_entropy_update(f.params, f.graph, f.data, 1e-3);
        f.params.bind(f.data);
        const double after = evaluate(f.graph, f.data, {out::kEntropy}).at(out::kEntropy).item();
        if (!(after > before)) ++violations;
    }
    EXPECT_LE(violations, seeds / 10);
}

TEST(TrainStep, VariantMismatchIsContractError) {
    TrainConfig c = small_config(Variant::TwoDisc);
    ParamStore p = init_params(c.hyper, Variant::OneDisc, 0);
    const Dataset ds = small_dataset(4);
    auto [batch, next] = sample_batch(ds, 4, RngState{});
    (void)next;
    EXPECT_THROW(train_step(p, c.hyper, FeatureExtractor::standard(1, 0), batch, c, RngState{}), ContractError);
}

TEST(Train, SmokeStepCountAndFiniteMetrics) {
    const Dataset ds = small_dataset(10);
    int epochs_seen = 0;
    TrainHooks hooks;
    hooks.on_epoch = [&](int epoch, const MetricsLog& log) {
        epochs_seen = epoch;
        EXPECT_EQ(log.records().size(), 5u);
    };
    const TrainResult r = train(small_config(), ds, hooks);
    EXPECT_EQ(epochs_seen, 1);
    EXPECT_EQ(r.checkpoint.step, 5u);
    ASSERT_EQ(r.metrics.records().size(), 5u);
    for (const auto& rec : r.metrics.records()) {
        EXPECT_TRUE(std::isfinite(rec.l_r));
        EXPECT_TRUE(std::isfinite(rec.l_q_c));
        ASSERT_TRUE(rec.l_q_d.has_value());
        EXPECT_TRUE(std::isfinite(*rec.l_q_d));
    }
}

TEST(Train, OneDiscHasNoDomainLoss) {
    const TrainResult r = train(small_config(Variant::OneDisc), small_dataset(4));
    EXPECT_FALSE(r.checkpoint.params.has_group(Group::DomainDisc));
    for (const auto& rec : r.metrics.records()) EXPECT_FALSE(rec.l_q_d.has_value());
}

TEST(Train, StepsIncreaseStrictlyAndEntropyBounded) {
    TrainConfig c = small_config();
    c.epochs = 3;
    const TrainResult r = train(c, small_dataset(8));
    std::uint64_t prev = 0;
    for (const auto& rec : r.metrics.records()) {
        EXPECT_GT(rec.step, prev);
        prev = rec.step;
        EXPECT_GE(rec.entropy_qc, 0.0);
        EXPECT_LE(rec.entropy_qc, std::log(2.0) + 1e-6);
    }
}

TEST(Train, BitwiseReproducible) {
    TrainConfig c = small_config();
    c.epochs = 2;
    const Dataset ds = small_dataset(8);
    const TrainResult a = train(c, ds), b = train(c, ds);
    EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
    EXPECT_EQ(a.metrics.to_csv(false), b.metrics.to_csv(false));
    c.seed = 6;
    const TrainResult d = train(c, ds);
    EXPECT_NE(serialize_checkpoint(a.checkpoint), serialize_checkpoint(d.checkpoint));
}

TEST(Train, ExtractorIsNotPartOfCheckpoint) {
    const TrainResult r = train(small_config(), small_dataset(4));
    for (const auto& [name, t] : r.checkpoint.params.tensors()) EXPECT_FALSE(name.starts_with("extractor/")) << name;
}

TEST(Train, RejectsMismatchedDataset) {
    TrainConfig c = small_config();
    SynthSpec spec;
    spec.counts = {4, 4};
    EXPECT_THROW(train(c, generate_synthetic(spec)), ConfigError);
    c.batch_size = 3;
    EXPECT_THROW(train(c, small_dataset(4)), Error);
}

TEST(Train, CheckpointHookCadence) {
    TrainConfig c = small_config();
    c.epochs = 4;
    c.checkpoint_every = 2;
    std::vector<int> seen;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](int epoch, const Checkpoint& ck) {
        seen.push_back(epoch);
        EXPECT_EQ(ck.step, static_cast<std::uint64_t>(epoch) * 2u);
    };
    train(c, small_dataset(4), hooks);
    EXPECT_EQ(seen, (std::vector<int>{2, 4}));
}

TEST(Checkpoint, RoundTripIsBitwise) {
    for (Variant v : {Variant::OneDisc, Variant::TwoDisc}) {
        const TrainResult r = train(small_config(v), small_dataset(4));
        TempFile f("roundtrip.ckpt");
        save_checkpoint(r.checkpoint, f.path());
        const Checkpoint back = load_checkpoint(f.path());
        EXPECT_TRUE(back == r.checkpoint);
        EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(r.checkpoint));
        for (const auto& [name, t] : r.checkpoint.params.tensors()) EXPECT_TRUE(bitwise_equal(t, back.params.at(name)));
    }
}

TEST(Checkpoint, PreservesLargeRngState) {
    Checkpoint c;
    c.hyper = small_hyper();
    c.variant = Variant::TwoDisc;
    c.params = init_params(c.hyper, c.variant, 1);
    c.rng = RngState{0xfedcba9876543210ull, 0x0123456789abcdefull};
    c.step = 77;
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(c));
    EXPECT_EQ(back.rng, c.rng);
    EXPECT_EQ(back.step, 77u);
    EXPECT_EQ(back.hyper, c.hyper);
}

TEST(Checkpoint, WrongMagicIsNotACheckpoint) {
    const TrainResult r = train(small_config(), small_dataset(4));
    auto bytes = serialize_checkpoint(r.checkpoint);
    std::copy_n("XXXX", 4, bytes.begin());
    try {
        deserialize_checkpoint(bytes);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("not a checkpoint"), std::string::npos);
    }
}

TEST(Checkpoint, TruncationIsCorrupt) {
    const TrainResult r = train(small_config(), small_dataset(4));
    const auto bytes = serialize_checkpoint(r.checkpoint);
    for (std::size_t cut : {std::size_t{6}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
        std::vector<unsigned char> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        try {
            deserialize_checkpoint(t);
            FAIL() << cut;
        } catch (const IoError& e) {
            EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos) << e.what();
        }
    }
}

TEST(Checkpoint, UnsupportedVersion) {
    const TrainResult r = train(small_config(), small_dataset(4));
    auto bytes = serialize_checkpoint(r.checkpoint);
    bytes[4] = 9;
    try {
        deserialize_checkpoint(bytes);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported version 9"), std::string::npos);
    }
}

TEST(Checkpoint, MissingFileNamesPath) {
    try {
        load_checkpoint("/nonexistent/dir/model.ckpt");
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/model.ckpt"), std::string::npos);
    }
}

TEST(Metrics, CsvHeaderAndRows) {
    MetricsLog log;
    log.append({1, 0.5, 0.7, std::nullopt, 0.2, 0.01});
    log.append({2, 0.25, 0.6, 0.3, 0.4, 0.02});
    std::istringstream in(log.to_csv());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,l_r,l_q_c,l_q_d,entropy_qc,seconds");
    std::getline(in, line);
    EXPECT_EQ(line, "1,0.5,0.7,,0.2,0.01");
    std::getline(in, line);
    EXPECT_EQ(line, "2,0.25,0.6,0.3,0.4,0.02");
    EXPECT_EQ(log.to_csv(false).substr(0, 33), "step,l_r,l_q_c,l_q_d,entropy_qc\n1");
    EXPECT_DOUBLE_EQ(log.mean_entropy(0, 2), 0.3);
}

TEST(Metrics, NonIncreasingStepRejected) {
    MetricsLog log;
    log.append({3, 0, 0, std::nullopt, 0, 0});
    EXPECT_THROW(log.append({3, 0, 0, std::nullopt, 0, 0}), ContractError);
    EXPECT_THROW(log.append({2, 0, 0, std::nullopt, 0, 0}), ContractError);
}

TEST(Metrics, WriteCsvToFile) {
    const TrainResult r = train(small_config(), small_dataset(4));
    TempFile f("metrics.csv");
    r.metrics.write_csv(f.path());
    std::ifstream in(f.path());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,l_r,l_q_c,l_q_d,entropy_qc,seconds");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    EXPECT_EQ(rows, 2);
}

TEST(TrainConfigCheck, RejectsBadValues) {
    TrainConfig c;
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_recon = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 3;
    EXPECT_THROW(c.validate(), ConfigError);
}
