#include "srae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <iterator>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace srae {

void TrainConfig::validate() const {
    hyper.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (batch_size % hyper.m != 0) throw ConfigError("batch_size must be a multiple of the number of domains");
    if (!(lr_recon > 0) || !(alpha1 > 0) || !(alpha2 > 0) || !(lr_disc > 0)) {
        throw ConfigError("learning rates (lr_recon, alpha1, alpha2, lr_disc) must be > 0");
    }
    if (disc_steps_per_ae_step < 1) throw ConfigError("disc_steps must be >= 1");
    if (!(beta_kl >= 0)) throw ConfigError("beta_kl must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

// ---------------------------------------------------------------------------
// Metrics

void MetricsLog::append(const MetricsRecord& r) {
    if (!records_.empty() && r.step <= records_.back().step) {
        throw ContractError("metrics steps must increase (got " + std::to_string(r.step) + " after " +
                            std::to_string(records_.back().step) + ")");
    }
    records_.push_back(r);
}

double MetricsLog::mean_entropy(std::size_t begin, std::size_t end) const {
    end = std::min(end, records_.size());
    if (begin >= end) throw ContractError("mean_entropy over an empty range");
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += records_[i].entropy_qc;
    return acc / static_cast<double>(end - begin);
}

namespace {

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

std::string MetricsLog::to_csv(bool include_seconds) const {
    std::string s = include_seconds ? "step,l_r,l_q_c,l_q_d,entropy_qc,seconds\n" : "step,l_r,l_q_c,l_q_d,entropy_qc\n";
    for (const auto& r : records_) {
        s += std::to_string(r.step) + "," + fmt_real(r.l_r) + "," + fmt_real(r.l_q_c) + "," +
             (r.l_q_d ? fmt_real(*r.l_q_d) : std::string()) + "," + fmt_real(r.entropy_qc);
        if (include_seconds) s += "," + fmt_real(r.seconds);
        s += "\n";
    }
    return s;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics '" + path.string() + "'");
    out << to_csv();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Update rules

namespace {

void sgd(ParamStore& params, const TensorMap& grads, double lr) {
    const float step = static_cast<float>(lr);
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        float* w = p.raw();
        const float* d = g.raw();
        for (std::size_t i = 0; i < p.size(); ++i) w[i] -= step * d[i];
    }
}

// Refreshes the parameter bindings after an update.
Bindings with_params(const Bindings& data, const ParamStore& params) {
    Bindings b = data;
    params.bind(b);
    return b;
}

template <typename F>
auto guarded(const char* term, F&& f) {
    try {
        return f();
    } catch (const NumericError& e) {
        throw NumericError(std::string("non-finite ") + term + " during training: " + e.what());
    }
}

}  // namespace

std::pair<double, std::optional<double>> discriminator_update(ParamStore& params, const OpGraph& g,
                                                              const Bindings& data, double lr) {
    const bool two = params.variant() == Variant::TwoDisc;
    return guarded("discriminator loss (l_q)", [&] {
        std::vector<std::string> extra{out::kLqc};
        if (two) extra.push_back(out::kLqd);
        GradientResult r = backward(g, with_params(data, params), out::kDiscLoss,
                                    params.names_in({Group::ContentDisc, Group::DomainDisc}), extra);
        sgd(params, r.grads, lr);
        std::optional<double> lqd;
        if (two) lqd = r.values.at(out::kLqd).item();
        return std::pair<double, std::optional<double>>{r.values.at(out::kLqc).item(), lqd};
    });
}

double reconstruction_update(ParamStore& params, const OpGraph& g, const Bindings& data, double lr) {
    return guarded("reconstruction loss (l_r)", [&] {
        GradientResult r = backward(g, with_params(data, params), out::kReconLoss,
                                    params.names_in({Group::Trunk, Group::Content, Group::Domain, Group::Decoder}),
                                    {out::kLr});
        sgd(params, r.grads, lr);
        return static_cast<double>(r.values.at(out::kLr).item());
    });
}

double content_entropy_update(ParamStore& params, const OpGraph& g, const Bindings& data, double alpha1) {
    return guarded("content entropy (l_c)", [&] {
        // Descending -H is ascending H.
        GradientResult r = backward(g, with_params(data, params), out::kNegEntropy, params.names_in({Group::Content}));
        sgd(params, r.grads, alpha1);
        return -static_cast<double>(r.loss.item());
    });
}

double domain_stream_update(ParamStore& params, const OpGraph& g, const Bindings& data, double alpha2) {
    if (params.variant() != Variant::TwoDisc) throw ContractError("domain stream update needs the two-disc variant");
    return guarded("domain cross-entropy (l_q_d)", [&] {
        GradientResult r = backward(g, with_params(data, params), out::kLqd, params.names_in({Group::Domain}));
        sgd(params, r.grads, alpha2);
        return static_cast<double>(r.loss.item());
    });
}

LossReport train_step(ParamStore& params, const SraeHyper& hyper, const FeatureExtractor& extractor,
                      const Batch& batch, const TrainConfig& config, const RngState& rng) {
    if (params.variant() != config.variant) throw ContractError("train_step: parameter store variant mismatch");
    const OpGraph g = build_training_graph(hyper, config.variant, extractor, config.beta_kl);
    const NoiseDraw noise = sample_noise(hyper, batch.images.dim(0), rng);
    const Bindings data = training_bindings(params, extractor, batch, noise, hyper.m);

    LossReport report;
    for (int s = 0; s < config.disc_steps_per_ae_step; ++s) {
        auto [lqc, lqd] = discriminator_update(params, g, data, config.lr_disc);
        if (s == 0) {
            report.l_q_c = lqc;
            report.l_q_d = lqd;
        }
    }
    report.l_r = reconstruction_update(params, g, data, config.lr_recon);
    report.l_c_entropy = content_entropy_update(params, g, data, config.alpha1);
    if (config.variant == Variant::TwoDisc) domain_stream_update(params, g, data, config.alpha2);
    return report;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainHooks& hooks) {
    config.validate();
    if (dataset.size() == 0) throw ContractError("cannot train on an empty dataset");
    dataset.validate();
    if (dataset.num_domains != config.hyper.m) {
        throw ConfigError("dataset has " + std::to_string(dataset.num_domains) + " domains, model expects " +
                          std::to_string(config.hyper.m));
    }
    if (dataset.image_shape() != config.hyper.image_shape()) {
        throw ConfigError("dataset images are " + shape_str(dataset.image_shape()) + ", model expects " +
                          shape_str(config.hyper.image_shape()));
    }

    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    ckpt.hyper = config.hyper;
    ckpt.variant = config.variant;
    ckpt.params = init_params(config.hyper, config.variant, config.seed);
    ckpt.rng = RngState{config.seed, 0};
    const FeatureExtractor extractor = FeatureExtractor::standard(config.hyper.image_c, config.extractor_seed);

    const std::size_t steps_per_epoch = std::max<std::size_t>(1, dataset.size() / static_cast<std::size_t>(config.batch_size));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const RngState step_rng = ckpt.rng;
            auto [batch, next] = sample_batch(dataset, config.batch_size, step_rng);
            const LossReport r = train_step(ckpt.params, config.hyper, extractor, batch, config, step_rng);
            ckpt.rng = next;
            ++ckpt.step;
            MetricsRecord rec;
            rec.step = ckpt.step;
            rec.l_r = r.l_r;
            rec.l_q_c = r.l_q_c;
            rec.l_q_d = r.l_q_d;
            rec.entropy_qc = r.l_c_entropy;
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            result.metrics.append(rec);
        }
        if (hooks.on_epoch) hooks.on_epoch(epoch, result.metrics);
        if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && hooks.on_checkpoint) {
            hooks.on_checkpoint(epoch, ckpt);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "SRAE" u32 version u32 variant u32 x8 hyper u64 step u32 count
//   per tensor: u16 name_len, name, u8 rank, u32 dims[rank], f32 data
// The RNG state travels as the tensor "meta/rng": eight 16-bit limbs.

namespace {

constexpr char kMagic[4] = {'S', 'R', 'A', 'E'};
constexpr const char* kRngTensor = "meta/rng";

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <typename U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        le(u);
    }
    std::vector<unsigned char> take() { return std::move(buf_); }

private:
    std::vector<unsigned char> buf_;
};

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw IoError("corrupt checkpoint: truncated at byte " + std::to_string(pos_));
    }
    template <typename U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    float f32() {
        const std::uint32_t u = le<std::uint32_t>();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::vector<unsigned char>& b_;
    std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
    if (name.size() > 0xffff) throw ContractError("tensor name too long");
    w.le(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) w.le(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
}

Tensor rng_tensor(const RngState& rng) {
    Tensor t(Shape{8});
    for (int i = 0; i < 4; ++i) {
        t[static_cast<std::size_t>(i)] = static_cast<float>((rng.seed >> (16 * i)) & 0xffff);
        t[static_cast<std::size_t>(4 + i)] = static_cast<float>((rng.counter >> (16 * i)) & 0xffff);
    }
    return t;
}

RngState rng_from_tensor(const Tensor& t) {
    if (t.shape() != Shape{8}) throw IoError("corrupt checkpoint: malformed rng state");
    RngState r;
    for (int i = 0; i < 4; ++i) {
        r.seed |= static_cast<std::uint64_t>(t[static_cast<std::size_t>(i)]) << (16 * i);
        r.counter |= static_cast<std::uint64_t>(t[static_cast<std::size_t>(4 + i)]) << (16 * i);
    }
    return r;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.params.variant() != ckpt.variant) throw ContractError("checkpoint variant disagrees with its parameters");
    Writer w;
    w.bytes(kMagic, 4);
    w.le(Checkpoint::kVersion);
    w.le(static_cast<std::uint32_t>(ckpt.variant));
    const SraeHyper& h = ckpt.hyper;
    for (int v : {h.image_h, h.image_w, h.image_c, h.a, h.b, h.j, h.k, h.m}) w.le(static_cast<std::uint32_t>(v));
    w.le(static_cast<std::uint64_t>(ckpt.step));
    w.le(static_cast<std::uint32_t>(ckpt.params.size() + 1));
    for (const auto& [name, t] : ckpt.params.tensors()) write_tensor(w, name, t);
    write_tensor(w, kRngTensor, rng_tensor(ckpt.rng));
    return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a checkpoint");
    Reader r(bytes);
    (void)r.str(4);
    const auto version = r.le<std::uint32_t>();
    if (version != Checkpoint::kVersion) throw IoError("unsupported version " + std::to_string(version));
    const auto variant = r.le<std::uint32_t>();
    if (variant != 1 && variant != 2) throw IoError("corrupt checkpoint: unknown variant " + std::to_string(variant));

    Checkpoint ckpt;
    ckpt.variant = static_cast<Variant>(variant);
    SraeHyper& h = ckpt.hyper;
    for (int* field : {&h.image_h, &h.image_w, &h.image_c, &h.a, &h.b, &h.j, &h.k, &h.m}) {
        *field = static_cast<int>(r.le<std::uint32_t>());
    }
    ckpt.step = r.le<std::uint64_t>();
    const auto count = r.le<std::uint32_t>();
    ckpt.params = ParamStore(ckpt.variant);
    bool have_rng = false;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.le<std::uint16_t>();
        const std::string name = r.str(len);
        const auto rank = r.le<std::uint8_t>();
        Shape shape;
        for (int d = 0; d < rank; ++d) {
            const auto dim = r.le<std::uint32_t>();
            if (dim == 0 || dim > (1u << 28)) throw IoError("corrupt checkpoint: bad dimension in '" + name + "'");
            shape.push_back(static_cast<int>(dim));
        }
        const std::size_t n = shape_numel(shape);
        r.need(n * 4);
        std::vector<float> data(n);
        for (auto& v : data) v = r.f32();
        Tensor t(shape, std::move(data));
        if (name == kRngTensor) {
            ckpt.rng = rng_from_tensor(t);
            have_rng = true;
        } else {
            try {
                ckpt.params.insert(name, std::move(t));
            } catch (const ContractError&) {
                throw IoError("corrupt checkpoint: unknown tensor '" + name + "'");
            }
        }
    }
    if (!r.done()) throw IoError("corrupt checkpoint: trailing bytes");
    if (!have_rng) throw IoError("corrupt checkpoint: missing rng state");
    try {
        ckpt.hyper = infer_architecture(ckpt.params, ckpt.hyper);
    } catch (const ConfigError& e) {
        throw IoError(std::string("corrupt checkpoint: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace srae
