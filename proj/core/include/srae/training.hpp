#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "srae/data.hpp"
#include "srae/losses.hpp"
#include "srae/model.hpp"
#include "srae/rng.hpp"

namespace srae {

struct TrainConfig {
    SraeHyper hyper;
    Variant variant = Variant::TwoDisc;
    int epochs = 30;
    int batch_size = 32;
    double lr_recon = 1e-2;  // trunk, streams and decoder
    double alpha1 = 1e-2;    // content-entropy ascent step
    double alpha2 = 1e-2;    // domain-stream cross-entropy step
    double lr_disc = 1e-2;
    int disc_steps_per_ae_step = 1;
    double beta_kl = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t extractor_seed = 0;
    int checkpoint_every = 0;  // epochs; 0 disables intermediate checkpoints

    void validate() const;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    SraeHyper hyper;
    Variant variant = Variant::TwoDisc;
    ParamStore params;
    std::uint64_t step = 0;
    RngState rng;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct MetricsRecord {
    std::uint64_t step = 0;
    double l_r = 0.0;
    double l_q_c = 0.0;
    std::optional<double> l_q_d;
    double entropy_qc = 0.0;
    double seconds = 0.0;
};

class MetricsLog {
public:
    /// Step numbers must increase strictly.
    void append(const MetricsRecord& r);
    const std::vector<MetricsRecord>& records() const noexcept { return records_; }
    bool empty() const noexcept { return records_.empty(); }

    /// Mean entropy_qc over records with index in [begin, end).
    double mean_entropy(std::size_t begin, std::size_t end) const;

    /// CSV with header step,l_r,l_q_c,l_q_d,entropy_qc,seconds (l_q_d empty
    /// for the one-discriminator variant).
    void write_csv(const std::filesystem::path& path) const;
    std::string to_csv(bool include_seconds = true) const;

private:
    std::vector<MetricsRecord> records_;
};

// Individual update rules of one training step. Each modifies only the
// documented parameter groups and returns the pre-update value of its loss.

/// Minimizes the discriminator cross-entropy over theta_q (and theta_qd).
/// Returns {l_q_c, l_q_d}.
std::pair<double, std::optional<double>> discriminator_update(ParamStore& params, const OpGraph& g,
                                                              const Bindings& data, double lr);
/// Minimizes reconstruction (+ beta KL) over trunk, streams and decoder.
double reconstruction_update(ParamStore& params, const OpGraph& g, const Bindings& data, double lr);
/// Ascends the entropy of q_c(z_c) over theta_c.
double content_entropy_update(ParamStore& params, const OpGraph& g, const Bindings& data, double alpha1);
/// Descends the domain discriminator cross-entropy over theta_d (two-disc only).
double domain_stream_update(ParamStore& params, const OpGraph& g, const Bindings& data, double alpha2);

/// One full step: discriminator update(s), reconstruction, content entropy
/// ascent, then (two-disc only) the domain-stream update. Noise is drawn from `rng`.
LossReport train_step(ParamStore& params, const SraeHyper& hyper, const FeatureExtractor& extractor,
                      const Batch& batch, const TrainConfig& config, const RngState& rng);

struct TrainResult {
    Checkpoint checkpoint;
    MetricsLog metrics;
};

struct TrainHooks {
    std::function<void(int epoch, const MetricsLog&)> on_epoch;
    std::function<void(int epoch, const Checkpoint&)> on_checkpoint;
};

/// Runs epochs x max(1, dataset size / batch_size) steps from a fresh initialization.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainHooks& hooks = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

}  // namespace srae
