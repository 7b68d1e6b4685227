#pragma once

#include <filesystem>
#include <string>

#include "srae/data.hpp"
#include "srae/training.hpp"

namespace srae {

enum class DataKind { Synthetic, Directory };

/// Parsed JSON run configuration.
///
/// Recognized keys (all optional, defaults from TrainConfig / SynthSpec):
///   variant, image{height,width,channels}, latent{a,b,j,k}, domains, epochs,
///   batch_size, lr_recon, alpha1, alpha2, lr_disc, disc_steps, beta_kl, seed,
///   extractor_seed, checkpoint_every,
///   data{kind:"synthetic", counts:[..], seed} | data{kind:"directory", path}
/// Any other key is rejected with its JSON path.
struct CliConfig {
    TrainConfig train;
    DataKind data_kind = DataKind::Synthetic;
    SynthSpec synth;
    std::filesystem::path data_path;
};

CliConfig parse_config(const std::string& json_text);
CliConfig load_config(const std::filesystem::path& path);

}  // namespace srae
