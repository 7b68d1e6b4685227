#include "srae/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace srae {

namespace {

using nlohmann::json;

void only_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError(where + "." + key + ": unknown key");
    }
}

template <typename T>
T get(const json& obj, const std::string& where, const char* key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!it->is_number_unsigned() && !(it->is_number_integer() && it->template get<long long>() >= 0)) {
                throw ConfigError(where + "." + key + ": expected a non-negative integer");
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw ConfigError(where + "." + key + ": expected a number");
        } else {
            if (!it->is_string()) throw ConfigError(where + "." + key + ": expected a string");
        }
        return it->template get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

}  // namespace

CliConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    only_keys(root, "config",
              {"variant", "image", "latent", "domains", "epochs", "batch_size", "lr_recon", "alpha1", "alpha2", "lr_disc",
               "disc_steps", "beta_kl", "seed", "extractor_seed", "checkpoint_every", "data"});

    CliConfig cfg;
    TrainConfig& t = cfg.train;
    SraeHyper& h = t.hyper;

    t.variant = parse_variant(get<std::string>(root, "config", "variant", std::string(variant_name(t.variant))));
    if (auto it = root.find("image"); it != root.end()) {
        only_keys(*it, "config.image", {"height", "width", "channels"});
        h.image_h = get<int>(*it, "config.image", "height", h.image_h);
        h.image_w = get<int>(*it, "config.image", "width", h.image_w);
        h.image_c = get<int>(*it, "config.image", "channels", h.image_c);
    }
    if (auto it = root.find("latent"); it != root.end()) {
        only_keys(*it, "config.latent", {"a", "b", "j", "k"});
        h.a = get<int>(*it, "config.latent", "a", h.a);
        h.b = get<int>(*it, "config.latent", "b", h.b);
        h.j = get<int>(*it, "config.latent", "j", h.j);
        h.k = get<int>(*it, "config.latent", "k", h.k);
    }
    h.m = get<int>(root, "config", "domains", h.m);

    // Layer widths follow the downsampling depth implied by image/latent sizes.
    const int depth = h.depth();
    if (depth >= 1 && static_cast<int>(h.trunk_widths.size()) != depth) {
        std::vector<int> trunk, decoder;
        for (int i = 0; i < depth; ++i) trunk.push_back(std::min(16 << i, 32));
        decoder.assign(trunk.rbegin(), trunk.rend());
        h.trunk_widths = trunk;
        h.decoder_widths = decoder;
    }

    t.epochs = get<int>(root, "config", "epochs", t.epochs);
    t.batch_size = get<int>(root, "config", "batch_size", t.batch_size);
    t.lr_recon = get<double>(root, "config", "lr_recon", t.lr_recon);
    t.alpha1 = get<double>(root, "config", "alpha1", t.alpha1);
    t.alpha2 = get<double>(root, "config", "alpha2", t.alpha2);
    t.lr_disc = get<double>(root, "config", "lr_disc", t.lr_disc);
    t.disc_steps_per_ae_step = get<int>(root, "config", "disc_steps", t.disc_steps_per_ae_step);
    t.beta_kl = get<double>(root, "config", "beta_kl", t.beta_kl);
    t.seed = get<std::uint64_t>(root, "config", "seed", t.seed);
    t.extractor_seed = get<std::uint64_t>(root, "config", "extractor_seed", t.extractor_seed);
    t.checkpoint_every = get<int>(root, "config", "checkpoint_every", t.checkpoint_every);

    cfg.synth.counts.assign(static_cast<std::size_t>(std::max(h.m, 0)), 2000);
    cfg.synth.seed = t.seed;
    if (auto it = root.find("data"); it != root.end()) {
        if (!it->is_object()) throw ConfigError("config.data: expected an object");
        const std::string kind = get<std::string>(*it, "config.data", "kind", "synthetic");
        if (kind == "synthetic") {
            only_keys(*it, "config.data", {"kind", "counts", "seed"});
            if (auto c = it->find("counts"); c != it->end()) {
                if (!c->is_array()) throw ConfigError("config.data.counts: expected an array of integers");
                cfg.synth.counts.clear();
                for (const auto& v : *c) {
                    if (!v.is_number_integer()) throw ConfigError("config.data.counts: expected integers");
                    cfg.synth.counts.push_back(v.get<int>());
                }
            }
            cfg.synth.seed = get<std::uint64_t>(*it, "config.data", "seed", cfg.synth.seed);
        } else if (kind == "directory") {
            only_keys(*it, "config.data", {"kind", "path"});
            cfg.data_kind = DataKind::Directory;
            cfg.data_path = get<std::string>(*it, "config.data", "path", "");
            if (cfg.data_path.empty()) throw ConfigError("config.data.path: required for kind \"directory\"");
        } else {
            throw ConfigError("config.data.kind: expected \"synthetic\" or \"directory\", got \"" + kind + "\"");
        }
    }

    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (cfg.data_kind == DataKind::Synthetic) {
        if (static_cast<int>(cfg.synth.counts.size()) != h.m) {
            throw ConfigError("config.data.counts: need one count per domain (" + std::to_string(h.m) + ")");
        }
        for (int c : cfg.synth.counts)
            if (c <= 0) throw ConfigError("config.data.counts: counts must be positive");
        if (h.image_h != h.image_w) throw ConfigError("config.image: synthetic data needs square images");
        if (h.image_c != 1) throw ConfigError("config.image: synthetic data is single-channel");
        cfg.synth.image_size = h.image_h;
        // Shape radii are specified for 32x32 images; keep their proportion.
        const float scale = static_cast<float>(h.image_h) / 32.0f;
        cfg.synth.min_size *= scale;
        cfg.synth.max_size *= scale;
    }
    return cfg;
}

CliConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace srae
