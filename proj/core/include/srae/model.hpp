#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "srae/graph.hpp"
#include "srae/tensor.hpp"

namespace srae {

enum class Variant : std::uint32_t { OneDisc = 1, TwoDisc = 2 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);

/// How a discriminator summarizes a spatial latent before its dense layers.
enum class DiscPool : std::uint8_t { Flatten, GlobalAverage };

struct SraeHyper {
    int image_h = 32;
    int image_w = 32;
    int image_c = 1;
    int a = 4;  // latent rows
    int b = 4;  // latent cols
    int k = 8;  // content channels
    int j = 4;  // domain channels
    int m = 2;  // domains

    std::vector<int> trunk_widths{16, 32, 32};  // one stride-2 conv each
    int stream_width = 32;
    std::vector<int> decoder_widths{32, 32, 16};  // first is the latent-resolution conv
    int disc_width = 32;
    DiscPool disc_pool = DiscPool::Flatten;

    /// Number of stride-2 stages separating image and latent resolution.
    int depth() const;
    /// Throws ConfigError describing the first violated invariant.
    void validate() const;

    Shape image_shape() const { return {image_h, image_w, image_c}; }

    friend bool operator==(const SraeHyper&, const SraeHyper&) = default;
};

enum class Group : std::uint8_t { Trunk, Content, Domain, Decoder, ContentDisc, DomainDisc };

std::string_view group_prefix(Group g);  // "theta_phi", "theta_c", ...
Group group_of(std::string_view param_name);
const std::vector<Group>& all_groups();

/// Trainable parameters, keyed by group-prefixed names ("theta_c/mu/w").
/// Every name starts with exactly one group prefix, so groups partition the store.
class ParamStore {
public:
    ParamStore() = default;
    explicit ParamStore(Variant variant) : variant_(variant) {}

    Variant variant() const noexcept { return variant_; }

    void insert(const std::string& name, Tensor value);
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }
    std::size_t size() const noexcept { return tensors_.size(); }

    const std::map<std::string, Tensor, std::less<>>& tensors() const noexcept { return tensors_; }
    std::vector<std::string> names_in(Group g) const;
    std::set<std::string> names_in(std::initializer_list<Group> groups) const;
    bool has_group(Group g) const;
    std::size_t parameter_count() const;

    /// Adds the tensors to an evaluation binding map.
    void bind(Bindings& bindings) const;

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    Variant variant_ = Variant::OneDisc;
    std::map<std::string, Tensor, std::less<>> tensors_;
};

/// Fan-in scaled uniform weights, zero biases. Deterministic per seed.
ParamStore init_params(const SraeHyper& hyper, Variant variant, std::uint64_t seed);

/// Recovers layer widths of `hyper` from parameter shapes; checks that every
/// expected tensor is present with a consistent shape.
SraeHyper infer_architecture(const ParamStore& params, SraeHyper base);

struct EncoderNodes {
    NodeId mu_c, logvar_c;          // N x a x b x k
    NodeId mu_d_vec, logvar_d_vec;  // N x 1 x 1 x j
    NodeId z_c;                     // N x a x b x k
    NodeId z_d_vec;                 // N x 1 x 1 x j
    NodeId z_d;                     // N x a x b x j
};

// Graph builders. Parameter leaves are created under their group prefixes.
EncoderNodes add_encoder(OpGraph& g, const SraeHyper& hyper, NodeId x, NodeId eps_c, NodeId eps_d);
NodeId add_tile_domain(OpGraph& g, const SraeHyper& hyper, NodeId z_vec);
NodeId add_decoder(OpGraph& g, const SraeHyper& hyper, NodeId z_c, NodeId z_d);
/// `group` is ContentDisc or DomainDisc; input is N x a x b x channels.
NodeId add_discriminator(OpGraph& g, const SraeHyper& hyper, Group group, int channels, NodeId z);

struct LatentPair {
    Tensor mu_c, logvar_c;
    Tensor mu_d_vec, logvar_d_vec;
    Tensor z_c, z_d;
};

/// Encodes a batch (N x H x W x C, or a single H x W x C image treated as N=1).
/// Empty eps tensors mean zero noise, which yields the mean encoding.
LatentPair encode(const ParamStore& params, const SraeHyper& hyper, const Tensor& x, const Tensor& eps_c = {},
                  const Tensor& eps_d = {});

/// z_vec: j values (shape [j], [1,1,j] or [N,1,1,j]); returns [a,b,j] or [N,a,b,j].
Tensor tile_domain(const Tensor& z_vec, int a, int b);

Tensor decode(const ParamStore& params, const SraeHyper& hyper, const Tensor& z_c, const Tensor& z_d);

/// Softmax domain probabilities; returns [m] for a single latent or [N,m] for a batch.
Tensor discriminate(const ParamStore& params, const SraeHyper& hyper, Group group, const Tensor& z);

}  // namespace srae
