#include "srae/model.hpp"

#include <cmath>

#include "srae/rng.hpp"

namespace srae {

namespace {

constexpr double kSlope = 0.2;
constexpr std::uint64_t kInitStream = 0x1417;

std::string pname(Group g, const std::string& layer, const char* what) {
    return std::string(group_prefix(g)) + "/" + layer + "/" + what;
}

struct LayerSpec {
    std::string name;  // without "/w" or "/b"
    Shape weight;
    int fan_in;
};

int disc_input_features(const SraeHyper& h, int channels) {
    return h.disc_pool == DiscPool::Flatten ? h.a * h.b * channels : channels;
}

std::vector<LayerSpec> layer_specs(const SraeHyper& h, Variant variant) {
    std::vector<LayerSpec> specs;
    auto conv = [&](Group g, const std::string& layer, int k, int cin, int cout) {
        specs.push_back({std::string(group_prefix(g)) + "/" + layer, Shape{k, k, cin, cout}, k * k * cin});
    };
    auto fc = [&](Group g, const std::string& layer, int in, int out) {
        specs.push_back({std::string(group_prefix(g)) + "/" + layer, Shape{in, out}, in});
    };
    int cin = h.image_c;
    for (std::size_t i = 0; i < h.trunk_widths.size(); ++i) {
        conv(Group::Trunk, "conv" + std::to_string(i), 3, cin, h.trunk_widths[i]);
        cin = h.trunk_widths[i];
    }
    const int trunk_out = cin;
    conv(Group::Content, "conv", 3, trunk_out, h.stream_width);
    conv(Group::Content, "mu", 1, h.stream_width, h.k);
    conv(Group::Content, "logvar", 1, h.stream_width, h.k);
    conv(Group::Domain, "conv", 3, trunk_out, h.stream_width);
    fc(Group::Domain, "fc", h.stream_width, h.stream_width);
    fc(Group::Domain, "mu", h.stream_width, h.j);
    fc(Group::Domain, "logvar", h.stream_width, h.j);

    const int d = static_cast<int>(h.decoder_widths.size());
    conv(Group::Decoder, "conv0", 3, h.k + h.j, h.decoder_widths[0]);
    for (int s = 1; s <= d; ++s) {
        const int out = s == d ? h.image_c : h.decoder_widths[static_cast<std::size_t>(s)];
        conv(Group::Decoder, "conv" + std::to_string(s), 3, h.decoder_widths[static_cast<std::size_t>(s - 1)], out);
    }
    fc(Group::ContentDisc, "fc0", disc_input_features(h, h.k), h.disc_width);
    fc(Group::ContentDisc, "fc1", h.disc_width, h.m);
    if (variant == Variant::TwoDisc) {
        fc(Group::DomainDisc, "fc0", disc_input_features(h, h.j), h.disc_width);
        fc(Group::DomainDisc, "fc1", h.disc_width, h.m);
    }
    return specs;
}

}  // namespace

std::string_view variant_name(Variant v) { return v == Variant::OneDisc ? "one-disc" : "two-disc"; }

Variant parse_variant(std::string_view s) {
    if (s == "one-disc") return Variant::OneDisc;
    if (s == "two-disc") return Variant::TwoDisc;
    throw ConfigError("unknown variant '" + std::string(s) + "' (expected one-disc or two-disc)");
}

int SraeHyper::depth() const {
    if (a <= 0 || image_h % a != 0) return -1;
    int ratio = image_h / a;
    int d = 0;
    while (ratio > 1 && ratio % 2 == 0) {
        ratio /= 2;
        ++d;
    }
    return ratio == 1 ? d : -1;
}

void SraeHyper::validate() const {
    if (image_h <= 0 || image_w <= 0 || image_c <= 0) throw ConfigError("image dimensions must be positive");
    if (a <= 0 || b <= 0 || k <= 0) throw ConfigError("latent a, b, k must be positive");
    if (j <= 0) throw ConfigError("latent j must be positive");
    if (m < 2) throw ConfigError("at least two domains required (m >= 2)");
    const int d = depth();
    if (d < 1) throw ConfigError("image_h / a must be a power of two >= 2");
    if (image_w != b * (1 << d)) {
        throw ConfigError("image_w / b must equal image_h / a = " + std::to_string(1 << d));
    }
    if (static_cast<int>(trunk_widths.size()) != d) {
        throw ConfigError("trunk needs one width per downsampling stage (" + std::to_string(d) + ")");
    }
    if (static_cast<int>(decoder_widths.size()) != d) {
        throw ConfigError("decoder needs one width per upsampling stage (" + std::to_string(d) + ")");
    }
    for (int w : trunk_widths)
        if (w <= 0) throw ConfigError("trunk widths must be positive");
    for (int w : decoder_widths)
        if (w <= 0) throw ConfigError("decoder widths must be positive");
    if (stream_width <= 0 || disc_width <= 0) throw ConfigError("stream/discriminator widths must be positive");
}

std::string_view group_prefix(Group g) {
    switch (g) {
        case Group::Trunk: return "theta_phi";
        case Group::Content: return "theta_c";
        case Group::Domain: return "theta_d";
        case Group::Decoder: return "theta_g";
        case Group::ContentDisc: return "theta_q";
        case Group::DomainDisc: return "theta_qd";
    }
    return "?";
}

const std::vector<Group>& all_groups() {
    static const std::vector<Group> groups{Group::Trunk,   Group::Content,     Group::Domain,
                                           Group::Decoder, Group::ContentDisc, Group::DomainDisc};
    return groups;
}

Group group_of(std::string_view param_name) {
    const auto slash = param_name.find('/');
    const std::string_view prefix = param_name.substr(0, slash);
    for (Group g : all_groups()) {
        if (group_prefix(g) == prefix) return g;
    }
    throw ContractError("parameter '" + std::string(param_name) + "' has no group prefix");
}

void ParamStore::insert(const std::string& name, Tensor value) {
    (void)group_of(name);
    tensors_.insert_or_assign(name, std::move(value));
}

const Tensor& ParamStore::at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("no parameter '" + std::string(name) + "'");
    return it->second;
}

Tensor& ParamStore::at(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("no parameter '" + std::string(name) + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names_in(Group g) const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tensors_) {
        if (group_of(name) == g) out.push_back(name);
    }
    return out;
}

std::set<std::string> ParamStore::names_in(std::initializer_list<Group> groups) const {
    std::set<std::string> out;
    for (Group g : groups) {
        for (auto& n : names_in(g)) out.insert(n);
    }
    return out;
}

bool ParamStore::has_group(Group g) const { return !names_in(g).empty(); }

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.size();
    return n;
}

void ParamStore::bind(Bindings& bindings) const {
    for (const auto& [name, t] : tensors_) bindings.insert_or_assign(name, t);
}

ParamStore init_params(const SraeHyper& hyper, Variant variant, std::uint64_t seed) {
    hyper.validate();
    ParamStore store(variant);
    auto engine = make_engine(RngState{seed, 0}, kInitStream);
    for (const auto& spec : layer_specs(hyper, variant)) {
        const double bound = std::sqrt(6.0 / spec.fan_in);
        Tensor w(spec.weight);
        for (auto& v : w.data()) {
            const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
            v = static_cast<float>((2.0 * u - 1.0) * bound);
        }
        store.insert(spec.name + "/w", std::move(w));
        store.insert(spec.name + "/b", Tensor(Shape{spec.weight.back()}));
    }
    return store;
}

SraeHyper infer_architecture(const ParamStore& params, SraeHyper base) {
    const int d = base.depth();
    if (d < 1) throw ConfigError("inconsistent image/latent sizes in checkpoint");
    auto width = [&](const std::string& name, int axis) {
        if (!params.contains(name)) throw ConfigError("checkpoint lacks parameter '" + name + "'");
        const Tensor& t = params.at(name);
        if (axis >= t.rank()) throw ConfigError("parameter '" + name + "' has unexpected rank");
        return t.dim(axis);
    };
    base.trunk_widths.clear();
    base.decoder_widths.clear();
    for (int i = 0; i < d; ++i) {
        base.trunk_widths.push_back(width("theta_phi/conv" + std::to_string(i) + "/w", 3));
        base.decoder_widths.push_back(width("theta_g/conv" + std::to_string(i) + "/w", 3));
    }
    base.stream_width = width("theta_c/conv/w", 3);
    base.disc_width = width("theta_q/fc0/w", 1);
    const int disc_in = width("theta_q/fc0/w", 0);
    base.disc_pool = disc_in == base.a * base.b * base.k ? DiscPool::Flatten : DiscPool::GlobalAverage;
    base.validate();

    const auto specs = layer_specs(base, params.variant());
    if (specs.size() * 2 != params.size()) {
        throw ConfigError("checkpoint has " + std::to_string(params.size()) + " tensors, architecture expects " +
                          std::to_string(specs.size() * 2));
    }
    for (const auto& spec : specs) {
        if (!params.contains(spec.name + "/w") || params.at(spec.name + "/w").shape() != spec.weight ||
            !params.contains(spec.name + "/b") || params.at(spec.name + "/b").shape() != Shape{spec.weight.back()}) {
            throw ConfigError("parameter '" + spec.name + "' missing or mis-shaped");
        }
    }
    return base;
}

// ---------------------------------------------------------------------------
// Graph builders

namespace {

NodeId conv_layer(OpGraph& g, Group grp, const std::string& layer, NodeId x, int stride, int pad) {
    return g.conv2d(x, g.parameter(pname(grp, layer, "w")), g.parameter(pname(grp, layer, "b")), stride, pad);
}

NodeId fc_layer(OpGraph& g, Group grp, const std::string& layer, NodeId x) {
    return g.dense(x, g.parameter(pname(grp, layer, "w")), g.parameter(pname(grp, layer, "b")));
}

// mu + eps * exp(logvar / 2)
NodeId reparameterize(OpGraph& g, NodeId mu, NodeId logvar, NodeId eps) {
    return g.add(mu, g.mul(eps, g.exp(g.affine(logvar, 0.5))));
}

}  // namespace

EncoderNodes add_encoder(OpGraph& g, const SraeHyper& hyper, NodeId x, NodeId eps_c, NodeId eps_d) {
    NodeId h = x;
    for (std::size_t i = 0; i < hyper.trunk_widths.size(); ++i) {
        h = g.leaky_relu(conv_layer(g, Group::Trunk, "conv" + std::to_string(i), h, 2, 1), kSlope);
    }

    EncoderNodes e{};
    NodeId hc = g.leaky_relu(conv_layer(g, Group::Content, "conv", h, 1, 1), kSlope);
    e.mu_c = g.label(conv_layer(g, Group::Content, "mu", hc, 1, 0), "mu_c");
    e.logvar_c = g.label(conv_layer(g, Group::Content, "logvar", hc, 1, 0), "logvar_c");
    e.z_c = g.label(reparameterize(g, e.mu_c, e.logvar_c, eps_c), "z_c");

    NodeId hd = g.leaky_relu(conv_layer(g, Group::Domain, "conv", h, 1, 1), kSlope);
    hd = g.leaky_relu(fc_layer(g, Group::Domain, "fc", g.global_avg_pool(hd)), kSlope);
    e.mu_d_vec = g.label(g.reshape(fc_layer(g, Group::Domain, "mu", hd), {1, 1, hyper.j}), "mu_d_vec");
    e.logvar_d_vec = g.label(g.reshape(fc_layer(g, Group::Domain, "logvar", hd), {1, 1, hyper.j}), "logvar_d_vec");
    e.z_d_vec = g.label(reparameterize(g, e.mu_d_vec, e.logvar_d_vec, eps_d), "z_d_vec");
    e.z_d = g.label(add_tile_domain(g, hyper, e.z_d_vec), "z_d");
    return e;
}

NodeId add_tile_domain(OpGraph& g, const SraeHyper& hyper, NodeId z_vec) { return g.tile(z_vec, hyper.a, hyper.b); }

NodeId add_decoder(OpGraph& g, const SraeHyper& hyper, NodeId z_c, NodeId z_d) {
    NodeId h = g.leaky_relu(conv_layer(g, Group::Decoder, "conv0", g.concat(z_c, z_d), 1, 1), kSlope);
    const int d = static_cast<int>(hyper.decoder_widths.size());
    for (int s = 1; s <= d; ++s) {
        h = conv_layer(g, Group::Decoder, "conv" + std::to_string(s), g.upsample2x(h), 1, 1);
        h = s == d ? g.sigmoid(h) : g.leaky_relu(h, kSlope);
    }
    return g.label(h, "x_hat");
}

NodeId add_discriminator(OpGraph& g, const SraeHyper& hyper, Group group, int channels, NodeId z) {
    if (group != Group::ContentDisc && group != Group::DomainDisc) {
        throw ContractError("discriminator group must be theta_q or theta_qd");
    }
    NodeId h = hyper.disc_pool == DiscPool::Flatten ? g.reshape(z, {hyper.a * hyper.b * channels}) : g.global_avg_pool(z);
    h = g.leaky_relu(fc_layer(g, group, "fc0", h), kSlope);
    return g.softmax(fc_layer(g, group, "fc1", h));
}

// ---------------------------------------------------------------------------
// Eager wrappers

namespace {

// Adds a batch axis to a single example; returns whether one was added.
bool batchify(Tensor& t, int example_rank) {
    if (t.rank() == example_rank) {
        Shape s{1};
        s.insert(s.end(), t.shape().begin(), t.shape().end());
        t = t.reshaped(s);
        return true;
    }
    return false;
}

Tensor unbatch(const Tensor& t) {
    Shape s(t.shape().begin() + 1, t.shape().end());
    return t.reshaped(s);
}

}  // namespace

LatentPair encode(const ParamStore& params, const SraeHyper& hyper, const Tensor& x_in, const Tensor& eps_c_in,
                  const Tensor& eps_d_in) {
    Tensor x = x_in;
    const bool single = batchify(x, 3);
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != hyper.image_shape()) {
        throw ShapeError("encode: expected image " + shape_str(hyper.image_shape()) + ", got " + shape_str(x_in.shape()));
    }
    const int n = x.dim(0);
    const Shape c_shape{n, hyper.a, hyper.b, hyper.k};
    const Shape d_shape{n, 1, 1, hyper.j};
    auto noise = [&](const Tensor& eps, const Shape& want, const char* what) {
        if (eps.size() == 0) return Tensor(want);
        if (eps.size() != shape_numel(want)) {
            throw ShapeError(std::string("encode: ") + what + " has shape " + shape_str(eps.shape()) + ", expected " +
                             shape_str(want));
        }
        return eps.reshaped(want);
    };

    OpGraph g;
    EncoderNodes e = add_encoder(g, hyper, g.input("x"), g.input("eps_c"), g.input("eps_d"));
    g.set_output("mu_c", e.mu_c);
    g.set_output("logvar_c", e.logvar_c);
    g.set_output("mu_d_vec", e.mu_d_vec);
    g.set_output("logvar_d_vec", e.logvar_d_vec);
    g.set_output("z_c", e.z_c);
    g.set_output("z_d", e.z_d);

    Bindings bind;
    params.bind(bind);
    bind.insert_or_assign("x", x);
    bind.insert_or_assign("eps_c", noise(eps_c_in, c_shape, "eps_c"));
    bind.insert_or_assign("eps_d", noise(eps_d_in, d_shape, "eps_d"));
    TensorMap out = evaluate(g, bind);

    auto pick = [&](const char* name) { return single ? unbatch(out.at(name)) : out.at(name); };
    return LatentPair{pick("mu_c"), pick("logvar_c"), pick("mu_d_vec"), pick("logvar_d_vec"), pick("z_c"), pick("z_d")};
}

Tensor tile_domain(const Tensor& z_vec, int a, int b) {
    if (a < 1 || b < 1) throw ContractError("tile_domain: a and b must be positive");
    Tensor v = z_vec;
    bool single = false;
    if (v.rank() == 1) {
        v = v.reshaped({1, v.dim(0)});
        single = true;
    } else if (v.rank() == 3) {
        single = batchify(v, 3);
    }
    OpGraph g;
    g.set_output("tiled", g.tile(g.input("z"), a, b));
    Tensor out = evaluate(g, Bindings{{"z", v}}).at("tiled");
    return single ? unbatch(out) : out;
}

Tensor decode(const ParamStore& params, const SraeHyper& hyper, const Tensor& z_c_in, const Tensor& z_d_in) {
    Tensor z_c = z_c_in, z_d = z_d_in;
    const bool single = batchify(z_c, 3);
    batchify(z_d, 3);
    if (z_c.rank() != 4 || z_c.dim(1) != hyper.a || z_c.dim(2) != hyper.b || z_c.dim(3) != hyper.k) {
        throw ShapeError("decode: z_c must be a x b x k, got " + shape_str(z_c_in.shape()));
    }
    if (z_d.rank() != 4 || z_d.dim(0) != z_c.dim(0) || z_d.dim(1) != hyper.a || z_d.dim(2) != hyper.b ||
        z_d.dim(3) != hyper.j) {
        throw ShapeError("decode: z_d must be a x b x j, got " + shape_str(z_d_in.shape()));
    }
    OpGraph g;
    g.set_output("x_hat", add_decoder(g, hyper, g.input("z_c"), g.input("z_d")));
    Bindings bind;
    params.bind(bind);
    bind.insert_or_assign("z_c", z_c);
    bind.insert_or_assign("z_d", z_d);
    Tensor out = evaluate(g, bind, {"x_hat"}).at("x_hat");
    return single ? unbatch(out) : out;
}

Tensor discriminate(const ParamStore& params, const SraeHyper& hyper, Group group, const Tensor& z_in) {
    const int channels = group == Group::ContentDisc ? hyper.k : hyper.j;
    Tensor z = z_in;
    const bool single = batchify(z, 3);
    if (z.rank() != 4 || z.dim(1) != hyper.a || z.dim(2) != hyper.b || z.dim(3) != channels) {
        throw ShapeError("discriminate: latent must be a x b x " + std::to_string(channels) + ", got " +
                         shape_str(z_in.shape()));
    }
    OpGraph g;
    g.set_output("q", add_discriminator(g, hyper, group, channels, g.input("z")));
    Bindings bind;
    params.bind(bind);
    bind.insert_or_assign("z", z);
    Tensor out = evaluate(g, bind, {"q"}).at("q");
    return single ? out.reshaped({hyper.m}) : out;
}

}  // namespace srae
