#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "srae/tensor.hpp"

namespace srae {

enum class OpKind : std::uint8_t {
    Input,
    Param,
    Conv2d,      // NHWC input, [kh, kw, cin, cout] weight, optional [cout] bias
    Upsample2x,  // nearest neighbour
    Dense,       // flattens all but the batch axis; [in, out] weight, optional [out] bias
    LeakyRelu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    ClampMin,
    Softmax,  // over the last axis
    Add,
    Sub,
    Mul,
    Affine,         // scale * x + shift
    Tile,           // [N, j] or [N, 1, 1, j] -> [N, a, b, j]
    GlobalAvgPool,  // [N, H, W, C] -> [N, C]
    Concat,         // along the last (channel) axis
    Reshape,        // keeps the batch axis
    SumSquares,
    Mean,
    Sum,
    BatchMean,  // sum of all elements divided by the leading dimension
};

std::string_view op_name(OpKind kind);

struct NodeId {
    int index = -1;
    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct OpAttrs {
    int stride = 1;
    int pad = 0;
    double slope = 0.2;  // leaky-relu
    double scale = 1.0;  // affine
    double shift = 0.0;  // affine
    double floor = 0.0;  // clamp
    int tile_h = 1;
    int tile_w = 1;
    Shape shape;  // reshape target, batch axis excluded
};

struct Node {
    OpKind kind;
    std::vector<int> inputs;
    OpAttrs attrs;
    std::string name;  // leaf name, or a label for diagnostics
};

/// Static computation graph over a fixed operator set.
///
/// Nodes are appended in topological order by construction: every builder
/// method only accepts ids that already exist. Leaves are either inputs
/// (data, noise, frozen weights) or parameters (trainable). Leaves are
/// deduplicated by name, so reusing a subnetwork shares its weights.
/// Shapes are resolved at evaluation time, so one graph serves any batch size.
class OpGraph {
public:
    NodeId input(const std::string& name);
    NodeId parameter(const std::string& name);

    NodeId conv2d(NodeId x, NodeId w, std::optional<NodeId> b, int stride, int pad);
    NodeId upsample2x(NodeId x);
    NodeId dense(NodeId x, NodeId w, std::optional<NodeId> b);
    NodeId leaky_relu(NodeId x, double slope = 0.2);
    NodeId sigmoid(NodeId x);
    NodeId tanh(NodeId x);
    NodeId exp(NodeId x);
    NodeId log(NodeId x);
    NodeId clamp_min(NodeId x, double floor);
    NodeId softmax(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId affine(NodeId x, double scale, double shift = 0.0);
    NodeId tile(NodeId x, int a, int b);
    NodeId global_avg_pool(NodeId x);
    NodeId concat(NodeId a, NodeId b);
    NodeId reshape(NodeId x, Shape per_example_shape);
    NodeId sum_squares(NodeId x);
    NodeId mean(NodeId x);
    NodeId sum(NodeId x);
    NodeId batch_mean(NodeId x);

    void set_output(const std::string& name, NodeId id);
    NodeId output(std::string_view name) const;
    bool has_output(std::string_view name) const;
    std::vector<std::string> output_names() const;

    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id.index)); }
    std::vector<std::string> parameter_names() const;
    std::vector<std::string> input_names() const;
    std::optional<NodeId> find_leaf(std::string_view name) const;

    /// Names of parameter leaves that `id` depends on.
    std::set<std::string> parameters_reaching(NodeId id) const;

    /// Label attached to diagnostics for this node ("#12 conv2d 'theta_phi/conv0'").
    std::string describe(NodeId id) const;

    /// Attach a label to a non-leaf node for error messages.
    NodeId label(NodeId id, std::string name);

private:
    NodeId push(OpKind kind, std::vector<int> inputs, OpAttrs attrs = {});
    NodeId leaf(OpKind kind, const std::string& name);
    void check(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, int, std::less<>> leaves_;
    std::map<std::string, int, std::less<>> outputs_;
};

using Bindings = std::map<std::string, Tensor, std::less<>>;
using TensorMap = std::map<std::string, Tensor, std::less<>>;

/// Evaluates the named outputs (all outputs when `outputs` is empty).
///
/// Only nodes the requested outputs depend on are computed. Throws
/// ShapeError naming the node on inconsistent shapes and NumericError when a
/// node produces a non-finite value.
TensorMap evaluate(const OpGraph& graph, const Bindings& bindings,
                   const std::vector<std::string>& outputs = {});

struct GradientResult {
    Tensor loss;
    TensorMap grads;   // one entry per requested parameter
    TensorMap values;  // extra outputs requested alongside the loss
};

/// Reverse-mode gradients of the scalar output `loss` with respect to the
/// parameter leaves in `wrt` (every parameter when empty). Parameters that do
/// not reach the loss get zero gradients. Backpropagation is restricted to
/// nodes lying between a requested parameter and the loss.
GradientResult backward(const OpGraph& graph, const Bindings& bindings, std::string_view loss,
                        const std::set<std::string>& wrt = {},
                        const std::vector<std::string>& extra_outputs = {});

struct GradCheckEntry {
    std::string parameter;
    double max_abs_error = 0.0;
    double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8)
    int probes = 0;               // elements compared
    int kinked_probes = 0;        // elements skipped: no kink-free stencil
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_relative_error = 0.0;
    bool passed() const;
};

/// Compares analytic gradients against central finite differences
/// (L(p + h) - L(p - h)) / 2h. Both sides are computed by re-running the
/// graph in double precision. When `max_probes_per_param` is positive only
/// that many evenly spaced elements of each parameter are probed. When one
/// side of the stencil moves a leaky-ReLU or clamp input across its kink, the
/// second-order one-sided difference (points 0, h, 2h) on the other side is
/// used; when that is unavailable too, the probe is skipped and counted in
/// `kinked_probes`. A parameter with every probe
/// skipped fails.
GradCheckReport finite_diff_check(const OpGraph& graph, const Bindings& bindings,
                                  std::string_view loss, double h, double tol,
                                  int max_probes_per_param = 0);

/// Test hook: finite_diff_check with the analytic gradient supplied by the caller.
GradCheckReport compare_with_finite_differences(const OpGraph& graph, const Bindings& bindings,
                                                std::string_view loss, const TensorMap& analytic,
                                                double h, double tol, int max_probes_per_param = 0);

}  // namespace srae
