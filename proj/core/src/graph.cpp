#include "srae/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kernels.hpp"

namespace srae {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Upsample2x: return "upsample2x";
        case OpKind::Dense: return "dense";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::ClampMin: return "clamp_min";
        case OpKind::Softmax: return "softmax";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Affine: return "affine";
        case OpKind::Tile: return "tile";
        case OpKind::GlobalAvgPool: return "global_avg_pool";
        case OpKind::Concat: return "concat";
        case OpKind::Reshape: return "reshape";
        case OpKind::SumSquares: return "sum_squares";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
        case OpKind::BatchMean: return "batch_mean";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Graph construction

void OpGraph::check(NodeId id) const {
    if (id.index < 0 || static_cast<std::size_t>(id.index) >= nodes_.size()) {
        throw ContractError("node id " + std::to_string(id.index) + " does not belong to this graph");
    }
}

NodeId OpGraph::push(OpKind kind, std::vector<int> inputs, OpAttrs attrs) {
    for (int i : inputs) check(NodeId{i});
    nodes_.push_back(Node{kind, std::move(inputs), std::move(attrs), {}});
    return NodeId{static_cast<int>(nodes_.size()) - 1};
}

NodeId OpGraph::leaf(OpKind kind, const std::string& name) {
    if (auto it = leaves_.find(name); it != leaves_.end()) {
        if (nodes_[static_cast<std::size_t>(it->second)].kind != kind) {
            throw ContractError("leaf '" + name + "' declared both as input and parameter");
        }
        return NodeId{it->second};
    }
    NodeId id = push(kind, {});
    nodes_.back().name = name;
    leaves_.emplace(name, id.index);
    return id;
}

NodeId OpGraph::input(const std::string& name) { return leaf(OpKind::Input, name); }
NodeId OpGraph::parameter(const std::string& name) { return leaf(OpKind::Param, name); }

NodeId OpGraph::conv2d(NodeId x, NodeId w, std::optional<NodeId> b, int stride, int pad) {
    if (stride < 1 || pad < 0) throw ContractError("conv2d: invalid stride/padding");
    OpAttrs a;
    a.stride = stride;
    a.pad = pad;
    std::vector<int> in{x.index, w.index};
    if (b) in.push_back(b->index);
    return push(OpKind::Conv2d, std::move(in), a);
}

NodeId OpGraph::upsample2x(NodeId x) { return push(OpKind::Upsample2x, {x.index}); }

NodeId OpGraph::dense(NodeId x, NodeId w, std::optional<NodeId> b) {
    std::vector<int> in{x.index, w.index};
    if (b) in.push_back(b->index);
    return push(OpKind::Dense, std::move(in));
}

NodeId OpGraph::leaky_relu(NodeId x, double slope) {
    OpAttrs a;
    a.slope = slope;
    return push(OpKind::LeakyRelu, {x.index}, a);
}

NodeId OpGraph::sigmoid(NodeId x) { return push(OpKind::Sigmoid, {x.index}); }
NodeId OpGraph::tanh(NodeId x) { return push(OpKind::Tanh, {x.index}); }
NodeId OpGraph::exp(NodeId x) { return push(OpKind::Exp, {x.index}); }
NodeId OpGraph::log(NodeId x) { return push(OpKind::Log, {x.index}); }

NodeId OpGraph::clamp_min(NodeId x, double floor) {
    OpAttrs a;
    a.floor = floor;
    return push(OpKind::ClampMin, {x.index}, a);
}

NodeId OpGraph::softmax(NodeId x) { return push(OpKind::Softmax, {x.index}); }
NodeId OpGraph::add(NodeId a, NodeId b) { return push(OpKind::Add, {a.index, b.index}); }
NodeId OpGraph::sub(NodeId a, NodeId b) { return push(OpKind::Sub, {a.index, b.index}); }
NodeId OpGraph::mul(NodeId a, NodeId b) { return push(OpKind::Mul, {a.index, b.index}); }

NodeId OpGraph::affine(NodeId x, double scale, double shift) {
    OpAttrs a;
    a.scale = scale;
    a.shift = shift;
    return push(OpKind::Affine, {x.index}, a);
}

NodeId OpGraph::tile(NodeId x, int a, int b) {
    if (a < 1 || b < 1) throw ContractError("tile: extents must be positive");
    OpAttrs at;
    at.tile_h = a;
    at.tile_w = b;
    return push(OpKind::Tile, {x.index}, at);
}

NodeId OpGraph::global_avg_pool(NodeId x) { return push(OpKind::GlobalAvgPool, {x.index}); }
NodeId OpGraph::concat(NodeId a, NodeId b) { return push(OpKind::Concat, {a.index, b.index}); }

NodeId OpGraph::reshape(NodeId x, Shape per_example_shape) {
    OpAttrs a;
    a.shape = std::move(per_example_shape);
    return push(OpKind::Reshape, {x.index}, a);
}

NodeId OpGraph::sum_squares(NodeId x) { return push(OpKind::SumSquares, {x.index}); }
NodeId OpGraph::mean(NodeId x) { return push(OpKind::Mean, {x.index}); }
NodeId OpGraph::sum(NodeId x) { return push(OpKind::Sum, {x.index}); }
NodeId OpGraph::batch_mean(NodeId x) { return push(OpKind::BatchMean, {x.index}); }
void OpGraph::set_output(const std::string& name, NodeId id) {
    check(id);
    outputs_[name] = id.index;
}

NodeId OpGraph::output(std::string_view name) const {
    auto it = outputs_.find(name);
    if (it == outputs_.end()) throw ContractError("graph has no output '" + std::string(name) + "'");
    return NodeId{it->second};
}

bool OpGraph::has_output(std::string_view name) const { return outputs_.find(name) != outputs_.end(); }

std::vector<std::string> OpGraph::output_names() const {
    std::vector<std::string> names;
    for (const auto& [k, v] : outputs_) names.push_back(k);
    return names;
}

std::vector<std::string> OpGraph::parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [k, v] : leaves_) {
        if (nodes_[static_cast<std::size_t>(v)].kind == OpKind::Param) names.push_back(k);
    }
    return names;
}

std::vector<std::string> OpGraph::input_names() const {
    std::vector<std::string> names;
    for (const auto& [k, v] : leaves_) {
        if (nodes_[static_cast<std::size_t>(v)].kind == OpKind::Input) names.push_back(k);
    }
    return names;
}

std::optional<NodeId> OpGraph::find_leaf(std::string_view name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) return std::nullopt;
    return NodeId{it->second};
}

std::set<std::string> OpGraph::parameters_reaching(NodeId id) const {
    check(id);
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<int> stack{id.index};
    std::set<std::string> out;
    while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        if (seen[static_cast<std::size_t>(i)]) continue;
        seen[static_cast<std::size_t>(i)] = 1;
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.kind == OpKind::Param) out.insert(n.name);
        for (int in : n.inputs) stack.push_back(in);
    }
    return out;
}

std::string OpGraph::describe(NodeId id) const {
    const Node& n = node(id);
    std::string s = "#" + std::to_string(id.index) + " " + std::string(op_name(n.kind));
    if (!n.name.empty()) s += " '" + n.name + "'";
    return s;
}

NodeId OpGraph::label(NodeId id, std::string name) {
    check(id);
    Node& n = nodes_[static_cast<std::size_t>(id.index)];
    if (n.kind == OpKind::Input || n.kind == OpKind::Param) {
        throw ContractError("cannot relabel leaf '" + n.name + "'");
    }
    n.name = std::move(name);
    return id;
}

// ---------------------------------------------------------------------------
// Evaluation engine

namespace detail {

template <typename T>
class Engine {
public:
    using TT = BasicTensor<T>;

    Engine(const OpGraph& graph, const std::map<std::string, TT, std::less<>>& bindings)
        : g_(graph), bindings_(bindings), values_(graph.nodes().size()) {}

    // Marks every ancestor of `roots` (inclusive).
    std::vector<char> ancestors(const std::vector<int>& roots) const {
        std::vector<char> need(g_.nodes().size(), 0);
        for (int r : roots) need[static_cast<std::size_t>(r)] = 1;
        for (int i = static_cast<int>(g_.nodes().size()) - 1; i >= 0; --i) {
            if (!need[static_cast<std::size_t>(i)]) continue;
            for (int in : g_.nodes()[static_cast<std::size_t>(i)].inputs) need[static_cast<std::size_t>(in)] = 1;
        }
        return need;
    }

    void forward(const std::vector<char>& need) {
        for (std::size_t i = 0; i < need.size(); ++i) {
            if (!need[i] || values_[i]) continue;
            values_[i] = compute(static_cast<int>(i));
            if (!values_[i]->all_finite()) {
                throw NumericError("numeric overflow: non-finite value produced by " +
                                   g_.describe(NodeId{static_cast<int>(i)}));
            }
        }
    }

    const TT& value(int i) const { return *values_[static_cast<std::size_t>(i)]; }
    const TT& value(NodeId id) const { return value(id.index); }

    // Gradients of scalar node `loss` for every node flagged in `active`.
    std::vector<std::optional<TT>> reverse(int loss, const std::vector<char>& active) {
        std::vector<std::optional<TT>> grads(g_.nodes().size());
        grads[static_cast<std::size_t>(loss)] = TT(value(loss).shape(), T(1));
        for (int i = loss; i >= 0; --i) {
            const auto ui = static_cast<std::size_t>(i);
            if (!active[ui] || !grads[ui]) continue;
            const Node& n = g_.nodes()[ui];
            if (n.kind == OpKind::Input || n.kind == OpKind::Param) continue;
            std::vector<TT*> targets(n.inputs.size(), nullptr);
            std::vector<TT> scratch(n.inputs.size());
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                if (active[static_cast<std::size_t>(n.inputs[k])]) {
                    scratch[k] = TT(value(n.inputs[k]).shape());
                    targets[k] = &scratch[k];
                }
            }
            backprop(i, *grads[ui], targets);
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                if (!targets[k]) continue;
                auto& slot = grads[static_cast<std::size_t>(n.inputs[k])];
                if (!slot) {
                    slot = std::move(scratch[k]);
                } else {
                    T* d = slot->raw();
                    const T* s = scratch[k].raw();
                    for (std::size_t e = 0; e < slot->size(); ++e) d[e] += s[e];
                }
            }
        }
        return grads;
    }

private:
    [[noreturn]] void shape_fail(int i, const std::string& what) const {
        throw ShapeError("shape mismatch at " + g_.describe(NodeId{i}) + ": " + what);
    }

    const TT& in(const Node& n, std::size_t k) const { return value(n.inputs[k]); }

    ConvGeometry conv_geometry(int i, const Node& n) const {
        const TT& x = in(n, 0);
        const TT& w = in(n, 1);
        if (x.rank() != 4) shape_fail(i, "input must be NxHxWxC, got " + shape_str(x.shape()));
        if (w.rank() != 4) shape_fail(i, "weight must be KHxKWxCinxCout, got " + shape_str(w.shape()));
        if (w.dim(2) != x.dim(3)) {
            shape_fail(i, "input channels " + std::to_string(x.dim(3)) + " vs weight " + shape_str(w.shape()));
        }
        if (n.inputs.size() > 2) {
            const TT& b = in(n, 2);
            if (b.rank() != 1 || b.dim(0) != w.dim(3)) shape_fail(i, "bias " + shape_str(b.shape()));
        }
        ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3), 0, 0,
                       n.attrs.stride, n.attrs.pad};
        g.oh = conv_out_extent(g.h, g.kh, g.stride, g.pad);
        g.ow = conv_out_extent(g.w, g.kw, g.stride, g.pad);
        if (g.oh < 1 || g.ow < 1) shape_fail(i, "kernel larger than padded input " + shape_str(x.shape()));
        return g;
    }

    std::pair<int, int> dense_dims(int i, const Node& n) const {
        const TT& x = in(n, 0);
        const TT& w = in(n, 1);
        if (x.rank() < 2) shape_fail(i, "dense input needs a batch axis, got " + shape_str(x.shape()));
        const int features = static_cast<int>(x.size() / static_cast<std::size_t>(x.dim(0)));
        if (w.rank() != 2 || w.dim(0) != features) {
            shape_fail(i, "input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
        }
        if (n.inputs.size() > 2) {
            const TT& b = in(n, 2);
            if (b.rank() != 1 || b.dim(0) != w.dim(1)) shape_fail(i, "bias " + shape_str(b.shape()));
        }
        return {features, w.dim(1)};
    }

    TT compute(int i) {
        const Node& n = g_.nodes()[static_cast<std::size_t>(i)];
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Param: {
                auto it = bindings_.find(n.name);
                if (it == bindings_.end()) {
                    throw ContractError("unbound " + std::string(op_name(n.kind)) + " '" + n.name + "'");
                }
                return it->second;
            }
            case OpKind::Conv2d: {
                const ConvGeometry geo = conv_geometry(i, n);
                TT out(Shape{geo.n, geo.oh, geo.ow, geo.co});
                conv2d_forward(geo, in(n, 0).raw(), in(n, 1).raw(),
                               n.inputs.size() > 2 ? in(n, 2).raw() : nullptr, out.raw());
                return out;
            }
            case OpKind::Upsample2x: {
                const TT& x = in(n, 0);
                if (x.rank() != 4) shape_fail(i, "upsample needs NxHxWxC");
                TT out(Shape{x.dim(0), 2 * x.dim(1), 2 * x.dim(2), x.dim(3)});
                upsample2x_forward(x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.raw(), out.raw());
                return out;
            }
            case OpKind::Dense: {
                auto [features, outs] = dense_dims(i, n);
                const TT& x = in(n, 0);
                TT out(Shape{x.dim(0), outs});
                dense_forward(x.dim(0), features, outs, x.raw(), in(n, 1).raw(),
                              n.inputs.size() > 2 ? in(n, 2).raw() : nullptr, out.raw());
                return out;
            }
            case OpKind::LeakyRelu: {
                const T slope = static_cast<T>(n.attrs.slope);
                return map(in(n, 0), [slope](T v) { return v > T(0) ? v : slope * v; });
            }
            case OpKind::Sigmoid:
                return map(in(n, 0), [](T v) {
                    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                    const T e = std::exp(v);
                    return e / (T(1) + e);
                });
            case OpKind::Tanh: return map(in(n, 0), [](T v) { return std::tanh(v); });
            case OpKind::Exp: return map(in(n, 0), [](T v) { return std::exp(v); });
            case OpKind::Log: {
                const TT& x = in(n, 0);
                for (std::size_t e = 0; e < x.size(); ++e) {
                    if (!(x[e] > T(0))) {
                        throw NumericError("numeric overflow: log of non-positive value at " + g_.describe(NodeId{i}));
                    }
                }
                return map(x, [](T v) { return std::log(v); });
            }
            case OpKind::ClampMin: {
                const T floor = static_cast<T>(n.attrs.floor);
                return map(in(n, 0), [floor](T v) { return v > floor ? v : floor; });
            }
            case OpKind::Softmax: {
                const TT& x = in(n, 0);
                if (x.rank() < 1) shape_fail(i, "softmax of a scalar");
                TT out(x.shape());
                const auto cols = static_cast<std::size_t>(x.dim(x.rank() - 1));
                softmax_rows(x.size() / cols, cols, x.raw(), out.raw());
                return out;
            }
            case OpKind::Add:
            case OpKind::Sub:
            case OpKind::Mul: {
                const TT& a = in(n, 0);
                const TT& b = in(n, 1);
                if (a.shape() != b.shape()) shape_fail(i, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
                TT out(a.shape());
                for (std::size_t e = 0; e < a.size(); ++e) {
                    out[e] = n.kind == OpKind::Add ? a[e] + b[e] : n.kind == OpKind::Sub ? a[e] - b[e] : a[e] * b[e];
                }
                return out;
            }
            case OpKind::Affine: {
                const T s = static_cast<T>(n.attrs.scale);
                const T t = static_cast<T>(n.attrs.shift);
                return map(in(n, 0), [s, t](T v) { return s * v + t; });
            }
            case OpKind::Tile: {
                const TT& x = in(n, 0);
                const bool flat = x.rank() == 2;
                const bool cube = x.rank() == 4 && x.dim(1) == 1 && x.dim(2) == 1;
                if (!flat && !cube) shape_fail(i, "tile expects Nxj or Nx1x1xj, got " + shape_str(x.shape()));
                const int batch = x.dim(0), ch = x.dim(x.rank() - 1);
                const int a = n.attrs.tile_h, b = n.attrs.tile_w;
                TT out(Shape{batch, a, b, ch});
                for (int r = 0; r < batch; ++r)
                    for (int p = 0; p < a * b; ++p)
                        std::copy(x.raw() + static_cast<std::size_t>(r) * ch, x.raw() + static_cast<std::size_t>(r + 1) * ch,
                                  out.raw() + (static_cast<std::size_t>(r) * a * b + p) * ch);
                return out;
            }
            case OpKind::GlobalAvgPool: {
                const TT& x = in(n, 0);
                if (x.rank() != 4) shape_fail(i, "pool needs NxHxWxC");
                const int batch = x.dim(0), ch = x.dim(3), hw = x.dim(1) * x.dim(2);
                TT out(Shape{batch, ch});
                std::vector<double> acc(static_cast<std::size_t>(ch));
                for (int r = 0; r < batch; ++r) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int p = 0; p < hw; ++p)
                        for (int c = 0; c < ch; ++c) acc[static_cast<std::size_t>(c)] += x[(static_cast<std::size_t>(r) * hw + p) * ch + c];
                    for (int c = 0; c < ch; ++c) out[static_cast<std::size_t>(r) * ch + c] = static_cast<T>(acc[static_cast<std::size_t>(c)] / hw);
                }
                return out;
            }
            case OpKind::Concat: {
                const TT& a = in(n, 0);
                const TT& b = in(n, 1);
                if (a.rank() < 1 || a.rank() != b.rank() ||
                    !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
                    shape_fail(i, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
                }
                const auto ca = static_cast<std::size_t>(a.dim(a.rank() - 1));
                const auto cb = static_cast<std::size_t>(b.dim(b.rank() - 1));
                Shape s = a.shape();
                s.back() = static_cast<int>(ca + cb);
                TT out(s);
                const std::size_t rows = a.size() / ca;
                for (std::size_t r = 0; r < rows; ++r) {
                    std::copy(a.raw() + r * ca, a.raw() + (r + 1) * ca, out.raw() + r * (ca + cb));
                    std::copy(b.raw() + r * cb, b.raw() + (r + 1) * cb, out.raw() + r * (ca + cb) + ca);
                }
                return out;
            }
            case OpKind::Reshape: {
                const TT& x = in(n, 0);
                if (x.rank() < 1) shape_fail(i, "reshape needs a batch axis");
                Shape s{x.dim(0)};
                s.insert(s.end(), n.attrs.shape.begin(), n.attrs.shape.end());
                if (shape_numel(s) != x.size()) shape_fail(i, shape_str(x.shape()) + " -> " + shape_str(s));
                return x.reshaped(s);
            }
            case OpKind::SumSquares:
            case OpKind::Mean:
            case OpKind::Sum:
            case OpKind::BatchMean: {
                const TT& x = in(n, 0);
                double acc = 0.0;
                if (n.kind == OpKind::SumSquares) {
                    for (std::size_t e = 0; e < x.size(); ++e) acc += static_cast<double>(x[e]) * x[e];
                } else {
                    for (std::size_t e = 0; e < x.size(); ++e) acc += x[e];
                }
                if (n.kind == OpKind::Mean) acc /= static_cast<double>(x.size());
                if (n.kind == OpKind::BatchMean) {
                    if (x.rank() < 1) shape_fail(i, "batch_mean needs a batch axis");
                    acc /= x.dim(0);
                }
                return TT::scalar(static_cast<T>(acc));
            }
        }
        shape_fail(i, "unknown op");
    }

    template <typename F>
    static TT map(const TT& x, F f) {
        TT out(x.shape());
        for (std::size_t e = 0; e < x.size(); ++e) out[e] = f(x[e]);
        return out;
    }

    void backprop(int i, const TT& gy, std::vector<TT*>& dx) {
        const Node& n = g_.nodes()[static_cast<std::size_t>(i)];
        const TT& y = value(i);
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Param: return;
            case OpKind::Conv2d: {
                const ConvGeometry geo = conv_geometry(i, n);
                conv2d_backward(geo, in(n, 0).raw(), in(n, 1).raw(), gy.raw(), dx[0] ? dx[0]->raw() : nullptr,
                                dx[1] ? dx[1]->raw() : nullptr, dx.size() > 2 && dx[2] ? dx[2]->raw() : nullptr);
                return;
            }
            case OpKind::Upsample2x: {
                const TT& x = in(n, 0);
                if (dx[0]) upsample2x_backward(x.dim(0), x.dim(1), x.dim(2), x.dim(3), gy.raw(), dx[0]->raw());
                return;
            }
            case OpKind::Dense: {
                auto [features, outs] = dense_dims(i, n);
                dense_backward(in(n, 0).dim(0), features, outs, in(n, 0).raw(), in(n, 1).raw(), gy.raw(),
                               dx[0] ? dx[0]->raw() : nullptr, dx[1] ? dx[1]->raw() : nullptr,
                               dx.size() > 2 && dx[2] ? dx[2]->raw() : nullptr);
                return;
            }
            case OpKind::LeakyRelu: {
                const TT& x = in(n, 0);
                const T slope = static_cast<T>(n.attrs.slope);
                for (std::size_t e = 0; e < x.size(); ++e) (*dx[0])[e] = x[e] > T(0) ? gy[e] : slope * gy[e];
                return;
            }
            case OpKind::Sigmoid:
                for (std::size_t e = 0; e < y.size(); ++e) (*dx[0])[e] = gy[e] * y[e] * (T(1) - y[e]);
                return;
            case OpKind::Tanh:
                for (std::size_t e = 0; e < y.size(); ++e) (*dx[0])[e] = gy[e] * (T(1) - y[e] * y[e]);
                return;
            case OpKind::Exp:
                for (std::size_t e = 0; e < y.size(); ++e) (*dx[0])[e] = gy[e] * y[e];
                return;
            case OpKind::Log: {
                const TT& x = in(n, 0);
                for (std::size_t e = 0; e < x.size(); ++e) (*dx[0])[e] = gy[e] / x[e];
                return;
            }
            case OpKind::ClampMin: {
                const TT& x = in(n, 0);
                const T floor = static_cast<T>(n.attrs.floor);
                for (std::size_t e = 0; e < x.size(); ++e) (*dx[0])[e] = x[e] > floor ? gy[e] : T(0);
                return;
            }
            case OpKind::Softmax: {
                const auto cols = static_cast<std::size_t>(y.dim(y.rank() - 1));
                const std::size_t rows = y.size() / cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(gy[r * cols + c]) * y[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c) {
                        (*dx[0])[r * cols + c] = static_cast<T>(y[r * cols + c] * (gy[r * cols + c] - dot));
                    }
                }
                return;
            }
            case OpKind::Add:
                if (dx[0]) std::copy(gy.raw(), gy.raw() + gy.size(), dx[0]->raw());
                if (dx[1]) std::copy(gy.raw(), gy.raw() + gy.size(), dx[1]->raw());
                return;
            case OpKind::Sub:
                if (dx[0]) std::copy(gy.raw(), gy.raw() + gy.size(), dx[0]->raw());
                if (dx[1])
                    for (std::size_t e = 0; e < gy.size(); ++e) (*dx[1])[e] = -gy[e];
                return;
            case OpKind::Mul: {
                const TT& a = in(n, 0);
                const TT& b = in(n, 1);
                if (dx[0])
                    for (std::size_t e = 0; e < gy.size(); ++e) (*dx[0])[e] = gy[e] * b[e];
                if (dx[1])
                    for (std::size_t e = 0; e < gy.size(); ++e) (*dx[1])[e] = gy[e] * a[e];
                return;
            }
            case OpKind::Affine: {
                const T s = static_cast<T>(n.attrs.scale);
                for (std::size_t e = 0; e < gy.size(); ++e) (*dx[0])[e] = s * gy[e];
                return;
            }
            case OpKind::Tile: {
                const TT& x = in(n, 0);
                const int batch = x.dim(0), ch = x.dim(x.rank() - 1);
                const int positions = n.attrs.tile_h * n.attrs.tile_w;
                for (int r = 0; r < batch; ++r)
                    for (int c = 0; c < ch; ++c) {
                        double acc = 0.0;
                        for (int p = 0; p < positions; ++p) acc += gy[(static_cast<std::size_t>(r) * positions + p) * ch + c];
                        (*dx[0])[static_cast<std::size_t>(r) * ch + c] = static_cast<T>(acc);
                    }
                return;
            }
            case OpKind::GlobalAvgPool: {
                const TT& x = in(n, 0);
                const int batch = x.dim(0), ch = x.dim(3), hw = x.dim(1) * x.dim(2);
                const T inv = T(1) / static_cast<T>(hw);
                for (int r = 0; r < batch; ++r)
                    for (int p = 0; p < hw; ++p)
                        for (int c = 0; c < ch; ++c)
                            (*dx[0])[(static_cast<std::size_t>(r) * hw + p) * ch + c] = gy[static_cast<std::size_t>(r) * ch + c] * inv;
                return;
            }
            case OpKind::Concat: {
                const TT& a = in(n, 0);
                const TT& b = in(n, 1);
                const auto ca = static_cast<std::size_t>(a.dim(a.rank() - 1));
                const auto cb = static_cast<std::size_t>(b.dim(b.rank() - 1));
                const std::size_t rows = a.size() / ca;
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* src = gy.raw() + r * (ca + cb);
                    if (dx[0]) std::copy(src, src + ca, dx[0]->raw() + r * ca);
                    if (dx[1]) std::copy(src + ca, src + ca + cb, dx[1]->raw() + r * cb);
                }
                return;
            }
            case OpKind::Reshape:
                std::copy(gy.raw(), gy.raw() + gy.size(), dx[0]->raw());
                return;
            case OpKind::SumSquares: {
                const TT& x = in(n, 0);
                const T g = gy[0];
                for (std::size_t e = 0; e < x.size(); ++e) (*dx[0])[e] = T(2) * x[e] * g;
                return;
            }
            case OpKind::Mean:
            case OpKind::Sum:
            case OpKind::BatchMean: {
                const TT& x = in(n, 0);
                T g = gy[0];
                if (n.kind == OpKind::Mean) g = static_cast<T>(static_cast<double>(g) / static_cast<double>(x.size()));
                if (n.kind == OpKind::BatchMean) g = static_cast<T>(static_cast<double>(g) / x.dim(0));
                dx[0]->fill(g);
                return;
            }
        }
    }

    const OpGraph& g_;
    const std::map<std::string, TT, std::less<>>& bindings_;
    std::vector<std::optional<TT>> values_;
};

template <typename T>
std::vector<int> output_ids(const OpGraph& graph, const std::vector<std::string>& outputs) {
    std::vector<int> ids;
    for (const auto& name : outputs) ids.push_back(graph.output(name).index);
    return ids;
}

// Reverse-mode gradients in precision T for the given parameters.
template <typename T>
std::map<std::string, BasicTensor<T>, std::less<>> gradients(Engine<T>& engine, const OpGraph& graph, int loss,
                                                             const std::set<std::string>& wrt,
                                                             const std::vector<char>& need) {
    const auto& nodes = graph.nodes();
    // Nodes that depend on a requested parameter and feed the loss.
    std::vector<char> active(nodes.size(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!need[i]) continue;
        const Node& n = nodes[i];
        if (n.kind == OpKind::Param) {
            active[i] = wrt.empty() || wrt.count(n.name) ? 1 : 0;
        } else {
            for (int in : n.inputs) active[i] |= active[static_cast<std::size_t>(in)];
        }
    }
    if (!engine.value(loss).size() || engine.value(loss).size() != 1) {
        throw ContractError("backward: loss " + graph.describe(NodeId{loss}) + " is not a scalar (shape " +
                            shape_str(engine.value(loss).shape()) + ")");
    }
    auto grads = engine.reverse(loss, active);

    std::map<std::string, BasicTensor<T>, std::less<>> out;
    for (const auto& name : graph.parameter_names()) {
        if (!wrt.empty() && !wrt.count(name)) continue;
        const int id = graph.find_leaf(name)->index;
        const auto uid = static_cast<std::size_t>(id);
        if (grads[uid]) {
            out.emplace(name, std::move(*grads[uid]));
        }
    }
    return out;
}

}  // namespace detail

TensorMap evaluate(const OpGraph& graph, const Bindings& bindings, const std::vector<std::string>& outputs) {
    const std::vector<std::string> names = outputs.empty() ? graph.output_names() : outputs;
    detail::Engine<float> engine(graph, bindings);
    const auto ids = detail::output_ids<float>(graph, names);
    engine.forward(engine.ancestors(ids));
    TensorMap result;
    for (std::size_t k = 0; k < names.size(); ++k) result.emplace(names[k], engine.value(ids[k]));
    return result;
}

namespace {

template <typename T>
Shape param_shape(const std::map<std::string, BasicTensor<T>, std::less<>>& bindings, const std::string& name) {
    auto it = bindings.find(name);
    if (it == bindings.end()) throw ContractError("unbound param '" + name + "'");
    return it->second.shape();
}

}  // namespace

GradientResult backward(const OpGraph& graph, const Bindings& bindings, std::string_view loss,
                        const std::set<std::string>& wrt, const std::vector<std::string>& extra_outputs) {
    const int loss_id = graph.output(loss).index;
    std::vector<int> roots{loss_id};
    const auto extra_ids = detail::output_ids<float>(graph, extra_outputs);
    roots.insert(roots.end(), extra_ids.begin(), extra_ids.end());

    detail::Engine<float> engine(graph, bindings);
    const auto need = engine.ancestors({loss_id});
    engine.forward(engine.ancestors(roots));
    GradientResult result;
    result.grads = detail::gradients(engine, graph, loss_id, wrt, need);
    result.loss = engine.value(loss_id);
    for (std::size_t k = 0; k < extra_outputs.size(); ++k) result.values.emplace(extra_outputs[k], engine.value(extra_ids[k]));

    // Zero gradients for requested parameters the loss does not reach.
    for (const auto& name : graph.parameter_names()) {
        if (!wrt.empty() && !wrt.count(name)) continue;
        if (!result.grads.count(name)) result.grads.emplace(name, Tensor(param_shape(bindings, name)));
    }
    for (const auto& name : wrt) {
        if (!graph.find_leaf(name)) throw ContractError("backward: graph has no parameter '" + name + "'");
    }
    return result;
}

bool GradCheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

namespace {

using Bindings64 = std::map<std::string, BasicTensor<double>, std::less<>>;

Bindings64 promote(const Bindings& bindings) {
    Bindings64 out;
    for (const auto& [k, v] : bindings) out.emplace(k, v.cast<double>());
    return out;
}

// Loss value plus the side of every non-differentiable point (leaky-ReLU at 0,
// clamp at its floor) on which each element lies.
struct Probe {
    double loss = 0.0;
    std::vector<char> sides;
};

Probe probe64(const OpGraph& graph, const Bindings64& b, int loss_id) {
    detail::Engine<double> engine(graph, b);
    const auto need = engine.ancestors({loss_id});
    engine.forward(need);
    Probe p;
    p.loss = engine.value(loss_id)[0];
    for (std::size_t i = 0; i < need.size(); ++i) {
        if (!need[i]) continue;
        const Node& n = graph.nodes()[i];
        double edge = 0.0;
        if (n.kind == OpKind::ClampMin) {
            edge = n.attrs.floor;
        } else if (n.kind != OpKind::LeakyRelu) {
            continue;
        }
        for (double v : engine.value(n.inputs[0]).data()) p.sides.push_back(v > edge ? 1 : 0);
    }
    return p;
}

std::vector<std::size_t> probe_indices(std::size_t n, int max_probes) {
    std::vector<std::size_t> idx;
    if (max_probes <= 0 || n <= static_cast<std::size_t>(max_probes)) {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    for (int k = 0; k < max_probes; ++k) idx.push_back(static_cast<std::size_t>(k) * n / static_cast<std::size_t>(max_probes));
    return idx;
}

template <typename Analytic>
GradCheckReport compare(const OpGraph& graph, const Bindings& bindings, std::string_view loss, Analytic analytic_of,
                        double h, double tol, int max_probes) {
    if (!(h > 0)) throw ContractError("finite_diff_check: h must be positive");
    const int loss_id = graph.output(loss).index;
    Bindings64 b64 = promote(bindings);
    GradCheckReport report;
    const Probe base = probe64(graph, b64, loss_id);
    const std::vector<char>& base_sides = base.sides;
    const double base_loss = base.loss;
    for (const auto& name : graph.parameter_names()) {
        auto it = b64.find(name);
        if (it == b64.end()) throw ContractError("unbound param '" + name + "'");
        const std::vector<double> analytic = analytic_of(name);
        GradCheckEntry entry;
        entry.parameter = name;
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t e : probe_indices(it->second.size(), max_probes)) {
            const double saved = it->second[e];
            it->second[e] = saved + h;
            const Probe up = probe64(graph, b64, loss_id);
            it->second[e] = saved - h;
            const Probe down = probe64(graph, b64, loss_id);
            it->second[e] = saved;
            // A difference taken across a kink measures no derivative, so fall
            // back to the second-order one-sided stencil on the smooth side.
            const bool up_ok = up.sides == base_sides, down_ok = down.sides == base_sides;
            double numeric = (up.loss - down.loss) / (2.0 * h);
            if (!up_ok || !down_ok) {
                std::optional<Probe> far;
                if (up_ok || down_ok) {
                    it->second[e] = up_ok ? saved + 2.0 * h : saved - 2.0 * h;
                    far = probe64(graph, b64, loss_id);
                    it->second[e] = saved;
                }
                if (!far || far->sides != base_sides) {
                    ++entry.kinked_probes;
                    continue;
                }
                numeric = up_ok ? (-3.0 * base_loss + 4.0 * up.loss - far->loss) / (2.0 * h)
                                : (3.0 * base_loss - 4.0 * down.loss + far->loss) / (2.0 * h);
            }
            ++entry.probes;
            const double d = analytic[e] - numeric;
            entry.max_abs_error = std::max(entry.max_abs_error, std::abs(d));
            diff2 += d * d;
            a2 += analytic[e] * analytic[e];
            n2 += numeric * numeric;
        }
        entry.relative_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
        entry.passed = entry.relative_error <= tol && (entry.probes > 0 || entry.kinked_probes == 0);
        report.worst_relative_error = std::max(report.worst_relative_error, entry.relative_error);
        report.entries.push_back(entry);
    }
    return report;
}

}  // namespace

GradCheckReport finite_diff_check(const OpGraph& graph, const Bindings& bindings, std::string_view loss, double h,
                                  double tol, int max_probes_per_param) {
    const int loss_id = graph.output(loss).index;
    Bindings64 b64 = promote(bindings);
    detail::Engine<double> engine(graph, b64);
    const auto need = engine.ancestors({loss_id});
    engine.forward(need);
    auto grads = detail::gradients(engine, graph, loss_id, {}, need);
    return compare(
        graph, bindings, loss,
        [&](const std::string& name) {
            auto it = grads.find(name);
            if (it == grads.end()) return std::vector<double>(shape_numel(b64.at(name).shape()), 0.0);
            return std::vector<double>(it->second.data().begin(), it->second.data().end());
        },
        h, tol, max_probes_per_param);
}

GradCheckReport compare_with_finite_differences(const OpGraph& graph, const Bindings& bindings, std::string_view loss,
                                                const TensorMap& analytic, double h, double tol,
                                                int max_probes_per_param) {
    return compare(
        graph, bindings, loss,
        [&](const std::string& name) {
            auto it = analytic.find(name);
            if (it == analytic.end()) throw ContractError("no analytic gradient for '" + name + "'");
            return std::vector<double>(it->second.data().begin(), it->second.data().end());
        },
        h, tol, max_probes_per_param);
}

}  // namespace srae
