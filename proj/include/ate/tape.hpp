#pragma once

#include <algorithm>
#include <array>
#include <deque>
#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

#include "ate/tensor.hpp"

namespace ate {

enum class Activation { None, Relu };
enum class Padding { Same, Valid };

// Clamp floor applied to probabilities before any log; realizes 0*log 0 = 0.
inline constexpr double kProbFloor = 1e-12;

struct NodeId {
    int index = -1;
    bool valid() const { return index >= 0; }
    friend bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
};

/// Gradients of a scalar root with respect to requested leaves, keyed by leaf id.
template <class S>
class GradientMapT {
public:
    void put(NodeId id, TensorT<S> g) { grads_[id.index] = std::move(g); }
    bool contains(NodeId id) const { return grads_.count(id.index) != 0; }
    const TensorT<S>& at(NodeId id) const {
        auto it = grads_.find(id.index);
        if (it == grads_.end())
            throw UnknownLeafError("gradient map: leaf node " + std::to_string(id.index) + " not present");
        return it->second;
    }
    size_t size() const { return grads_.size(); }

private:
    std::unordered_map<int, TensorT<S>> grads_;
};

using GradientMap = GradientMapT<float>;

/// Define-by-run tape. Records one training step's forward graph, then
/// replays it in reverse for exact gradients. One tape per step; a tape
/// whose backward has run refuses further work.
template <class S>
class TapeT {
public:
    enum class Op {
        DataLeaf,
        ParamLeaf,
        Affine,
        Conv2d,
        Flatten,
        Softmax,
        Entropy,
        CrossEntropy,
        Sum,
        Square,
        Scale,
    };

    struct Node {
        Op op;
        std::array<int, 3> parents{-1, -1, -1};
        int n_parents = 0;
        TensorT<S> value;
        // op context
        Activation act = Activation::None;
        int stride_h = 1, stride_w = 1;
        Padding pad = Padding::Valid;
        Shape input_shape;      // flatten
        TensorT<S> labels;      // cross-entropy soft labels
        double scale = 1.0;     // scale
    };

    NodeId data_leaf(TensorT<S> v) { return push(Op::DataLeaf, std::move(v)); }
    NodeId param_leaf(TensorT<S> v) { return push(Op::ParamLeaf, std::move(v)); }

    const TensorT<S>& value(NodeId id) const { return node(id).value; }
    bool is_leaf(NodeId id) const {
        Op op = node(id).op;
        return op == Op::DataLeaf || op == Op::ParamLeaf;
    }
    size_t node_count() const { return nodes_.size(); }

    /// out = act(input * weight + bias); input [B,in], weight [in,out], bias [out].
    NodeId affine(NodeId input, NodeId weight, NodeId bias, Activation act) {
        const auto& in = value(input);
        const auto& w = value(weight);
        const auto& b = value(bias);
        if (in.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 ||
            in.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
            throw DimensionError("affine: input " + shape_str(in.shape) + " incompatible with weight " +
                                 shape_str(w.shape) + " / bias " + shape_str(b.shape));
        const int batch = in.dim(0), in_dim = in.dim(1), out_dim = w.dim(1);
        TensorT<S> out = TensorT<S>::zeros({batch, out_dim});
        for (int r = 0; r < batch; ++r) {
            for (int c = 0; c < out_dim; ++c) out.at2(r, c) = b[c];
            for (int k = 0; k < in_dim; ++k) {
                const S x = in.at2(r, k);
                for (int c = 0; c < out_dim; ++c) out.at2(r, c) += x * w.at2(k, c);
            }
            if (act == Activation::Relu)
                for (int c = 0; c < out_dim; ++c) out.at2(r, c) = std::max(out.at2(r, c), S(0));
        }
        Node n = make(Op::Affine, {input, weight, bias}, std::move(out));
        n.act = act;
        return push(std::move(n));
    }

    /// Cross-correlation; input [B,Ci,H,W], kernel [Co,Ci,kH,kW], bias [Co].
    /// Output accumulator per cell starts at the bias and sums in (ci, kh, kw)
    /// order; the naive reference in the tests mirrors that order so the two
    /// agree bitwise.
    NodeId conv2d(NodeId input, NodeId kernel, NodeId bias, int stride_h, int stride_w,
                  Padding pad, Activation act) {
        const auto& in = value(input);
        const auto& k = value(kernel);
        const auto& b = value(bias);
        if (in.ndim() != 4 || k.ndim() != 4 || b.ndim() != 1 || in.dim(1) != k.dim(1) ||
            b.dim(0) != k.dim(0))
            throw DimensionError("conv2d: input " + shape_str(in.shape) + " incompatible with kernel " +
                                 shape_str(k.shape) + " / bias " + shape_str(b.shape));
        if (stride_h < 1 || stride_w < 1) throw DimensionError("conv2d: stride must be >= 1");
        const int B = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
        const int Co = k.dim(0), kH = k.dim(2), kW = k.dim(3);
        int Ho, Wo, pad_top, pad_left;
        conv_geometry(H, W, kH, kW, stride_h, stride_w, pad, Ho, Wo, pad_top, pad_left);
        TensorT<S> out = TensorT<S>::zeros({B, Co, Ho, Wo});
        for (int n = 0; n < B; ++n)
            for (int co = 0; co < Co; ++co)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        S acc = b[co];
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int r = 0; r < kH; ++r) {
                                const int ih = oh * stride_h - pad_top + r;
                                if (ih < 0 || ih >= H) continue;
                                for (int c = 0; c < kW; ++c) {
                                    const int iw = ow * stride_w - pad_left + c;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += in.at4(n, ci, ih, iw) * k.at4(co, ci, r, c);
                                }
                            }
                        if (act == Activation::Relu) acc = std::max(acc, S(0));
                        out.at4(n, co, oh, ow) = acc;
                    }
        Node nd = make(Op::Conv2d, {input, kernel, bias}, std::move(out));
        nd.act = act;
        nd.stride_h = stride_h;
        nd.stride_w = stride_w;
        nd.pad = pad;
        return push(std::move(nd));
    }

    /// [B, d1, d2, ...] -> [B, d1*d2*...]; row-major, so the buffer is shared.
    NodeId flatten(NodeId input) {
        const auto& in = value(input);
        if (in.ndim() < 2) throw DimensionError("flatten: need at least 2 dims, got " + shape_str(in.shape));
        const int batch = in.dim(0);
        const int rest = static_cast<int>(in.size() / batch);
        TensorT<S> out = in;
        out.shape = {batch, rest};
        Node n = make(Op::Flatten, {input}, std::move(out));
        n.input_shape = in.shape;
        return push(std::move(n));
    }

    /// Row-wise softmax with max subtraction; logits [B,N], N >= 2.
    NodeId softmax(NodeId logits) {
        const auto& z = value(logits);
        if (z.ndim() != 2 || z.dim(1) < 2)
            throw DimensionError("softmax: want [batch, N>=2], got " + shape_str(z.shape));
        const int B = z.dim(0), N = z.dim(1);
        TensorT<S> out = TensorT<S>::zeros({B, N});
        for (int r = 0; r < B; ++r) {
            S mx = z.at2(r, 0);
            for (int c = 1; c < N; ++c) mx = std::max(mx, z.at2(r, c));
            S sum = 0;
            for (int c = 0; c < N; ++c) {
                const S e = std::exp(z.at2(r, c) - mx);
                out.at2(r, c) = e;
                sum += e;
            }
            for (int c = 0; c < N; ++c) out.at2(r, c) /= sum;
        }
        return push(make(Op::Softmax, {logits}, std::move(out)));
    }

    /// Mean over batch of -sum_i p_i ln p_i, natural log, p clamped to >= 1e-12.
    NodeId entropy(NodeId probs) {
        const auto& p = value(probs);
        if (p.ndim() != 2) throw DimensionError("entropy: want [batch, N], got " + shape_str(p.shape));
        const int B = p.dim(0), N = p.dim(1);
        double acc = 0;
        for (int r = 0; r < B; ++r)
            for (int c = 0; c < N; ++c) {
                const double v = static_cast<double>(p.at2(r, c));
                acc -= v * std::log(std::max(v, kProbFloor));
            }
        return push(make(Op::Entropy, {probs}, TensorT<S>::scalar(static_cast<S>(acc / B))));
    }

    /// Mean over batch of -sum_c y_c ln p_c with p clamped to [1e-12, 1].
    /// Labels may be soft; rows of `labels` should sum to 1.
    NodeId cross_entropy(NodeId probs, const TensorT<S>& labels) {
        const auto& p = value(probs);
        if (p.ndim() != 2 || !p.same_shape(labels))
            throw DimensionError("cross_entropy: probs " + shape_str(p.shape) + " vs labels " +
                                 shape_str(labels.shape));
        const int B = p.dim(0), N = p.dim(1);
        double acc = 0;
        for (int r = 0; r < B; ++r)
            for (int c = 0; c < N; ++c) {
                const double y = static_cast<double>(labels.at2(r, c));
                if (y == 0.0) continue;
                const double v = std::clamp(static_cast<double>(p.at2(r, c)), kProbFloor, 1.0);
                acc -= y * std::log(v);
            }
        Node n = make(Op::CrossEntropy, {probs}, TensorT<S>::scalar(static_cast<S>(acc / B)));
        n.labels = labels;
        return push(std::move(n));
    }

    /// Convenience: class-index labels to one-hot rows.
    NodeId cross_entropy(NodeId probs, std::span<const int> class_index) {
        const auto& p = value(probs);
        if (p.ndim() != 2 || static_cast<int>(class_index.size()) != p.dim(0))
            throw DimensionError("cross_entropy: got " + std::to_string(class_index.size()) +
                                 " labels for probs " + shape_str(p.shape));
        TensorT<S> onehot = TensorT<S>::zeros(p.shape);
        for (int r = 0; r < p.dim(0); ++r) {
            const int idx = class_index[static_cast<size_t>(r)];
            if (idx < 0 || idx >= p.dim(1))
                throw IndexError("cross_entropy: label " + std::to_string(idx) + " out of range for N=" +
                                 std::to_string(p.dim(1)));
            onehot.at2(r, idx) = S(1);
        }
        return cross_entropy(probs, onehot);
    }

    NodeId sum(NodeId input) {
        const auto& in = value(input);
        double acc = 0;
        for (S v : in.data) acc += static_cast<double>(v);
        return push(make(Op::Sum, {input}, TensorT<S>::scalar(static_cast<S>(acc))));
    }

    NodeId square(NodeId input) {
        TensorT<S> out = value(input);
        for (auto& v : out.data) v *= v;
        return push(make(Op::Square, {input}, std::move(out)));
    }

    NodeId scale(NodeId input, double factor) {
        TensorT<S> out = value(input);
        for (auto& v : out.data) v = static_cast<S>(v * factor);
        Node n = make(Op::Scale, {input}, std::move(out));
        n.scale = factor;
        return push(std::move(n));
    }

    /// Reverse pass from a scalar root. Computes gradients only along paths
    /// that reach a requested leaf, which keeps ATE's input-only backward
    /// cheaper than a full parameter backward. Consumes the tape.
    GradientMapT<S> backward(NodeId root, std::span<const NodeId> leaves) {
        if (consumed_) throw ContractError("tape: backward already ran on this tape");
        const Node& r = node(root);
        if (r.value.size() != 1)
            throw ContractError("backward: root must be scalar, got shape " + shape_str(r.value.shape));

        std::vector<char> wanted(nodes_.size(), 0);
        for (NodeId leaf : leaves) {
            if (leaf.index < 0 || leaf.index >= static_cast<int>(nodes_.size()))
                throw UnknownLeafError("backward: node " + std::to_string(leaf.index) + " is not on the tape");
            if (!is_leaf(leaf))
                throw UnknownLeafError("backward: node " + std::to_string(leaf.index) + " is not a leaf");
            wanted[static_cast<size_t>(leaf.index)] = 1;
        }
        // needed[i]: node i lies on a path from some node down to a requested
        // leaf. Parents precede children, so one forward sweep settles it.
        std::vector<char> needed(nodes_.size(), 0);
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (wanted[i]) {
                needed[i] = 1;
                continue;
            }
            const Node& n = nodes_[i];
            for (int p = 0; p < n.n_parents; ++p)
                if (needed[static_cast<size_t>(n.parents[static_cast<size_t>(p)])]) {
                    needed[i] = 1;
                    break;
                }
        }

        std::vector<TensorT<S>> grads(nodes_.size());
        grads[static_cast<size_t>(root.index)] = TensorT<S>::scalar(S(1));

        for (int i = root.index; i >= 0; --i) {
            const Node& n = nodes_[static_cast<size_t>(i)];
            TensorT<S>& g = grads[static_cast<size_t>(i)];
            if (g.empty() || n.n_parents == 0) continue;
            backprop_node(n, g, grads, needed);
            if (!wanted[static_cast<size_t>(i)]) g = TensorT<S>();  // release memory early
        }

        GradientMapT<S> out;
        for (NodeId leaf : leaves) {
            TensorT<S>& g = grads[static_cast<size_t>(leaf.index)];
            if (g.empty()) g = TensorT<S>::zeros(node(leaf).value.shape);
            out.put(leaf, std::move(g));
        }
        consumed_ = true;
        return out;
    }

    static void conv_geometry(int H, int W, int kH, int kW, int sH, int sW, Padding pad,
                              int& Ho, int& Wo, int& pad_top, int& pad_left) {
        if (pad == Padding::Same) {
            Ho = (H + sH - 1) / sH;
            Wo = (W + sW - 1) / sW;
            const int ph = std::max((Ho - 1) * sH + kH - H, 0);
            const int pw = std::max((Wo - 1) * sW + kW - W, 0);
            pad_top = ph / 2;
            pad_left = pw / 2;
            if (kH > H + ph || kW > W + pw)
                throw DimensionError("conv2d: kernel " + std::to_string(kH) + "x" + std::to_string(kW) +
                                     " larger than padded input " + std::to_string(H + ph) + "x" +
                                     std::to_string(W + pw));
        } else {
            if (kH > H || kW > W)
                throw DimensionError("conv2d: kernel " + std::to_string(kH) + "x" + std::to_string(kW) +
                                     " larger than input " + std::to_string(H) + "x" + std::to_string(W));
            Ho = (H - kH) / sH + 1;
            Wo = (W - kW) / sW + 1;
            pad_top = 0;
            pad_left = 0;
        }
    }

private:
    std::deque<Node> nodes_;
    bool consumed_ = false;

    const Node& node(NodeId id) const {
        if (id.index < 0 || id.index >= static_cast<int>(nodes_.size()))
            throw ContractError("tape: node id " + std::to_string(id.index) + " out of range");
        return nodes_[static_cast<size_t>(id.index)];
    }

    Node make(Op op, std::initializer_list<NodeId> parents, TensorT<S> value) {
        if (consumed_) throw ContractError("tape: already consumed by backward");
        Node n;
        n.op = op;
        n.value = std::move(value);
        for (NodeId p : parents) {
            node(p);  // range check
            n.parents[static_cast<size_t>(n.n_parents++)] = p.index;
        }
        return n;
    }

    NodeId push(Op op, TensorT<S> value) { return push(make(op, {}, std::move(value))); }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return NodeId{static_cast<int>(nodes_.size()) - 1};
    }

    TensorT<S>& grad_buffer(std::vector<TensorT<S>>& grads, int idx) {
        TensorT<S>& g = grads[static_cast<size_t>(idx)];
        if (g.empty()) g = TensorT<S>::zeros(nodes_[static_cast<size_t>(idx)].value.shape);
        return g;
    }

    void backprop_node(const Node& n, const TensorT<S>& g, std::vector<TensorT<S>>& grads,
                       const std::vector<char>& needed) {
        auto need = [&](int slot) {
            return slot < n.n_parents && needed[static_cast<size_t>(n.parents[static_cast<size_t>(slot)])];
        };
        auto parent_value = [&](int slot) -> const TensorT<S>& {
            return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(slot)])].value;
        };
        auto parent_grad = [&](int slot) -> TensorT<S>& {
            return grad_buffer(grads, n.parents[static_cast<size_t>(slot)]);
        };

        switch (n.op) {
            case Op::DataLeaf:
            case Op::ParamLeaf:
                break;

            case Op::Affine: {
                const auto& in = parent_value(0);
                const auto& w = parent_value(1);
                const int B = in.dim(0), I = in.dim(1), O = w.dim(1);
                // dZ = g masked by relu (value > 0 <=> pre-activation > 0).
                TensorT<S> dz = g;
                if (n.act == Activation::Relu)
                    for (int64_t i = 0; i < dz.size(); ++i)
                        if (n.value[i] <= S(0)) dz[i] = S(0);
                if (need(0)) {
                    auto& din = parent_grad(0);
                    for (int r = 0; r < B; ++r)
                        for (int k = 0; k < I; ++k) {
                            S acc = 0;
                            for (int c = 0; c < O; ++c) acc += dz.at2(r, c) * w.at2(k, c);
                            din.at2(r, k) += acc;
                        }
                }
                if (need(1)) {
                    auto& dw = parent_grad(1);
                    for (int r = 0; r < B; ++r)
                        for (int k = 0; k < I; ++k) {
                            const S x = in.at2(r, k);
                            for (int c = 0; c < O; ++c) dw.at2(k, c) += x * dz.at2(r, c);
                        }
                }
                if (need(2)) {
                    auto& db = parent_grad(2);
                    for (int r = 0; r < B; ++r)
                        for (int c = 0; c < O; ++c) db[c] += dz.at2(r, c);
                }
                break;
            }

            case Op::Conv2d: {
                const auto& in = parent_value(0);
                const auto& k = parent_value(1);
                const int B = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
                const int Co = k.dim(0), kH = k.dim(2), kW = k.dim(3);
                int Ho, Wo, pad_top, pad_left;
                conv_geometry(H, W, kH, kW, n.stride_h, n.stride_w, n.pad, Ho, Wo, pad_top, pad_left);
                TensorT<S> dz = g;
                if (n.act == Activation::Relu)
                    for (int64_t i = 0; i < dz.size(); ++i)
                        if (n.value[i] <= S(0)) dz[i] = S(0);
                const bool want_in = need(0), want_k = need(1), want_b = need(2);
                TensorT<S>* din = want_in ? &parent_grad(0) : nullptr;
                TensorT<S>* dk = want_k ? &parent_grad(1) : nullptr;
                TensorT<S>* db = want_b ? &parent_grad(2) : nullptr;
                for (int nb = 0; nb < B; ++nb)
                    for (int co = 0; co < Co; ++co)
                        for (int oh = 0; oh < Ho; ++oh)
                            for (int ow = 0; ow < Wo; ++ow) {
                                const S gz = dz.at4(nb, co, oh, ow);
                                if (gz == S(0)) continue;
                                if (db) (*db)[co] += gz;
                                if (!want_in && !want_k) continue;
                                for (int ci = 0; ci < Ci; ++ci)
                                    for (int r = 0; r < kH; ++r) {
                                        const int ih = oh * n.stride_h - pad_top + r;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int c = 0; c < kW; ++c) {
                                            const int iw = ow * n.stride_w - pad_left + c;
                                            if (iw < 0 || iw >= W) continue;
                                            if (dk) dk->at4(co, ci, r, c) += in.at4(nb, ci, ih, iw) * gz;
                                            if (din) din->at4(nb, ci, ih, iw) += k.at4(co, ci, r, c) * gz;
                                        }
                                    }
                            }
                break;
            }

            case Op::Flatten: {
                if (need(0)) {
                    auto& din = parent_grad(0);
                    for (int64_t i = 0; i < g.size(); ++i) din[i] += g[i];
                }
                break;
            }

            case Op::Softmax: {
                if (!need(0)) break;
                auto& din = parent_grad(0);
                const auto& y = n.value;
                const int B = y.dim(0), N = y.dim(1);
                for (int r = 0; r < B; ++r) {
                    S dot = 0;
                    for (int c = 0; c < N; ++c) dot += g.at2(r, c) * y.at2(r, c);
                    for (int c = 0; c < N; ++c) din.at2(r, c) += y.at2(r, c) * (g.at2(r, c) - dot);
                }
                break;
            }

            case Op::Entropy: {
                if (!need(0)) break;
                auto& din = parent_grad(0);
                const auto& p = parent_value(0);
                const int B = p.dim(0), N = p.dim(1);
                const double gs = static_cast<double>(g[0]) / B;
                for (int r = 0; r < B; ++r)
                    for (int c = 0; c < N; ++c) {
                        const double v = static_cast<double>(p.at2(r, c));
                        // d(-v ln max(v, floor))/dv: ln term only moves above the floor.
                        const double d = -(std::log(std::max(v, kProbFloor)) + (v >= kProbFloor ? 1.0 : 0.0));
                        din.at2(r, c) += static_cast<S>(gs * d);
                    }
                break;
            }

            case Op::CrossEntropy: {
                if (!need(0)) break;
                auto& din = parent_grad(0);
                const auto& p = parent_value(0);
                const int B = p.dim(0), N = p.dim(1);
                const double gs = static_cast<double>(g[0]) / B;
                for (int r = 0; r < B; ++r)
                    for (int c = 0; c < N; ++c) {
                        const double y = static_cast<double>(n.labels.at2(r, c));
                        if (y == 0.0) continue;
                        const double v = static_cast<double>(p.at2(r, c));
                        if (v < kProbFloor || v > 1.0) continue;  // clamped flat region
                        din.at2(r, c) += static_cast<S>(gs * (-y / v));
                    }
                break;
            }

            case Op::Sum: {
                if (!need(0)) break;
                auto& din = parent_grad(0);
                for (int64_t i = 0; i < din.size(); ++i) din[i] += g[0];
                break;
            }

            case Op::Square: {
                if (!need(0)) break;
                auto& din = parent_grad(0);
                const auto& x = parent_value(0);
                for (int64_t i = 0; i < din.size(); ++i) din[i] += S(2) * x[i] * g[i];
                break;
            }

            case Op::Scale: {
                if (!need(0)) break;
                auto& din = parent_grad(0);
                for (int64_t i = 0; i < din.size(); ++i) din[i] += static_cast<S>(g[i] * n.scale);
                break;
            }
        }
    }
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

} // namespace ate
