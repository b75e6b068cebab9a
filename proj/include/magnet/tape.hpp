#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/tensor.hpp"

namespace magnet {

enum class Activation { identity, relu, tanh };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

// Reverse-mode tape. Values are computed eagerly as ops are recorded; the
// backward pass replays the recorded ops once, in reverse order, accumulating
// gradients into every node. Recording order is a topological order by
// construction, since an op can only reference ids that already exist.
//
// A tape is single-owner while recording; see the module notes in README.
class Tape {
public:
    using Id = std::int32_t;
    static constexpr Id none = -1;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Id leaf(Tensor t) {
        nodes_.push_back(Node{std::move(t), {}});
        return static_cast<Id>(nodes_.size() - 1);
    }

    // Leaf backed by a persistent parameter tensor. The same parameter may be
    // leafed several times (weight sharing); param_grad() sums over all uses.
    Id leaf_param(const Tensor& t) {
        Id id = leaf(t);
        param_leaves_.emplace_back(&t, id);
        return id;
    }

    // Total gradient w.r.t. a registered parameter after backward().
    Tensor param_grad(const Tensor& p) const {
        Tensor out(p.shape);
        bool found = false;
        for (const auto& [ptr, id] : param_leaves_) {
            if (ptr != &p) continue;
            const Node& n = nodes_[id];
            if (n.grad.size() != n.val.data.size())
                throw std::runtime_error("Tape::param_grad: backward() has not been run");
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += n.grad[i];
            found = true;
        }
        if (!found)
            throw std::runtime_error("Tape::param_grad: parameter not used in this tape");
        return out;
    }

    const Tensor& value(Id id) const { return nodes_.at(check(id)).val; }

    // Gradient of the last backward() target w.r.t. node `id`.
    Tensor grad(Id id) const {
        const Node& n = nodes_.at(check(id));
        if (n.grad.size() != n.val.data.size())
            throw std::runtime_error("Tape::grad: backward() has not been run");
        return Tensor(n.val.shape, n.grad);
    }

    std::size_t num_ops() const { return ops_.size(); }

    // y = act(x W^T + b). W is (out, in); x is (in) or (B, in); b is (out)
    // or absent. Output rank follows x.
    Id dense(Id xid, Id wid, Id bid, Activation act) {
        const Tensor& x = value(xid);
        const Tensor& w = value(wid);
        if (w.rank() != 2)
            throw std::invalid_argument("dense: weight must be rank 2, got " + w.shape_str());
        const std::size_t out = w.shape[0], in = w.shape[1];
        if (x.cols() != in)
            throw std::invalid_argument("dense: input width " + std::to_string(x.cols()) +
                                        " does not match weight inner dimension " +
                                        std::to_string(in));
        const std::size_t batch = x.rows();
        const double* bias = nullptr;
        if (bid != none) {
            const Tensor& b = value(bid);
            if (b.numel() != out)
                throw std::invalid_argument("dense: bias length " + std::to_string(b.numel()) +
                                            " does not match output width " + std::to_string(out));
            bias = b.data.data();
        }
        Tensor y(x.rank() == 2 ? std::vector<std::size_t>{batch, out}
                               : std::vector<std::size_t>{out});
        for (std::size_t r = 0; r < batch; ++r) {
            const double* xr = x.data.data() + r * in;
            double* yr = y.data.data() + r * out;
            for (std::size_t o = 0; o < out; ++o) {
                const double* wr = w.data.data() + o * in;
                double acc = bias ? bias[o] : 0.0;
                for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
                yr[o] = apply_act(acc, act);
            }
        }
        Id yid = push(std::move(y));
        record([this, xid, wid, bid, yid, act, batch, out, in]() {
            const Tensor& x = nodes_[xid].val;
            const Tensor& w = nodes_[wid].val;
            const Tensor& y = nodes_[yid].val;
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            std::vector<double>& gw = nodes_[wid].grad;
            std::vector<double> gz(batch * out);
            for (std::size_t k = 0; k < gz.size(); ++k)
                gz[k] = gy[k] * act_deriv_from_output(y.data[k], act);
            for (std::size_t r = 0; r < batch; ++r) {
                const double* xr = x.data.data() + r * in;
                const double* gzr = gz.data() + r * out;
                double* gxr = gx.data() + r * in;
                for (std::size_t o = 0; o < out; ++o) {
                    const double g = gzr[o];
                    if (g == 0.0) continue;
                    const double* wr = w.data.data() + o * in;
                    double* gwr = gw.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) {
                        gwr[i] += g * xr[i];
                        gxr[i] += g * wr[i];
                    }
                }
            }
            if (bid != none) {
                std::vector<double>& gb = nodes_[bid].grad;
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t o = 0; o < out; ++o) gb[o] += gz[r * out + o];
            }
        });
        return yid;
    }

    // Dot-product layer: feature of width l*d, reshaped column-wise into an
    // l x d matrix whose column k is paired with weight column w_k.
    // out_k = e_k . w_k (+ b_k). W is stored (l, d); b is (d) or absent.
    Id dot_product(Id fid, Id wid, Id bid) {
        const Tensor& f = value(fid);
        const Tensor& w = value(wid);
        if (w.rank() != 2)
            throw std::invalid_argument("dot_product: weight must be rank 2, got " + w.shape_str());
        const std::size_t l = w.shape[0], d = w.shape[1];
        if (f.cols() != l * d)
            throw std::invalid_argument("dot_product: feature width " + std::to_string(f.cols()) +
                                        " is not l*d = " + std::to_string(l * d));
        const std::size_t batch = f.rows();
        const double* bias = nullptr;
        if (bid != none) {
            const Tensor& b = value(bid);
            if (b.numel() != d)
                throw std::invalid_argument("dot_product: bias length must equal d");
            bias = b.data.data();
        }
        Tensor y(f.rank() == 2 ? std::vector<std::size_t>{batch, d}
                               : std::vector<std::size_t>{d});
        for (std::size_t r = 0; r < batch; ++r) {
            const double* fr = f.data.data() + r * l * d;
            double* yr = y.data.data() + r * d;
            for (std::size_t k = 0; k < d; ++k) {
                double acc = bias ? bias[k] : 0.0;
                for (std::size_t i = 0; i < l; ++i) acc += fr[k * l + i] * w.data[i * d + k];
                yr[k] = acc;
            }
        }
        Id yid = push(std::move(y));
        record([this, fid, wid, bid, yid, batch, l, d]() {
            const Tensor& f = nodes_[fid].val;
            const Tensor& w = nodes_[wid].val;
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gf = nodes_[fid].grad;
            std::vector<double>& gw = nodes_[wid].grad;
            for (std::size_t r = 0; r < batch; ++r) {
                const double* fr = f.data.data() + r * l * d;
                double* gfr = gf.data() + r * l * d;
                const double* gyr = gy.data() + r * d;
                for (std::size_t k = 0; k < d; ++k) {
                    const double g = gyr[k];
                    if (g == 0.0) continue;
                    for (std::size_t i = 0; i < l; ++i) {
                        gfr[k * l + i] += g * w.data[i * d + k];
                        gw[i * d + k] += g * fr[k * l + i];
                    }
                }
            }
            if (bid != none) {
                std::vector<double>& gb = nodes_[bid].grad;
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t k = 0; k < d; ++k) gb[k] += gy[r * d + k];
            }
        });
        return yid;
    }

    Id add(Id a, Id b) { return binary(a, b, +1.0); }
    Id sub(Id a, Id b) { return binary(a, b, -1.0); }

    // y = s*x + t
    Id axpy(double s, Id xid, Id tid) {
        const Tensor& x = value(xid);
        const Tensor& t = value(tid);
        if (!x.same_shape(t))
            throw std::invalid_argument("axpy: shape mismatch " + x.shape_str() + " vs " +
                                        t.shape_str());
        Tensor y(x.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = s * x.data[i] + t.data[i];
        Id yid = push(std::move(y));
        record([this, s, xid, tid, yid]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            std::vector<double>& gt = nodes_[tid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gx[i] += s * gy[i];
                gt[i] += gy[i];
            }
        });
        return yid;
    }

    // y[., k] = scales[k] * x[., k] + offsets[k]
    Id colwise_affine(Id xid, std::vector<double> scales, std::vector<double> offsets) {
        const Tensor& x = value(xid);
        const std::size_t cols = x.cols();
        if (scales.size() != cols || offsets.size() != cols)
            throw std::invalid_argument("colwise_affine: coefficient width mismatch");
        Tensor y(x.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            const std::size_t k = i % cols;
            y.data[i] = scales[k] * x.data[i] + offsets[k];
        }
        Id yid = push(std::move(y));
        record([this, xid, yid, cols, scales = std::move(scales)]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * scales[i % cols];
        });
        return yid;
    }

    Id scale(double s, Id xid) {
        const Tensor& x = value(xid);
        Tensor y(x.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = s * x.data[i];
        Id yid = push(std::move(y));
        record([this, s, xid, yid]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += s * gy[i];
        });
        return yid;
    }

    Id mul(Id aid, Id bid) {
        const Tensor& a = value(aid);
        const Tensor& b = value(bid);
        if (!a.same_shape(b))
            throw std::invalid_argument("mul: shape mismatch " + a.shape_str() + " vs " +
                                        b.shape_str());
        Tensor y(a.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] * b.data[i];
        Id yid = push(std::move(y));
        record([this, aid, bid, yid]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            const Tensor& a = nodes_[aid].val;
            const Tensor& b = nodes_[bid].val;
            std::vector<double>& ga = nodes_[aid].grad;
            std::vector<double>& gb = nodes_[bid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                ga[i] += gy[i] * b.data[i];
                gb[i] += gy[i] * a.data[i];
            }
        });
        return yid;
    }

    Id sigmoid(Id xid) { return unary(xid, UnaryKind::sigmoid); }
    Id tanh_op(Id xid) { return unary(xid, UnaryKind::tanh); }
    Id relu(Id xid) { return unary(xid, UnaryKind::relu); }

    // Columns [c0, c1) of a rank-2 tensor.
    Id slice_cols(Id xid, std::size_t c0, std::size_t c1) {
        const Tensor& x = value(xid);
        if (x.rank() != 2 || c1 > x.shape[1] || c0 >= c1)
            throw std::invalid_argument("slice_cols: bad range on " + x.shape_str());
        const std::size_t rows = x.shape[0], cols = x.shape[1], w = c1 - c0;
        Tensor y({rows, w});
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) y.data[r * w + c] = x.data[r * cols + c0 + c];
        Id yid = push(std::move(y));
        record([this, xid, yid, c0, rows, cols, w]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < w; ++c) gx[r * cols + c0 + c] += gy[r * w + c];
        });
        return yid;
    }

    // Rows offset, offset+stride, offset+2*stride, ... of a rank-2 tensor.
    Id slice_rows_strided(Id xid, std::size_t stride, std::size_t offset) {
        const Tensor& x = value(xid);
        if (x.rank() != 2 || stride == 0 || offset >= stride || x.shape[0] % stride != 0)
            throw std::invalid_argument("slice_rows_strided: bad stride/offset on " +
                                        x.shape_str());
        const std::size_t rows = x.shape[0] / stride, cols = x.shape[1];
        Tensor y({rows, cols});
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                y.data[r * cols + c] = x.data[(r * stride + offset) * cols + c];
        Id yid = push(std::move(y));
        record([this, xid, yid, stride, offset, rows, cols]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    gx[(r * stride + offset) * cols + c] += gy[r * cols + c];
        });
        return yid;
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
        const std::size_t rows = value(parts[0]).rows();
        std::size_t total = 0;
        for (Id p : parts) {
            const Tensor& t = value(p);
            if (t.rank() != 2 || t.shape[0] != rows)
                throw std::invalid_argument("concat_cols: row mismatch");
            total += t.shape[1];
        }
        Tensor y({rows, total});
        std::size_t off = 0;
        for (Id p : parts) {
            const Tensor& t = value(p);
            const std::size_t w = t.shape[1];
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < w; ++c) y.data[r * total + off + c] = t.at(r, c);
            off += w;
        }
        Id yid = push(std::move(y));
        record([this, parts, yid, rows, total]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::size_t off = 0;
            for (Id p : parts) {
                std::vector<double>& gp = nodes_[p].grad;
                const std::size_t w = nodes_[p].val.shape[1];
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += gy[r * total + off + c];
                off += w;
            }
        });
        return yid;
    }

    Id reshape(Id xid, std::vector<std::size_t> shape) {
        const Tensor& x = value(xid);
        if (Tensor::numel_of(shape) != x.numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor y(std::move(shape), x.data);
        Id yid = push(std::move(y));
        record([this, xid, yid]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& gx = nodes_[xid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        });
        return yid;
    }

    // SmoothL1 with knot 1.0, mean reduction. Scalar output.
    Id smooth_l1(Id pid, Id tid) {
        const Tensor& p = value(pid);
        const Tensor& t = value(tid);
        if (!p.same_shape(t))
            throw std::invalid_argument("smooth_l1: shape mismatch " + p.shape_str() + " vs " +
                                        t.shape_str());
        const std::size_t n = p.numel();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = p.data[i] - t.data[i];
            const double a = std::abs(e);
            acc += a < 1.0 ? 0.5 * e * e : a - 0.5;
        }
        Tensor y({1});
        y.data[0] = acc / static_cast<double>(n);
        Id yid = push(std::move(y));
        record([this, pid, tid, yid, n]() {
            const double g = nodes_[yid].grad[0] / static_cast<double>(n);
            const Tensor& p = nodes_[pid].val;
            const Tensor& t = nodes_[tid].val;
            std::vector<double>& gp = nodes_[pid].grad;
            std::vector<double>& gt = nodes_[tid].grad;
            for (std::size_t i = 0; i < n; ++i) {
                double e = p.data[i] - t.data[i];
                if (e > 1.0) e = 1.0;
                if (e < -1.0) e = -1.0;
                gp[i] += g * e;
                gt[i] -= g * e;
            }
        });
        return yid;
    }

    // Seeds d(loss)/d(loss) = 1 and replays all recorded ops in reverse.
    void backward(Id lossid) {
        if (ops_.empty()) throw std::runtime_error("backward: empty tape");
        const Tensor& loss = value(lossid);
        if (loss.numel() != 1) throw std::invalid_argument("backward: target is not a scalar");
        for (Node& n : nodes_) n.grad.assign(n.val.data.size(), 0.0);
        nodes_[lossid].grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    struct Node {
        Tensor val;
        std::vector<double> grad;
    };

    enum class UnaryKind { sigmoid, tanh, relu };

    Id push(Tensor t) {
        nodes_.push_back(Node{std::move(t), {}});
        return static_cast<Id>(nodes_.size() - 1);
    }

    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    Id check(Id id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw std::out_of_range("Tape: bad node id");
        return id;
    }

    static double apply_act(double v, Activation a) {
        switch (a) {
            case Activation::identity: return v;
            case Activation::relu: return v > 0.0 ? v : 0.0;
            case Activation::tanh: return std::tanh(v);
        }
        return v;
    }

    // For these activations the derivative is recoverable from the output.
    static double act_deriv_from_output(double y, Activation a) {
        switch (a) {
            case Activation::identity: return 1.0;
            case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
            case Activation::tanh: return 1.0 - y * y;
        }
        return 1.0;
    }

    Id binary(Id aid, Id bid, double sign) {
        const Tensor& a = value(aid);
        const Tensor& b = value(bid);
        if (!a.same_shape(b))
            throw std::invalid_argument("add/sub: shape mismatch " + a.shape_str() + " vs " +
                                        b.shape_str());
        Tensor y(a.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i)
            y.data[i] = a.data[i] + sign * b.data[i];
        Id yid = push(std::move(y));
        record([this, aid, bid, yid, sign]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            std::vector<double>& ga = nodes_[aid].grad;
            std::vector<double>& gb = nodes_[bid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                ga[i] += gy[i];
                gb[i] += sign * gy[i];
            }
        });
        return yid;
    }

    Id unary(Id xid, UnaryKind k) {
        const Tensor& x = value(xid);
        Tensor y(x.shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            const double v = x.data[i];
            switch (k) {
                case UnaryKind::sigmoid: y.data[i] = 1.0 / (1.0 + std::exp(-v)); break;
                case UnaryKind::tanh: y.data[i] = std::tanh(v); break;
                case UnaryKind::relu: y.data[i] = v > 0.0 ? v : 0.0; break;
            }
        }
        Id yid = push(std::move(y));
        record([this, xid, yid, k]() {
            const std::vector<double>& gy = nodes_[yid].grad;
            const Tensor& y = nodes_[yid].val;
            std::vector<double>& gx = nodes_[xid].grad;
            for (std::size_t i = 0; i < gy.size(); ++i) {
                double d = 1.0;
                const double o = y.data[i];
                switch (k) {
                    case UnaryKind::sigmoid: d = o * (1.0 - o); break;
                    case UnaryKind::tanh: d = 1.0 - o * o; break;
                    case UnaryKind::relu: d = o > 0.0 ? 1.0 : 0.0; break;
                }
                gx[i] += gy[i] * d;
            }
        });
        return yid;
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
    std::vector<std::pair<const Tensor*, Id>> param_leaves_;
};

}  // namespace magnet
