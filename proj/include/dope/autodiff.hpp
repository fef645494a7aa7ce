#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dope/errors.hpp"
#include "dope/nn_kernels.hpp"

namespace dope::ad {

struct Shape {
    std::vector<int> dims;

    Shape() = default;
    Shape(std::initializer_list<int> d) : dims(d) {}
    explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : dims) n *= d;
        return n;
    }
    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }
};

/// Dense row-major tensor with an optional gradient buffer.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;

    Tensor() = default;
    Tensor(Shape s, T fill = T(0))
        : shape(std::move(s)), data(static_cast<std::size_t>(shape.numel()), fill) {}

    std::int64_t numel() const { return shape.numel(); }
    void alloc_grad() { grad.assign(data.size(), T(0)); }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeMismatch(msg);
}

/// Eagerly evaluated reverse-mode tape. Nodes are appended in topological
/// order; backward() walks them in reverse. Values are computed at node
/// creation, gradients only for nodes reachable from parameters.
template <typename T>
class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad; // allocated lazily during backward
        bool needs_grad = false;
        const char* op = "leaf";
        std::function<void(Tape&, int)> backward;
    };

    int size() const { return static_cast<int>(nodes_.size()); }
    const Shape& shape(int i) const { return nodes_[i].shape; }
    const std::vector<T>& value(int i) const { return nodes_[i].value; }
    std::vector<T>& value(int i) { return nodes_[i].value; }
    bool needs_grad(int i) const { return nodes_[i].needs_grad; }

    /// Gradient buffer of node i, allocated (zeroed) on first use.
    std::vector<T>& grad(int i) {
        auto& g = nodes_[i].grad;
        if (g.empty()) g.assign(nodes_[i].value.size(), T(0));
        return g;
    }
    /// Gradient buffer without allocation; empty if the node was never touched.
    const std::vector<T>& grad_raw(int i) const { return nodes_[i].grad; }

    int leaf(const Shape& shape, const T* data, bool needs_grad, const char* name = "leaf") {
        Node n;
        n.shape = shape;
        n.value.assign(data, data + shape.numel());
        n.needs_grad = needs_grad;
        n.op = name;
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    int leaf(const Tensor<T>& t, bool needs_grad, const char* name = "leaf") {
        return leaf(t.shape, t.data.data(), needs_grad, name);
    }

    /// Registers a node whose value the caller has already computed. The
    /// backward callback receives the tape and the node id and must
    /// accumulate into the gradients of its inputs.
    int custom(const char* name, Shape shape, std::vector<T> value, bool needs_grad,
               std::function<void(Tape&, int)> backward) {
        Node n;
        n.shape = std::move(shape);
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.op = name;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    // ---- operations ----

    int conv2d(int x, int w, int b, int stride, int pad) {
        const Shape& xs = shape(x);
        const Shape& ws = shape(w);
        const Shape& bs = shape(b);
        require(xs.dims.size() == 3, "conv2d: input must be CxHxW, got " + xs.str());
        require(ws.dims.size() == 4, "conv2d: weight must be OxIxKhxKw, got " + ws.str());
        require(ws.dims[1] == xs.dims[0],
                "conv2d: weight in-channels " + ws.str() + " vs input " + xs.str());
        require(bs.numel() == ws.dims[0], "conv2d: bias " + bs.str() + " vs weight " + ws.str());
        const ConvDims d = ConvDims::make(xs.dims[0], xs.dims[1], xs.dims[2], ws.dims[0],
                                          ws.dims[2], ws.dims[3], stride, pad);
        require(d.h_out > 0 && d.w_out > 0, "conv2d: empty output for input " + xs.str());

        std::vector<T> out(static_cast<std::size_t>(d.c_out) * d.positions());
        conv2d_forward(value(x).data(), value(w).data(), value(b).data(), d, out.data(),
                       conv_scratch<T>(0));
        const bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
        return custom("conv2d", Shape{d.c_out, d.h_out, d.w_out}, std::move(out), ng,
                      [x, w, b, d](Tape& t, int self) {
                          conv2d_backward(t.value(x).data(), t.value(w).data(),
                                          t.grad(self).data(), d,
                                          t.needs_grad(x) ? t.grad(x).data() : nullptr,
                                          t.needs_grad(w) ? t.grad(w).data() : nullptr,
                                          t.needs_grad(b) ? t.grad(b).data() : nullptr);
                      });
    }

    int conv1x1(int x, int w, int b) { return conv2d(x, w, b, 1, 0); }

    int relu(int x) {
        std::vector<T> out = value(x);
        for (auto& v : out) v = v > T(0) ? v : T(0);
        return custom("relu", shape(x), std::move(out), needs_grad(x), [x](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& xv = t.value(x);
            const auto& g = t.grad(self);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (xv[i] > T(0)) gx[i] += g[i];
        });
    }

    int sigmoid(int x) {
        std::vector<T> out = value(x);
        for (auto& v : out) v = T(1) / (T(1) + std::exp(-v));
        return custom("sigmoid", shape(x), std::move(out), needs_grad(x),
                      [x](Tape& t, int self) {
                          if (!t.needs_grad(x)) return;
                          const auto& s = t.value(self);
                          const auto& g = t.grad(self);
                          auto& gx = t.grad(x);
                          for (std::size_t i = 0; i < s.size(); ++i)
                              gx[i] += g[i] * s[i] * (T(1) - s[i]);
                      });
    }

    int add(int a, int b) {
        require(shape(a) == shape(b),
                "add: shape " + shape(a).str() + " vs " + shape(b).str());
        std::vector<T> out = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return custom("add", shape(a), std::move(out), needs_grad(a) || needs_grad(b),
                      [a, b](Tape& t, int self) {
                          const auto& g = t.grad(self);
                          if (t.needs_grad(a)) {
                              auto& ga = t.grad(a);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (t.needs_grad(b)) {
                              auto& gb = t.grad(b);
                              for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                          }
                      });
    }

    int mul(int a, int b) {
        require(shape(a) == shape(b),
                "mul: shape " + shape(a).str() + " vs " + shape(b).str());
        std::vector<T> out = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return custom("mul", shape(a), std::move(out), needs_grad(a) || needs_grad(b),
                      [a, b](Tape& t, int self) {
                          const auto& g = t.grad(self);
                          const auto& av = t.value(a);
                          const auto& bv2 = t.value(b);
                          if (t.needs_grad(a)) {
                              auto& ga = t.grad(a);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                          }
                          if (t.needs_grad(b)) {
                              auto& gb = t.grad(b);
                              for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                          }
                      });
    }

    /// Nearest-neighbor 2x upsample of a CxHxW tensor.
    int upsample2x(int x) {
        const Shape& xs = shape(x);
        require(xs.dims.size() == 3, "upsample2x: input must be CxHxW, got " + xs.str());
        const int c = xs.dims[0], h = xs.dims[1], w = xs.dims[2];
        std::vector<T> out(static_cast<std::size_t>(c) * 4 * h * w);
        const auto& xv = value(x);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    out[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx] =
                        xv[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
        return custom("upsample2x", Shape{c, 2 * h, 2 * w}, std::move(out), needs_grad(x),
                      [x, c, h, w](Tape& t, int self) {
                          if (!t.needs_grad(x)) return;
                          const auto& g = t.grad(self);
                          auto& gx = t.grad(x);
                          for (int ch = 0; ch < c; ++ch)
                              for (int y = 0; y < 2 * h; ++y)
                                  for (int xx = 0; xx < 2 * w; ++xx)
                                      gx[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
                                          g[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx];
                      });
    }

    /// Per-cell standardization across channels: zero mean, unit variance at
    /// every spatial location (no running statistics, so training and
    /// inference behave identically).
    int cell_standardize(int x, T eps) {
        const Shape& xs = shape(x);
        require(xs.dims.size() == 3, "cell_standardize: input must be CxHxW, got " + xs.str());
        const int c = xs.dims[0];
        const int p = xs.dims[1] * xs.dims[2];
        const auto& xv = value(x);
        std::vector<T> out(xv.size());
        std::vector<T> inv_sigma(p);
        for (int j = 0; j < p; ++j) {
            T mean = 0;
            for (int ch = 0; ch < c; ++ch) mean += xv[static_cast<std::size_t>(ch) * p + j];
            mean /= static_cast<T>(c);
            T var = 0;
            for (int ch = 0; ch < c; ++ch) {
                const T d = xv[static_cast<std::size_t>(ch) * p + j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(c);
            const T is = T(1) / std::sqrt(var + eps);
            inv_sigma[j] = is;
            for (int ch = 0; ch < c; ++ch)
                out[static_cast<std::size_t>(ch) * p + j] =
                    (xv[static_cast<std::size_t>(ch) * p + j] - mean) * is;
        }
        return custom("cell_standardize", xs, std::move(out), needs_grad(x),
                      [x, c, p, sig = std::move(inv_sigma)](Tape& t, int self) {
                          if (!t.needs_grad(x)) return;
                          const auto& y = t.value(self);
                          const auto& g = t.grad(self);
                          auto& gx = t.grad(x);
                          for (int j = 0; j < p; ++j) {
                              T gm = 0, gy = 0;
                              for (int ch = 0; ch < c; ++ch) {
                                  const std::size_t i = static_cast<std::size_t>(ch) * p + j;
                                  gm += g[i];
                                  gy += g[i] * y[i];
                              }
                              gm /= static_cast<T>(c);
                              gy /= static_cast<T>(c);
                              for (int ch = 0; ch < c; ++ch) {
                                  const std::size_t i = static_cast<std::size_t>(ch) * p + j;
                                  gx[i] += sig[j] * (g[i] - gm - y[i] * gy);
                              }
                          }
                      });
    }

    /// Per-cell L2 normalization across channels of a CxHxW tensor. The norm
    /// is floored at eps so the map stays differentiable at the zero vector.
    int l2norm_cells(int x, T eps) {
        const Shape& xs = shape(x);
        require(xs.dims.size() == 3, "l2norm_cells: input must be CxHxW, got " + xs.str());
        const int c = xs.dims[0];
        const int p = xs.dims[1] * xs.dims[2];
        const auto& xv = value(x);
        std::vector<T> out(xv.size());
        for (int j = 0; j < p; ++j) {
            T ss = 0;
            for (int ch = 0; ch < c; ++ch) {
                const T v = xv[static_cast<std::size_t>(ch) * p + j];
                ss += v * v;
            }
            const T denom = std::max(std::sqrt(ss), eps);
            for (int ch = 0; ch < c; ++ch)
                out[static_cast<std::size_t>(ch) * p + j] =
                    xv[static_cast<std::size_t>(ch) * p + j] / denom;
        }
        return custom("l2norm_cells", xs, std::move(out), needs_grad(x),
                      [x, c, p, eps](Tape& t, int self) {
                          if (!t.needs_grad(x)) return;
                          const auto& xv2 = t.value(x);
                          const auto& g = t.grad(self);
                          auto& gx = t.grad(x);
                          for (int j = 0; j < p; ++j) {
                              T ss = 0, xg = 0;
                              for (int ch = 0; ch < c; ++ch) {
                                  const T v = xv2[static_cast<std::size_t>(ch) * p + j];
                                  ss += v * v;
                                  xg += v * g[static_cast<std::size_t>(ch) * p + j];
                              }
                              const T nrm = std::sqrt(ss);
                              if (nrm > eps) {
                                  const T inv = T(1) / nrm;
                                  const T inv3 = inv * inv * inv;
                                  for (int ch = 0; ch < c; ++ch) {
                                      const std::size_t i = static_cast<std::size_t>(ch) * p + j;
                                      gx[i] += g[i] * inv - xv2[i] * xg * inv3;
                                  }
                              } else {
                                  for (int ch = 0; ch < c; ++ch) {
                                      const std::size_t i = static_cast<std::size_t>(ch) * p + j;
                                      gx[i] += g[i] / eps;
                                  }
                              }
                          }
                      });
    }

    /// Scales every channel of x (CxHxW) by a per-cell factor m (1xHxW).
    int channel_scale(int x, int m) {
        const Shape& xs = shape(x);
        const Shape& ms = shape(m);
        require(xs.dims.size() == 3, "channel_scale: input must be CxHxW, got " + xs.str());
        require(ms.numel() == static_cast<std::int64_t>(xs.dims[1]) * xs.dims[2],
                "channel_scale: mask " + ms.str() + " vs input " + xs.str());
        const int c = xs.dims[0];
        const int p = xs.dims[1] * xs.dims[2];
        const auto& xv = value(x);
        const auto& mv = value(m);
        std::vector<T> out(xv.size());
        for (int ch = 0; ch < c; ++ch)
            for (int j = 0; j < p; ++j)
                out[static_cast<std::size_t>(ch) * p + j] =
                    xv[static_cast<std::size_t>(ch) * p + j] * mv[j];
        return custom("channel_scale", xs, std::move(out), needs_grad(x) || needs_grad(m),
                      [x, m, c, p](Tape& t, int self) {
                          const auto& g = t.grad(self);
                          const auto& xv2 = t.value(x);
                          const auto& mv2 = t.value(m);
                          if (t.needs_grad(x)) {
                              auto& gx = t.grad(x);
                              for (int ch = 0; ch < c; ++ch)
                                  for (int j = 0; j < p; ++j)
                                      gx[static_cast<std::size_t>(ch) * p + j] +=
                                          g[static_cast<std::size_t>(ch) * p + j] * mv2[j];
                          }
                          if (t.needs_grad(m)) {
                              auto& gm = t.grad(m);
                              for (int j = 0; j < p; ++j) {
                                  T s = 0;
                                  for (int ch = 0; ch < c; ++ch)
                                      s += g[static_cast<std::size_t>(ch) * p + j] *
                                           xv2[static_cast<std::size_t>(ch) * p + j];
                                  gm[j] += s;
                              }
                          }
                      });
    }

    /// Mean over all elements -> scalar.
    int mean(int x) {
        const auto& xv = value(x);
        require(!xv.empty(), "mean: empty input");
        T s = 0;
        for (const T v : xv) s += v;
        const T n = static_cast<T>(xv.size());
        return custom("mean", Shape{1}, {s / n}, needs_grad(x), [x, n](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const T g = t.grad(self)[0] / n;
            auto& gx = t.grad(x);
            for (auto& v : gx) v += g;
        });
    }

    /// (M x K) * (K x N) matrix product.
    int matmul(int a, int b) {
        const Shape& as = shape(a);
        const Shape& bs = shape(b);
        require(as.dims.size() == 2 && bs.dims.size() == 2 && as.dims[1] == bs.dims[0],
                "matmul: " + as.str() + " vs " + bs.str());
        const int mm = as.dims[0], kk = as.dims[1], nn = bs.dims[1];
        std::vector<T> out(static_cast<std::size_t>(mm) * nn, T(0));
        gemm_acc(out.data(), value(a).data(), value(b).data(), mm, kk, nn);
        return custom("matmul", Shape{mm, nn}, std::move(out), needs_grad(a) || needs_grad(b),
                      [a, b, mm, kk, nn](Tape& t, int self) {
                          const auto& g = t.grad(self);
                          if (t.needs_grad(a)) { // dA += g * B^T
                              auto& ga = t.grad(a);
                              const auto& bv = t.value(b);
                              for (int i = 0; i < mm; ++i)
                                  for (int j = 0; j < nn; ++j) {
                                      const T gv = g[static_cast<std::size_t>(i) * nn + j];
                                      for (int q = 0; q < kk; ++q)
                                          ga[static_cast<std::size_t>(i) * kk + q] +=
                                              gv * bv[static_cast<std::size_t>(q) * nn + j];
                                  }
                          }
                          if (t.needs_grad(b)) { // dB += A^T * g
                              auto& gb = t.grad(b);
                              const auto& av = t.value(a);
                              for (int i = 0; i < mm; ++i)
                                  for (int q = 0; q < kk; ++q) {
                                      const T avq = av[static_cast<std::size_t>(i) * kk + q];
                                      for (int j = 0; j < nn; ++j)
                                          gb[static_cast<std::size_t>(q) * nn + j] +=
                                              avq * g[static_cast<std::size_t>(i) * nn + j];
                                  }
                          }
                      });
    }

    /// Weighted global average pool: out_c = sum_p f[c,p] * w[p] / (sum w + eps).
    int masked_gap(int f, int wts, T eps) {
        const Shape& fsh = shape(f);
        const Shape& wsh = shape(wts);
        require(fsh.dims.size() == 3, "masked_gap: features must be CxHxW, got " + fsh.str());
        require(wsh.numel() == static_cast<std::int64_t>(fsh.dims[1]) * fsh.dims[2],
                "masked_gap: weights " + wsh.str() + " vs features " + fsh.str());
        const int c = fsh.dims[0];
        const int p = fsh.dims[1] * fsh.dims[2];
        const auto& fv = value(f);
        const auto& wv = value(wts);
        T wsum = eps;
        for (int j = 0; j < p; ++j) wsum += wv[j];
        std::vector<T> out(c, T(0));
        for (int ch = 0; ch < c; ++ch) {
            T s = 0;
            for (int j = 0; j < p; ++j) s += fv[static_cast<std::size_t>(ch) * p + j] * wv[j];
            out[ch] = s / wsum;
        }
        return custom("masked_gap", Shape{c, 1, 1}, std::move(out),
                      needs_grad(f) || needs_grad(wts),
                      [f, wts, c, p, wsum](Tape& t, int self) {
                          const auto& g = t.grad(self);
                          const auto& fv2 = t.value(f);
                          const auto& wv2 = t.value(wts);
                          const auto& ov = t.value(self);
                          if (t.needs_grad(f)) {
                              auto& gf = t.grad(f);
                              for (int ch = 0; ch < c; ++ch)
                                  for (int j = 0; j < p; ++j)
                                      gf[static_cast<std::size_t>(ch) * p + j] +=
                                          g[ch] * wv2[j] / wsum;
                          }
                          if (t.needs_grad(wts)) {
                              auto& gw = t.grad(wts);
                              for (int j = 0; j < p; ++j) {
                                  T s = 0;
                                  for (int ch = 0; ch < c; ++ch)
                                      s += g[ch] *
                                           (fv2[static_cast<std::size_t>(ch) * p + j] - ov[ch]);
                                  gw[j] += s / wsum;
                              }
                          }
                      });
    }

    /// Weighted sum of scalar nodes -> scalar.
    int weighted_sum(const std::vector<int>& xs, const std::vector<T>& weights) {
        require(xs.size() == weights.size() && !xs.empty(), "weighted_sum: arity mismatch");
        T s = 0;
        bool ng = false;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            require(shape(xs[i]).numel() == 1, "weighted_sum: inputs must be scalars");
            s += weights[i] * value(xs[i])[0];
            ng = ng || needs_grad(xs[i]);
        }
        return custom("weighted_sum", Shape{1}, {s}, ng,
                      [xs, weights](Tape& t, int self) {
                          const T g = t.grad(self)[0];
                          for (std::size_t i = 0; i < xs.size(); ++i)
                              if (t.needs_grad(xs[i])) t.grad(xs[i])[0] += g * weights[i];
                      });
    }

    /// Reverse sweep from a scalar output node.
    void backward(int out) {
        if (shape(out).numel() != 1)
            throw NonScalarOutput("backward: output node has shape " + shape(out).str());
        grad(out)[0] = T(1);
        backward_seeded();
    }

    /// Reverse sweep over the whole tape using whatever gradients the caller
    /// has already seeded (for graphs whose outputs feed a separate tape).
    void backward_seeded() {
        for (int i = size() - 1; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, i);
        }
    }

private:
    std::vector<Node> nodes_;
};

// ---- optimizer ----

template <typename T>
struct AdamWState {
    std::vector<std::vector<T>> m1, m2;
    std::int64_t step = 0;
};

/// One AdamW step with bias-corrected moments and decoupled weight decay
/// (decay applied directly to the parameter, not through the moments).
template <typename T>
void adamw_step(std::vector<Tensor<T>*>& params, const std::vector<const std::vector<T>*>& grads,
                AdamWState<T>& state, T lr, T beta1, T beta2, T eps, T weight_decay) {
    if (params.size() != grads.size())
        throw ShapeMismatch("adamw_step: params/grads arity mismatch");
    if (state.m1.empty()) {
        state.m1.resize(params.size());
        state.m2.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m1[i].assign(params[i]->data.size(), T(0));
            state.m2[i].assign(params[i]->data.size(), T(0));
        }
    }
    if (state.m1.size() != params.size())
        throw ShapeMismatch("adamw_step: state/params arity mismatch");
    state.step += 1;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(state.step));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->data;
        const auto& g = *grads[i];
        if (g.size() != p.size() || state.m1[i].size() != p.size())
            throw ShapeMismatch("adamw_step: tensor " + std::to_string(i) + " size mismatch");
        auto& m = state.m1[i];
        auto& v = state.m2[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
            v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            p[j] -= lr * weight_decay * p[j];
        }
    }
}

/// Cosine annealing: lr0 * 0.5 * (1 + cos(pi * step / total)).
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
    if (step < 0 || step > total_steps || total_steps <= 0)
        throw StepOutOfRange("cosine_lr: step " + std::to_string(step) + " of " +
                             std::to_string(total_steps));
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                       static_cast<double>(total_steps)));
}

// ---- gradient checking ----

template <typename T>
struct GradCheckReport {
    T max_rel_error = 0;
    std::int64_t checked = 0;
    // (parameter index, element index, rel error) for elements over tolerance
    std::vector<std::tuple<int, std::int64_t, T>> flagged;

    bool ok() const { return flagged.empty(); }
};

/// Central-difference check of an analytic gradient. `value_fn` evaluates the
/// scalar objective; `grad_fn` returns d objective / d params (same layout).
/// Relative error uses a small floor so true-zero gradients compare cleanly.
template <typename T>
GradCheckReport<T> grad_check(
    const std::function<T(const std::vector<std::vector<T>>&)>& value_fn,
    const std::function<std::vector<std::vector<T>>(const std::vector<std::vector<T>>&)>& grad_fn,
    std::vector<std::vector<T>> params, T tolerance, T fd_eps) {
    GradCheckReport<T> report;
    const std::vector<std::vector<T>> analytic = grad_fn(params);
    if (analytic.size() != params.size())
        throw ShapeMismatch("grad_check: grad_fn arity mismatch");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t j = 0; j < params[pi].size(); ++j) {
            const T saved = params[pi][j];
            params[pi][j] = saved + fd_eps;
            const T up = value_fn(params);
            params[pi][j] = saved - fd_eps;
            const T down = value_fn(params);
            params[pi][j] = saved;
            const T fd = (up - down) / (2 * fd_eps);
            const T an = analytic[pi][j];
            const T denom = std::max({std::abs(an), std::abs(fd), T(1e-6)});
            const T rel = std::abs(an - fd) / denom;
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.checked;
            if (rel > tolerance)
                report.flagged.emplace_back(static_cast<int>(pi),
                                            static_cast<std::int64_t>(j), rel);
        }
    }
    return report;
}

} // namespace dope::ad
