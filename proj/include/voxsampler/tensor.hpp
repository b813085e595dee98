#ifndef VOXSAMPLER_TENSOR_HPP
#define VOXSAMPLER_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "voxsampler/common.hpp"

namespace vxs {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // sized lazily, accumulates additively
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad, adds into parents' grads.
    std::function<void(Node&)> backprop;
    bool backward_done = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

/// Dense 64-bit tensor participating in a reverse-mode graph.
/// Value-semantic handle; copies share the underlying node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape), value);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        if (data.empty()) data.assign(n, 0.0);
        if (data.size() != n)
            throw DimensionError("tensor data length does not match shape");
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    std::size_t size() const { return node().data.size(); }
    std::size_t rank() const { return node().shape.size(); }

    std::span<double> data() { return node().data; }
    std::span<const double> data() const { return node().data; }
    double& operator[](std::size_t i) { return node().data[i]; }
    double operator[](std::size_t i) const { return node().data[i]; }

    bool requires_grad() const { return node().requires_grad; }

    const std::string& name() const { return node().name; }
    void set_name(std::string name) { node().name = std::move(name); }

    bool has_grad() const {
        return defined() && node().grad.size() == node().data.size();
    }
    std::span<const double> grad() const {
        if (!has_grad()) throw ContractError("tensor has no gradient buffer");
        return node().grad;
    }
    void zero_grad() { node().grad.assign(node().data.size(), 0.0); }

    void check_finite(const std::string& what = "tensor") const {
        for (double v : node().data)
            if (!std::isfinite(v))
                throw NumericError("non-finite value in " + what);
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively into
    /// every reachable requires_grad tensor; call zero_grad between steps.
    void backward() const;

    std::shared_ptr<detail::Node> raw() const { return n_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  private:
    detail::Node& node() {
        if (!n_) throw ContractError("use of undefined tensor");
        return *n_;
    }
    const detail::Node& node() const {
        if (!n_) throw ContractError("use of undefined tensor");
        return *n_;
    }

    std::shared_ptr<detail::Node> n_;
};

namespace detail {

// Build an op node. Parents without requires_grad anywhere prune the tape.
inline Tensor make_op(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    node->requires_grad = rg;
    if (rg) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.raw());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

} // namespace detail

inline void Tensor::backward() const {
    if (!n_) throw ContractError("backward() on an undefined tensor");
    detail::Node& root = *n_;
    if (root.data.size() != 1)
        throw ContractError("backward() requires a scalar loss");
    if (!root.requires_grad)
        throw ContractError("loss does not depend on any parameter");
    if (root.backward_done)
        throw ContractError("backward() already run on this loss; re-run the forward pass");
    if (!std::isfinite(root.data[0]))
        throw NumericError("loss is not finite");
    root.backward_done = true;

    // Post-order DFS over the requires_grad sub-DAG.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        if (idx < cur->parents.size()) {
            detail::Node* p = cur->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    root.ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* cur = *it;
        if (!cur->backprop) continue;
        for (auto& p : cur->parents)
            if (p->requires_grad) p->ensure_grad();
        cur->backprop(*cur);
        for (double g : cur->grad)
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient at node '" + cur->name + "'");
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline void require_same_shape(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("shape mismatch in elementwise op");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [](detail::Node& self) {
                               for (int k = 0; k < 2; ++k) {
                                   auto& p = *self.parents[k];
                                   if (!p.requires_grad) continue;
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       p.grad[i] += self.grad[i];
                               }
                           });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               if (pa.requires_grad)
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       pa.grad[i] += self.grad[i];
                               if (pb.requires_grad)
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       pb.grad[i] -= self.grad[i];
                           });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               if (pa.requires_grad)
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       pa.grad[i] += self.grad[i] * pb.data[i];
                               if (pb.requires_grad)
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       pb.grad[i] += self.grad[i] * pa.data[i];
                           });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return detail::make_op(a.shape(), std::move(out), {a},
                           [s](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   p.grad[i] += self.grad[i] * s;
                           });
}

inline Tensor sum(const Tensor& a) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    return detail::make_op({1}, {acc}, {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw DimensionError("reshape changes element count");
    std::vector<double> out(a.data().begin(), a.data().end());
    return detail::make_op(std::move(shape), std::move(out), {a},
                           [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   p.grad[i] += self.grad[i];
                           });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0 ? a[i] : 0.0;
    return detail::make_op(a.shape(), std::move(out), {a},
                           [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   if (p.data[i] > 0) p.grad[i] += self.grad[i];
                           });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-a[i]));
    return detail::make_op(a.shape(), std::move(out), {a},
                           [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   const double y = self.data[i];
                                   p.grad[i] += self.grad[i] * y * (1.0 - y);
                               }
                           });
}

inline Tensor tanh_op(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
    return detail::make_op(a.shape(), std::move(out), {a},
                           [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   const double y = self.data[i];
                                   p.grad[i] += self.grad[i] * (1.0 - y * y);
                               }
                           });
}

// ---------------------------------------------------------------------------
// linear: shared map over the last axis. input [..., C_in] x [C_in, C_out].
// ---------------------------------------------------------------------------

inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || bias.rank() != 1)
        throw DimensionError("linear expects weight [C_in,C_out], bias [C_out]");
    const std::size_t cin = weight.shape()[0];
    const std::size_t cout = weight.shape()[1];
    if (bias.shape()[0] != cout)
        throw DimensionError("linear bias length mismatch");
    if (input.rank() < 1 || input.shape().back() != cin)
        throw DimensionError("linear input last extent must equal C_in");

    const std::size_t rows = input.size() / cin;
    Shape out_shape = input.shape();
    out_shape.back() = cout;
    std::vector<double> out(rows * cout);
    {
        const auto in = input.data();
        const auto w = weight.data();
        const auto b = bias.data();
        for (std::size_t r = 0; r < rows; ++r) {
            double* orow = out.data() + r * cout;
            for (std::size_t j = 0; j < cout; ++j) orow[j] = b[j];
            const double* irow = in.data() + r * cin;
            for (std::size_t i = 0; i < cin; ++i) {
                const double v = irow[i];
                const double* wrow = w.data() + i * cout;
                for (std::size_t j = 0; j < cout; ++j) orow[j] += v * wrow[j];
            }
        }
    }
    return detail::make_op(
        std::move(out_shape), std::move(out), {input, weight, bias},
        [rows, cin, cout](detail::Node& self) {
            auto& pin = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = self.grad.data() + r * cout;
                const double* irow = pin.data.data() + r * cin;
                if (pin.requires_grad) {
                    double* girow = pin.grad.data() + r * cin;
                    for (std::size_t i = 0; i < cin; ++i) {
                        const double* wrow = pw.data.data() + i * cout;
                        double acc = 0;
                        for (std::size_t j = 0; j < cout; ++j)
                            acc += grow[j] * wrow[j];
                        girow[i] += acc;
                    }
                }
                if (pw.requires_grad) {
                    for (std::size_t i = 0; i < cin; ++i) {
                        double* gwrow = pw.grad.data() + i * cout;
                        const double v = irow[i];
                        for (std::size_t j = 0; j < cout; ++j)
                            gwrow[j] += v * grow[j];
                    }
                }
                if (pb.requires_grad)
                    for (std::size_t j = 0; j < cout; ++j)
                        pb.grad[j] += grow[j];
            }
        });
}

// ---------------------------------------------------------------------------
// 3D convolution over cubic fields, direct form.
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t n, std::size_t k,
                                   std::size_t stride, std::size_t pad) {
    if (n + 2 * pad < k || (n + 2 * pad - k) % stride != 0)
        throw DimensionError("conv3d output extent is not a positive integer");
    return (n + 2 * pad - k) / stride + 1;
}

namespace detail {

// Valid output range [lo, hi) such that 0 <= o*stride + kk - pad < n.
inline void conv_ox_range(std::size_t kk, std::size_t stride, std::size_t pad,
                          std::size_t n, std::size_t no, std::size_t& lo,
                          std::size_t& hi) {
    const std::ptrdiff_t off = std::ptrdiff_t(kk) - std::ptrdiff_t(pad);
    lo = off >= 0 ? 0 : std::size_t((-off + std::ptrdiff_t(stride) - 1) / std::ptrdiff_t(stride));
    const std::ptrdiff_t last = std::ptrdiff_t(n) - 1 - off; // max o*stride
    hi = last < 0 ? 0 : std::min(no, std::size_t(last) / stride + 1);
    if (lo > hi) lo = hi;
}

// out[b,co,o] = sum_{ci,kz,ky,kx} in[b,ci,i]*ker[co,ci,k]; accumulates (+=).
inline void raw_conv3d(const double* in, std::size_t B, std::size_t Ci,
                       std::size_t N, const double* ker, std::size_t Co,
                       std::size_t k, std::size_t stride, std::size_t pad,
                       double* out, std::size_t No) {
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t ci = 0; ci < Ci; ++ci)
                for (std::size_t kz = 0; kz < k; ++kz) {
                    std::size_t oz_lo, oz_hi;
                    conv_ox_range(kz, stride, pad, N, No, oz_lo, oz_hi);
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        std::size_t oy_lo, oy_hi;
                        conv_ox_range(ky, stride, pad, N, No, oy_lo, oy_hi);
                        const double* krow =
                            ker + (((co * Ci + ci) * k + kz) * k + ky) * k;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            std::size_t ox_lo, ox_hi;
                            conv_ox_range(kx, stride, pad, N, No, ox_lo, ox_hi);
                            const double kv = krow[kx];
                            if (kv == 0.0) continue;
                            for (std::size_t oz = oz_lo; oz < oz_hi; ++oz) {
                                const std::size_t iz = oz * stride + kz - p;
                                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                                    const std::size_t iy = oy * stride + ky - p;
                                    // first valid input index for this kx
                                    const double* irow =
                                        in + (((b * Ci + ci) * N + iz) * N + iy) * N +
                                        std::size_t(std::ptrdiff_t(ox_lo * stride + kx) - p);
                                    double* orow =
                                        out + ((((b * Co + co) * No + oz) * No + oy) * No +
                                               ox_lo);
                                    const std::size_t len = ox_hi - ox_lo;
                                    if (stride == 1)
                                        for (std::size_t ox = 0; ox < len; ++ox)
                                            orow[ox] += irow[ox] * kv;
                                    else
                                        for (std::size_t ox = 0; ox < len; ++ox)
                                            orow[ox] += irow[ox * stride] * kv;
                                }
                            }
                        }
                    }
                }
}

// Adjoint of raw_conv3d in its input argument; accumulates into gin.
// For stride 1 this is itself a convolution of gout with the spatially
// flipped, channel-transposed kernel at padding k-1-pad; the generic gather
// form (each gin element written by exactly one iteration) covers the rest.
inline void raw_conv3d_in_grad(const double* gout, std::size_t B, std::size_t Co,
                               std::size_t No, const double* ker, std::size_t Ci,
                               std::size_t k, std::size_t stride, std::size_t pad,
                               double* gin, std::size_t N) {
    if (stride == 1 && pad < k) {
        std::vector<double> flipped(Ci * Co * k * k * k);
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t ci = 0; ci < Ci; ++ci)
                for (std::size_t kz = 0; kz < k; ++kz)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            flipped[(((ci * Co + co) * k + (k - 1 - kz)) * k +
                                     (k - 1 - ky)) * k + (k - 1 - kx)] =
                                ker[(((co * Ci + ci) * k + kz) * k + ky) * k + kx];
        raw_conv3d(gout, B, Co, No, flipped.data(), Ci, k, 1, k - 1 - pad, gin, N);
        return;
    }
    const std::ptrdiff_t no = static_cast<std::ptrdiff_t>(No);
    auto out_index = [&](std::size_t i, std::size_t kk, std::ptrdiff_t& o) {
        const std::ptrdiff_t t = std::ptrdiff_t(i + pad) - std::ptrdiff_t(kk);
        if (t < 0 || t % std::ptrdiff_t(stride) != 0) return false;
        o = t / std::ptrdiff_t(stride);
        return o >= 0 && o < no;
    };
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t iz = 0; iz < N; ++iz)
                for (std::size_t iy = 0; iy < N; ++iy)
                    for (std::size_t ix = 0; ix < N; ++ix) {
                        double acc = 0;
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            std::ptrdiff_t oz;
                            if (!out_index(iz, kz, oz)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                std::ptrdiff_t oy;
                                if (!out_index(iy, ky, oy)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    std::ptrdiff_t ox;
                                    if (!out_index(ix, kx, ox)) continue;
                                    for (std::size_t co = 0; co < Co; ++co)
                                        acc += gout[(((b * Co + co) * No + oz) * No + oy) * No + ox] *
                                               ker[(((co * Ci + ci) * k + kz) * k + ky) * k + kx];
                                }
                            }
                        }
                        gin[(((b * Ci + ci) * N + iz) * N + iy) * N + ix] += acc;
                    }
}

// Kernel gradient of raw_conv3d; accumulates into gker [Co,Ci,k,k,k].
inline void raw_conv3d_ker_grad(const double* in, std::size_t B, std::size_t Ci,
                                std::size_t N, const double* gout, std::size_t Co,
                                std::size_t No, std::size_t k, std::size_t stride,
                                std::size_t pad, double* gker) {
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t kz = 0; kz < k; ++kz) {
                std::size_t oz_lo, oz_hi;
                conv_ox_range(kz, stride, pad, N, No, oz_lo, oz_hi);
                for (std::size_t ky = 0; ky < k; ++ky) {
                    std::size_t oy_lo, oy_hi;
                    conv_ox_range(ky, stride, pad, N, No, oy_lo, oy_hi);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        std::size_t ox_lo, ox_hi;
                        conv_ox_range(kx, stride, pad, N, No, ox_lo, ox_hi);
                        const std::size_t len = ox_hi - ox_lo;
                        double acc = 0;
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t oz = oz_lo; oz < oz_hi; ++oz) {
                                const std::size_t iz = oz * stride + kz - p;
                                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                                    const std::size_t iy = oy * stride + ky - p;
                                    const double* irow =
                                        in + (((b * Ci + ci) * N + iz) * N + iy) * N +
                                        std::size_t(std::ptrdiff_t(ox_lo * stride + kx) - p);
                                    const double* grow =
                                        gout + (((b * Co + co) * No + oz) * No + oy) * No +
                                        ox_lo;
                                    if (stride == 1)
                                        for (std::size_t ox = 0; ox < len; ++ox)
                                            acc += irow[ox] * grow[ox];
                                    else
                                        for (std::size_t ox = 0; ox < len; ++ox)
                                            acc += irow[ox * stride] * grow[ox];
                                }
                            }
                        gker[(((co * Ci + ci) * k + kz) * k + ky) * k + kx] += acc;
                    }
                }
            }
}

} // namespace detail

/// Cross-correlation of a cubic field. input [B,C_in,N,N,N],
/// kernel [C_out,C_in,k,k,k].
inline Tensor conv3d(const Tensor& input, const Tensor& kernel,
                     std::size_t stride, std::size_t pad,
                     const Tensor& bias = Tensor()) {
    if (input.rank() != 5 || kernel.rank() != 5)
        throw DimensionError("conv3d expects rank-5 input and kernel");
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (is[2] != is[3] || is[2] != is[4] || ks[2] != ks[3] || ks[2] != ks[4])
        throw DimensionError("conv3d expects cubic fields and kernels");
    if (is[1] != ks[1]) throw DimensionError("conv3d channel mismatch");
    const std::size_t B = is[0], Ci = is[1], N = is[2];
    const std::size_t Co = ks[0], k = ks[2];
    const std::size_t No = conv_out_extent(N, k, stride, pad);
    if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != Co))
        throw DimensionError("conv3d bias must have C_out entries");

    std::vector<double> out(B * Co * No * No * No, 0.0);
    detail::raw_conv3d(input.data().data(), B, Ci, N, kernel.data().data(), Co,
                       k, stride, pad, out.data(), No);
    if (bias.defined()) {
        const std::size_t vol = No * No * No;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
                const double bv = bias[co];
                double* ch = out.data() + (b * Co + co) * vol;
                for (std::size_t i = 0; i < vol; ++i) ch[i] += bv;
            }
    }

    std::vector<Tensor> parents = {input, kernel};
    if (bias.defined()) parents.push_back(bias);
    return detail::make_op(
        {B, Co, No, No, No}, std::move(out), std::move(parents),
        [B, Ci, N, Co, k, No, stride, pad](detail::Node& self) {
            auto& pin = *self.parents[0];
            auto& pk = *self.parents[1];
            if (pin.requires_grad)
                detail::raw_conv3d_in_grad(self.grad.data(), B, Co, No,
                                           pk.data.data(), Ci, k, stride, pad,
                                           pin.grad.data(), N);
            if (pk.requires_grad)
                detail::raw_conv3d_ker_grad(pin.data.data(), B, Ci, N,
                                            self.grad.data(), Co, No, k, stride,
                                            pad, pk.grad.data());
            if (self.parents.size() == 3 && self.parents[2]->requires_grad) {
                auto& pb = *self.parents[2];
                const std::size_t vol = No * No * No;
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t co = 0; co < Co; ++co) {
                        const double* g = self.grad.data() + (b * Co + co) * vol;
                        double acc = 0;
                        for (std::size_t i = 0; i < vol; ++i) acc += g[i];
                        pb.grad[co] += acc;
                    }
            }
        });
}

/// Adjoint of conv3d with the same geometry. input [B,C_in,M,M,M],
/// kernel [C_in,C_out,k,k,k]; output extent (M-1)*stride - 2*pad + k.
inline Tensor conv3d_transposed(const Tensor& input, const Tensor& kernel,
                                std::size_t stride, std::size_t pad,
                                const Tensor& bias = Tensor()) {
    if (input.rank() != 5 || kernel.rank() != 5)
        throw DimensionError("conv3d_transposed expects rank-5 input and kernel");
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (is[1] != ks[0]) throw DimensionError("conv3d_transposed channel mismatch");
    const std::size_t B = is[0], Ci = is[1], M = is[2];
    const std::size_t Co = ks[1], k = ks[2];
    const std::ptrdiff_t no =
        std::ptrdiff_t((M - 1) * stride + k) - 2 * std::ptrdiff_t(pad);
    if (no <= 0) throw DimensionError("conv3d_transposed output extent not positive");
    const std::size_t No = std::size_t(no);
    if (conv_out_extent(No, k, stride, pad) != M)
        throw DimensionError("conv3d_transposed geometry inconsistent");
    if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != Co))
        throw DimensionError("conv3d_transposed bias must have C_out entries");

    // Forward is the input-gradient map of the matching conv3d.
    std::vector<double> out(B * Co * No * No * No, 0.0);
    detail::raw_conv3d_in_grad(input.data().data(), B, Ci, M,
                               kernel.data().data(), Co, k, stride, pad,
                               out.data(), No);
    if (bias.defined()) {
        const std::size_t vol = No * No * No;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
                const double bv = bias[co];
                double* ch = out.data() + (b * Co + co) * vol;
                for (std::size_t i = 0; i < vol; ++i) ch[i] += bv;
            }
    }

    std::vector<Tensor> parents = {input, kernel};
    if (bias.defined()) parents.push_back(bias);
    return detail::make_op(
        {B, Co, No, No, No}, std::move(out), std::move(parents),
        [B, Ci, M, Co, k, No, stride, pad](detail::Node& self) {
            auto& pin = *self.parents[0];
            auto& pk = *self.parents[1];
            if (pin.requires_grad)
                detail::raw_conv3d(self.grad.data(), B, Co, No, pk.data.data(),
                                   Ci, k, stride, pad, pin.grad.data(), M);
            if (pk.requires_grad)
                detail::raw_conv3d_ker_grad(self.grad.data(), B, Co, No,
                                            pin.data.data(), Ci, M, k, stride,
                                            pad, pk.grad.data());
            if (self.parents.size() == 3 && self.parents[2]->requires_grad) {
                auto& pb = *self.parents[2];
                const std::size_t vol = No * No * No;
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t co = 0; co < Co; ++co) {
                        const double* g = self.grad.data() + (b * Co + co) * vol;
                        double acc = 0;
                        for (std::size_t i = 0; i < vol; ++i) acc += g[i];
                        pb.grad[co] += acc;
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Grid pooling and concatenation
// ---------------------------------------------------------------------------

/// Max-reduce per-point features [P,C] into voxels by flat index; empty
/// voxels hold the zero vector. Ties keep the first point.
inline Tensor grid_max_pool(const Tensor& point_features,
                            const std::vector<std::size_t>& voxel_index,
                            std::size_t n_voxels) {
    if (point_features.rank() != 2)
        throw DimensionError("grid_max_pool expects [P,C] features");
    const std::size_t P = point_features.shape()[0];
    const std::size_t C = point_features.shape()[1];
    if (voxel_index.size() != P)
        throw DimensionError("grid_max_pool index count mismatch");
    for (std::size_t v : voxel_index)
        if (v >= n_voxels) throw DimensionError("grid_max_pool index out of range");

    std::vector<double> out(C * n_voxels, 0.0);
    auto argmax = std::make_shared<std::vector<std::ptrdiff_t>>(C * n_voxels, -1);
    const auto f = point_features.data();
    for (std::size_t pnt = 0; pnt < P; ++pnt) {
        const std::size_t v = voxel_index[pnt];
        for (std::size_t c = 0; c < C; ++c) {
            const double val = f[pnt * C + c];
            auto& am = (*argmax)[c * n_voxels + v];
            if (am < 0 || val > out[c * n_voxels + v]) {
                out[c * n_voxels + v] = val;
                am = std::ptrdiff_t(pnt);
            }
        }
    }
    return detail::make_op({C, n_voxels}, std::move(out), {point_features},
                           [argmax, C, n_voxels](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   const std::ptrdiff_t src = (*argmax)[i];
                                   if (src < 0) continue;
                                   const std::size_t c = i / n_voxels;
                                   p.grad[std::size_t(src) * C + c] += self.grad[i];
                               }
                           });
}

/// Concatenate along one axis; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& base = parts[0].shape();
    if (axis >= base.size()) throw DimensionError("concat axis out of range");
    Shape out_shape = base;
    out_shape[axis] = 0;
    for (const auto& t : parts) {
        if (t.rank() != base.size())
            throw DimensionError("concat rank mismatch");
        for (std::size_t d = 0; d < base.size(); ++d)
            if (d != axis && t.shape()[d] != base[d])
                throw DimensionError("concat extent mismatch");
        out_shape[axis] += t.shape()[axis];
    }

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= base[d];
    for (std::size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

    std::vector<double> out(shape_numel(out_shape));
    const std::size_t out_axis = out_shape[axis];
    std::size_t offset = 0;
    auto spans = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
    for (const auto& t : parts) {
        const std::size_t a = t.shape()[axis];
        const auto d = t.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(d.data() + o * a * inner, a * inner,
                        out.data() + (o * out_axis + offset) * inner);
        spans->emplace_back(offset, a);
        offset += a;
    }
    return detail::make_op(
        std::move(out_shape), std::move(out), parts,
        [spans, outer, inner, out_axis](detail::Node& self) {
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = *self.parents[pi];
                if (!p.requires_grad) continue;
                const auto [off, a] = (*spans)[pi];
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* g =
                        self.grad.data() + (o * out_axis + off) * inner;
                    double* pg = p.grad.data() + o * a * inner;
                    for (std::size_t i = 0; i < a * inner; ++i) pg[i] += g[i];
                }
            }
        });
}

} // namespace vxs

#endif // VOXSAMPLER_TENSOR_HPP
