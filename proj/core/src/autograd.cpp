// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace petdiff::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r)
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                                    shape_str(t.shape()));
}

// Unrolls (C, H, W) into (C*k*k, Ho*Wo) for a stride-1 convolution.
void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, int k, int pad, double* col) {
    const std::int64_t Ho = H + 2 * pad - k + 1;
    const std::int64_t Wo = W + 2 * pad - k + 1;
    for (std::int64_t c = 0; c < C; ++c) {
        const double* xc = x + c * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    const std::int64_t iy = oy + ky - pad;
                    double* r = row + oy * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(r, r + Wo, 0.0);
                        continue;
                    }
                    const double* xr = xc + iy * W;
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const std::int64_t ix = ox + kx - pad;
                        r[ox] = (ix >= 0 && ix < W) ? xr[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, std::int64_t C, std::int64_t H, std::int64_t W, int k, int pad, double* x) {
    const std::int64_t Ho = H + 2 * pad - k + 1;
    const std::int64_t Wo = W + 2 * pad - k + 1;
    for (std::int64_t c = 0; c < C; ++c) {
        double* xc = x + c * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    const std::int64_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const double* r = row + oy * Wo;
                    double* xr = xc + iy * W;
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const std::int64_t ix = ox + kx - pad;
                        if (ix >= 0 && ix < W) xr[ix] += r[ox];
                    }
                }
            }
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape() || grad.empty() != value.empty()) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& buf = grad_buffer();
    require_same_shape(buf, g, "gradient accumulation");
    double* d = buf.data();
    const double* s = g.data();
    for (std::int64_t i = 0; i < buf.size(); ++i) d[i] += s[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

void Var::backward() const {
    if (!node_) throw std::logic_error("backward on undefined Var");
    if (node_->value.size() != 1) throw std::logic_error("backward requires a scalar output");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Free interior gradients; leaves keep theirs.
    for (Node* n : order)
        if (n->backward_fn) n->grad = Tensor();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        node->requires_grad = true;
        for (auto& p : parents) node->parents.push_back(p.defined() ? p.node() : nullptr);
        // Keep undefined parents out of the traversal.
        node->parents.erase(std::remove(node->parents.begin(), node->parents.end(), nullptr), node->parents.end());
        node->backward_fn = std::move(fn);
    }
    return Var::from_node(std::move(node));
}

Var detach(const Var& x) { return Var(x.value(), false); }

Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank(xv, 4, "conv2d input");
    require_rank(wv, 4, "conv2d weight");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::int64_t O = wv.dim(0);
    const int k = static_cast<int>(wv.dim(2));
    if (wv.dim(1) != C || wv.dim(3) != k)
        throw std::invalid_argument("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                                    shape_str(xv.shape()));
    if (bias.defined() && bias.value().size() != O) throw std::invalid_argument("conv2d: bias size mismatch");
    const std::int64_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
    const std::int64_t K = C * k * k, P = Ho * Wo;
    const bool direct = (k == 1 && pad == 0);

    Tensor out({N, O, Ho, Wo});
    std::vector<double> col(direct ? 0 : static_cast<std::size_t>(K * P));
    CMapMat wm(wv.data(), O, K);
    for (std::int64_t n = 0; n < N; ++n) {
        const double* xn = xv.data() + n * C * H * W;
        if (!direct) im2col(xn, C, H, W, k, pad, col.data());
        CMapMat cm(direct ? xn : col.data(), K, P);
        MapMat om(out.data() + n * O * P, O, P);
        om.noalias() = wm * cm;
        if (bias.defined())
            for (std::int64_t o = 0; o < O; ++o) om.row(o).array() += bias.value()[o];
    }

    return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, pad, k, N, C, H, W, O, K, P, direct](Node& self) {
        const Tensor& g = self.grad;
        const Tensor& xv = x.value();
        const Tensor& wv = weight.value();
        std::vector<double> col(direct ? 0 : static_cast<std::size_t>(K * P));
        std::vector<double> dcol(static_cast<std::size_t>(K * P));
        CMapMat wm(wv.data(), O, K);
        Tensor* dw = weight.requires_grad() ? &weight.node()->grad_buffer() : nullptr;
        Tensor* db = bias.requires_grad() ? &bias.node()->grad_buffer() : nullptr;
        Tensor* dx = x.requires_grad() ? &x.node()->grad_buffer() : nullptr;
        for (std::int64_t n = 0; n < N; ++n) {
            CMapMat gm(g.data() + n * O * P, O, P);
            const double* xn = xv.data() + n * C * H * W;
            if (dw) {
                if (!direct) im2col(xn, C, H, W, k, pad, col.data());
                CMapMat cm(direct ? xn : col.data(), K, P);
                MapMat(dw->data(), O, K).noalias() += gm * cm.transpose();
            }
            if (db)
                for (std::int64_t o = 0; o < O; ++o) (*db)[o] += gm.row(o).sum();
            if (dx) {
                if (direct) {
                    MapMat(dx->data() + n * C * H * W, K, P).noalias() += wm.transpose() * gm;
                } else {
                    MapMat(dcol.data(), K, P).noalias() = wm.transpose() * gm;
                    col2im_add(dcol.data(), C, H, W, k, pad, dx->data() + n * C * H * W);
                }
            }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank(xv, 2, "linear input");
    require_rank(wv, 2, "linear weight");
    const std::int64_t N = xv.dim(0), D = xv.dim(1), O = wv.dim(0);
    if (wv.dim(1) != D) throw std::invalid_argument("linear: weight/input width mismatch");
    Tensor out({N, O});
    MapMat om(out.data(), N, O);
    om.noalias() = CMapMat(xv.data(), N, D) * CMapMat(wv.data(), O, D).transpose();
    if (bias.defined())
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t o = 0; o < O; ++o) om(n, o) += bias.value()[o];
    return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, N, D, O](Node& self) {
        CMapMat gm(self.grad.data(), N, O);
        if (x.requires_grad())
            MapMat(x.node()->grad_buffer().data(), N, D).noalias() += gm * CMapMat(weight.value().data(), O, D);
        if (weight.requires_grad())
            MapMat(weight.node()->grad_buffer().data(), O, D).noalias() +=
                gm.transpose() * CMapMat(x.value().data(), N, D);
        if (bias.requires_grad()) {
            Tensor& db = bias.node()->grad_buffer();
            for (std::int64_t o = 0; o < O; ++o) db[o] += gm.col(o).sum();
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        if (a.requires_grad()) a.node()->accumulate(self.grad);
        if (b.requires_grad()) b.node()->accumulate(self.grad);
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v *= s;
    return make_result(std::move(out), {a}, [a, s](Node& self) {
        Tensor& g = a.node()->grad_buffer();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var film(const Var& x, const Var& scale_v, const Var& shift) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "film input");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
    if (scale_v.value().shape() != Shape{N, C} || shift.value().shape() != Shape{N, C})
        throw std::invalid_argument("film: modulation must be (N, C)");
    Tensor out(xv.shape());
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const double s = 1.0 + scale_v.value()[nc], b = shift.value()[nc];
        for (std::int64_t p = 0; p < P; ++p) out[nc * P + p] = xv[nc * P + p] * s + b;
    }
    return make_result(std::move(out), {x, scale_v, shift}, [x, scale_v, shift, N, C, P](Node& self) {
        const Tensor& g = self.grad;
        Tensor* dx = x.requires_grad() ? &x.node()->grad_buffer() : nullptr;
        Tensor* ds = scale_v.requires_grad() ? &scale_v.node()->grad_buffer() : nullptr;
        Tensor* db = shift.requires_grad() ? &shift.node()->grad_buffer() : nullptr;
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const double s = 1.0 + scale_v.value()[nc];
            double gs = 0.0, gb = 0.0;
            for (std::int64_t p = 0; p < P; ++p) {
                const double gi = g[nc * P + p];
                if (dx) (*dx)[nc * P + p] += gi * s;
                gs += gi * x.value()[nc * P + p];
                gb += gi;
            }
            if (ds) (*ds)[nc] += gs;
            if (db) (*db)[nc] += gb;
        }
    });
}

Var add_channel_vector(const Var& x, const Var& v) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "add_channel_vector input");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
    if (v.value().shape() != Shape{N, C}) throw std::invalid_argument("add_channel_vector: vector must be (N, C)");
    Tensor out = xv;
    for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t p = 0; p < P; ++p) out[nc * P + p] += v.value()[nc];
    return make_result(std::move(out), {x, v}, [x, v, N, C, P](Node& self) {
        if (x.requires_grad()) x.node()->accumulate(self.grad);
        if (v.requires_grad()) {
            Tensor& dv = v.node()->grad_buffer();
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                double s = 0.0;
                for (std::int64_t p = 0; p < P; ++p) s += self.grad[nc * P + p];
                dv[nc] += s;
            }
        }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "group_norm input");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
    if (groups <= 0 || C % groups != 0)
        throw std::invalid_argument("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                                    std::to_string(groups));
    if (gamma.value().size() != C || beta.value().size() != C)
        throw std::invalid_argument("group_norm: affine parameter size mismatch");
    const std::int64_t cg = C / groups, M = cg * P;
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N * groups));
    Tensor out(xv.shape());
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t off = (n * C + gi * cg) * P;
            double mean = 0.0;
            for (std::int64_t i = 0; i < M; ++i) mean += xv[off + i];
            mean /= static_cast<double>(M);
            double var = 0.0;
            for (std::int64_t i = 0; i < M; ++i) {
                const double d = xv[off + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(M);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[static_cast<std::size_t>(n * groups + gi)] = is;
            for (std::int64_t c = 0; c < cg; ++c) {
                const std::int64_t ch = gi * cg + c;
                const double ga = gamma.value()[ch], be = beta.value()[ch];
                for (std::int64_t p = 0; p < P; ++p) {
                    const std::int64_t idx = off + c * P + p;
                    const double h = (xv[idx] - mean) * is;
                    (*xhat)[idx] = h;
                    out[idx] = h * ga + be;
                }
            }
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, groups, N, C, P, cg, M](Node& self) {
        const Tensor& g = self.grad;
        Tensor* dx = x.requires_grad() ? &x.node()->grad_buffer() : nullptr;
        Tensor* dga = gamma.requires_grad() ? &gamma.node()->grad_buffer() : nullptr;
        Tensor* dbe = beta.requires_grad() ? &beta.node()->grad_buffer() : nullptr;
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t gi = 0; gi < groups; ++gi) {
                const std::int64_t off = (n * C + gi * cg) * P;
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::int64_t c = 0; c < cg; ++c) {
                    const std::int64_t ch = gi * cg + c;
                    const double ga = gamma.value()[ch];
                    double sg = 0.0, sgh = 0.0;
                    for (std::int64_t p = 0; p < P; ++p) {
                        const std::int64_t idx = off + c * P + p;
                        const double gv = g[idx], h = (*xhat)[idx];
                        sg += gv;
                        sgh += gv * h;
                        sum_dh += gv * ga;
                        sum_dh_h += gv * ga * h;
                    }
                    if (dga) (*dga)[ch] += sgh;
                    if (dbe) (*dbe)[ch] += sg;
                }
                if (!dx) continue;
                const double is = (*inv_std)[static_cast<std::size_t>(n * groups + gi)];
                const double m1 = sum_dh / static_cast<double>(M), m2 = sum_dh_h / static_cast<double>(M);
                for (std::int64_t c = 0; c < cg; ++c) {
                    const double ga = gamma.value()[gi * cg + c];
                    for (std::int64_t p = 0; p < P; ++p) {
                        const std::int64_t idx = off + c * P + p;
                        (*dx)[idx] += is * (g[idx] * ga - m1 - (*xhat)[idx] * m2);
                    }
                }
            }
        }
    });
}

Var silu(const Var& x) {
    Tensor out(x.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = v * sigmoid(v);
    }
    return make_result(std::move(out), {x}, [x](Node& self) {
        Tensor& dx = x.node()->grad_buffer();
        for (std::int64_t i = 0; i < dx.size(); ++i) {
            const double v = x.value()[i], s = sigmoid(v);
            dx[i] += self.grad[i] * s * (1.0 + v * (1.0 - s));
        }
    });
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const Tensor& f = xs.front().value();
    require_rank(f, 4, "concat_channels input");
    const std::int64_t N = f.dim(0), H = f.dim(2), W = f.dim(3), P = H * W;
    std::int64_t C = 0;
    std::vector<std::int64_t> widths;
    for (const auto& x : xs) {
        const Tensor& v = x.value();
        if (v.rank() != 4 || v.dim(0) != N || v.dim(2) != H || v.dim(3) != W)
            throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(f.shape()) + " and " +
                                        shape_str(v.shape()));
        widths.push_back(v.dim(1));
        C += v.dim(1);
    }
    Tensor out({N, C, H, W});
    for (std::int64_t n = 0; n < N; ++n) {
        std::int64_t c0 = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double* src = xs[i].value().data() + n * widths[i] * P;
            std::copy(src, src + widths[i] * P, out.data() + (n * C + c0) * P);
            c0 += widths[i];
        }
    }
    return make_result(std::move(out), xs, [xs, widths, N, C, P](Node& self) {
        for (std::int64_t n = 0; n < N; ++n) {
            std::int64_t c0 = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                if (xs[i].requires_grad()) {
                    double* dst = xs[i].node()->grad_buffer().data() + n * widths[i] * P;
                    const double* src = self.grad.data() + (n * C + c0) * P;
                    for (std::int64_t j = 0; j < widths[i] * P; ++j) dst[j] += src[j];
                }
                c0 += widths[i];
            }
        }
    });
}

Var slice_channels(const Var& x, std::int64_t begin, std::int64_t end) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "slice_channels input");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
    if (begin < 0 || end > C || begin >= end) throw std::invalid_argument("slice_channels: bad range");
    const std::int64_t S = end - begin;
    Tensor out({N, S, xv.dim(2), xv.dim(3)});
    for (std::int64_t n = 0; n < N; ++n) {
        const double* src = xv.data() + (n * C + begin) * P;
        std::copy(src, src + S * P, out.data() + n * S * P);
    }
    return make_result(std::move(out), {x}, [x, begin, N, C, P, S](Node& self) {
        Tensor& dx = x.node()->grad_buffer();
        for (std::int64_t n = 0; n < N; ++n) {
            double* dst = dx.data() + (n * C + begin) * P;
            const double* src = self.grad.data() + n * S * P;
            for (std::int64_t j = 0; j < S * P; ++j) dst[j] += src[j];
        }
    });
}

Var avg_pool2(const Var& x) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "avg_pool2 input");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: odd spatial size " + shape_str(xv.shape()));
    const std::int64_t Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t xx = 0; xx < Wo; ++xx) {
                const double* b = xv.data() + nc * H * W + 2 * y * W + 2 * xx;
                out[(nc * Ho + y) * Wo + xx] = 0.25 * (b[0] + b[1] + b[W] + b[W + 1]);
            }
    return make_result(std::move(out), {x}, [x, N, C, H, W, Ho, Wo](Node& self) {
        Tensor& dx = x.node()->grad_buffer();
        for (std::int64_t nc = 0; nc < N * C; ++nc)
            for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx) {
                    const double g = 0.25 * self.grad[(nc * Ho + y) * Wo + xx];
                    double* b = dx.data() + nc * H * W + 2 * y * W + 2 * xx;
                    b[0] += g;
                    b[1] += g;
                    b[W] += g;
                    b[W + 1] += g;
                }
    });
}

Var upsample_nearest2(const Var& x) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "upsample_nearest2 input");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::int64_t Ho = 2 * H, Wo = 2 * W;
    Tensor out({N, C, Ho, Wo});
    for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t xx = 0; xx < Wo; ++xx)
                out[(nc * Ho + y) * Wo + xx] = xv[(nc * H + y / 2) * W + xx / 2];
    return make_result(std::move(out), {x}, [x, N, C, H, W, Ho, Wo](Node& self) {
        Tensor& dx = x.node()->grad_buffer();
        for (std::int64_t nc = 0; nc < N * C; ++nc)
            for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx)
                    dx[(nc * H + y / 2) * W + xx / 2] += self.grad[(nc * Ho + y) * Wo + xx];
    });
}

Var spatial_attention(const Var& qkv, int heads) {
    const Tensor& in = qkv.value();
    require_rank(in, 4, "spatial_attention input");
    const std::int64_t N = in.dim(0), C3 = in.dim(1), P = in.dim(2) * in.dim(3);
    if (C3 % 3) throw std::invalid_argument("spatial_attention: channel count not divisible by 3");
    const std::int64_t C = C3 / 3;
    if (heads <= 0 || C % heads) throw std::invalid_argument("spatial_attention: channels not divisible by heads");
    const std::int64_t d = C / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(d));

    // Softmax weights per (n, head), each P x P, kept for the backward pass.
    auto probs = std::make_shared<std::vector<RowMat>>(static_cast<std::size_t>(N * heads));
    Tensor out({N, C, in.dim(2), in.dim(3)});
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t h = 0; h < heads; ++h) {
            const double* base = in.data() + n * C3 * P;
            CMapMat q(base + (h * d) * P, d, P);
            CMapMat k(base + (C + h * d) * P, d, P);
            CMapMat v(base + (2 * C + h * d) * P, d, P);
            RowMat s = sc * (q.transpose() * k);
            for (std::int64_t i = 0; i < P; ++i) {
                const double m = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - m).exp();
                s.row(i) /= s.row(i).sum();
            }
            MapMat(out.data() + (n * C + h * d) * P, d, P).noalias() = v * s.transpose();
            (*probs)[static_cast<std::size_t>(n * heads + h)] = std::move(s);
        }
    }
    return make_result(std::move(out), {qkv}, [qkv, probs, heads, N, C, C3, P, d, sc](Node& self) {
        Tensor& din = qkv.node()->grad_buffer();
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t h = 0; h < heads; ++h) {
                const RowMat& pm = (*probs)[static_cast<std::size_t>(n * heads + h)];
                const double* base = qkv.value().data() + n * C3 * P;
                CMapMat q(base + (h * d) * P, d, P);
                CMapMat k(base + (C + h * d) * P, d, P);
                CMapMat v(base + (2 * C + h * d) * P, d, P);
                CMapMat go(self.grad.data() + (n * C + h * d) * P, d, P);
                double* dbase = din.data() + n * C3 * P;
                MapMat(dbase + (2 * C + h * d) * P, d, P).noalias() += go * pm;
                RowMat dp = go.transpose() * v;
                RowMat ds(P, P);
                for (std::int64_t i = 0; i < P; ++i) {
                    const double dot = pm.row(i).dot(dp.row(i));
                    ds.row(i) = pm.row(i).array() * (dp.row(i).array() - dot);
                }
                MapMat(dbase + (h * d) * P, d, P).noalias() += sc * (k * ds.transpose());
                MapMat(dbase + (C + h * d) * P, d, P).noalias() += sc * (q * ds);
            }
        }
    });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (p == 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.value().size()));
    std::bernoulli_distribution keep(1.0 - p);
    const double inv = 1.0 / (1.0 - p);
    Tensor out(x.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double m = keep(rng) ? inv : 0.0;
        (*mask)[static_cast<std::size_t>(i)] = m;
        out[i] = x.value()[i] * m;
    }
    return make_result(std::move(out), {x}, [x, mask](Node& self) {
        Tensor& dx = x.node()->grad_buffer();
        for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * (*mask)[static_cast<std::size_t>(i)];
    });
}

Var mse(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mse");
    const std::int64_t n = a.value().size();
    if (n == 0) throw std::invalid_argument("mse: empty input");
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    Tensor out(Shape{}, s / static_cast<double>(n));
    return make_result(std::move(out), {a, b}, [a, b, n](Node& self) {
        const double g = self.grad[0] * 2.0 / static_cast<double>(n);
        Tensor* da = a.requires_grad() ? &a.node()->grad_buffer() : nullptr;
        Tensor* db = b.requires_grad() ? &b.node()->grad_buffer() : nullptr;
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = g * (a.value()[i] - b.value()[i]);
            if (da) (*da)[i] += d;
            if (db) (*db)[i] -= d;
        }
    });
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    double s = 0.0;
    std::vector<Var> parents;
    std::vector<double> weights;
    for (const auto& [w, v] : terms) {
        if (v.value().size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
        s += w * v.value()[0];
        parents.push_back(v);
        weights.push_back(w);
    }
    return make_result(Tensor(Shape{}, s), parents, [parents, weights](Node& self) {
        for (std::size_t i = 0; i < parents.size(); ++i)
            if (parents[i].requires_grad()) parents[i].node()->grad_buffer()[0] += weights[i] * self.grad[0];
    });
}

}  // namespace petdiff::ag
