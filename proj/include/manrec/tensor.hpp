#pragma once

#include <cassert>
#include <cstring>
#include <functional>
#include <string>

#include "manrec/common.hpp"

namespace manrec {

// Row-major value matrix with a same-shaped gradient buffer. A vector is a
// Tensor with cols == 1. Rows may grow (item vocabularies are unbounded);
// the gradient buffer grows in lockstep.
struct Tensor {
    std::size_t rows = 0, cols = 0;
    std::vector<real> v;  // values, rows*cols
    std::vector<real> g;  // gradients, same shape

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) { resize(r, c); }

    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        v.assign(r * c, real(0));
        g.assign(r * c, real(0));
    }

    std::size_t size() const { return v.size(); }

    real& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    real at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    real* row(std::size_t r) { return v.data() + r * cols; }
    const real* row(std::size_t r) const { return v.data() + r * cols; }
    real* grad_row(std::size_t r) { return g.data() + r * cols; }
    const real* grad_row(std::size_t r) const { return g.data() + r * cols; }

    void add_row() {
        rows += 1;
        v.resize(rows * cols, real(0));
        g.resize(rows * cols, real(0));
    }

    void zero_grad() { std::fill(g.begin(), g.end(), real(0)); }

    void init_uniform(Rng& rng, double scale) {
        for (auto& x : v) x = static_cast<real>(rng.uniform(-scale, scale));
    }
};

// Named view over one tensor's storage; the unit optimizers and the
// finite-difference checker iterate these in registration order, which is
// what makes runs bit-reproducible.
struct ParamView {
    std::string name;
    real* value = nullptr;
    real* grad = nullptr;
    std::size_t size = 0;
};

using ParamSet = std::vector<ParamView>;

inline void collect_param(ParamSet& out, const std::string& name, Tensor& t) {
    out.push_back({name, t.v.data(), t.g.data(), t.v.size()});
}

inline void zero_grads(ParamSet& params) {
    for (auto& p : params) std::fill(p.grad, p.grad + p.size, real(0));
}

// ---- dense kernels --------------------------------------------------------

inline real dot(const real* a, const real* b, std::size_t n) {
    real s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(real a, const real* x, real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// out = M x  (M rows x cols, x cols, out rows)
inline void matvec(const Tensor& m, const real* x, real* out) {
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x, m.cols);
}

// out += M^T x  (x rows, out cols)
inline void matvec_t_acc(const Tensor& m, const real* x, real* out) {
    for (std::size_t r = 0; r < m.rows; ++r) axpy(x[r], m.row(r), out, m.cols);
}

// grad(M) += a u v^T  (u rows, v cols)
inline void outer_acc(Tensor& m, real a, const real* u, const real* v) {
    for (std::size_t r = 0; r < m.rows; ++r) axpy(a * u[r], v, m.grad_row(r), m.cols);
}

inline real l2_distance2(const real* a, const real* b, std::size_t n) {
    real s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const real d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace manrec
