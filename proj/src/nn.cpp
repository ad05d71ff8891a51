#include "manrec/nn.hpp"

#include <algorithm>
#include <cmath>

namespace manrec {

void GruParams::resize(std::size_t input, std::size_t hidden) {
    input_dim = input;
    hidden_dim = hidden;
    wz.resize(hidden, input);
    wr.resize(hidden, input);
    wh.resize(hidden, input);
    uz.resize(hidden, hidden);
    ur.resize(hidden, hidden);
    uh.resize(hidden, hidden);
    bz.resize(hidden, 1);
    br.resize(hidden, 1);
    bh.resize(hidden, 1);
}

void GruParams::init(Rng& rng, double scale) {
    // biases stay zero
    wz.init_uniform(rng, scale);
    wr.init_uniform(rng, scale);
    wh.init_uniform(rng, scale);
    uz.init_uniform(rng, scale);
    ur.init_uniform(rng, scale);
    uh.init_uniform(rng, scale);
}

void GruParams::collect(const std::string& prefix, ParamSet& out) {
    collect_param(out, prefix + ".wz", wz);
    collect_param(out, prefix + ".wr", wr);
    collect_param(out, prefix + ".wh", wh);
    collect_param(out, prefix + ".uz", uz);
    collect_param(out, prefix + ".ur", ur);
    collect_param(out, prefix + ".uh", uh);
    collect_param(out, prefix + ".bz", bz);
    collect_param(out, prefix + ".br", br);
    collect_param(out, prefix + ".bh", bh);
}

void gru_step(const GruParams& p, const real* x, const real* h_prev, real* h_out,
              GruStepCache* cache) {
    const std::size_t h = p.hidden_dim;
    std::vector<real> z(h), r(h), hc(h), rh(h);

    matvec(p.wz, x, z.data());
    matvec(p.wr, x, r.data());
    for (std::size_t i = 0; i < h; ++i) {
        z[i] += dot(p.uz.row(i), h_prev, h) + p.bz.v[i];
        r[i] += dot(p.ur.row(i), h_prev, h) + p.br.v[i];
    }
    for (std::size_t i = 0; i < h; ++i) {
        z[i] = sigmoid(z[i]);
        r[i] = sigmoid(r[i]);
        rh[i] = r[i] * h_prev[i];
    }
    matvec(p.wh, x, hc.data());
    for (std::size_t i = 0; i < h; ++i)
        hc[i] = std::tanh(hc[i] + dot(p.uh.row(i), rh.data(), h) + p.bh.v[i]);
    for (std::size_t i = 0; i < h; ++i) h_out[i] = (real(1) - z[i]) * h_prev[i] + z[i] * hc[i];

    if (cache) {
        cache->x.assign(x, x + p.input_dim);
        cache->h_prev.assign(h_prev, h_prev + h);
        cache->z = std::move(z);
        cache->r = std::move(r);
        cache->hc = std::move(hc);
    }
}

void gru_step_backward(GruParams& p, const GruStepCache& c, const real* dh_out,
                       real* dh_prev_out, real* dx_out) {
    const std::size_t h = p.hidden_dim;
    std::vector<real> dz(h), dhc(h), da_h(h), da_z(h), da_r(h), drh(h), rh(h);

    for (std::size_t i = 0; i < h; ++i) {
        dz[i] = dh_out[i] * (c.hc[i] - c.h_prev[i]);
        dhc[i] = dh_out[i] * c.z[i];
        dh_prev_out[i] = dh_out[i] * (real(1) - c.z[i]);
        rh[i] = c.r[i] * c.h_prev[i];
    }

    for (std::size_t i = 0; i < h; ++i) da_h[i] = dhc[i] * (real(1) - c.hc[i] * c.hc[i]);
    outer_acc(p.wh, real(1), da_h.data(), c.x.data());
    outer_acc(p.uh, real(1), da_h.data(), rh.data());
    axpy(real(1), da_h.data(), p.bh.g.data(), h);
    std::fill(drh.begin(), drh.end(), real(0));
    matvec_t_acc(p.uh, da_h.data(), drh.data());
    for (std::size_t i = 0; i < h; ++i) {
        da_r[i] = drh[i] * c.h_prev[i] * c.r[i] * (real(1) - c.r[i]);
        dh_prev_out[i] += drh[i] * c.r[i];
        da_z[i] = dz[i] * c.z[i] * (real(1) - c.z[i]);
    }

    outer_acc(p.wz, real(1), da_z.data(), c.x.data());
    outer_acc(p.uz, real(1), da_z.data(), c.h_prev.data());
    axpy(real(1), da_z.data(), p.bz.g.data(), h);
    matvec_t_acc(p.uz, da_z.data(), dh_prev_out);

    outer_acc(p.wr, real(1), da_r.data(), c.x.data());
    outer_acc(p.ur, real(1), da_r.data(), c.h_prev.data());
    axpy(real(1), da_r.data(), p.br.g.data(), h);
    matvec_t_acc(p.ur, da_r.data(), dh_prev_out);

    if (dx_out) {
        std::fill(dx_out, dx_out + p.input_dim, real(0));
        matvec_t_acc(p.wz, da_z.data(), dx_out);
        matvec_t_acc(p.wr, da_r.data(), dx_out);
        matvec_t_acc(p.wh, da_h.data(), dx_out);
    }
}

real linear_softmax_loss(const Tensor& w, const Tensor& b, const real* c, ItemId target,
                         SoftmaxCache& cache) {
    if (target < 0 || static_cast<std::size_t>(target) >= w.rows)
        throw Error("softmax target out of range");
    const std::size_t n = w.rows, ti = static_cast<std::size_t>(target);
    std::vector<real> logits(n);
    for (std::size_t i = 0; i < n; ++i) logits[i] = dot(w.row(i), c, w.cols) + b.v[i];
    real mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    real sum = 0;
    cache.probs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        cache.probs[i] = std::exp(logits[i] - mx);
        sum += cache.probs[i];
    }
    const real inv = real(1) / sum;
    for (std::size_t i = 0; i < n; ++i) cache.probs[i] *= inv;
    cache.context.assign(c, c + w.cols);
    cache.target = target;
    cache.pending = true;
    // log-sum-exp form; -log(probs[target]) would overflow to inf once the
    // target's shifted exponential underflows
    return std::log(sum) + mx - logits[ti];
}

std::vector<real> linear_softmax_probs(const Tensor& w, const Tensor& b, const real* c) {
    const std::size_t n = w.rows;
    std::vector<real> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = dot(w.row(i), c, w.cols) + b.v[i];
    real mx = out[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, out[i]);
    real sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(out[i] - mx);
        sum += out[i];
    }
    const real inv = real(1) / sum;
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
    return out;
}

void linear_softmax_backward(Tensor& w, Tensor& b, SoftmaxCache& cache, real scale,
                             real* dc_out) {
    if (!cache.pending) throw Error("softmax backward called without a pending forward");
    cache.pending = false;
    const std::size_t n = w.rows, h = w.cols;
    if (dc_out) std::fill(dc_out, dc_out + h, real(0));
    for (std::size_t i = 0; i < n; ++i) {
        real dl = cache.probs[i];
        if (i == static_cast<std::size_t>(cache.target)) dl -= real(1);
        dl *= scale;
        if (dl == real(0)) continue;
        axpy(dl, cache.context.data(), w.grad_row(i), h);
        b.g[i] += dl;
        if (dc_out) axpy(dl, w.row(i), dc_out, h);
    }
}

void optimizer_step(ParamSet& params, const OptimizerConfig& cfg, AdamState* state) {
    if (cfg.strict_finite) {
        for (const auto& p : params)
            for (std::size_t i = 0; i < p.size; ++i)
                if (!std::isfinite(p.grad[i]))
                    throw Error("non-finite gradient in " + p.name);
    }
    if (cfg.method == OptMethod::sgd) {
        if (cfg.lr == 0.0) return;  // strict no-op, no rounding through p - 0*g
        const real lr = static_cast<real>(cfg.lr);
        for (auto& p : params)
            for (std::size_t i = 0; i < p.size; ++i) p.value[i] -= lr * p.grad[i];
        return;
    }
    if (!state) throw Error("adam requires an AdamState");
    state->m.resize(params.size());
    state->v.resize(params.size());
    state->step_count += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state->step_count));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state->step_count));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& m = state->m[k];
        auto& v = state->v[k];
        m.resize(p.size, real(0));  // grows with the vocabulary
        v.resize(p.size, real(0));
        for (std::size_t i = 0; i < p.size; ++i) {
            const double gi = p.grad[i];
            m[i] = static_cast<real>(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = static_cast<real>(b2 * v[i] + (1.0 - b2) * gi * gi);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value[i] -= static_cast<real>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

FdCheckResult finite_difference_check(const std::function<double()>& loss_fn,
                                      ParamSet& params, double eps,
                                      std::size_t max_coords_per_tensor, Rng& rng) {
    const double l0 = loss_fn();
    const double l1 = loss_fn();
    if (!(l0 == l1)) throw Error("loss function is not deterministic; gradcheck is void");

    FdCheckResult res;
    for (auto& p : params) {
        std::vector<std::size_t> coords;
        if (p.size <= max_coords_per_tensor) {
            coords.resize(p.size);
            for (std::size_t i = 0; i < p.size; ++i) coords[i] = i;
        } else {
            for (std::size_t i = 0; i < max_coords_per_tensor; ++i)
                coords.push_back(rng.index(p.size));
        }
        for (std::size_t idx : coords) {
            const real keep = p.value[idx];
            p.value[idx] = keep + static_cast<real>(eps);
            const double lp = loss_fn();
            p.value[idx] = keep - static_cast<real>(eps);
            const double lm = loss_fn();
            p.value[idx] = keep;
            const double num = (lp - lm) / (2.0 * eps);
            const double ana = p.grad[idx];
            // The denominator floor keeps coordinates with near-zero true
            // gradients from dominating: the central difference only carries
            // ~ulp(loss)/eps of absolute precision, so below the floor the
            // comparison is effectively absolute.
            const double denom = std::max({std::abs(ana), std::abs(num), 1e-6});
            const double rel = std::abs(ana - num) / denom;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_param = p.name;
                res.worst_coord = idx;
            }
            res.checked += 1;
        }
    }
    return res;
}

}  // namespace manrec
