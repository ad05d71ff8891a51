#pragma once

#include <functional>
#include <optional>

#include "manrec/tensor.hpp"

namespace manrec {

inline real sigmoid(real x) { return real(1) / (real(1) + std::exp(-x)); }

// ---- GRU cell ---------------------------------------------------------------
//
//   z  = sigmoid(Wz x + Uz h + bz)
//   r  = sigmoid(Wr x + Ur h + br)
//   hc = tanh(Wh x + Uh (r .* h) + bh)
//   h' = (1 - z) .* h + z .* hc

struct GruParams {
    std::size_t input_dim = 0, hidden_dim = 0;
    Tensor wz, wr, wh;  // hidden x input
    Tensor uz, ur, uh;  // hidden x hidden
    Tensor bz, br, bh;  // hidden x 1

    void resize(std::size_t input, std::size_t hidden);
    void init(Rng& rng, double scale);
    void collect(const std::string& prefix, ParamSet& out);
};

struct GruStepCache {
    std::vector<real> x, h_prev, z, r, hc;
};

// h_out may not alias h_prev. cache == nullptr skips bookkeeping (inference).
void gru_step(const GruParams& p, const real* x, const real* h_prev, real* h_out,
              GruStepCache* cache);

// Accumulates parameter gradients into p's grad buffers and writes the
// gradients w.r.t. the step inputs. dx_out may be null when the input
// embedding is frozen.
void gru_step_backward(GruParams& p, const GruStepCache& c, const real* dh_out,
                       real* dh_prev_out, real* dx_out);

// ---- linear softmax decoder over the item vocabulary ------------------------

struct SoftmaxCache {
    std::vector<real> probs;
    std::vector<real> context;
    ItemId target = -1;
    bool pending = false;
};

// probs = softmax(W c + b), loss = -log probs[target]; max-shifted, safe for
// extreme logits. Rows of w / entries of b are per-item.
real linear_softmax_loss(const Tensor& w, const Tensor& b, const real* c, ItemId target,
                         SoftmaxCache& cache);

// Inference-only variant, no cache.
std::vector<real> linear_softmax_probs(const Tensor& w, const Tensor& b, const real* c);

// scale multiplies the loss gradient (1/batch for mean-reduced batches).
// dc_out receives scale * W^T (p - onehot). Throws if cache has no pending
// forward; consumes the cache.
void linear_softmax_backward(Tensor& w, Tensor& b, SoftmaxCache& cache, real scale,
                             real* dc_out);

// ---- optimizers --------------------------------------------------------------

enum class OptMethod { sgd, adam };

struct OptimizerConfig {
    OptMethod method = OptMethod::sgd;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    bool strict_finite = false;  // throw on non-finite gradients
};

struct AdamState {
    std::vector<std::vector<real>> m, v;
    long step_count = 0;
};

// Applies one update to every view in params. SGD ignores state; Adam lazily
// sizes its moment buffers to the current ParamSet (vocabulary rows grow).
void optimizer_step(ParamSet& params, const OptimizerConfig& cfg, AdamState* state);

// ---- finite-difference gradient checking -------------------------------------

struct FdCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_coord = 0;
    std::size_t checked = 0;
};

// loss_fn must be a pure function of the parameter values (it is called
// repeatedly with perturbed entries). Analytic gradients must already sit in
// the grad buffers. Checks up to max_coords_per_tensor coordinates per view,
// sampled with rng when a view is larger than that.
FdCheckResult finite_difference_check(const std::function<double()>& loss_fn,
                                      ParamSet& params, double eps,
                                      std::size_t max_coords_per_tensor, Rng& rng);

}  // namespace manrec
