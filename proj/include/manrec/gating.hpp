#pragma once

#include "manrec/memory.hpp"
#include "manrec/recommender.hpp"

namespace manrec {

// Scalar interpolation weight from the session context:
//   w = sigmoid(wo . tanh(Wh c + bh) + bo)
class GateNetwork {
public:
    GateNetwork() = default;
    GateNetwork(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                double init_scale = 0.1);

    real weight(const real* c) const;

    struct Cache {
        std::vector<real> c, a1;
        real w = 0;
    };
    real weight_with_cache(const real* c, Cache& cache) const;
    // dL/dw flows back into the parameter gradient buffers
    void backward(const Cache& cache, real dw);

    ParamSet collect_params();
    std::size_t input_dim() const { return wh_.cols; }
    std::size_t hidden_dim() const { return wh_.rows; }

    void save(std::ostream& out) const;
    void load(std::istream& in);
    bool params_equal(const GateNetwork& other) const;

private:
    Tensor wh_;  // hidden x input
    Tensor bh_;  // hidden x 1
    Tensor wo_;  // 1 x hidden
    Tensor bo_;  // 1 x 1
};

// out = w * pn + (1 - w) * pm, dense over pn's length. An empty memory
// prediction yields pn unchanged (the memory abstains, Eq. of the blend
// degenerates to the neural path).
std::vector<real> combine(const std::vector<real>& pn, const MemoryPrediction& pm, real w);

// One training observation for the gate: everything upstream is frozen, so
// only the two scalar target probabilities and the context are needed.
struct GateExample {
    std::vector<real> context;
    real pn = 0;          // neural probability of the realized next item
    real pm = 0;          // memory probability of it
    bool pm_empty = false;  // memory abstained; the example carries no gate signal
};

std::vector<GateExample> build_gate_examples(const RecommenderModel& model,
                                             const MemoryStore& memory,
                                             const std::vector<std::vector<ItemId>>& sessions,
                                             std::size_t k, std::size_t nprobe);

// -log(w*pn + (1-w)*pm) summed over examples / n. Gradient accumulation
// optional (gate != nullptr).
double gate_batch_loss(GateNetwork& gate, std::span<const GateExample> batch,
                       bool accumulate_grads, real scale);

struct GateFitConfig {
    std::size_t hidden_dim = 100;
    double lr = 1e-3;               // Adam
    double heldout_fraction = 0.1;  // seeded random split of the examples
    std::size_t patience = 3;
    std::size_t max_epochs = 50;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    double init_scale = 0.1;
    bool strict_finite = false;
};

struct GateFitLogEntry {
    std::size_t epoch = 0;
    double train_loss = 0;
    double heldout_loss = 0;
};

struct GateFitResult {
    GateNetwork gate;
    std::vector<GateFitLogEntry> log;
};

// Fits a fresh gate on the examples; early-stops on the held-out slice and
// returns the best-held-out parameters.
GateFitResult fit_gating(std::size_t input_dim, const std::vector<GateExample>& examples,
                         const GateFitConfig& cfg);

// One plain SGD step on the mean loss of the batch (the online cadence).
void gate_incremental_step(GateNetwork& gate, std::span<const GateExample> batch, double lr);

}  // namespace manrec
