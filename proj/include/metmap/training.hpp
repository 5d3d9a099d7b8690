#pragma once

#include "metmap/corpus.hpp"
#include "metmap/mmi_grad.hpp"

#include <functional>
#include <string>
#include <vector>

namespace metmap {

struct TrainConfig {
    enum class Profile { kDesk, kPaper };
    Profile profile = Profile::kDesk;

    double dropout = 0.0;
    int max_input_len = 48;
    int max_output_len = 8;
    int epochs = 400;
    double learning_rate = 1e-3;
    int batch_size = 8;
    std::uint64_t seed = 42;

    // Architecture (profile-independent).
    int d_model = 32;
    int d_ff = 128;
    int n_enc_layers = 2;
    int n_dec_layers = 2;
    int patch_size = 4;
    int channels = 3;

    bool select_best_by_val = false;  // off by default: fixed-epoch training
    int checkpoint_every = 1;         // per-epoch checkpoints by default

    static TrainConfig desk();
    // Full-scale profile values: dropout .3, lengths 32/16, 8 epochs,
    // lr 5e-6, batch 16.
    static TrainConfig paper();

    MmiHyper hyper(int vocab_size) const;
    void validate() const;
};

// Knowledge lookup used while building training inputs; typically
// training_generation() bound to a client, or a stub in tests.
using GenerationFn = std::function<std::string(const Sample&, int stage)>;

// Teacher-forced instance: input = text ⊕ G, decoder learns the stage's gold
// label (targets or sources joined with the canonical separator) plus EOS.
TrainExample make_train_example(const Sample& sample, int stage, const std::string& generation,
                                const Vocab& vocab, const MmiHyper& hyper);

struct EpochStat {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
    double exact_match = 0.0;
};

struct TrainResult {
    MmiParams params;
    std::vector<EpochStat> curve;
    long long steps = 0;
};

// Adam with bias correction; state is index-aligned with MmiParams::tensors().
struct AdamState {
    std::vector<Mat> m, v;
    long long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

void adam_step(MmiParams& params, const MmiParams& grads, AdamState& state, double lr);

// Trains one stage model with teacher forcing and seeded init/shuffling.
// When checkpoint_dir is non-empty, per-epoch checkpoints land in
// <dir>/epoch_NNNN and the final model in <dir>/final. A NaN loss aborts
// with the offending epoch/batch.
TrainResult train_stage(int stage, const Corpus& corpus, const Vocab& vocab,
                        const GenerationFn& generation, const TrainConfig& config,
                        const std::string& checkpoint_dir = "",
                        const std::string& vocab_hash = "");

// epoch,split,loss,exact_match
void write_curve_csv(const std::vector<EpochStat>& curve, const std::string& path);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
};

// Central finite differences against the analytic gradients of the
// teacher-forced loss, for every parameter tensor. 64-bit, eval mode.
GradCheckResult finite_diff_check(const MmiParams& params, const std::vector<TrainExample>& batch,
                                  double step = 1e-5);

// Same comparison against externally supplied analytic gradients (lets tests
// inject faults).
GradCheckResult finite_diff_compare(const MmiParams& params, const MmiParams& analytic,
                                    const std::vector<TrainExample>& batch, double step = 1e-5);

}  // namespace metmap
