#pragma once

#include "metmap/mmi.hpp"

namespace metmap {

// One teacher-forced training instance. decoder_input and gold have equal
// length; PAD positions in gold are excluded from the loss.
struct TrainExample {
    TokenSequence input_ids;        // encoder input (text ⊕ SEP ⊕ G)
    Mat patches;                    // m×(p·p·c) raw patch rows
    std::vector<int> decoder_input; // BOS + gold prefix
    std::vector<int> gold;          // label ids + EOS (+ PAD padding)
};

// Mean loss over non-PAD positions of one example's logits.
double cross_entropy_loss(const Mat& logits, const std::vector<int>& gold);

// Forward + analytic backward through the whole model. Adds each example's
// gradient / batch_size into `grads` (shape-matched, caller-zeroed) and
// returns the batch-mean loss. kTrain with dropout > 0 requires an RNG.
double loss_and_gradients(const MmiParams& params, const std::vector<TrainExample>& batch,
                          MmiParams& grads, RunMode mode, SplitMix64* rng = nullptr);

// Batch-mean loss only (no gradients); used by the finite-difference checker.
double batch_loss(const MmiParams& params, const std::vector<TrainExample>& batch);

}  // namespace metmap
