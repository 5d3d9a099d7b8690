#pragma once

#include "metmap/corpus.hpp"
#include "metmap/tensor.hpp"
#include "metmap/text.hpp"

#include <string>
#include <vector>

namespace metmap {

// Architecture hyperparameters. Desk-scale defaults; the full-scale profile
// only changes lengths/dropout (see training::TrainConfig).
struct MmiHyper {
    int vocab_size = 0;
    int d_model = 32;
    int d_ff = 128;
    int n_enc_layers = 2;
    int n_dec_layers = 2;
    int max_input_len = 48;
    int max_output_len = 8;
    int patch_size = 4;
    int channels = 3;
    double dropout = 0.0;

    int max_positions() const {
        return max_input_len > max_output_len + 1 ? max_input_len : max_output_len + 1;
    }
    int patch_dim() const { return patch_size * patch_size * channels; }
};

struct AttentionParams {
    Mat wq, wk, wv, wo;  // d×d each
};

struct LayerNormParams {
    Mat gain, bias;  // 1×d each
};

struct FeedForwardParams {
    Mat w1, b1, w2, b2;  // d×d_ff, 1×d_ff, d_ff×d, 1×d
};

struct EncoderLayerParams {
    AttentionParams attn;
    LayerNormParams ln1;
    FeedForwardParams ff;
    LayerNormParams ln2;
};

struct DecoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln1;
    AttentionParams cross_attn;  // keys/values from the fused representation
    LayerNormParams ln2;
    FeedForwardParams ff;
    LayerNormParams ln3;
};

// All trainable tensors of one stage model.
struct MmiParams {
    MmiHyper hyper;

    Mat embedding;  // V×d, shared by encoder and decoder inputs
    Mat position;   // max_positions×d, learned
    std::vector<EncoderLayerParams> encoder;

    // Text↔image interaction projections (queries from text, keys/values
    // from image) and the elementwise fusion gate.
    Mat cross_wq, cross_wk, cross_wv;  // d×d
    Mat gate_wt, gate_wv;              // d×d
    Mat gate_b;                        // 1×d

    Mat patch_proj;  // (p·p·c)×d, projects raw patches to model width

    std::vector<DecoderLayerParams> decoder;
    Mat out_proj;  // d×V
    Mat out_bias;  // 1×V

    static MmiParams init(const MmiHyper& hyper, std::uint64_t seed);
    MmiParams zeros_like() const;

    // Canonical (name, tensor) registry; iteration order is fixed and shared
    // by the optimizer, checkpoints, and the gradient checker.
    std::vector<TensorRef> tensors();
    std::vector<std::pair<std::string, const Mat*>> tensors() const;
};

enum class RunMode { kTrain, kEval };

// Hidden states of the last encoder layer, n×d. Dropout requires kTrain and
// an RNG; kEval is deterministic for fixed params.
Mat encode_text(const TokenSequence& ids, const MmiParams& params, RunMode mode,
                SplitMix64* rng = nullptr);

// Single-head attention from text over image features:
// softmax(QKᵀ/√d)·V with Q = F_text·Wq, K = F_image·Wk, V = F_image·Wv.
Mat cross_attend(const Mat& f_text, const Mat& f_image, const MmiParams& params);

// α = σ(F_text·Wt + F_attn·Wv + b); F_fuse = (1−α)⊙F_text + α⊙F_attn.
Mat gated_fuse(const Mat& f_text, const Mat& f_attn, const MmiParams& params);

// Greedy argmax decoding from BOS with cross-attention over f_fuse. Returns
// emitted content tokens (no BOS/EOS); stops at EOS or max_out. Ties break
// toward the lowest token id.
TokenSequence decode_greedy(const Mat& f_fuse, const MmiParams& params, int max_out);

// Full model: encode → patch projection → interaction → fusion → decoding.
TokenSequence mmi_forward(const TokenSequence& text_ids, const Raster& image,
                          const MmiParams& params, RunMode mode, SplitMix64* rng = nullptr);

// Checkpoint directory: manifest.json plus one raw little-endian float32
// file per tensor, row-major.
void save_checkpoint(const MmiParams& params, const std::string& dir,
                     const std::string& vocab_hash);
MmiParams load_checkpoint(const std::string& dir, const std::string& expected_vocab_hash = "");

}  // namespace metmap
