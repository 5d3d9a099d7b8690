#pragma once

// Shared between the forward pass (mmi.cpp) and the analytic backward pass
// (mmi_grad.cpp). Forward functions optionally record the activations the
// backward pass consumes; passing nullptr skips recording.

#include "metmap/mmi.hpp"

#include <vector>

namespace metmap::detail {

struct LnTape {
    Mat xhat;                 // normalized input, pre gain/bias
    Eigen::VectorXd inv_std;  // one per row
};

struct DropTape {
    Mat mask;            // 0 or 1/(1-p)
    bool active = false;
};

struct AttTape {
    Mat xq, xkv;   // inputs
    Mat q, k, v;   // projections
    Mat a;         // softmax weights
    Mat ctx;       // a·v (pre output projection)
};

struct FfTape {
    Mat x, h_pre, h;
};

struct EncLayerTape {
    AttTape att;
    DropTape drop1;
    LnTape ln1;
    Mat y1;  // output of first sublayer (input to ff)
    FfTape ff;
    DropTape drop2;
    LnTape ln2;
};

struct DecLayerTape {
    AttTape self_att;
    DropTape drop1;
    LnTape ln1;
    Mat y1;
    AttTape cross_att;
    DropTape drop2;
    LnTape ln2;
    Mat y2;
    FfTape ff;
    DropTape drop3;
    LnTape ln3;
};

// Interaction (no output projection) + gate tapes.
struct InteractTape {
    Mat f_text, f_image;
    Mat q, k, v, a;
};

struct FuseTape {
    Mat f_text, f_attn, alpha;
};

Mat embed_sequence(const std::vector<int>& ids, const MmiParams& p);

Mat layer_norm_fwd(const Mat& x, const LayerNormParams& ln, LnTape* tape);
Mat dropout_fwd(const Mat& x, double rate, RunMode mode, SplitMix64* rng, DropTape* tape);
Mat attention_fwd(const Mat& xq, const Mat& xkv, const AttentionParams& ap, bool causal,
                  AttTape* tape);
Mat feed_forward_fwd(const Mat& x, const FeedForwardParams& fp, FfTape* tape);

Mat encoder_fwd(const Mat& x0, const MmiParams& p, RunMode mode, SplitMix64* rng,
                std::vector<EncLayerTape>* tapes);
Mat decoder_fwd(const Mat& x0, const Mat& f_fuse, const MmiParams& p, RunMode mode,
                SplitMix64* rng, std::vector<DecLayerTape>* tapes);

Mat interact_fwd(const Mat& f_text, const Mat& f_image, const MmiParams& p, InteractTape* tape);
Mat fuse_fwd(const Mat& f_text, const Mat& f_attn, const MmiParams& p, FuseTape* tape);

// Backward passes. Each accumulates parameter gradients into the matching
// grads field and returns/accumulates input gradients.
Mat layer_norm_bwd(const Mat& dy, const LayerNormParams& ln, const LnTape& tape,
                   LayerNormParams& grads);
Mat dropout_bwd(const Mat& dy, const DropTape& tape);
void attention_bwd(const Mat& dout, const AttentionParams& ap, const AttTape& tape,
                   AttentionParams& grads, Mat& dxq, Mat& dxkv);
Mat feed_forward_bwd(const Mat& dout, const FeedForwardParams& fp, const FfTape& tape,
                     FeedForwardParams& grads);

Mat encoder_bwd(const Mat& dy, const MmiParams& p, const std::vector<EncLayerTape>& tapes,
                MmiParams& grads);
// Returns gradient wrt decoder input; accumulates d(f_fuse) into dfuse.
Mat decoder_bwd(const Mat& dy, const MmiParams& p, const std::vector<DecLayerTape>& tapes,
                MmiParams& grads, Mat& dfuse);

void interact_bwd(const Mat& dattn, const MmiParams& p, const InteractTape& tape, MmiParams& grads,
                  Mat& df_text, Mat& df_image);
void fuse_bwd(const Mat& dfuse, const MmiParams& p, const FuseTape& tape, MmiParams& grads,
              Mat& df_text, Mat& df_attn);

double gelu(double x);
double gelu_grad(double x);

}  // namespace metmap::detail
