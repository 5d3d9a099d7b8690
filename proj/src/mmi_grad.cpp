#include "metmap/mmi_grad.hpp"

#include "mmi_internal.hpp"

#include <cmath>

namespace metmap {

namespace detail {

Mat layer_norm_bwd(const Mat& dy, const LayerNormParams& ln, const LnTape& tape,
                   LayerNormParams& grads) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    grads.gain += dy.cwiseProduct(tape.xhat).colwise().sum();
    grads.bias += dy.colwise().sum();

    Mat dxhat = dy.array().rowwise() * ln.gain.row(0).array();
    Mat dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        double sum_dxhat = dxhat.row(i).sum();
        double sum_dxhat_xhat = dxhat.row(i).cwiseProduct(tape.xhat.row(i)).sum();
        dx.row(i) = (tape.inv_std(i) / static_cast<double>(d)) *
                    (static_cast<double>(d) * dxhat.row(i).array() - sum_dxhat -
                     tape.xhat.row(i).array() * sum_dxhat_xhat);
    }
    return dx;
}

Mat dropout_bwd(const Mat& dy, const DropTape& tape) {
    if (!tape.active) return dy;
    return dy.cwiseProduct(tape.mask);
}

void attention_bwd(const Mat& dout, const AttentionParams& ap, const AttTape& tape,
                   AttentionParams& grads, Mat& dxq, Mat& dxkv) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(tape.xq.cols()));
    grads.wo += tape.ctx.transpose() * dout;
    Mat dctx = dout * ap.wo.transpose();
    Mat da = dctx * tape.v.transpose();
    Mat dv = tape.a.transpose() * dctx;
    Mat ds = softmax_rows_backward(tape.a, da) * scale;
    Mat dq = ds * tape.k;
    Mat dk = ds.transpose() * tape.q;
    grads.wq += tape.xq.transpose() * dq;
    grads.wk += tape.xkv.transpose() * dk;
    grads.wv += tape.xkv.transpose() * dv;
    dxq += dq * ap.wq.transpose();
    dxkv += dk * ap.wk.transpose() + dv * ap.wv.transpose();
}

Mat feed_forward_bwd(const Mat& dout, const FeedForwardParams& fp, const FfTape& tape,
                     FeedForwardParams& grads) {
    grads.b2 += dout.colwise().sum();
    grads.w2 += tape.h.transpose() * dout;
    Mat dh = dout * fp.w2.transpose();
    Mat dh_pre = dh.cwiseProduct(tape.h_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    grads.b1 += dh_pre.colwise().sum();
    grads.w1 += tape.x.transpose() * dh_pre;
    return dh_pre * fp.w1.transpose();
}

Mat encoder_bwd(const Mat& dy_top, const MmiParams& p, const std::vector<EncLayerTape>& tapes,
                MmiParams& grads) {
    Mat dy = dy_top;
    for (size_t idx = p.encoder.size(); idx-- > 0;) {
        const auto& layer = p.encoder[idx];
        auto& g = grads.encoder[idx];
        const auto& t = tapes[idx];

        Mat d_res2 = layer_norm_bwd(dy, layer.ln2, t.ln2, g.ln2);
        Mat d_ff_out = dropout_bwd(d_res2, t.drop2);
        Mat dy1 = d_res2 + feed_forward_bwd(d_ff_out, layer.ff, t.ff, g.ff);

        Mat d_res1 = layer_norm_bwd(dy1, layer.ln1, t.ln1, g.ln1);
        Mat d_att_out = dropout_bwd(d_res1, t.drop1);
        Mat dx = d_res1;
        attention_bwd(d_att_out, layer.attn, t.att, g.attn, dx, dx);
        dy = std::move(dx);
    }
    return dy;
}

Mat decoder_bwd(const Mat& dy_top, const MmiParams& p, const std::vector<DecLayerTape>& tapes,
                MmiParams& grads, Mat& dfuse) {
    Mat dy = dy_top;
    for (size_t idx = p.decoder.size(); idx-- > 0;) {
        const auto& layer = p.decoder[idx];
        auto& g = grads.decoder[idx];
        const auto& t = tapes[idx];

        Mat d_res3 = layer_norm_bwd(dy, layer.ln3, t.ln3, g.ln3);
        Mat d_ff_out = dropout_bwd(d_res3, t.drop3);
        Mat dy2 = d_res3 + feed_forward_bwd(d_ff_out, layer.ff, t.ff, g.ff);

        Mat d_res2 = layer_norm_bwd(dy2, layer.ln2, t.ln2, g.ln2);
        Mat d_cross_out = dropout_bwd(d_res2, t.drop2);
        Mat dy1 = d_res2;
        attention_bwd(d_cross_out, layer.cross_attn, t.cross_att, g.cross_attn, dy1, dfuse);

        Mat d_res1 = layer_norm_bwd(dy1, layer.ln1, t.ln1, g.ln1);
        Mat d_att_out = dropout_bwd(d_res1, t.drop1);
        Mat dx = d_res1;
        attention_bwd(d_att_out, layer.self_attn, t.self_att, g.self_attn, dx, dx);
        dy = std::move(dx);
    }
    return dy;
}

void interact_bwd(const Mat& dattn, const MmiParams& p, const InteractTape& tape, MmiParams& grads,
                  Mat& df_text, Mat& df_image) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.hyper.d_model));
    Mat da = dattn * tape.v.transpose();
    Mat dv = tape.a.transpose() * dattn;
    Mat ds = softmax_rows_backward(tape.a, da) * scale;
    Mat dq = ds * tape.k;
    Mat dk = ds.transpose() * tape.q;
    grads.cross_wq += tape.f_text.transpose() * dq;
    grads.cross_wk += tape.f_image.transpose() * dk;
    grads.cross_wv += tape.f_image.transpose() * dv;
    df_text += dq * p.cross_wq.transpose();
    df_image += dk * p.cross_wk.transpose() + dv * p.cross_wv.transpose();
}

void fuse_bwd(const Mat& dfuse, const MmiParams& p, const FuseTape& tape, MmiParams& grads,
              Mat& df_text, Mat& df_attn) {
    const Mat& alpha = tape.alpha;
    Mat one_minus = Mat::Ones(alpha.rows(), alpha.cols()) - alpha;
    df_text += dfuse.cwiseProduct(one_minus);
    df_attn += dfuse.cwiseProduct(alpha);
    Mat dalpha = dfuse.cwiseProduct(tape.f_attn - tape.f_text);
    Mat dpre = dalpha.cwiseProduct(alpha).cwiseProduct(one_minus);
    grads.gate_wt += tape.f_text.transpose() * dpre;
    grads.gate_wv += tape.f_attn.transpose() * dpre;
    grads.gate_b += dpre.colwise().sum();
    df_text += dpre * p.gate_wt.transpose();
    df_attn += dpre * p.gate_wv.transpose();
}

}  // namespace detail

namespace {

using namespace detail;

// Stable per-row log-sum-exp pieces reused by loss and gradient.
double row_logsumexp(const Mat& logits, Eigen::Index row) {
    double m = logits.row(row).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(logits(row, j) - m);
    return m + std::log(sum);
}

struct ForwardState {
    Mat f_text, f_image, f_attn, f_fuse, dec_h, logits;
    std::vector<EncLayerTape> enc_tapes;
    std::vector<DecLayerTape> dec_tapes;
    InteractTape interact;
    FuseTape fuse;
};

ForwardState run_forward(const MmiParams& params, const TrainExample& ex, RunMode mode,
                         SplitMix64* rng, bool with_tape) {
    if (ex.decoder_input.size() != ex.gold.size() || ex.gold.empty()) {
        throw DataError("training example: decoder_input and gold lengths differ or are empty");
    }
    if (ex.patches.cols() != params.hyper.patch_dim()) {
        throw DataError("training example: patch width mismatch");
    }
    ForwardState st;
    Mat enc_x = embed_sequence(ex.input_ids.ids, params);
    st.f_text = encoder_fwd(enc_x, params, mode, rng, with_tape ? &st.enc_tapes : nullptr);
    st.f_image = ex.patches * params.patch_proj;
    st.f_attn = interact_fwd(st.f_text, st.f_image, params, with_tape ? &st.interact : nullptr);
    st.f_fuse = fuse_fwd(st.f_text, st.f_attn, params, with_tape ? &st.fuse : nullptr);
    Mat dec_x = embed_sequence(ex.decoder_input, params);
    st.dec_h = decoder_fwd(dec_x, st.f_fuse, params, mode, rng, with_tape ? &st.dec_tapes : nullptr);
    st.logits = st.dec_h * params.out_proj;
    st.logits.array().rowwise() += params.out_bias.row(0).array();
    return st;
}

}  // namespace

double cross_entropy_loss(const Mat& logits, const std::vector<int>& gold) {
    if (static_cast<size_t>(logits.rows()) != gold.size()) {
        throw DataError("cross_entropy_loss: logits rows (" + std::to_string(logits.rows()) +
                        ") != gold length (" + std::to_string(gold.size()) + ")");
    }
    double total = 0.0;
    int count = 0;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        int g = gold[static_cast<size_t>(t)];
        if (g == PAD) continue;
        if (g < 0 || g >= logits.cols()) {
            throw DataError("cross_entropy_loss: gold id out of range");
        }
        total += row_logsumexp(logits, t) - logits(t, g);
        ++count;
    }
    return count == 0 ? 0.0 : total / count;
}

double loss_and_gradients(const MmiParams& params, const std::vector<TrainExample>& batch,
                          MmiParams& grads, RunMode mode, SplitMix64* rng) {
    if (batch.empty()) throw DataError("loss_and_gradients: empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const int d = params.hyper.d_model;
    double total_loss = 0.0;

    for (const TrainExample& ex : batch) {
        ForwardState st = run_forward(params, ex, mode, rng, /*with_tape=*/true);
        total_loss += cross_entropy_loss(st.logits, ex.gold) * inv_batch;

        int n_unmasked = 0;
        for (int g : ex.gold) {
            if (g != PAD) ++n_unmasked;
        }
        if (n_unmasked == 0) continue;

        // dL/dlogits, already scaled by 1/batch so everything downstream
        // accumulates batch-mean gradients.
        Mat dlogits = Mat::Zero(st.logits.rows(), st.logits.cols());
        const double w = inv_batch / n_unmasked;
        for (Eigen::Index t = 0; t < st.logits.rows(); ++t) {
            int g = ex.gold[static_cast<size_t>(t)];
            if (g == PAD) continue;
            double lse = row_logsumexp(st.logits, t);
            for (Eigen::Index j = 0; j < st.logits.cols(); ++j) {
                dlogits(t, j) = std::exp(st.logits(t, j) - lse) * w;
            }
            dlogits(t, g) -= w;
        }

        grads.out_bias += dlogits.colwise().sum();
        grads.out_proj += st.dec_h.transpose() * dlogits;
        Mat d_dec_h = dlogits * params.out_proj.transpose();

        Mat dfuse = Mat::Zero(st.f_fuse.rows(), d);
        Mat d_dec_x = decoder_bwd(d_dec_h, params, st.dec_tapes, grads, dfuse);
        for (size_t t = 0; t < ex.decoder_input.size(); ++t) {
            grads.embedding.row(ex.decoder_input[t]) += d_dec_x.row(static_cast<Eigen::Index>(t));
            grads.position.row(static_cast<Eigen::Index>(t)) +=
                d_dec_x.row(static_cast<Eigen::Index>(t));
        }

        Mat df_text = Mat::Zero(st.f_text.rows(), d);
        Mat df_attn = Mat::Zero(st.f_attn.rows(), d);
        fuse_bwd(dfuse, params, st.fuse, grads, df_text, df_attn);

        Mat df_image = Mat::Zero(st.f_image.rows(), d);
        interact_bwd(df_attn, params, st.interact, grads, df_text, df_image);
        grads.patch_proj += ex.patches.transpose() * df_image;

        Mat d_enc_x = encoder_bwd(df_text, params, st.enc_tapes, grads);
        for (size_t t = 0; t < ex.input_ids.ids.size(); ++t) {
            grads.embedding.row(ex.input_ids.ids[t]) += d_enc_x.row(static_cast<Eigen::Index>(t));
            grads.position.row(static_cast<Eigen::Index>(t)) +=
                d_enc_x.row(static_cast<Eigen::Index>(t));
        }
    }
    return total_loss;
}

double batch_loss(const MmiParams& params, const std::vector<TrainExample>& batch) {
    if (batch.empty()) throw DataError("batch_loss: empty batch");
    double total = 0.0;
    for (const TrainExample& ex : batch) {
        ForwardState st = run_forward(params, ex, RunMode::kEval, nullptr, /*with_tape=*/false);
        total += cross_entropy_loss(st.logits, ex.gold);
    }
    return total / static_cast<double>(batch.size());
}

}  // namespace metmap
