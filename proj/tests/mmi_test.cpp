#include <doctest.h>

#include "metmap/mmi.hpp"
#include "test_util.hpp"

#include <array>
#include <cmath>
#include <vector>

using namespace metmap;

namespace {

MmiHyper small_hyper(int d = 8, int v = 16, int enc = 1, int dec = 1) {
    MmiHyper h;
    h.vocab_size = v;
    h.d_model = d;
    h.d_ff = 4 * d;
    h.n_enc_layers = enc;
    h.n_dec_layers = dec;
    h.max_input_len = 8;
    h.max_output_len = 4;
    h.patch_size = 2;
    h.channels = 1;
    h.dropout = 0.0;
    return h;
}

TokenSequence seq(std::vector<int> ids) {
    TokenSequence s;
    s.ids = std::move(ids);
    return s;
}

// ---------------------------------------------------------------------------
// Independent straight-line reference for the tiny decoder transcript test.
// Plain loops, no shared code with the library implementation.
// ---------------------------------------------------------------------------

using Vec2 = std::array<double, 2>;

double ref_gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

std::vector<Vec2> ref_layer_norm(const std::vector<Vec2>& x, const Vec2& gain, const Vec2& bias) {
    std::vector<Vec2> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double mean = (x[i][0] + x[i][1]) / 2.0;
        double var = ((x[i][0] - mean) * (x[i][0] - mean) + (x[i][1] - mean) * (x[i][1] - mean)) / 2.0;
        double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int k = 0; k < 2; ++k) out[i][k] = (x[i][k] - mean) * inv * gain[k] + bias[k];
    }
    return out;
}

Vec2 ref_matvec(const std::array<Vec2, 2>& m_rows, const Vec2& x) {
    // x (row vector) times a 2x2 matrix given by rows.
    return {x[0] * m_rows[0][0] + x[1] * m_rows[1][0], x[0] * m_rows[0][1] + x[1] * m_rows[1][1]};
}

}  // namespace

TEST_SUITE("mmi") {

TEST_CASE("encode_text is deterministic in eval mode") {
    MmiParams p = MmiParams::init(small_hyper(), 1);
    Mat a = encode_text(seq({5, 6, 7}), p, RunMode::kEval);
    Mat b = encode_text(seq({5, 6, 7}), p, RunMode::kEval);
    CHECK(a.rows() == 3);
    CHECK(a.cols() == 8);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-token input yields a 1 x d matrix") {
    MmiParams p = MmiParams::init(small_hyper(), 2);
    Mat f = encode_text(seq({9}), p, RunMode::kEval);
    CHECK(f.rows() == 1);
    CHECK(f.cols() == 8);
}

TEST_CASE("zero-layer encoder returns embeddings plus positions verbatim") {
    MmiParams p = MmiParams::init(small_hyper(8, 16, /*enc=*/0, /*dec=*/1), 3);
    TokenSequence ids = seq({5, 11, 2});
    Mat f = encode_text(ids, p, RunMode::kEval);
    for (int i = 0; i < 3; ++i) {
        Mat expected = p.embedding.row(ids.ids[static_cast<size_t>(i)]) + p.position.row(i);
        CHECK((f.row(i) - expected).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("input longer than the position table is an error") {
    MmiParams p = MmiParams::init(small_hyper(), 4);
    std::vector<int> long_ids(9, 5);
    CHECK_THROWS_AS(encode_text(seq(long_ids), p, RunMode::kEval), DataError);
    CHECK_THROWS_AS(encode_text(seq({}), p, RunMode::kEval), DataError);
}

TEST_CASE("identical image rows collapse attention to their value projection") {
    MmiParams p = MmiParams::init(small_hyper(), 5);
    SplitMix64 rng(42);
    Mat f_text = xavier_uniform(3, 8, rng);
    Mat row = xavier_uniform(1, 8, rng);
    Mat f_image(4, 8);
    for (int i = 0; i < 4; ++i) f_image.row(i) = row.row(0);
    Mat f_attn = cross_attend(f_text, f_image, p);
    Mat expected = row * p.cross_wv;
    for (int i = 0; i < 3; ++i) {
        CHECK((f_attn.row(i) - expected.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("hand-computed single-head attention value") {
    // d=1, identity projections, F_text=[1], F_image=[[1],[3]]:
    // scores [1,3], weights e^1,e^3 normalized, output 1 + 2*sigmoid(2).
    MmiHyper h = small_hyper(1, 5);
    MmiParams p = MmiParams::init(h, 6);
    p.cross_wq = Mat::Identity(1, 1);
    p.cross_wk = Mat::Identity(1, 1);
    p.cross_wv = Mat::Identity(1, 1);
    Mat f_text(1, 1), f_image(2, 1);
    f_text << 1.0;
    f_image << 1.0, 3.0;
    Mat f_attn = cross_attend(f_text, f_image, p);
    double w_hi = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(f_attn(0, 0) == doctest::Approx(1.0 + 2.0 * w_hi).epsilon(1e-12));
    CHECK(f_attn(0, 0) == doctest::Approx(2.7615941559557649).epsilon(1e-9));
}

TEST_CASE("equal keys with distinct values average the value rows") {
    MmiHyper h = small_hyper();
    MmiParams p = MmiParams::init(h, 7);
    p.cross_wk = Mat::Zero(8, 8);       // all keys identical -> uniform weights
    p.cross_wv = Mat::Identity(8, 8);
    SplitMix64 rng(1);
    Mat f_text = xavier_uniform(2, 8, rng);
    Mat f_image = xavier_uniform(5, 8, rng);
    Mat f_attn = cross_attend(f_text, f_image, p);
    Mat mean = f_image.colwise().mean();
    for (int i = 0; i < 2; ++i) {
        CHECK((f_attn.row(i) - mean.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("softmax rows sum to one over random instances") {
    SplitMix64 rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 1 + static_cast<int>(rng.next_below(6));
        int m = 1 + static_cast<int>(rng.next_below(6));
        Mat scores(n, m);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) scores(i, j) = rng.uniform(-100.0, 100.0);
        }
        Mat a = softmax_rows(scores);
        for (int i = 0; i < n; ++i) {
            CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-6);
            for (int j = 0; j < m; ++j) CHECK(a(i, j) >= 0.0);
        }
    }
}

TEST_CASE("zero gate weights blend text and attention equally") {
    MmiHyper h = small_hyper();
    MmiParams p = MmiParams::init(h, 8);
    p.gate_wt.setZero();
    p.gate_wv.setZero();
    p.gate_b.setZero();
    SplitMix64 rng(2);
    Mat f_text = xavier_uniform(3, 8, rng);
    Mat f_attn = xavier_uniform(3, 8, rng);
    Mat fuse = gated_fuse(f_text, f_attn, p);
    Mat mean = (f_text + f_attn) / 2.0;
    CHECK((fuse - mean).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fusing equal inputs returns them unchanged") {
    MmiParams p = MmiParams::init(small_hyper(), 9);
    SplitMix64 rng(3);
    Mat f = xavier_uniform(4, 8, rng);
    Mat fuse = gated_fuse(f, f, p);
    CHECK((fuse - f).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("large gate bias saturates toward the attention branch") {
    MmiParams p = MmiParams::init(small_hyper(), 10);
    p.gate_wt.setZero();
    p.gate_wv.setZero();
    p.gate_b.setConstant(50.0);
    SplitMix64 rng(4);
    Mat f_text = xavier_uniform(3, 8, rng);
    Mat f_attn = xavier_uniform(3, 8, rng);
    Mat fuse = gated_fuse(f_text, f_attn, p);
    CHECK((fuse - f_attn).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fusion stays strictly inside the segment between its inputs") {
    SplitMix64 rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        MmiParams p = MmiParams::init(small_hyper(4, 8), 100 + trial);
        Mat f_text = xavier_uniform(2, 4, rng);
        Mat f_attn = xavier_uniform(2, 4, rng);
        Mat fuse = gated_fuse(f_text, f_attn, p);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 4; ++j) {
                double span = f_attn(i, j) - f_text(i, j);
                if (std::abs(span) < 1e-9) continue;
                double alpha = (fuse(i, j) - f_text(i, j)) / span;
                CHECK(alpha > 0.0);
                CHECK(alpha < 1.0);
            }
        }
    }
}

TEST_CASE("gate shape mismatch is an error") {
    MmiParams p = MmiParams::init(small_hyper(), 11);
    Mat a = Mat::Zero(2, 8), b = Mat::Zero(3, 8);
    CHECK_THROWS_AS(gated_fuse(a, b, p), DataError);
}

TEST_CASE("an output bias forcing EOS stops decoding immediately") {
    MmiParams p = MmiParams::init(small_hyper(), 12);
    p.out_proj.setZero();
    p.out_bias.setZero();
    p.out_bias(0, EOS) = 10.0;
    Mat f_fuse = Mat::Ones(2, 8);
    TokenSequence out = decode_greedy(f_fuse, p, 4);
    CHECK(out.empty());
}

TEST_CASE("decoding never exceeds max_out") {
    MmiParams p = MmiParams::init(small_hyper(), 13);
    p.hyper.max_output_len = 16;
    p.out_proj.setZero();
    p.out_bias.setZero();
    p.out_bias(0, 7) = 10.0;  // always emit token 7, never EOS
    // Position table must cover the longest prefix.
    SplitMix64 prng(14);
    p.position = xavier_uniform(32, 8, prng);
    Mat f_fuse = Mat::Ones(2, 8);
    TokenSequence out = decode_greedy(f_fuse, p, 16);
    CHECK(out.length() == 16);
    for (int id : out.ids) CHECK(id == 7);
}

TEST_CASE("decoding is invariant to a constant logit shift") {
    MmiParams p = MmiParams::init(small_hyper(), 15);
    SplitMix64 rng(6);
    Mat f_fuse = xavier_uniform(3, 8, rng);
    TokenSequence a = decode_greedy(f_fuse, p, 4);
    p.out_bias.array() += 7.25;
    TokenSequence b = decode_greedy(f_fuse, p, 4);
    CHECK(a.ids == b.ids);
}

TEST_CASE("argmax ties break toward the lowest token id") {
    MmiParams p = MmiParams::init(small_hyper(), 16);
    p.out_proj.setZero();
    p.out_bias.setZero();  // every logit equal -> id 0 (PAD) wins the tie
    Mat f_fuse = Mat::Ones(1, 8);
    TokenSequence out = decode_greedy(f_fuse, p, 2);
    REQUIRE(out.length() == 2);
    CHECK(out.ids[0] == PAD);
}

TEST_CASE("tiny fixed-weight decoder matches an independent transcript") {
    // d=2, V=6, one decoder layer, fixed small weights. The reference below
    // recomputes each decoding step with plain scalar arithmetic.
    MmiHyper h;
    h.vocab_size = 6;
    h.d_model = 2;
    h.d_ff = 3;
    h.n_enc_layers = 0;
    h.n_dec_layers = 1;
    h.max_input_len = 4;
    h.max_output_len = 4;
    h.patch_size = 2;
    h.channels = 1;
    MmiParams p = MmiParams::init(h, 0);

    p.embedding << 0.10, -0.20,
                   0.30, 0.40,   // BOS
                   -0.50, 0.60,
                   0.70, -0.80,
                   0.15, 0.25,
                   -0.35, 0.45;
    p.position.setZero();
    p.position.row(0) << 0.05, -0.05;
    p.position.row(1) << 0.10, 0.10;
    p.position.row(2) << -0.10, 0.20;
    p.position.row(3) << 0.20, -0.15;

    auto& L = p.decoder[0];
    L.self_attn.wq << 0.5, -0.25, 0.75, 0.5;
    L.self_attn.wk << -0.5, 0.25, 0.5, 1.0;
    L.self_attn.wv << 1.0, 0.5, -0.5, 0.25;
    L.self_attn.wo << 0.25, -0.5, 0.5, 0.75;
    L.ln1.gain << 1.1, 0.9;
    L.ln1.bias << 0.01, -0.02;
    L.cross_attn.wq << 0.6, 0.4, -0.2, 0.8;
    L.cross_attn.wk << 0.3, -0.7, 0.9, 0.1;
    L.cross_attn.wv << -0.4, 0.6, 0.2, -0.8;
    L.cross_attn.wo << 0.7, 0.2, -0.3, 0.5;
    L.ln2.gain << 0.95, 1.05;
    L.ln2.bias << -0.03, 0.02;
    L.ff.w1 << 0.4, -0.6, 0.2, 0.8, 0.1, -0.3;
    L.ff.b1 << 0.05, -0.05, 0.10;
    L.ff.w2 << 0.5, -0.2, 0.3, 0.6, -0.4, 0.1;
    L.ff.b2 << 0.02, -0.01;
    L.ln3.gain << 1.0, 1.0;
    L.ln3.bias << 0.0, 0.0;

    p.out_proj << 0.8, -0.6, 0.4, 0.2, -0.5, 0.3,
                  -0.7, 0.9, 0.1, -0.2, 0.6, -0.4;
    p.out_bias << 0.01, -0.3, -0.25, 0.02, 0.05, -0.02;

    Mat f_fuse(2, 2);
    f_fuse << 0.3, -0.4,
              -0.1, 0.6;

    // ------------------ independent transcript ------------------
    auto ref_step = [&](const std::vector<int>& prefix) {
        size_t n = prefix.size();
        std::vector<Vec2> x(n);
        for (size_t i = 0; i < n; ++i) {
            for (int k = 0; k < 2; ++k) {
                x[i][k] = p.embedding(prefix[i], k) + p.position(static_cast<int>(i), k);
            }
        }
        auto mat_rows = [](const Mat& m) {
            return std::array<Vec2, 2>{Vec2{m(0, 0), m(0, 1)}, Vec2{m(1, 0), m(1, 1)}};
        };
        const double scale = 1.0 / std::sqrt(2.0);

        // causal self-attention + output projection
        std::vector<Vec2> q(n), k(n), v(n), att(n);
        for (size_t i = 0; i < n; ++i) {
            q[i] = ref_matvec(mat_rows(L.self_attn.wq), x[i]);
            k[i] = ref_matvec(mat_rows(L.self_attn.wk), x[i]);
            v[i] = ref_matvec(mat_rows(L.self_attn.wv), x[i]);
        }
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> w(i + 1);
            double mx = -1e300;
            for (size_t j = 0; j <= i; ++j) {
                w[j] = (q[i][0] * k[j][0] + q[i][1] * k[j][1]) * scale;
                mx = std::max(mx, w[j]);
            }
            double sum = 0.0;
            for (size_t j = 0; j <= i; ++j) {
                w[j] = std::exp(w[j] - mx);
                sum += w[j];
            }
            Vec2 ctx{0.0, 0.0};
            for (size_t j = 0; j <= i; ++j) {
                ctx[0] += w[j] / sum * v[j][0];
                ctx[1] += w[j] / sum * v[j][1];
            }
            att[i] = ref_matvec(mat_rows(L.self_attn.wo), ctx);
        }
        std::vector<Vec2> res1(n);
        for (size_t i = 0; i < n; ++i) {
            res1[i] = {x[i][0] + att[i][0], x[i][1] + att[i][1]};
        }
        auto y1 = ref_layer_norm(res1, {L.ln1.gain(0, 0), L.ln1.gain(0, 1)},
                                 {L.ln1.bias(0, 0), L.ln1.bias(0, 1)});

        // cross-attention over f_fuse
        std::vector<Vec2> cross(n);
        Vec2 fk[2], fv[2];
        for (int j = 0; j < 2; ++j) {
            Vec2 frow{f_fuse(j, 0), f_fuse(j, 1)};
            fk[j] = ref_matvec(mat_rows(L.cross_attn.wk), frow);
            fv[j] = ref_matvec(mat_rows(L.cross_attn.wv), frow);
        }
        for (size_t i = 0; i < n; ++i) {
            Vec2 qq = ref_matvec(mat_rows(L.cross_attn.wq), y1[i]);
            double s0 = (qq[0] * fk[0][0] + qq[1] * fk[0][1]) * scale;
            double s1 = (qq[0] * fk[1][0] + qq[1] * fk[1][1]) * scale;
            double mx = std::max(s0, s1);
            double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
            double sum = e0 + e1;
            Vec2 ctx{e0 / sum * fv[0][0] + e1 / sum * fv[1][0],
                     e0 / sum * fv[0][1] + e1 / sum * fv[1][1]};
            cross[i] = ref_matvec(mat_rows(L.cross_attn.wo), ctx);
        }
        std::vector<Vec2> res2(n);
        for (size_t i = 0; i < n; ++i) {
            res2[i] = {y1[i][0] + cross[i][0], y1[i][1] + cross[i][1]};
        }
        auto y2 = ref_layer_norm(res2, {L.ln2.gain(0, 0), L.ln2.gain(0, 1)},
                                 {L.ln2.bias(0, 0), L.ln2.bias(0, 1)});

        // feed-forward (gelu)
        std::vector<Vec2> res3(n);
        for (size_t i = 0; i < n; ++i) {
            double hdd[3];
            for (int u = 0; u < 3; ++u) {
                hdd[u] = ref_gelu(y2[i][0] * L.ff.w1(0, u) + y2[i][1] * L.ff.w1(1, u) +
                                  L.ff.b1(0, u));
            }
            Vec2 f{0.0, 0.0};
            for (int kk = 0; kk < 2; ++kk) {
                f[kk] = hdd[0] * L.ff.w2(0, kk) + hdd[1] * L.ff.w2(1, kk) +
                        hdd[2] * L.ff.w2(2, kk) + L.ff.b2(0, kk);
            }
            res3[i] = {y2[i][0] + f[0], y2[i][1] + f[1]};
        }
        auto y3 = ref_layer_norm(res3, {L.ln3.gain(0, 0), L.ln3.gain(0, 1)},
                                 {L.ln3.bias(0, 0), L.ln3.bias(0, 1)});

        // logits of the last position, argmax with lowest-id ties
        const Vec2& last = y3.back();
        int best = 0;
        double best_logit = -1e300;
        for (int vtok = 0; vtok < 6; ++vtok) {
            double logit = last[0] * p.out_proj(0, vtok) + last[1] * p.out_proj(1, vtok) +
                           p.out_bias(0, vtok);
            if (logit > best_logit) {
                best_logit = logit;
                best = vtok;
            }
        }
        return best;
    };

    std::vector<int> ref_emitted;
    std::vector<int> prefix{BOS};
    for (int step = 0; step < 4; ++step) {
        int next = ref_step(prefix);
        if (next == EOS) break;
        ref_emitted.push_back(next);
        prefix.push_back(next);
    }

    TokenSequence out = decode_greedy(f_fuse, p, 4);
    CHECK(out.ids == ref_emitted);
    CHECK_FALSE(out.ids.empty());
}

TEST_CASE("mmi_forward is deterministic and respects the output cap") {
    MmiParams p = MmiParams::init(small_hyper(), 17);
    Raster img = testutil::pattern_raster(3, 4, 4, 1);
    TokenSequence ids = seq({5, 6, 3, 9});
    TokenSequence a = mmi_forward(ids, img, p, RunMode::kEval);
    TokenSequence b = mmi_forward(ids, img, p, RunMode::kEval);
    CHECK(a.ids == b.ids);
    CHECK(a.length() <= p.hyper.max_output_len);
}

TEST_CASE("mmi_forward adapts rasters to the model channel count") {
    MmiParams p = MmiParams::init(small_hyper(), 18);  // expects 1 channel
    Raster rgb = testutil::pattern_raster(3, 4, 4, 3);
    TokenSequence out = mmi_forward(seq({5}), rgb, p, RunMode::kEval);
    CHECK(out.length() <= p.hyper.max_output_len);
}

TEST_CASE("checkpoints round-trip byte-identically") {
    MmiParams p = MmiParams::init(small_hyper(8, 16, 2, 2), 19);
    std::string dir = testutil::temp_dir("ckpt");
    save_checkpoint(p, dir + "/a", "hash123");
    MmiParams loaded = load_checkpoint(dir + "/a", "hash123");
    save_checkpoint(loaded, dir + "/b", "hash123");

    for (const auto& [name, mat] : p.tensors()) {
        std::string fa = read_file(dir + "/a/" + name + ".bin");
        std::string fb = read_file(dir + "/b/" + name + ".bin");
        CHECK(fa == fb);
        CHECK(fa.size() == static_cast<size_t>(mat->size()) * 4);
    }
    CHECK(read_file(dir + "/a/manifest.json") == read_file(dir + "/b/manifest.json"));
}

TEST_CASE("checkpoint vocab hash mismatch is an error") {
    MmiParams p = MmiParams::init(small_hyper(), 20);
    std::string dir = testutil::temp_dir("ckpt_hash");
    save_checkpoint(p, dir, "expected");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir, "other"), doctest::Contains("different vocab"),
                         DataError);
    CHECK_THROWS_AS(load_checkpoint(dir + "/nope"), DataError);
}

}  // TEST_SUITE
