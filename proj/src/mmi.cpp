#include "metmap/mmi.hpp"

#include "metmap/vision.hpp"
#include "mmi_internal.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace metmap {

using nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e30;

template <typename ParamsT, typename Fn>
void visit_params(ParamsT& p, Fn&& fn) {
    fn("embedding", p.embedding);
    fn("position", p.position);
    for (size_t i = 0; i < p.encoder.size(); ++i) {
        auto& layer = p.encoder[i];
        std::string pre = "enc." + std::to_string(i) + ".";
        fn(pre + "attn.wq", layer.attn.wq);
        fn(pre + "attn.wk", layer.attn.wk);
        fn(pre + "attn.wv", layer.attn.wv);
        fn(pre + "attn.wo", layer.attn.wo);
        fn(pre + "ln1.gain", layer.ln1.gain);
        fn(pre + "ln1.bias", layer.ln1.bias);
        fn(pre + "ff.w1", layer.ff.w1);
        fn(pre + "ff.b1", layer.ff.b1);
        fn(pre + "ff.w2", layer.ff.w2);
        fn(pre + "ff.b2", layer.ff.b2);
        fn(pre + "ln2.gain", layer.ln2.gain);
        fn(pre + "ln2.bias", layer.ln2.bias);
    }
    fn("cross.wq", p.cross_wq);
    fn("cross.wk", p.cross_wk);
    fn("cross.wv", p.cross_wv);
    fn("gate.wt", p.gate_wt);
    fn("gate.wv", p.gate_wv);
    fn("gate.b", p.gate_b);
    fn("patch_proj", p.patch_proj);
    for (size_t i = 0; i < p.decoder.size(); ++i) {
        auto& layer = p.decoder[i];
        std::string pre = "dec." + std::to_string(i) + ".";
        fn(pre + "self.wq", layer.self_attn.wq);
        fn(pre + "self.wk", layer.self_attn.wk);
        fn(pre + "self.wv", layer.self_attn.wv);
        fn(pre + "self.wo", layer.self_attn.wo);
        fn(pre + "ln1.gain", layer.ln1.gain);
        fn(pre + "ln1.bias", layer.ln1.bias);
        fn(pre + "cross.wq", layer.cross_attn.wq);
        fn(pre + "cross.wk", layer.cross_attn.wk);
        fn(pre + "cross.wv", layer.cross_attn.wv);
        fn(pre + "cross.wo", layer.cross_attn.wo);
        fn(pre + "ln2.gain", layer.ln2.gain);
        fn(pre + "ln2.bias", layer.ln2.bias);
        fn(pre + "ff.w1", layer.ff.w1);
        fn(pre + "ff.b1", layer.ff.b1);
        fn(pre + "ff.w2", layer.ff.w2);
        fn(pre + "ff.b2", layer.ff.b2);
        fn(pre + "ln3.gain", layer.ln3.gain);
        fn(pre + "ln3.bias", layer.ln3.bias);
    }
    fn("out.proj", p.out_proj);
    fn("out.bias", p.out_bias);
}

LayerNormParams init_ln(int d) {
    LayerNormParams ln;
    ln.gain = Mat::Ones(1, d);
    ln.bias = Mat::Zero(1, d);
    return ln;
}

AttentionParams init_attn(int d, SplitMix64& rng) {
    AttentionParams a;
    a.wq = xavier_uniform(d, d, rng);
    a.wk = xavier_uniform(d, d, rng);
    a.wv = xavier_uniform(d, d, rng);
    a.wo = xavier_uniform(d, d, rng);
    return a;
}

FeedForwardParams init_ff(int d, int d_ff, SplitMix64& rng) {
    FeedForwardParams f;
    f.w1 = xavier_uniform(d, d_ff, rng);
    f.b1 = Mat::Zero(1, d_ff);
    f.w2 = xavier_uniform(d_ff, d, rng);
    f.b2 = Mat::Zero(1, d);
    return f;
}

}  // namespace

MmiParams MmiParams::init(const MmiHyper& hyper, std::uint64_t seed) {
    if (hyper.vocab_size < kNumSpecials) throw DataError("model init: vocab too small");
    if (hyper.d_model < 1 || hyper.d_ff < 1) throw DataError("model init: bad width");
    if (hyper.dropout < 0.0 || hyper.dropout >= 1.0) {
        throw DataError("model init: dropout must be in [0,1)");
    }
    SplitMix64 rng(seed);
    MmiParams p;
    p.hyper = hyper;
    const int d = hyper.d_model;
    p.embedding = xavier_uniform(hyper.vocab_size, d, rng);
    p.position = xavier_uniform(hyper.max_positions(), d, rng);
    p.encoder.reserve(hyper.n_enc_layers);
    for (int i = 0; i < hyper.n_enc_layers; ++i) {
        EncoderLayerParams layer;
        layer.attn = init_attn(d, rng);
        layer.ln1 = init_ln(d);
        layer.ff = init_ff(d, hyper.d_ff, rng);
        layer.ln2 = init_ln(d);
        p.encoder.push_back(std::move(layer));
    }
    p.cross_wq = xavier_uniform(d, d, rng);
    p.cross_wk = xavier_uniform(d, d, rng);
    p.cross_wv = xavier_uniform(d, d, rng);
    p.gate_wt = xavier_uniform(d, d, rng);
    p.gate_wv = xavier_uniform(d, d, rng);
    p.gate_b = Mat::Zero(1, d);
    p.patch_proj = xavier_uniform(hyper.patch_dim(), d, rng);
    p.decoder.reserve(hyper.n_dec_layers);
    for (int i = 0; i < hyper.n_dec_layers; ++i) {
        DecoderLayerParams layer;
        layer.self_attn = init_attn(d, rng);
        layer.ln1 = init_ln(d);
        layer.cross_attn = init_attn(d, rng);
        layer.ln2 = init_ln(d);
        layer.ff = init_ff(d, hyper.d_ff, rng);
        layer.ln3 = init_ln(d);
        p.decoder.push_back(std::move(layer));
    }
    p.out_proj = xavier_uniform(d, hyper.vocab_size, rng);
    p.out_bias = Mat::Zero(1, hyper.vocab_size);
    return p;
}

MmiParams MmiParams::zeros_like() const {
    MmiParams z = *this;
    visit_params(z, [](const std::string&, Mat& m) { m.setZero(); });
    return z;
}

std::vector<TensorRef> MmiParams::tensors() {
    std::vector<TensorRef> refs;
    visit_params(*this, [&](const std::string& name, Mat& m) { refs.push_back({name, &m}); });
    return refs;
}

std::vector<std::pair<std::string, const Mat*>> MmiParams::tensors() const {
    std::vector<std::pair<std::string, const Mat*>> refs;
    visit_params(*this, [&](const std::string& name, const Mat& m) { refs.emplace_back(name, &m); });
    return refs;
}

namespace detail {

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

Mat embed_sequence(const std::vector<int>& ids, const MmiParams& p) {
    if (ids.empty()) throw DataError("embed_sequence: empty sequence");
    if (static_cast<int>(ids.size()) > p.position.rows()) {
        throw DataError("sequence length " + std::to_string(ids.size()) +
                        " exceeds position table (" + std::to_string(p.position.rows()) + ")");
    }
    Mat x(static_cast<Eigen::Index>(ids.size()), p.hyper.d_model);
    for (size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || id >= p.hyper.vocab_size) {
            throw DataError("token id out of range: " + std::to_string(id));
        }
        x.row(static_cast<Eigen::Index>(i)) =
            p.embedding.row(id) + p.position.row(static_cast<Eigen::Index>(i));
    }
    return x;
}

Mat layer_norm_fwd(const Mat& x, const LayerNormParams& ln, LnTape* tape) {
    const Eigen::Index n = x.rows(), d = x.cols();
    Mat xhat(n, d);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mean = x.row(i).mean();
        double var = (x.row(i).array() - mean).square().mean();
        double is = 1.0 / std::sqrt(var + kLnEps);
        inv_std(i) = is;
        xhat.row(i) = (x.row(i).array() - mean) * is;
    }
    Mat y = xhat.array().rowwise() * ln.gain.row(0).array();
    y.array().rowwise() += ln.bias.row(0).array();
    if (tape) {
        tape->xhat = std::move(xhat);
        tape->inv_std = std::move(inv_std);
    }
    return y;
}

Mat dropout_fwd(const Mat& x, double rate, RunMode mode, SplitMix64* rng, DropTape* tape) {
    if (mode == RunMode::kEval || rate <= 0.0) {
        if (tape) tape->active = false;
        return x;
    }
    if (!rng) throw DataError("dropout in training mode requires an RNG");
    double keep_scale = 1.0 / (1.0 - rate);
    Mat mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            mask(i, j) = rng->next_double() >= rate ? keep_scale : 0.0;
        }
    }
    Mat y = x.cwiseProduct(mask);
    if (tape) {
        tape->mask = std::move(mask);
        tape->active = true;
    }
    return y;
}

Mat attention_fwd(const Mat& xq, const Mat& xkv, const AttentionParams& ap, bool causal,
                  AttTape* tape) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(xq.cols()));
    Mat q = xq * ap.wq;
    Mat k = xkv * ap.wk;
    Mat v = xkv * ap.wv;
    Mat scores = (q * k.transpose()) * scale;
    if (causal) {
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            for (Eigen::Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = kMaskValue;
        }
    }
    Mat a = softmax_rows(scores);
    Mat ctx = a * v;
    Mat out = ctx * ap.wo;
    if (tape) {
        tape->xq = xq;
        tape->xkv = xkv;
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->a = std::move(a);
        tape->ctx = std::move(ctx);
    }
    return out;
}

Mat feed_forward_fwd(const Mat& x, const FeedForwardParams& fp, FfTape* tape) {
    Mat h_pre = x * fp.w1;
    h_pre.array().rowwise() += fp.b1.row(0).array();
    Mat h = h_pre.unaryExpr([](double v) { return gelu(v); });
    Mat out = h * fp.w2;
    out.array().rowwise() += fp.b2.row(0).array();
    if (tape) {
        tape->x = x;
        tape->h_pre = std::move(h_pre);
        tape->h = std::move(h);
    }
    return out;
}

Mat encoder_fwd(const Mat& x0, const MmiParams& p, RunMode mode, SplitMix64* rng,
                std::vector<EncLayerTape>* tapes) {
    Mat x = x0;
    if (tapes) tapes->resize(p.encoder.size());
    for (size_t i = 0; i < p.encoder.size(); ++i) {
        const auto& layer = p.encoder[i];
        EncLayerTape* t = tapes ? &(*tapes)[i] : nullptr;
        Mat att = attention_fwd(x, x, layer.attn, /*causal=*/false, t ? &t->att : nullptr);
        att = dropout_fwd(att, p.hyper.dropout, mode, rng, t ? &t->drop1 : nullptr);
        Mat y1 = layer_norm_fwd(x + att, layer.ln1, t ? &t->ln1 : nullptr);
        if (t) t->y1 = y1;
        Mat ff = feed_forward_fwd(y1, layer.ff, t ? &t->ff : nullptr);
        ff = dropout_fwd(ff, p.hyper.dropout, mode, rng, t ? &t->drop2 : nullptr);
        x = layer_norm_fwd(y1 + ff, layer.ln2, t ? &t->ln2 : nullptr);
    }
    return x;
}

Mat decoder_fwd(const Mat& x0, const Mat& f_fuse, const MmiParams& p, RunMode mode,
                SplitMix64* rng, std::vector<DecLayerTape>* tapes) {
    Mat x = x0;
    if (tapes) tapes->resize(p.decoder.size());
    for (size_t i = 0; i < p.decoder.size(); ++i) {
        const auto& layer = p.decoder[i];
        DecLayerTape* t = tapes ? &(*tapes)[i] : nullptr;
        Mat att = attention_fwd(x, x, layer.self_attn, /*causal=*/true, t ? &t->self_att : nullptr);
        att = dropout_fwd(att, p.hyper.dropout, mode, rng, t ? &t->drop1 : nullptr);
        Mat y1 = layer_norm_fwd(x + att, layer.ln1, t ? &t->ln1 : nullptr);
        if (t) t->y1 = y1;
        Mat cross =
            attention_fwd(y1, f_fuse, layer.cross_attn, /*causal=*/false, t ? &t->cross_att : nullptr);
        cross = dropout_fwd(cross, p.hyper.dropout, mode, rng, t ? &t->drop2 : nullptr);
        Mat y2 = layer_norm_fwd(y1 + cross, layer.ln2, t ? &t->ln2 : nullptr);
        if (t) t->y2 = y2;
        Mat ff = feed_forward_fwd(y2, layer.ff, t ? &t->ff : nullptr);
        ff = dropout_fwd(ff, p.hyper.dropout, mode, rng, t ? &t->drop3 : nullptr);
        x = layer_norm_fwd(y2 + ff, layer.ln3, t ? &t->ln3 : nullptr);
    }
    return x;
}

Mat interact_fwd(const Mat& f_text, const Mat& f_image, const MmiParams& p, InteractTape* tape) {
    if (f_text.cols() != f_image.cols()) {
        throw DataError("cross_attend: text and image widths differ");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.hyper.d_model));
    Mat q = f_text * p.cross_wq;
    Mat k = f_image * p.cross_wk;
    Mat v = f_image * p.cross_wv;
    Mat a = softmax_rows((q * k.transpose()) * scale);
    Mat out = a * v;
    if (tape) {
        tape->f_text = f_text;
        tape->f_image = f_image;
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->a = std::move(a);
    }
    return out;
}

Mat fuse_fwd(const Mat& f_text, const Mat& f_attn, const MmiParams& p, FuseTape* tape) {
    if (f_text.rows() != f_attn.rows() || f_text.cols() != f_attn.cols()) {
        throw DataError("gated_fuse: shape mismatch");
    }
    Mat pre = f_text * p.gate_wt + f_attn * p.gate_wv;
    pre.array().rowwise() += p.gate_b.row(0).array();
    Mat alpha = sigmoid(pre);
    Mat fuse =
        (Mat::Ones(alpha.rows(), alpha.cols()) - alpha).cwiseProduct(f_text) + alpha.cwiseProduct(f_attn);
    if (tape) {
        tape->f_text = f_text;
        tape->f_attn = f_attn;
        tape->alpha = std::move(alpha);
    }
    return fuse;
}

}  // namespace detail

Mat encode_text(const TokenSequence& ids, const MmiParams& params, RunMode mode, SplitMix64* rng) {
    if (ids.empty()) throw DataError("encode_text: empty input");
    if (ids.length() > params.hyper.max_input_len) {
        throw DataError("encode_text: input length " + std::to_string(ids.length()) +
                        " exceeds max input length " + std::to_string(params.hyper.max_input_len));
    }
    Mat x = detail::embed_sequence(ids.ids, params);
    return detail::encoder_fwd(x, params, mode, rng, nullptr);
}

Mat cross_attend(const Mat& f_text, const Mat& f_image, const MmiParams& params) {
    return detail::interact_fwd(f_text, f_image, params, nullptr);
}

Mat gated_fuse(const Mat& f_text, const Mat& f_attn, const MmiParams& params) {
    return detail::fuse_fwd(f_text, f_attn, params, nullptr);
}

TokenSequence decode_greedy(const Mat& f_fuse, const MmiParams& params, int max_out) {
    if (max_out < 1) throw DataError("decode_greedy: max_out must be >= 1");
    TokenSequence emitted;
    std::vector<int> prefix{BOS};
    for (int step = 0; step < max_out; ++step) {
        if (static_cast<int>(prefix.size()) > params.position.rows()) break;
        Mat x = detail::embed_sequence(prefix, params);
        Mat dec = detail::decoder_fwd(x, f_fuse, params, RunMode::kEval, nullptr, nullptr);
        Eigen::RowVectorXd logits =
            dec.row(dec.rows() - 1) * params.out_proj + params.out_bias.row(0);
        int best = 0;
        for (int v = 1; v < params.hyper.vocab_size; ++v) {
            if (logits(v) > logits(best)) best = v;  // ties keep the lowest id
        }
        if (best == EOS) break;
        emitted.ids.push_back(best);
        prefix.push_back(best);
    }
    return emitted;
}

TokenSequence mmi_forward(const TokenSequence& text_ids, const Raster& image,
                          const MmiParams& params, RunMode mode, SplitMix64* rng) {
    Mat f_text = encode_text(text_ids, params, mode, rng);
    Raster adapted = adapt_channels(image, params.hyper.channels);
    Mat f_image = image_to_patch_features(adapted, params.hyper.patch_size, params.patch_proj);
    Mat f_attn = cross_attend(f_text, f_image, params);
    Mat f_fuse = gated_fuse(f_text, f_attn, params);
    return decode_greedy(f_fuse, params, params.hyper.max_output_len);
}

namespace {

json hyper_to_json(const MmiHyper& h) {
    return json{{"vocab_size", h.vocab_size},
                {"d_model", h.d_model},
                {"d_ff", h.d_ff},
                {"n_enc_layers", h.n_enc_layers},
                {"n_dec_layers", h.n_dec_layers},
                {"max_input_len", h.max_input_len},
                {"max_output_len", h.max_output_len},
                {"patch_size", h.patch_size},
                {"channels", h.channels},
                {"dropout", h.dropout}};
}

MmiHyper hyper_from_json(const json& j) {
    MmiHyper h;
    h.vocab_size = j.at("vocab_size").get<int>();
    h.d_model = j.at("d_model").get<int>();
    h.d_ff = j.at("d_ff").get<int>();
    h.n_enc_layers = j.at("n_enc_layers").get<int>();
    h.n_dec_layers = j.at("n_dec_layers").get<int>();
    h.max_input_len = j.at("max_input_len").get<int>();
    h.max_output_len = j.at("max_output_len").get<int>();
    h.patch_size = j.at("patch_size").get<int>();
    h.channels = j.at("channels").get<int>();
    h.dropout = j.at("dropout").get<double>();
    return h;
}

}  // namespace

void save_checkpoint(const MmiParams& params, const std::string& dir,
                     const std::string& vocab_hash) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["vocab_hash"] = vocab_hash;
    manifest["hyper"] = hyper_to_json(params.hyper);
    json tensor_list = json::array();
    for (const auto& [name, mat] : params.tensors()) {
        tensor_list.push_back(
            {{"name", name}, {"shape", {mat->rows(), mat->cols()}}, {"dtype", "f32"}});
        // Row-major little-endian float32; host is assumed little-endian.
        std::vector<float> buf(static_cast<size_t>(mat->size()));
        const double* src = mat->data();
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[i]);
        std::ofstream out(fs::path(dir) / (name + ".bin"), std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write tensor file in " + dir);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    manifest["tensors"] = tensor_list;
    write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

MmiParams load_checkpoint(const std::string& dir, const std::string& expected_vocab_hash) {
    namespace fs = std::filesystem;
    fs::path manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw DataError("missing checkpoint: " + manifest_path.string());
    }
    json manifest = json::parse(read_file(manifest_path.string()));
    if (manifest.at("format_version").get<int>() != 1) {
        throw DataError("unsupported checkpoint format version in " + dir);
    }
    std::string vocab_hash = manifest.at("vocab_hash").get<std::string>();
    if (!expected_vocab_hash.empty() && vocab_hash != expected_vocab_hash) {
        throw DataError("checkpoint " + dir + " was trained with a different vocab (hash " +
                        vocab_hash + ", expected " + expected_vocab_hash + ")");
    }
    MmiHyper hyper = hyper_from_json(manifest.at("hyper"));
    MmiParams params = MmiParams::init(hyper, 0);

    std::unordered_map<std::string, std::pair<long, long>> declared;
    for (const auto& t : manifest.at("tensors")) {
        declared[t.at("name").get<std::string>()] = {t.at("shape")[0].get<long>(),
                                                     t.at("shape")[1].get<long>()};
    }
    for (auto& ref : params.tensors()) {
        auto it = declared.find(ref.name);
        if (it == declared.end()) {
            throw DataError("checkpoint " + dir + " missing tensor " + ref.name);
        }
        if (it->second.first != ref.tensor->rows() || it->second.second != ref.tensor->cols()) {
            throw DataError("checkpoint " + dir + " tensor " + ref.name + " has wrong shape");
        }
        std::ifstream in(fs::path(dir) / (ref.name + ".bin"), std::ios::binary);
        if (!in) throw DataError("checkpoint " + dir + " missing file for tensor " + ref.name);
        std::vector<float> buf(static_cast<size_t>(ref.tensor->size()));
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
            throw DataError("checkpoint " + dir + " tensor " + ref.name + " is truncated");
        }
        double* dst = ref.tensor->data();
        for (size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<double>(buf[i]);
    }
    return params;
}

}  // namespace metmap
