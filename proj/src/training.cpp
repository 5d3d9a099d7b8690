#include "metmap/training.hpp"

#include "metmap/eval.hpp"
#include "metmap/pipeline.hpp"
#include "metmap/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

namespace metmap {

TrainConfig TrainConfig::desk() {
    return TrainConfig{};
}

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.profile = Profile::kPaper;
    c.dropout = 0.3;
    c.max_input_len = 32;
    c.max_output_len = 16;
    c.epochs = 8;
    c.learning_rate = 5e-6;
    c.batch_size = 16;
    return c;
}

MmiHyper TrainConfig::hyper(int vocab_size) const {
    MmiHyper h;
    h.vocab_size = vocab_size;
    h.d_model = d_model;
    h.d_ff = d_ff;
    h.n_enc_layers = n_enc_layers;
    h.n_dec_layers = n_dec_layers;
    h.max_input_len = max_input_len;
    h.max_output_len = max_output_len;
    h.patch_size = patch_size;
    h.channels = channels;
    h.dropout = dropout;
    return h;
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw DataError("train config: learning_rate must be > 0");
    if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (epochs < 1) throw DataError("train config: epochs must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw DataError("train config: dropout must be in [0,1)");
    if (max_input_len < 1 || max_output_len < 1) throw DataError("train config: bad lengths");
}

TrainExample make_train_example(const Sample& sample, int stage, const std::string& generation,
                                const Vocab& vocab, const MmiHyper& hyper) {
    TrainExample ex;
    ex.input_ids = compose_input_ids(sample.text, generation, vocab, hyper.max_input_len);
    Raster raster = adapt_channels(load_raster(sample.image), hyper.channels);
    ex.patches = extract_patches(raster, hyper.patch_size).features;

    std::string label = gold_label(sample, stage);
    TokenSequence label_ids = tokenize(label, vocab, hyper.max_output_len);
    // Content is capped one short of max_output_len so the EOS always fits.
    if (label_ids.length() >= hyper.max_output_len) {
        label_ids.ids.resize(static_cast<size_t>(hyper.max_output_len - 1));
    }
    ex.decoder_input.push_back(BOS);
    ex.decoder_input.insert(ex.decoder_input.end(), label_ids.ids.begin(), label_ids.ids.end());
    ex.gold = label_ids.ids;
    ex.gold.push_back(EOS);
    return ex;
}

void adam_step(MmiParams& params, const MmiParams& grads, AdamState& state, double lr) {
    auto prefs = params.tensors();
    auto grefs = grads.tensors();
    if (state.m.empty()) {
        state.m.resize(prefs.size());
        state.v.resize(prefs.size());
        for (size_t i = 0; i < prefs.size(); ++i) {
            state.m[i] = Mat::Zero(prefs[i].tensor->rows(), prefs[i].tensor->cols());
            state.v[i] = Mat::Zero(prefs[i].tensor->rows(), prefs[i].tensor->cols());
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < prefs.size(); ++i) {
        Mat& p = *prefs[i].tensor;
        const Mat& g = *grefs[i].second;
        Mat& m = state.m[i];
        Mat& v = state.v[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                double mhat = m(r, c) / bc1;
                double vhat = v(r, c) / bc2;
                p(r, c) -= lr * mhat / (std::sqrt(vhat) + state.eps);
            }
        }
    }
}

namespace {

// Decode one prepared example with the current parameters.
std::string predict_label(const MmiParams& params, const TrainExample& ex, const Vocab& vocab) {
    Mat f_text = encode_text(ex.input_ids, params, RunMode::kEval);
    Mat f_image = ex.patches * params.patch_proj;
    Mat f_attn = cross_attend(f_text, f_image, params);
    Mat f_fuse = gated_fuse(f_text, f_attn, params);
    TokenSequence out = decode_greedy(f_fuse, params, params.hyper.max_output_len);
    return detokenize(out, vocab);
}

double exact_match_rate(const MmiParams& params, const std::vector<TrainExample>& examples,
                        const std::vector<std::string>& gold_texts, const Vocab& vocab) {
    if (examples.empty()) return 0.0;
    int hits = 0;
    for (size_t i = 0; i < examples.size(); ++i) {
        if (normalize_label(predict_label(params, examples[i], vocab)) ==
            normalize_label(gold_texts[i])) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

struct PreparedSplit {
    std::vector<TrainExample> examples;
    std::vector<std::string> gold_texts;
};

PreparedSplit prepare_split(const std::vector<const Sample*>& samples, int stage,
                            const GenerationFn& generation, const Vocab& vocab,
                            const MmiHyper& hyper) {
    PreparedSplit out;
    for (const Sample* s : samples) {
        out.examples.push_back(make_train_example(*s, stage, generation(*s, stage), vocab, hyper));
        out.gold_texts.push_back(gold_label(*s, stage));
    }
    return out;
}

std::string epoch_dir(const std::string& base, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%04d", epoch);
    return (std::filesystem::path(base) / buf).string();
}

}  // namespace

TrainResult train_stage(int stage, const Corpus& corpus, const Vocab& vocab,
                        const GenerationFn& generation, const TrainConfig& config,
                        const std::string& checkpoint_dir, const std::string& vocab_hash) {
    if (stage != 1 && stage != 2) throw DataError("train_stage: stage must be 1 or 2");
    config.validate();
    auto train_samples = corpus.split_samples(Split::kTrain);
    if (train_samples.empty()) throw DataError("train_stage: corpus has no train split");

    MmiHyper hyper = config.hyper(vocab.size());
    PreparedSplit train = prepare_split(train_samples, stage, generation, vocab, hyper);
    PreparedSplit val =
        prepare_split(corpus.split_samples(Split::kVal), stage, generation, vocab, hyper);

    TrainResult result;
    result.params = MmiParams::init(hyper, config.seed);
    SplitMix64 shuffle_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    SplitMix64 dropout_rng(config.seed ^ 0xC2B2AE3D27D4EB4FULL);
    AdamState opt;

    MmiParams best = result.params;
    double best_val_em = -1.0;

    const size_t n = train.examples.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        }
        double epoch_loss = 0.0;
        int batch_index = 0;
        for (size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
            size_t end = std::min(n, start + static_cast<size_t>(config.batch_size));
            std::vector<TrainExample> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(train.examples[order[i]]);

            MmiParams grads = result.params.zeros_like();
            double loss = loss_and_gradients(result.params, batch, grads, RunMode::kTrain,
                                             &dropout_rng);
            if (!std::isfinite(loss)) {
                throw DataError("training aborted: non-finite loss in epoch " +
                                std::to_string(epoch) + ", batch " + std::to_string(batch_index));
            }
            adam_step(result.params, grads, opt, config.learning_rate);
            ++result.steps;
            epoch_loss += loss * static_cast<double>(end - start);
        }
        epoch_loss /= static_cast<double>(n);

        double train_em = exact_match_rate(result.params, train.examples, train.gold_texts, vocab);
        result.curve.push_back({epoch, "train", epoch_loss, train_em});
        if (!val.examples.empty()) {
            double val_loss = batch_loss(result.params, val.examples);
            double val_em = exact_match_rate(result.params, val.examples, val.gold_texts, vocab);
            result.curve.push_back({epoch, "val", val_loss, val_em});
            if (config.select_best_by_val && val_em > best_val_em) {
                best_val_em = val_em;
                best = result.params;
            }
        }
        if (!checkpoint_dir.empty() &&
            (epoch % config.checkpoint_every == 0 || epoch == config.epochs)) {
            save_checkpoint(result.params, epoch_dir(checkpoint_dir, epoch), vocab_hash);
        }
    }
    if (config.select_best_by_val && best_val_em >= 0.0) result.params = best;
    if (!checkpoint_dir.empty()) {
        save_checkpoint(result.params,
                        (std::filesystem::path(checkpoint_dir) / "final").string(), vocab_hash);
    }
    return result;
}

void write_curve_csv(const std::vector<EpochStat>& curve, const std::string& path) {
    std::string out = "epoch,split,loss,exact_match\n";
    char buf[128];
    for (const auto& row : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%.10g\n", row.epoch, row.split.c_str(),
                      row.loss, row.exact_match);
        out += buf;
    }
    write_file(path, out);
}

GradCheckResult finite_diff_compare(const MmiParams& params, const MmiParams& analytic,
                                    const std::vector<TrainExample>& batch, double step) {
    MmiParams work = params;
    auto wrefs = work.tensors();
    auto arefs = analytic.tensors();

    GradCheckResult result;
    for (size_t i = 0; i < wrefs.size(); ++i) {
        Mat& w = *wrefs[i].tensor;
        const Mat& a = *arefs[i].second;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                double saved = w(r, c);
                w(r, c) = saved + step;
                double up = batch_loss(work, batch);
                w(r, c) = saved - step;
                double down = batch_loss(work, batch);
                w(r, c) = saved;
                double fd = (up - down) / (2.0 * step);
                double denom = std::max(std::abs(a(r, c)) + std::abs(fd), 1e-6);
                double rel = std::abs(a(r, c) - fd) / denom;
                if (rel > result.max_rel_error) {
                    result.max_rel_error = rel;
                    result.worst_tensor = wrefs[i].name;
                }
            }
        }
    }
    return result;
}

GradCheckResult finite_diff_check(const MmiParams& params, const std::vector<TrainExample>& batch,
                                  double step) {
    MmiParams grads = params.zeros_like();
    loss_and_gradients(params, batch, grads, RunMode::kEval);
    return finite_diff_compare(params, grads, batch, step);
}

}  // namespace metmap
