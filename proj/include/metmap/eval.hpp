#pragma once

#include "metmap/corpus.hpp"
#include "metmap/text.hpp"

#include <nlohmann/json_fwd.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace metmap {

// Prediction/label normalization before comparison: trims whitespace and
// strips literal special-token markers. Inputs are assumed NFC-normalized.
std::string normalize_label(const std::string& s);

// Fraction of exact matches after normalization. No partial credit.
double exact_accuracy(const std::vector<std::string>& preds,
                      const std::vector<std::string>& golds);

// Pluggable token embedding for the semantic-similarity metric. Vectors may
// have different lengths; cosine treats missing trailing entries as zero.
class TokenEmbedder {
public:
    virtual ~TokenEmbedder() = default;
    virtual std::vector<double> embed(const std::string& token) const = 0;
};

// Exact one-hot semantics: identical tokens have cosine 1, distinct tokens 0.
// Indices are assigned on first sight, so the embedder grows as it sees new
// tokens; cosine results are unaffected by the assignment order.
class OneHotEmbedder : public TokenEmbedder {
public:
    std::vector<double> embed(const std::string& token) const override;

private:
    mutable std::map<std::string, int> index_;
};

// "token v1 v2 ... vd" per line. Tokens absent from the file get a
// deterministic hashed random unit vector.
class FileEmbedder : public TokenEmbedder {
public:
    explicit FileEmbedder(const std::string& path);
    std::vector<double> embed(const std::string& token) const override;
    int dim() const { return dim_; }

private:
    int dim_ = 0;
    std::map<std::string, std::vector<double>> table_;
};

// Rows of a trained checkpoint's token embedding table, keyed through the
// training vocab. OOV tokens get a deterministic hashed random unit vector.
class CheckpointEmbedder : public TokenEmbedder {
public:
    CheckpointEmbedder(const std::string& checkpoint_dir, const Vocab& vocab);
    std::vector<double> embed(const std::string& token) const override;

private:
    const Vocab vocab_;
    std::vector<std::vector<double>> rows_;
};

// Deterministic unit vector for unknown tokens, seeded by the token bytes.
std::vector<double> hashed_unit_vector(const std::string& token, int dim);

// Greedy-matching similarity: precision is the mean over pred tokens of the
// best cosine against any gold token, recall symmetrically, F1 the harmonic
// mean. Empty pred or gold after tokenization scores 0 (with a warning).
double semantic_f1(const std::string& pred, const std::string& gold,
                   const TokenEmbedder& embedder);

// κ = (p_o − p_e)/(1 − p_e) with chance agreement from marginal products.
// Degenerate marginals (p_e = 1) return 1 with a warning.
double cohen_kappa(const std::vector<std::string>& labels_a,
                   const std::vector<std::string>& labels_b);
double cohen_kappa(const std::vector<int>& labels_a, const std::vector<int>& labels_b);

// Qualitative agreement band for a kappa on the 0-100 scale.
const char* kappa_band(double kappa100);

struct HumanEval {
    double h_e = 0.0;   // mean of the reconciled "final" judgments
    double kappa = 0.0; // agreement between the two annotators
    int n = 0;
};

// CSV with header sample_id,annotator_a,annotator_b,final (0/1 judgments).
HumanEval ingest_human_eval(const std::string& csv_path);

struct DomainMetrics {
    double acc = 0.0;
    double semantic_f1 = 0.0;
    std::optional<double> h_e;
    std::optional<double> kappa;  // raw [-1,1]
    int n = 0;
};

struct MetricReport {
    std::string label;
    std::string modality = "text+image";
    std::string model;
    std::string ablation;
    DomainMetrics target, source;
    int n_samples = 0;
    int errors = 0;
    std::map<std::string, int> error_tags;
    std::string notes;
};

struct DomainPrediction {
    bool ok = false;
    std::string error;
    std::string target, source;
};

using PipelineRunnerFn = std::function<DomainPrediction(const Sample&)>;

struct EvaluateOptions {
    std::string label = "default";
    std::string model;
    std::string ablation = "full";
    std::string human_eval_target_csv;  // optional
    std::string human_eval_source_csv;  // optional
};

// Runs every sample through the runner and aggregates both domains' metrics.
// Failed samples are excluded from the rates and counted under errors.
MetricReport evaluate_split(const std::vector<const Sample*>& samples,
                            const PipelineRunnerFn& runner, const TokenEmbedder& embedder,
                            const EvaluateOptions& options);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

// Text table with the Acc / SemF1 / H-E / Kappa column order; rates ×100,
// kappa annotated with its band.
std::string render_report(const MetricReport& report);

}  // namespace metmap
