#pragma once

#include "metmap/knowledge.hpp"
#include "metmap/mmi.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace metmap {

// Stage-1 asks for the pair's purpose; stage-2 asks for elements incongruent
// with the identified target. The stage-2 template carries exactly one [T]
// slot that build_prompt fills.
struct PromptTemplates {
    std::string p1;
    std::string p2_template;

    static PromptTemplates defaults();
};

// Stage 1 returns p1 verbatim; stage 2 substitutes T for the "[T]" marker.
// Stage 2 with an empty T is an error.
std::string build_prompt(const PromptTemplates& templates, int stage, const std::string& t = "");

// Encoder input ids for "text ⊕ G": the full text comes first; when a
// generation is present and at least one of its tokens fits, a SEP token and
// the generation's tokens follow, truncated to max_len. The sample's own
// text is never sacrificed for G.
TokenSequence compose_input_ids(const std::string& text, const std::string& generation,
                                const Vocab& vocab, int max_len);

// String form of the composed input, used in run logs.
std::string compose_input_text(const std::string& text, const std::string& generation);

enum class Ablation { kFull, kNoPg1, kNoPg2 };

const char* ablation_name(Ablation a);
std::optional<Ablation> ablation_from_name(const std::string& name);

struct StageResult {
    std::string generation;  // G (empty when the stage's prompt is ablated)
    std::string input_text;
    std::string prediction;  // detokenized model output
};

// One stage: obtain G through the knowledge client (unless ablated), compose
// the input, run the stage model. Stage 2 consumes the finalized T.
StageResult run_stage(int stage, const Sample& sample, KnowledgeClient& knowledge,
                      const MmiParams& model, const Vocab& vocab,
                      const PromptTemplates& templates, const std::string& t, Ablation ablation);

struct PipelineRun {
    std::string sample_id;
    std::string ablation;
    std::string g1, g2;
    std::string stage1_input_text, stage2_input_text;
    std::string predicted_target, predicted_source;
    // Logical causality counters (monotone per run). Wall-clock durations
    // would break byte-identical run logs, so order is recorded instead.
    int seq_stage1_done = 0;
    int seq_p2_built = 0;
    int seq_stage2_done = 0;
    bool ok = false;
    std::string error;
};

// Stage 1 then stage 2. Errors are captured in the returned run, not thrown,
// so one bad sample never aborts a batch.
PipelineRun run_pipeline(const Sample& sample, KnowledgeClient& knowledge,
                         const MmiParams& stage1_model, const MmiParams& stage2_model,
                         const Vocab& vocab, const PromptTemplates& templates, Ablation ablation);

nlohmann::json pipeline_run_to_json(const PipelineRun& run);
PipelineRun pipeline_run_from_json(const nlohmann::json& j);

// Few-shot prompt in the Text/Target/Source block layout with two in-context
// exemplars and "< model completion >" slots for the query.
std::string build_direct_prompt(const Sample& query, const std::vector<Sample>& shots);

struct BaselineRun {
    std::string sample_id;
    std::string prompt;
    std::string generation;
    std::string target, source;
    bool ok = false;
    std::string error;  // "format_violation: ..." keeps the raw generation
};

// Single provider query; parses "Target:"/"Source:" lines (half- or
// full-width colon) from the generation.
BaselineRun run_direct_baseline(KnowledgeClient& knowledge, const Sample& sample,
                                const std::vector<Sample>& shots);

// Fills the cache for every sample of the corpus (stage-1 prompts, and
// stage-2 prompts built from gold target labels, which is what training
// consumes). Runs up to `workers` samples concurrently.
void warm_cache(const Corpus& corpus, KnowledgeClient& knowledge, const PromptTemplates& templates,
                int workers = 4);

// Generation source for training: stage-1 prompt, or stage-2 prompt built
// from the sample's gold target label.
std::string training_generation(const Sample& sample, int stage, KnowledgeClient& knowledge,
                                const PromptTemplates& templates);

}  // namespace metmap
