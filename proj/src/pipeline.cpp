#include "metmap/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

namespace metmap {

using nlohmann::json;

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.p1 =
        "Briefly describe the purpose of the text-image pair (such as water conservation, "
        "promoting shampoo, expressing satire, etc.)";
    t.p2_template =
        "The elements in this image-text pair are incongruent with the [T], such as "
        "unconventional colors, shapes, and tones.";
    return t;
}

std::string build_prompt(const PromptTemplates& templates, int stage, const std::string& t) {
    if (stage == 1) return templates.p1;
    if (stage != 2) throw DataError("build_prompt: stage must be 1 or 2");
    if (trim(t).empty()) throw DataError("build_prompt: stage 2 requires a non-empty target");
    auto pos = templates.p2_template.find("[T]");
    if (pos == std::string::npos) {
        throw DataError("stage-2 template is missing its [T] slot");
    }
    std::string out = templates.p2_template;
    out.replace(pos, 3, t);
    return out;
}

TokenSequence compose_input_ids(const std::string& text, const std::string& generation,
                                const Vocab& vocab, int max_len) {
    if (max_len < 1) throw DataError("compose_input_ids: max_len must be >= 1");
    TokenSequence seq = tokenize(text, vocab, max_len);
    if (generation.empty()) return seq;
    int room = max_len - seq.length() - 1;  // one slot for SEP
    if (room < 1) return seq;
    seq.ids.push_back(SEP);
    TokenSequence gen_ids = tokenize(generation, vocab, room);
    seq.ids.insert(seq.ids.end(), gen_ids.ids.begin(), gen_ids.ids.end());
    return seq;
}

std::string compose_input_text(const std::string& text, const std::string& generation) {
    if (generation.empty()) return text;
    return text + kSpecialNames[SEP] + generation;
}

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::kFull: return "full";
        case Ablation::kNoPg1: return "no-pg1";
        case Ablation::kNoPg2: return "no-pg2";
    }
    return "full";
}

std::optional<Ablation> ablation_from_name(const std::string& name) {
    if (name == "full") return Ablation::kFull;
    if (name == "no-pg1" || name == "no_pg1") return Ablation::kNoPg1;
    if (name == "no-pg2" || name == "no_pg2") return Ablation::kNoPg2;
    return std::nullopt;
}

namespace {

KnowledgeRequest make_request(const Sample& sample, int stage, const std::string& prompt,
                              bool with_image_bytes) {
    KnowledgeRequest req;
    req.sample_id = sample.id;
    req.image_ref = sample.image.is_inline() ? "inline:" + sample.id : sample.image.path;
    if (with_image_bytes) req.image_b64 = image_bytes_b64(sample.image);
    req.text = sample.text;
    req.prompt = prompt;
    req.stage = stage;
    return req;
}

std::string fetch_generation(const Sample& sample, int stage, const std::string& prompt,
                             KnowledgeClient& knowledge) {
    KnowledgeRequest req =
        make_request(sample, stage, prompt, knowledge.provider_wants_image());
    return knowledge.lookup_or_fill(req).generation;
}

}  // namespace

StageResult run_stage(int stage, const Sample& sample, KnowledgeClient& knowledge,
                      const MmiParams& model, const Vocab& vocab,
                      const PromptTemplates& templates, const std::string& t, Ablation ablation) {
    if (stage != 1 && stage != 2) throw DataError("run_stage: stage must be 1 or 2");
    bool skip_prompt = (stage == 1 && ablation == Ablation::kNoPg1) ||
                       (stage == 2 && ablation == Ablation::kNoPg2);
    StageResult res;
    if (!skip_prompt) {
        std::string prompt = build_prompt(templates, stage, t);
        res.generation = fetch_generation(sample, stage, prompt, knowledge);
    }
    res.input_text = compose_input_text(sample.text, res.generation);
    TokenSequence ids =
        compose_input_ids(sample.text, res.generation, vocab, model.hyper.max_input_len);
    Raster raster = load_raster(sample.image);
    TokenSequence out = mmi_forward(ids, raster, model, RunMode::kEval);
    res.prediction = trim(detokenize(out, vocab));
    return res;
}

PipelineRun run_pipeline(const Sample& sample, KnowledgeClient& knowledge,
                         const MmiParams& stage1_model, const MmiParams& stage2_model,
                         const Vocab& vocab, const PromptTemplates& templates, Ablation ablation) {
    PipelineRun run;
    run.sample_id = sample.id;
    run.ablation = ablation_name(ablation);
    int seq = 0;
    try {
        StageResult s1 =
            run_stage(1, sample, knowledge, stage1_model, vocab, templates, "", ablation);
        run.g1 = s1.generation;
        run.stage1_input_text = s1.input_text;
        run.predicted_target = s1.prediction;
        run.seq_stage1_done = ++seq;

        // T is finalized above; only now may the stage-2 prompt exist.
        if (ablation != Ablation::kNoPg2 && run.predicted_target.empty()) {
            throw DataError("stage-1 produced an empty target; cannot build the stage-2 prompt");
        }
        if (ablation != Ablation::kNoPg2) run.seq_p2_built = ++seq;

        StageResult s2 = run_stage(2, sample, knowledge, stage2_model, vocab, templates,
                                   run.predicted_target, ablation);
        run.g2 = s2.generation;
        run.stage2_input_text = s2.input_text;
        run.predicted_source = s2.prediction;
        run.seq_stage2_done = ++seq;
        run.ok = true;
    } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
    }
    return run;
}

json pipeline_run_to_json(const PipelineRun& run) {
    return json{{"sample_id", run.sample_id},
                {"ablation", run.ablation},
                {"g1", run.g1},
                {"g2", run.g2},
                {"stage1_input_text", run.stage1_input_text},
                {"stage2_input_text", run.stage2_input_text},
                {"predicted_target", run.predicted_target},
                {"predicted_source", run.predicted_source},
                {"seq_stage1_done", run.seq_stage1_done},
                {"seq_p2_built", run.seq_p2_built},
                {"seq_stage2_done", run.seq_stage2_done},
                {"ok", run.ok},
                {"error", run.error}};
}

PipelineRun pipeline_run_from_json(const json& j) {
    PipelineRun run;
    run.sample_id = j.at("sample_id").get<std::string>();
    run.ablation = j.at("ablation").get<std::string>();
    run.g1 = j.at("g1").get<std::string>();
    run.g2 = j.at("g2").get<std::string>();
    run.stage1_input_text = j.at("stage1_input_text").get<std::string>();
    run.stage2_input_text = j.at("stage2_input_text").get<std::string>();
    run.predicted_target = j.at("predicted_target").get<std::string>();
    run.predicted_source = j.at("predicted_source").get<std::string>();
    run.seq_stage1_done = j.at("seq_stage1_done").get<int>();
    run.seq_p2_built = j.at("seq_p2_built").get<int>();
    run.seq_stage2_done = j.at("seq_stage2_done").get<int>();
    run.ok = j.at("ok").get<bool>();
    run.error = j.at("error").get<std::string>();
    return run;
}

std::string build_direct_prompt(const Sample& query, const std::vector<Sample>& shots) {
    if (shots.size() != 2) throw DataError("direct baseline requires exactly 2 exemplars");
    for (const Sample& s : shots) {
        if (s.split != Split::kTrain) {
            throw DataError("direct baseline exemplar " + s.id + " is not from the train split");
        }
        if (gold_label(s, 1).empty() || gold_label(s, 2).empty()) {
            throw DataError("direct baseline exemplar " + s.id + " lacks target/source labels");
        }
    }
    std::string out;
    for (const Sample& s : shots) {
        out += "Text: " + s.text + "\n";
        out += "Target: " + gold_label(s, 1) + "\n";
        out += "Source: " + gold_label(s, 2) + "\n";
    }
    out += "Text: " + query.text + "\n";
    out += "Target: < model completion >\n";
    out += "Source: < model completion >";
    return out;
}

namespace {

// First "<label>:" or "<label>：" line of the generation, value trimmed.
std::optional<std::string> parse_labeled_line(const std::string& text, const std::string& label) {
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        std::string stripped = trim(line);
        if (stripped.rfind(label, 0) == 0) {
            std::string rest = stripped.substr(label.size());
            if (rest.rfind(":", 0) == 0) return trim(rest.substr(1));
            if (rest.rfind("：", 0) == 0) return trim(rest.substr(3));
        }
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }
    return std::nullopt;
}

}  // namespace

BaselineRun run_direct_baseline(KnowledgeClient& knowledge, const Sample& sample,
                                const std::vector<Sample>& shots) {
    BaselineRun run;
    run.sample_id = sample.id;
    try {
        run.prompt = build_direct_prompt(sample, shots);
        run.generation = fetch_generation(sample, 1, run.prompt, knowledge);
        auto target = parse_labeled_line(run.generation, "Target");
        auto source = parse_labeled_line(run.generation, "Source");
        if (!target || !source) {
            run.error = "format_violation: generation lacks a " +
                        std::string(!target ? "Target" : "Source") + " line; raw: " + run.generation;
            return run;
        }
        run.target = *target;
        run.source = *source;
        run.ok = true;
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

void warm_cache(const Corpus& corpus, KnowledgeClient& knowledge, const PromptTemplates& templates,
                int workers) {
    if (workers < 1) workers = 1;
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::string> errors(corpus.samples.size());
    auto work = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= corpus.samples.size()) return;
            const Sample& s = corpus.samples[i];
            try {
                fetch_generation(s, 1, build_prompt(templates, 1), knowledge);
                std::string t = gold_label(s, 1);
                if (!t.empty()) {
                    fetch_generation(s, 2, build_prompt(templates, 2, t), knowledge);
                }
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i].empty()) {
            throw ProviderError("warm_cache failed for sample " + corpus.samples[i].id + ": " +
                                errors[i]);
        }
    }
}

std::string training_generation(const Sample& sample, int stage, KnowledgeClient& knowledge,
                                const PromptTemplates& templates) {
    std::string prompt =
        stage == 1 ? build_prompt(templates, 1) : build_prompt(templates, 2, gold_label(sample, 1));
    return fetch_generation(sample, stage, prompt, knowledge);
}

}  // namespace metmap
