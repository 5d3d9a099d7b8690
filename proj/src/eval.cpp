#include "metmap/eval.hpp"

#include "metmap/common.hpp"
#include "metmap/mmi.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace metmap {

using nlohmann::json;

std::string normalize_label(const std::string& s) {
    std::string out = s;
    for (const char* special : kSpecialNames) {
        for (size_t pos = out.find(special); pos != std::string::npos;
             pos = out.find(special, pos)) {
            out.erase(pos, std::string(special).size());
        }
    }
    return trim(out);
}

double exact_accuracy(const std::vector<std::string>& preds,
                      const std::vector<std::string>& golds) {
    if (preds.size() != golds.size()) {
        throw DataError("exact_accuracy: size mismatch (" + std::to_string(preds.size()) + " vs " +
                        std::to_string(golds.size()) + ")");
    }
    if (preds.empty()) throw DataError("exact_accuracy: empty input");
    int hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (normalize_label(preds[i]) == normalize_label(golds[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::vector<double> OneHotEmbedder::embed(const std::string& token) const {
    auto [it, inserted] = index_.emplace(token, static_cast<int>(index_.size()));
    std::vector<double> v(static_cast<size_t>(it->second) + 1, 0.0);
    v.back() = 1.0;
    return v;
}

std::vector<double> hashed_unit_vector(const std::string& token, int dim) {
    SplitMix64 rng(fnv1a64(token));
    std::vector<double> v(static_cast<size_t>(dim));
    double norm_sq = 0.0;
    for (auto& x : v) {
        x = rng.uniform(-1.0, 1.0);
        norm_sq += x * x;
    }
    if (norm_sq <= 0.0) {
        v.assign(static_cast<size_t>(dim), 0.0);
        v[0] = 1.0;
        return v;
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& x : v) x *= inv;
    return v;
}

FileEmbedder::FileEmbedder(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embedding file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (v.empty()) {
            throw DataError("embedding file " + path + " line " + std::to_string(lineno) +
                            ": no vector values");
        }
        if (dim_ == 0) dim_ = static_cast<int>(v.size());
        if (static_cast<int>(v.size()) != dim_) {
            throw DataError("embedding file " + path + " line " + std::to_string(lineno) +
                            ": inconsistent dimension");
        }
        table_[token] = std::move(v);
    }
    if (table_.empty()) throw DataError("embedding file has no entries: " + path);
}

std::vector<double> FileEmbedder::embed(const std::string& token) const {
    auto it = table_.find(token);
    if (it != table_.end()) return it->second;
    return hashed_unit_vector(token, dim_);
}

CheckpointEmbedder::CheckpointEmbedder(const std::string& checkpoint_dir, const Vocab& vocab)
    : vocab_(vocab) {
    MmiParams params = load_checkpoint(checkpoint_dir);
    if (params.hyper.vocab_size != vocab.size()) {
        throw DataError("checkpoint embedding table does not match the vocab size");
    }
    rows_.resize(static_cast<size_t>(params.embedding.rows()));
    for (Eigen::Index i = 0; i < params.embedding.rows(); ++i) {
        rows_[static_cast<size_t>(i)].assign(params.embedding.row(i).data(),
                                             params.embedding.row(i).data() +
                                                 params.embedding.cols());
    }
}

std::vector<double> CheckpointEmbedder::embed(const std::string& token) const {
    if (vocab_.contains(token)) return rows_[static_cast<size_t>(vocab_.id_of(token))];
    return hashed_unit_vector(token, static_cast<int>(rows_.empty() ? 1 : rows_[0].size()));
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    size_t n = std::min(a.size(), b.size());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    for (double x : a) na += x * x;
    for (double x : b) nb += x * x;
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double greedy_match_score(const std::vector<std::vector<double>>& from,
                          const std::vector<std::vector<double>>& to) {
    double sum = 0.0;
    for (const auto& f : from) {
        double best = -1.0;
        for (const auto& t : to) best = std::max(best, cosine(f, t));
        sum += best;
    }
    return sum / static_cast<double>(from.size());
}

}  // namespace

double semantic_f1(const std::string& pred, const std::string& gold,
                   const TokenEmbedder& embedder) {
    std::vector<std::string> pred_tokens = tokenize_text(pred);
    std::vector<std::string> gold_tokens = tokenize_text(gold);
    if (pred_tokens.empty() || gold_tokens.empty()) {
        std::cerr << "warning: semantic_f1 scored 0 for empty "
                  << (pred_tokens.empty() ? "prediction" : "gold") << "\n";
        return 0.0;
    }
    auto embed_all = [&](const std::vector<std::string>& tokens) {
        std::vector<std::vector<double>> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(embedder.embed(t));
        return out;
    };
    std::vector<std::vector<double>> pe = embed_all(pred_tokens);
    std::vector<std::vector<double>> ge = embed_all(gold_tokens);
    double precision = greedy_match_score(pe, ge);
    double recall = greedy_match_score(ge, pe);
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double cohen_kappa(const std::vector<std::string>& labels_a,
                   const std::vector<std::string>& labels_b) {
    if (labels_a.size() != labels_b.size()) throw DataError("cohen_kappa: length mismatch");
    if (labels_a.empty()) throw DataError("cohen_kappa: empty input");
    const double n = static_cast<double>(labels_a.size());

    std::map<std::string, double> count_a, count_b;
    double agree = 0.0;
    for (size_t i = 0; i < labels_a.size(); ++i) {
        count_a[labels_a[i]] += 1.0;
        count_b[labels_b[i]] += 1.0;
        if (labels_a[i] == labels_b[i]) agree += 1.0;
    }
    double p_o = agree / n;
    double p_e = 0.0;
    for (const auto& [label, ca] : count_a) {
        auto it = count_b.find(label);
        if (it != count_b.end()) p_e += (ca / n) * (it->second / n);
    }
    if (p_e >= 1.0) {
        std::cerr << "warning: cohen_kappa with degenerate marginals (single category); "
                     "returning 1 by convention\n";
        return 1.0;
    }
    return (p_o - p_e) / (1.0 - p_e);
}

double cohen_kappa(const std::vector<int>& labels_a, const std::vector<int>& labels_b) {
    auto to_str = [](const std::vector<int>& v) {
        std::vector<std::string> out;
        out.reserve(v.size());
        for (int x : v) out.push_back(std::to_string(x));
        return out;
    };
    return cohen_kappa(to_str(labels_a), to_str(labels_b));
}

const char* kappa_band(double kappa100) {
    if (kappa100 <= 0.0) return "Poor";
    if (kappa100 <= 20.0) return "Slight";
    if (kappa100 <= 40.0) return "Fair";
    if (kappa100 <= 60.0) return "Moderate";
    if (kappa100 <= 80.0) return "Substantial";
    return "Almost perfect";
}

HumanEval ingest_human_eval(const std::string& csv_path) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw DataError("cannot open human-eval file: " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("human-eval file is empty: " + csv_path);
    if (trim(line) != "sample_id,annotator_a,annotator_b,final") {
        throw DataError("human-eval file " + csv_path +
                        ": expected header sample_id,annotator_a,annotator_b,final");
    }
    std::vector<int> a, b, fin;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 4) {
            throw DataError("human-eval file " + csv_path + " line " + std::to_string(lineno) +
                            ": expected 4 fields");
        }
        auto judgment = [&](const std::string& s) {
            std::string t = trim(s);
            if (t != "0" && t != "1") {
                throw DataError("human-eval file " + csv_path + " line " +
                                std::to_string(lineno) + ": judgments must be 0 or 1");
            }
            return t == "1" ? 1 : 0;
        };
        a.push_back(judgment(fields[1]));
        b.push_back(judgment(fields[2]));
        fin.push_back(judgment(fields[3]));
    }
    if (fin.empty()) throw DataError("human-eval file has no rows: " + csv_path);
    HumanEval he;
    he.n = static_cast<int>(fin.size());
    double sum = 0.0;
    for (int f : fin) sum += f;
    he.h_e = sum / he.n;
    he.kappa = cohen_kappa(a, b);
    return he;
}

MetricReport evaluate_split(const std::vector<const Sample*>& samples,
                            const PipelineRunnerFn& runner, const TokenEmbedder& embedder,
                            const EvaluateOptions& options) {
    if (samples.empty()) throw DataError("evaluate_split: no samples in split");
    MetricReport report;
    report.label = options.label;
    report.model = options.model;
    report.ablation = options.ablation;
    report.n_samples = static_cast<int>(samples.size());

    std::vector<std::string> pred_t, gold_t, pred_s, gold_s;
    double sem_t = 0.0, sem_s = 0.0;
    for (const Sample* s : samples) {
        DomainPrediction p = runner(*s);
        if (!p.ok) {
            ++report.errors;
            continue;
        }
        for (const auto& tag : s->tags) ++report.error_tags[tag];
        pred_t.push_back(p.target);
        gold_t.push_back(gold_label(*s, 1));
        pred_s.push_back(p.source);
        gold_s.push_back(gold_label(*s, 2));
        sem_t += semantic_f1(normalize_label(p.target), normalize_label(gold_t.back()), embedder);
        sem_s += semantic_f1(normalize_label(p.source), normalize_label(gold_s.back()), embedder);
    }
    if (!pred_t.empty()) {
        report.target.n = static_cast<int>(pred_t.size());
        report.target.acc = exact_accuracy(pred_t, gold_t);
        report.target.semantic_f1 = sem_t / report.target.n;
        report.source.n = static_cast<int>(pred_s.size());
        report.source.acc = exact_accuracy(pred_s, gold_s);
        report.source.semantic_f1 = sem_s / report.source.n;
    }
    if (!options.human_eval_target_csv.empty()) {
        HumanEval he = ingest_human_eval(options.human_eval_target_csv);
        report.target.h_e = he.h_e;
        report.target.kappa = he.kappa;
    }
    if (!options.human_eval_source_csv.empty()) {
        HumanEval he = ingest_human_eval(options.human_eval_source_csv);
        report.source.h_e = he.h_e;
        report.source.kappa = he.kappa;
    }
    return report;
}

namespace {

json domain_to_json(const DomainMetrics& d) {
    json j = {{"acc", d.acc}, {"semantic_f1", d.semantic_f1}, {"n", d.n}};
    if (d.h_e) j["h_e"] = *d.h_e;
    if (d.kappa) j["kappa"] = *d.kappa;
    return j;
}

DomainMetrics domain_from_json(const json& j) {
    DomainMetrics d;
    d.acc = j.at("acc").get<double>();
    d.semantic_f1 = j.at("semantic_f1").get<double>();
    d.n = j.at("n").get<int>();
    if (j.contains("h_e")) d.h_e = j.at("h_e").get<double>();
    if (j.contains("kappa")) d.kappa = j.at("kappa").get<double>();
    return d;
}

}  // namespace

json report_to_json(const MetricReport& report) {
    json tags = json::object();
    for (const auto& [tag, count] : report.error_tags) tags[tag] = count;
    return json{{"label", report.label},
                {"modality", report.modality},
                {"model", report.model},
                {"ablation", report.ablation},
                {"rows", {{"target", domain_to_json(report.target)},
                          {"source", domain_to_json(report.source)}}},
                {"n_samples", report.n_samples},
                {"errors", report.errors},
                {"error_tags", tags},
                {"notes", report.notes}};
}

MetricReport report_from_json(const json& j) {
    MetricReport r;
    r.label = j.at("label").get<std::string>();
    r.modality = j.at("modality").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.ablation = j.at("ablation").get<std::string>();
    r.target = domain_from_json(j.at("rows").at("target"));
    r.source = domain_from_json(j.at("rows").at("source"));
    r.n_samples = j.at("n_samples").get<int>();
    r.errors = j.at("errors").get<int>();
    for (auto it = j.at("error_tags").begin(); it != j.at("error_tags").end(); ++it) {
        r.error_tags[it.key()] = it.value().get<int>();
    }
    r.notes = j.at("notes").get<std::string>();
    return r;
}

std::string render_report(const MetricReport& report) {
    std::string out = "configuration: " + report.label + "  modality: " + report.modality;
    if (!report.model.empty()) out += "  model: " + report.model;
    out += "  ablation: " + report.ablation + "\n";
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-8s %8s %10s %8s %s\n", "", "Acc", "SemF1", "H-E", "Kappa");
    out += buf;
    auto row = [&](const char* name, const DomainMetrics& d) {
        std::string he = d.h_e ? [&] {
            char b[32];
            std::snprintf(b, sizeof(b), "%.2f", *d.h_e * 100.0);
            return std::string(b);
        }() : std::string("-");
        std::string kappa = d.kappa ? [&] {
            double k100 = *d.kappa * 100.0;
            char b[64];
            std::snprintf(b, sizeof(b), "%.2f (%s)", k100, kappa_band(k100));
            return std::string(b);
        }() : std::string("-");
        std::snprintf(buf, sizeof(buf), "%-8s %8.2f %10.2f %8s %s\n", name, d.acc * 100.0,
                      d.semantic_f1 * 100.0, he.c_str(), kappa.c_str());
        out += buf;
    };
    row("Target", report.target);
    row("Source", report.source);
    std::snprintf(buf, sizeof(buf), "samples: %d  errors: %d\n", report.n_samples, report.errors);
    out += buf;
    if (!report.error_tags.empty()) {
        out += "tags:";
        for (const auto& [tag, count] : report.error_tags) {
            out += " " + tag + "=" + std::to_string(count);
        }
        out += "\n";
    }
    if (!report.notes.empty()) out += "notes: " + report.notes + "\n";
    return out;
}

}  // namespace metmap
