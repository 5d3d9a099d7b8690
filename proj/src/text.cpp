#include "metmap/text.hpp"

#include "metmap/common.hpp"
#include "metmap/corpus.hpp"

#include <fstream>
#include <sstream>

namespace metmap {

const char* const kSpecialNames[kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};

Vocab::Vocab() {
    for (const char* name : kSpecialNames) {
        to_id_.emplace(name, static_cast<int>(tokens_.size()));
        tokens_.emplace_back(name);
    }
}

int Vocab::add(const std::string& token) {
    auto it = to_id_.find(token);
    if (it != to_id_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    to_id_.emplace(token, id);
    tokens_.push_back(token);
    return id;
}

int Vocab::id_of(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? UNK : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<size_t>(id)];
}

void Vocab::save(const std::string& path) const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    write_file(path, out);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocab file: " + path);
    Vocab v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno < kNumSpecials) {
            if (line != kSpecialNames[lineno]) {
                throw DataError("vocab file " + path + " line " + std::to_string(lineno + 1) +
                                ": expected special " + kSpecialNames[lineno]);
            }
        } else {
            if (line.empty()) {
                throw DataError("vocab file " + path + " line " + std::to_string(lineno + 1) +
                                ": empty token");
            }
            if (v.contains(line)) {
                throw DataError("vocab file " + path + " line " + std::to_string(lineno + 1) +
                                ": duplicate token");
            }
            v.add(line);
        }
        ++lineno;
    }
    if (lineno < kNumSpecials) throw DataError("vocab file too short: " + path);
    return v;
}

namespace {

bool is_cjk_token_char(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF) ||   // unified ideographs
           (cp >= 0x3400 && cp <= 0x4DBF) ||   // extension A
           (cp >= 0xF900 && cp <= 0xFAFF) ||   // compatibility ideographs
           cp == 0x3001;                       // ideographic comma (label separator)
}

bool is_ascii_alnum(char32_t cp) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& text) {
    std::vector<std::string> tokens;
    std::string run;
    for (char32_t cp : utf8_decode(text)) {
        if (is_ascii_alnum(cp)) {
            run += static_cast<char>(cp);
            continue;
        }
        if (!run.empty()) {
            tokens.push_back(std::move(run));
            run.clear();
        }
        if (is_cjk_token_char(cp)) {
            std::string t;
            utf8_append(t, cp);
            tokens.push_back(std::move(t));
        }
    }
    if (!run.empty()) tokens.push_back(std::move(run));
    return tokens;
}

int count_tokens(const std::string& text) {
    return static_cast<int>(tokenize_text(text).size());
}

TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    if (max_len < 1) throw DataError("tokenize: max_len must be >= 1");
    TokenSequence seq;
    for (const auto& tok : tokenize_text(text)) {
        if (seq.length() >= max_len) break;
        seq.ids.push_back(vocab.id_of(tok));
    }
    return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
    std::string out;
    for (int id : seq.ids) {
        const std::string& tok = vocab.token_of(id);
        if (id < kNumSpecials) continue;
        out += tok;
    }
    return out;
}

Vocab build_vocab(const Corpus& corpus) {
    Vocab v;
    for (const Sample& s : corpus.samples) {
        for (const auto& tok : tokenize_text(s.text)) v.add(tok);
        for (const auto& t : s.targets) {
            for (const auto& tok : tokenize_text(t)) v.add(tok);
        }
        for (const auto& t : s.sources) {
            for (const auto& tok : tokenize_text(t)) v.add(tok);
        }
    }
    return v;
}

}  // namespace metmap
