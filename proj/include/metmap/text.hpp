#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace metmap {

struct Corpus;  // corpus.hpp

// Reserved special token ids. These are never produced by tokenize(); they
// are inserted by training/decoding code and by the pipeline's text⊕G join.
enum Special : int {
    PAD = 0,
    BOS = 1,
    EOS = 2,
    SEP = 3,
    UNK = 4,
};

constexpr int kNumSpecials = 5;
extern const char* const kSpecialNames[kNumSpecials];  // "<pad>", "<bos>", ...

// Bijective token<->id map with the five specials at ids 0..4.
class Vocab {
public:
    Vocab();

    // Registers a token if unseen; returns its id either way.
    int add(const std::string& token);

    // Id for a token, or UNK if absent.
    int id_of(const std::string& token) const;

    bool contains(const std::string& token) const { return to_id_.count(token) > 0; }

    const std::string& token_of(int id) const;  // throws DataError on bad id

    int size() const { return static_cast<int>(tokens_.size()); }

    // Tokens including specials, in id order.
    const std::vector<std::string>& tokens() const { return tokens_; }

    // One token per line, line number == id; specials first.
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> to_id_;
};

struct TokenSequence {
    std::vector<int> ids;

    int length() const { return static_cast<int>(ids.size()); }
    bool empty() const { return ids.empty(); }
};

// Splits text into surface tokens: every CJK ideograph is one token, the
// ideographic comma U+3001 is kept as one token (it is the canonical
// multi-item label separator, so generated labels must be able to carry it),
// maximal runs of ASCII letters/digits form one token, everything else is
// dropped. Input is assumed NFC-normalized.
std::vector<std::string> tokenize_text(const std::string& text);

// Token count under the convention above (what "words" means in statistics).
int count_tokens(const std::string& text);

// Surface tokens -> ids, OOV -> UNK, tail-truncated to max_len.
TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len);

// Drops specials, concatenates the remaining tokens.
std::string detokenize(const TokenSequence& seq, const Vocab& vocab);

// Specials plus every token of every text/target/source string, in
// first-occurrence order (deterministic for a fixed corpus).
Vocab build_vocab(const Corpus& corpus);

}  // namespace metmap
