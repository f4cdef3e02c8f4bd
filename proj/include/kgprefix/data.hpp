// Dialogue corpus model: query/knowledge/response triplets grouped into
// conversations, a word-level tokenizer, context assembly, bag-of-words
// extraction, a deterministic synthetic corpus generator, and the
// line-delimited corpus file format.
#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgprefix/common.hpp"

namespace kgprefix {

struct DialogueTurn {
    std::string query;
    std::string knowledge;  // grounded knowledge; may be empty for knowledge-free turns
    std::string response;
};

struct Conversation {
    std::string id;
    std::string split;  // train | valid | test_seen | test_unseen
    std::string topic;
    std::vector<DialogueTurn> turns;
};

struct Corpus {
    std::vector<Conversation> conversations;

    std::vector<const Conversation*> split(const std::string& name) const;
    long turn_count(const std::string& split_name) const;
    std::set<std::string> topics(const std::string& split_name) const;
};

// Whitespace tokenizer with punctuation split. Detokenization attaches
// punctuation tokens to the previous word, so corpus text round-trips
// exactly after whitespace normalization.
class Tokenizer {
public:
    static constexpr long pad_id = 0;
    static constexpr long bos_id = 1;
    static constexpr long eos_id = 2;
    static constexpr long sep_id = 3;
    static constexpr long unk_id = 4;
    static constexpr long n_specials = 5;

    // Vocabulary from every word in the corpus (all splits), sorted, after
    // the special tokens. Throws ConfigError when the cap is exceeded.
    static Tokenizer build(const Corpus& corpus, long max_vocab);

    long vocab_size() const { return static_cast<long>(id_to_word_.size()); }
    long word_id(const std::string& word) const;       // unk_id if absent
    const std::string& word(long id) const;
    bool is_special(long id) const { return id < n_specials; }

    std::vector<long> encode(const std::string& text) const;  // no specials added
    std::string decode(const std::vector<long>& ids) const;   // specials skipped

    static std::vector<std::string> split_words(const std::string& text);
    static bool is_punctuation(const std::string& word);

    uint64_t vocab_hash() const;

private:
    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, long> word_to_id_;
};

// Context for turn i (1-based): BOS Y_{i-1} SEP U_i EOS, turn 1 has no
// previous-response segment. Overlong contexts drop their oldest middle
// tokens (left truncation) and always keep BOS/EOS.
std::vector<long> build_context(const Conversation& conv, long turn_index, const Tokenizer& tok,
                                long max_len);

const std::set<std::string>& stopwords_v1();

// Lowercase, strip punctuation, drop stopwords and out-of-vocabulary
// words, deduplicate. Result is sorted (set of word ids).
std::set<long> extract_bow(const std::string& response, const Tokenizer& tok);

struct GeneratorOptions {
    uint64_t seed = 7;
    long n_conversations = 32;  // train split size; other splits derive from it
    long n_topics = 16;
    long turns_per_conversation = 4;
};

// Deterministic templated worlds: every turn asks about one entity fact,
// the knowledge sentence states it, and the response paraphrases it with
// filler. Unseen-split conversations use topics absent from train.
Corpus generate_synthetic_corpus(const GeneratorOptions& options);

// line-delimited format: header {"format":"kgd-corpus","version":1},
// then one conversation object per line
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace kgprefix
