#include "kgprefix/data.hpp"

namespace kgprefix {

// v1: ~150 common English function words. Content words (nouns, verbs of
// substance, numerals) deliberately stay out so bag-of-words supervision
// keeps them.
const std::set<std::string>& stopwords_v1() {
    static const std::set<std::string> words = {
        "a",       "about",  "above",   "after",   "again",  "all",    "also",   "am",
        "an",      "and",    "any",     "are",     "as",     "at",     "be",     "because",
        "been",    "before", "being",   "below",   "between","both",   "but",    "by",
        "can",     "cannot", "could",   "did",     "do",     "does",   "doing",  "down",
        "during",  "each",   "either",  "else",    "ever",   "every",  "few",    "for",
        "from",    "further","had",     "has",     "have",   "having", "he",     "her",
        "here",    "hers",   "herself", "him",     "himself","his",    "how",    "i",
        "if",      "in",     "into",    "is",      "it",     "its",    "itself", "just",
        "let",     "may",    "me",      "might",   "more",   "most",   "much",   "must",
        "my",      "myself", "neither", "no",      "nor",    "not",    "now",    "of",
        "off",     "on",     "once",    "only",    "or",     "other",  "ought",  "our",
        "ours",    "out",    "over",    "own",     "quite",  "rather", "really", "same",
        "shall",   "she",    "should",  "so",      "some",   "such",   "than",   "that",
        "the",     "their",  "theirs",  "them",    "then",   "there",  "these",  "they",
        "this",    "those",  "through", "to",      "too",    "under",  "until",  "up",
        "upon",    "us",     "very",    "was",     "we",     "well",   "were",   "what",
        "when",    "where",  "which",   "while",   "who",    "whom",   "why",    "will",
        "with",    "would",  "yet",     "you",     "your",   "yours",  "yourself",
    };
    return words;
}

}  // namespace kgprefix
