#include "kgprefix/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kgprefix {

using nlohmann::json;

// ----------------------------- corpus -----------------------------

std::vector<const Conversation*> Corpus::split(const std::string& name) const {
    std::vector<const Conversation*> out;
    for (const auto& c : conversations)
        if (c.split == name) out.push_back(&c);
    return out;
}

long Corpus::turn_count(const std::string& split_name) const {
    long n = 0;
    for (const auto& c : conversations)
        if (c.split == split_name) n += static_cast<long>(c.turns.size());
    return n;
}

std::set<std::string> Corpus::topics(const std::string& split_name) const {
    std::set<std::string> out;
    for (const auto& c : conversations)
        if (c.split == split_name) out.insert(c.topic);
    return out;
}

// ----------------------------- tokenizer -----------------------------

bool Tokenizer::is_punctuation(const std::string& word) {
    return word.size() == 1 && !std::isalnum(static_cast<unsigned char>(word[0]));
}

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            current.push_back(ch);
            continue;
        }
        if (!current.empty()) {
            out.push_back(current);
            current.clear();
        }
        if (!std::isspace(u)) out.push_back(std::string(1, ch));
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

Tokenizer Tokenizer::build(const Corpus& corpus, long max_vocab) {
    std::set<std::string> words;
    for (const auto& conv : corpus.conversations) {
        for (const auto& turn : conv.turns) {
            for (const std::string& text : {turn.query, turn.knowledge, turn.response})
                for (const auto& w : split_words(text)) words.insert(w);
        }
    }
    Tokenizer tok;
    tok.id_to_word_ = {"<pad>", "<s>", "</s>", "<sep>", "<unk>"};
    for (const auto& w : words) tok.id_to_word_.push_back(w);
    if (static_cast<long>(tok.id_to_word_.size()) > max_vocab)
        throw ConfigError("corpus vocabulary (" + std::to_string(tok.id_to_word_.size()) +
                          ") exceeds the cap of " + std::to_string(max_vocab));
    for (size_t i = 0; i < tok.id_to_word_.size(); ++i)
        tok.word_to_id_[tok.id_to_word_[i]] = static_cast<long>(i);
    return tok;
}

long Tokenizer::word_id(const std::string& word) const {
    auto it = word_to_id_.find(word);
    return it == word_to_id_.end() ? unk_id : it->second;
}

const std::string& Tokenizer::word(long id) const {
    if (id < 0 || id >= vocab_size()) throw IndexError("token id out of vocabulary");
    return id_to_word_[static_cast<size_t>(id)];
}

std::vector<long> Tokenizer::encode(const std::string& text) const {
    std::vector<long> out;
    for (const auto& w : split_words(text)) out.push_back(word_id(w));
    return out;
}

std::string Tokenizer::decode(const std::vector<long>& ids) const {
    std::string out;
    for (long id : ids) {
        if (id == pad_id || id == bos_id || id == eos_id || id == sep_id) continue;
        const std::string& w = word(id);
        if (out.empty()) {
            out = w;
        } else if (is_punctuation(w)) {
            out += w;
        } else {
            out += " " + w;
        }
    }
    return out;
}

uint64_t Tokenizer::vocab_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : id_to_word_) {
        h = fnv1a(w, h);
        h = fnv1a("\x1f", h);
    }
    return h;
}

// ----------------------------- context -----------------------------

std::vector<long> build_context(const Conversation& conv, long turn_index, const Tokenizer& tok,
                                long max_len) {
    if (turn_index < 1 || turn_index > static_cast<long>(conv.turns.size()))
        throw IndexError("turn index " + std::to_string(turn_index) + " out of range");
    if (max_len < 3) throw ConfigError("context budget must be at least 3 tokens");
    std::vector<long> middle;
    if (turn_index > 1) {
        middle = tok.encode(conv.turns[static_cast<size_t>(turn_index - 2)].response);
        middle.push_back(Tokenizer::sep_id);
    }
    const auto query = tok.encode(conv.turns[static_cast<size_t>(turn_index - 1)].query);
    middle.insert(middle.end(), query.begin(), query.end());
    const long cap = max_len - 2;
    if (static_cast<long>(middle.size()) > cap)
        middle.erase(middle.begin(), middle.end() - cap);
    std::vector<long> out;
    out.reserve(middle.size() + 2);
    out.push_back(Tokenizer::bos_id);
    out.insert(out.end(), middle.begin(), middle.end());
    out.push_back(Tokenizer::eos_id);
    return out;
}

// ----------------------------- bag of words -----------------------------

std::set<long> extract_bow(const std::string& response, const Tokenizer& tok) {
    std::string lowered = response;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::set<long> bag;
    const auto& stop = stopwords_v1();
    for (const auto& w : Tokenizer::split_words(lowered)) {
        if (Tokenizer::is_punctuation(w)) continue;
        if (stop.count(w)) continue;
        const long id = tok.word_id(w);
        if (id == Tokenizer::unk_id) continue;
        bag.insert(id);
    }
    return bag;
}

// ----------------------------- synthetic generator -----------------------------

namespace {

const std::vector<std::string>& topic_pool() {
    static const std::vector<std::string> v = {
        "beverages",  "mountains", "music",     "painting",   "astronomy",    "cooking",
        "football",   "history",   "robotics",  "gardening",  "cinema",       "literature",
        "chemistry",  "oceans",    "travel",    "architecture", "photography", "dancing",
        "fishing",    "trains",    "castles",   "deserts",    "volcanoes",    "bridges"};
    return v;
}

const std::vector<std::string>& adjective_pool() {
    static const std::vector<std::string> v = {
        "silver", "crimson", "ancient", "golden",  "hollow", "bright", "quiet",   "rapid",
        "frozen", "amber",   "misty",   "velvet",  "iron",   "coral",  "shadow",  "sunny",
        "wild",   "gentle",  "broken",  "royal",   "lunar",  "emerald", "copper", "distant"};
    return v;
}

const std::vector<std::string>& noun_pool() {
    static const std::vector<std::string> v = {
        "falcon",   "harbor",   "engine",      "garden",   "lantern",  "citadel",
        "orchard",  "compass",  "fountain",    "archive",  "meadow",   "beacon",
        "galleon",  "workshop", "observatory", "pavilion", "mill",     "grove",
        "tavern",   "lighthouse", "quarry",    "vineyard", "forge",    "aqueduct"};
    return v;
}

const std::vector<std::string>& year_pool() {
    static const std::vector<std::string> v = {"1820", "1837", "1849", "1861", "1876", "1888",
                                               "1893", "1901", "1912", "1924", "1931", "1946",
                                               "1953", "1959", "1964", "1972", "1983", "1989",
                                               "1995", "2003"};
    return v;
}

const std::vector<std::string>& place_pool() {
    static const std::vector<std::string> v = {"norway",  "japan",    "peru",    "iceland",
                                               "morocco", "portugal", "chile",   "finland",
                                               "scotland", "vietnam", "kenya",   "austria",
                                               "bolivia", "croatia",  "nepal",   "ireland"};
    return v;
}

const std::vector<std::string>& thing_pool() {
    static const std::vector<std::string> v = {"arches",   "murals",    "bells",    "carvings",
                                               "mosaics",  "towers",    "lanterns", "statues",
                                               "tapestries", "windmills", "cellars", "terraces",
                                               "spires",   "courtyards", "frescoes", "galleries"};
    return v;
}

const std::vector<std::string>& activity_pool() {
    static const std::vector<std::string> v = {"baking",    "racing",   "weaving",  "brewing",
                                               "stargazing", "climbing", "sailing", "farming",
                                               "printing",  "carving",  "mining",   "herding",
                                               "forging",   "trading",  "singing",  "hiking"};
    return v;
}

struct Fact {
    long relation;      // index into the relation templates
    std::string value;  // year/place/thing/activity
};

std::string knowledge_sentence(const std::string& entity, const Fact& fact) {
    switch (fact.relation) {
        case 0: return "the " + entity + " was created in " + fact.value + " .";
        case 1: return "the " + entity + " is located in " + fact.value + " .";
        case 2: return "the " + entity + " is famous for its " + fact.value + " .";
        default: return "the " + entity + " is used for " + fact.value + " .";
    }
}

std::string query_sentence(const std::string& entity, const Fact& fact, Rng& rng) {
    switch (fact.relation) {
        case 0:
            return rng.below(2) ? "when was the " + entity + " created ?"
                                : "do you know when the " + entity + " was created ?";
        case 1:
            return rng.below(2) ? "where is the " + entity + " located ?"
                                : "do you know where the " + entity + " is located ?";
        case 2:
            return rng.below(2) ? "what is the " + entity + " famous for ?"
                                : "why is the " + entity + " so famous ?";
        default:
            return rng.below(2) ? "what is the " + entity + " used for ?"
                                : "do you know what the " + entity + " is used for ?";
    }
}

std::string response_sentence(const std::string& entity, const Fact& fact, Rng& rng) {
    const size_t variant = rng.below(2);
    switch (fact.relation) {
        case 0:
            return variant ? "well , i heard the " + entity + " was created in " + fact.value + " ."
                           : "i believe the " + entity + " was created in " + fact.value + " .";
        case 1:
            return variant ? "as far as i know the " + entity + " is located in " + fact.value + " ."
                           : "the " + entity + " is located in " + fact.value +
                                 " , i would love to visit .";
        case 2:
            return variant ? "the " + entity + " is famous for its " + fact.value +
                                 " , many people love that ."
                           : "i read the " + entity + " is famous for its " + fact.value + " .";
        default:
            return variant ? "people say the " + entity + " is used for " + fact.value + " ."
                           : "the " + entity + " is used for " + fact.value + " these days .";
    }
}

const std::vector<std::string>& value_pool_for(long relation) {
    switch (relation) {
        case 0: return year_pool();
        case 1: return place_pool();
        case 2: return thing_pool();
        default: return activity_pool();
    }
}

}  // namespace

Corpus generate_synthetic_corpus(const GeneratorOptions& options) {
    if (options.n_conversations < 1)
        throw ConfigError("n_conversations must be >= 1 (empty corpus requested)");
    if (options.turns_per_conversation < 1)
        throw ConfigError("turns_per_conversation must be >= 1");
    if (options.n_topics < 2 || options.n_topics > static_cast<long>(topic_pool().size()))
        throw ConfigError("n_topics must be in [2, " + std::to_string(topic_pool().size()) + "]");

    const long n_train = options.n_conversations;
    const long n_valid = std::max<long>(2, n_train / 8);
    const long n_test = std::max<long>(2, n_train / 4);
    const long total_convs = n_train + n_valid + 2 * n_test;
    const long capacity =
        static_cast<long>(adjective_pool().size() * noun_pool().size());
    if (total_convs * options.turns_per_conversation > capacity)
        throw CapacityError("requested " + std::to_string(total_convs) + " conversations x " +
                            std::to_string(options.turns_per_conversation) +
                            " turns exceeds the entity template space of " +
                            std::to_string(capacity));

    const long n_seen_topics = std::max<long>(1, (3 * options.n_topics + 3) / 4);
    std::vector<std::string> seen_topics(topic_pool().begin(),
                                         topic_pool().begin() + n_seen_topics);
    std::vector<std::string> unseen_topics(topic_pool().begin() + n_seen_topics,
                                           topic_pool().begin() + options.n_topics);

    Rng rng(options.seed);
    std::set<long> used_entities;
    auto fresh_entity = [&]() {
        const long n_adj = static_cast<long>(adjective_pool().size());
        const long n_noun = static_cast<long>(noun_pool().size());
        long code = -1;
        for (int attempt = 0; attempt < 16; ++attempt) {
            const long c = static_cast<long>(rng.below(static_cast<size_t>(n_adj * n_noun)));
            if (!used_entities.count(c)) {
                code = c;
                break;
            }
        }
        if (code < 0) {  // pools nearly exhausted: first free slot keeps this deterministic
            for (long c = 0; c < n_adj * n_noun; ++c) {
                if (!used_entities.count(c)) {
                    code = c;
                    break;
                }
            }
        }
        used_entities.insert(code);
        return adjective_pool()[static_cast<size_t>(code / n_noun)] + " " +
               noun_pool()[static_cast<size_t>(code % n_noun)];
    };

    Corpus corpus;
    auto emit_split = [&](const std::string& split, long count,
                          const std::vector<std::string>& topics) {
        for (long ci = 0; ci < count; ++ci) {
            Conversation conv;
            conv.split = split;
            std::ostringstream id;
            id << split << "-" << ci;
            conv.id = id.str();
            conv.topic = topics[rng.below(topics.size())];
            for (long ti = 0; ti < options.turns_per_conversation; ++ti) {
                const std::string entity = fresh_entity();
                Fact fact;
                fact.relation = static_cast<long>(rng.below(4));
                fact.value = value_pool_for(fact.relation)[rng.below(
                    value_pool_for(fact.relation).size())];
                DialogueTurn turn;
                turn.query = query_sentence(entity, fact, rng);
                if (ti == 0)
                    turn.query = "i really enjoy talking about " + conv.topic + " . " + turn.query;
                turn.knowledge = knowledge_sentence(entity, fact);
                turn.response = response_sentence(entity, fact, rng);
                conv.turns.push_back(std::move(turn));
            }
            corpus.conversations.push_back(std::move(conv));
        }
    };

    emit_split("train", n_train, seen_topics);
    emit_split("valid", n_valid, seen_topics);
    emit_split("test_seen", n_test, seen_topics);
    emit_split("test_unseen", n_test, unseen_topics);
    return corpus;
}

// ----------------------------- serialization -----------------------------

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open corpus file for writing: " + path);
    out << json{{"format", "kgd-corpus"}, {"version", 1}}.dump() << "\n";
    for (const auto& conv : corpus.conversations) {
        json turns = json::array();
        for (const auto& t : conv.turns)
            turns.push_back(
                {{"query", t.query}, {"knowledge", t.knowledge}, {"response", t.response}});
        json line = {
            {"id", conv.id}, {"split", conv.split}, {"topic", conv.topic}, {"turns", turns}};
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("failed writing corpus file: " + path);
}

namespace {

std::string require_string(const json& j, const char* field, long line_no) {
    if (!j.contains(field) || !j.at(field).is_string())
        throw ParseError("corpus line " + std::to_string(line_no) + ": missing field \"" +
                         field + "\"");
    return j.at(field).get<std::string>();
}

}  // namespace

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::string line;
    long line_no = 0;
    Corpus corpus;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        if (line_no == 1) {
            if (!j.contains("format") || j.at("format") != "kgd-corpus" ||
                !j.contains("version") || j.at("version") != 1)
                throw ParseError("corpus line 1: expected header "
                                 "{\"format\":\"kgd-corpus\",\"version\":1}");
            continue;
        }
        Conversation conv;
        conv.id = require_string(j, "id", line_no);
        conv.split = require_string(j, "split", line_no);
        conv.topic = require_string(j, "topic", line_no);
        if (!j.contains("turns") || !j.at("turns").is_array())
            throw ParseError("corpus line " + std::to_string(line_no) +
                             ": missing field \"turns\"");
        for (const auto& tj : j.at("turns")) {
            DialogueTurn turn;
            turn.query = require_string(tj, "query", line_no);
            turn.knowledge = require_string(tj, "knowledge", line_no);
            turn.response = require_string(tj, "response", line_no);
            if (turn.query.empty() || turn.response.empty())
                throw ParseError("corpus line " + std::to_string(line_no) +
                                 ": query/response must be nonempty");
            conv.turns.push_back(std::move(turn));
        }
        corpus.conversations.push_back(std::move(conv));
    }
    if (line_no == 0) throw ParseError("corpus file is empty: " + path);
    return corpus;
}

}  // namespace kgprefix
