#pragma once

// Whitespace tokenizer over the closed synthetic vocabulary, prompt
// templating, and class-word extraction from generated captions.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "viewco/errors.hpp"

namespace viewco {

namespace detail {

// lowercase and strip punctuation from token edges
inline std::string normalize_word(const std::string& raw) {
    size_t b = 0, e = raw.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string w = raw.substr(b, e - b);
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return w;
}

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string raw;
    while (is >> raw) {
        std::string w = normalize_word(raw);
        if (!w.empty()) words.push_back(w);
    }
    return words;
}

} // namespace detail

struct Vocab {
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int UNK = 3;

    std::map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token{"<pad>", "<bos>", "<eos>", "<unk>"};

    static Vocab build(const std::vector<std::string>& texts) {
        std::set<std::string> words;
        for (const auto& t : texts)
            for (const auto& w : detail::split_words(t)) words.insert(w);
        Vocab v;
        for (const auto& w : words) {
            v.token_to_id[w] = static_cast<int>(v.id_to_token.size());
            v.id_to_token.push_back(w);
        }
        return v;
    }

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id(const std::string& word) const {
        auto it = token_to_id.find(word);
        return it == token_to_id.end() ? UNK : it->second;
    }

    void save(const std::string& path) const {
        std::string tmp = path + ".tmp";
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot open " + tmp);
        for (size_t i = 0; i < id_to_token.size(); ++i)
            os << id_to_token[i] << "\t" << i << "\n";
        os.close();
        std::rename(tmp.c_str(), path.c_str());
    }

    static Vocab load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw FormatError("cannot open vocab file " + path);
        Vocab v;
        v.id_to_token.clear();
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            size_t tab = line.find('\t');
            if (tab == std::string::npos) throw FormatError("malformed vocab line: " + line);
            std::string tok = line.substr(0, tab);
            int id = std::stoi(line.substr(tab + 1));
            if (id != static_cast<int>(v.id_to_token.size()))
                throw FormatError("vocab ids not dense from 0");
            v.id_to_token.push_back(tok);
            if (id >= 4) v.token_to_id[tok] = id;
        }
        if (v.id_to_token.size() < 4) throw FormatError("vocab missing reserved specials");
        return v;
    }
};

// BOS + word ids + EOS, truncated to max_len and PAD-filled.
inline std::vector<int> tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    if (max_len < 3) throw ConfigError("tokenize: max_len must be >= 3");
    std::vector<std::string> words = detail::split_words(text);
    if (words.empty()) throw EmptyText("tokenize: no words in input");
    std::vector<int> ids;
    ids.reserve(max_len);
    ids.push_back(Vocab::BOS);
    for (const auto& w : words) {
        if (static_cast<int>(ids.size()) == max_len - 1) break; // leave room for EOS
        ids.push_back(vocab.id(w));
    }
    ids.push_back(Vocab::EOS);
    while (static_cast<int>(ids.size()) < max_len) ids.push_back(Vocab::PAD);
    return ids;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id < 4 || id >= vocab.size()) continue;
        if (!out.empty()) out += " ";
        out += vocab.id_to_token[id];
    }
    return out;
}

// ---------------------------------------------------------------------------
// prompt engineering

struct PromptSet {
    std::vector<std::string> templates;

    static PromptSet defaults() {
        return PromptSet{{"a photo of a {}.", "a picture of a {}.", "an image of a {}."}};
    }

    int count() const { return static_cast<int>(templates.size()); }

    void validate() const {
        if (templates.empty()) throw ConfigError("prompt set is empty");
        for (const auto& t : templates) {
            size_t first = t.find("{}");
            if (first == std::string::npos || t.find("{}", first + 1) != std::string::npos)
                throw ConfigError("prompt template must contain exactly one {} slot: " + t);
        }
    }
};

inline std::vector<std::string> generate_prompts(const std::string& class_word,
                                                 const PromptSet& prompts) {
    if (class_word.empty()) throw EmptyText("generate_prompts: empty class word");
    prompts.validate();
    std::vector<std::string> out;
    out.reserve(prompts.templates.size());
    for (const auto& t : prompts.templates) {
        std::string s = t;
        s.replace(s.find("{}"), 2, class_word);
        out.push_back(s);
    }
    return out;
}

// The generated captions embed exactly one known class word; find it.
inline std::string extract_class_word(const std::string& caption,
                                      const std::vector<std::string>& known_classes) {
    std::vector<std::string> words = detail::split_words(caption);
    std::string found;
    int hits = 0;
    for (const auto& w : words)
        for (const auto& c : known_classes)
            if (w == c) {
                found = c;
                ++hits;
            }
    if (hits != 1)
        throw AmbiguousCaption("expected exactly one class word, found " + std::to_string(hits) +
                               " in: " + caption);
    return found;
}

} // namespace viewco
