#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "branchy/errors.hpp"
#include "branchy/rng.hpp"

namespace branchy {

struct Example {
    std::vector<std::size_t> tokens;  // vocab indices, non-empty
    std::size_t label = 0;
    std::string raw_text;
};

/// Token <-> index mapping. Index 0 is reserved for the unknown token.
struct Vocab {
    std::unordered_map<std::string, std::size_t> token_to_index;
    std::vector<std::string> index_to_token{"<unk>"};

    std::size_t size() const { return index_to_token.size(); }

    std::size_t lookup(const std::string& token) const {
        auto it = token_to_index.find(token);
        return it == token_to_index.end() ? 0 : it->second;
    }
};

struct Dataset {
    std::vector<Example> examples;
    Vocab vocab;
    std::vector<std::string> label_names;
    std::size_t max_len = 0;       // 0 = no truncation
    std::size_t skipped = 0;       // empty-token utterances dropped at ingestion

    std::size_t n_classes() const { return label_names.size(); }
    std::size_t size() const { return examples.size(); }

    /// Mean token count, rounded up. Used as the default FLOP sequence length.
    std::size_t mean_length_ceil() const {
        if (examples.empty()) return 1;
        std::size_t total = 0;
        for (const auto& e : examples) total += e.tokens.size();
        return (total + examples.size() - 1) / examples.size();
    }
};

/// Lowercase, split on whitespace, strip leading/trailing .,!?;:'" from each
/// token, drop tokens that become empty.
inline std::vector<std::string> tokenize(const std::string& text) {
    static const std::string kPunct = ".,!?;:'\"";
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        std::size_t b = 0, e = tok.size();
        while (b < e && kPunct.find(tok[b]) != std::string::npos) ++b;
        while (e > b && kPunct.find(tok[e - 1]) != std::string::npos) --e;
        if (e > b) out.push_back(tok.substr(b, e - b));
    }
    return out;
}

/// Tokens with frequency >= min_count, ordered by descending frequency then
/// lexicographically, get indices from 1. Everything else maps to 0.
inline Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus,
                         std::size_t min_count) {
    if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
    std::map<std::string, std::size_t> counts;
    for (const auto& seq : corpus)
        for (const auto& tok : seq) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, c] : counts)
        if (c >= min_count) kept.emplace_back(tok, c);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, c] : kept) {
        (void)c;
        v.token_to_index.emplace(tok, v.index_to_token.size());
        v.index_to_token.push_back(tok);
    }
    return v;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Loads a "utterance<TAB>label" TSV. With a frozen vocab/label set, token
/// indices reuse the vocab (unknown -> 0) and unseen labels are an error;
/// otherwise the vocab is built from the file and labels are indexed by first
/// appearance. Empty-token utterances are skipped and counted.
inline Dataset load_tsv(const std::string& path, const Vocab* frozen_vocab = nullptr,
                        const std::vector<std::string>* frozen_labels = nullptr,
                        std::size_t min_count = 1, std::size_t max_len = 0) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);

    struct Row {
        std::vector<std::string> tokens;
        std::string label;
        std::string raw;
    };
    std::vector<Row> rows;
    Dataset ds;
    ds.max_len = max_len;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError(path + ": line " + std::to_string(lineno) +
                             ": expected \"utterance<TAB>label\"");
        }
        std::string utterance = line.substr(0, tab);
        std::string label = detail::trim(line.substr(tab + 1));
        if (label.empty()) {
            throw ParseError(path + ": line " + std::to_string(lineno) +
                             ": empty label");
        }
        auto toks = tokenize(utterance);
        if (toks.empty()) {
            ++ds.skipped;
            continue;
        }
        rows.push_back({std::move(toks), std::move(label), std::move(utterance)});
    }

    if (frozen_vocab) {
        ds.vocab = *frozen_vocab;
    } else {
        std::vector<std::vector<std::string>> corpus;
        corpus.reserve(rows.size());
        for (const auto& r : rows) corpus.push_back(r.tokens);
        ds.vocab = build_vocab(corpus, min_count);
    }

    std::unordered_map<std::string, std::size_t> label_index;
    if (frozen_labels) {
        ds.label_names = *frozen_labels;
        for (std::size_t i = 0; i < ds.label_names.size(); ++i)
            label_index.emplace(ds.label_names[i], i);
    }

    for (auto& r : rows) {
        auto it = label_index.find(r.label);
        std::size_t li;
        if (it != label_index.end()) {
            li = it->second;
        } else if (frozen_labels) {
            throw LabelError(path + ": unseen label \"" + r.label +
                             "\" under a frozen label set");
        } else {
            li = ds.label_names.size();
            label_index.emplace(r.label, li);
            ds.label_names.push_back(r.label);
        }
        Example ex;
        ex.label = li;
        ex.raw_text = std::move(r.raw);
        for (const auto& tok : r.tokens) {
            ex.tokens.push_back(ds.vocab.lookup(tok));
            if (max_len > 0 && ex.tokens.size() == max_len) break;
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

/// Synthetic intent corpus: each class owns a disjoint signature token set;
/// utterances are 3-8 tokens from the class set, with each token replaced by
/// a random other-class token with probability `noise`. At noise=0 classes
/// are perfectly separable by bag-of-words.
inline Dataset synth_generate(std::size_t n_classes, std::size_t n_per_class,
                              std::size_t vocab_per_class, double noise,
                              std::uint64_t seed, std::size_t max_len = 0) {
    if (n_classes < 2) throw ConfigError("synth_generate: need at least 2 classes");
    if (n_per_class < 1 || vocab_per_class < 1)
        throw ConfigError("synth_generate: counts must be positive");
    if (!(noise >= 0.0 && noise < 1.0))
        throw ConfigError("synth_generate: noise must lie in [0, 1)");

    Rng rng(seed);
    auto class_token = [&](std::size_t c, std::size_t j) {
        return "c" + std::to_string(c) + "w" + std::to_string(j);
    };

    std::vector<std::vector<std::string>> corpus;
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t k = 0; k < n_per_class; ++k) {
            std::size_t len = 3 + rng.index(6);  // 3..8
            std::vector<std::string> toks;
            toks.reserve(len);
            for (std::size_t t = 0; t < len; ++t) {
                std::size_t src = c;
                if (noise > 0.0 && rng.uniform() < noise) {
                    // cross-class replacement
                    std::size_t other = rng.index(n_classes - 1);
                    src = other >= c ? other + 1 : other;
                }
                toks.push_back(class_token(src, rng.index(vocab_per_class)));
            }
            corpus.push_back(std::move(toks));
            labels.push_back(c);
        }
    }

    Dataset ds;
    ds.max_len = max_len;
    ds.vocab = build_vocab(corpus, 1);
    for (std::size_t c = 0; c < n_classes; ++c)
        ds.label_names.push_back("intent" + std::to_string(c));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        Example ex;
        ex.label = labels[i];
        std::ostringstream raw;
        for (std::size_t t = 0; t < corpus[i].size(); ++t) {
            if (t) raw << ' ';
            raw << corpus[i][t];
            if (max_len == 0 || ex.tokens.size() < max_len)
                ex.tokens.push_back(ds.vocab.lookup(corpus[i][t]));
        }
        ex.raw_text = raw.str();
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

/// Deterministic shuffled partition. Dev and test sizes are floored; the
/// remainder goes to train. All splits share the vocab and label set.
inline std::array<Dataset, 3> split(const Dataset& data, double train_frac,
                                    double dev_frac, double test_frac,
                                    std::uint64_t seed) {
    if (!(train_frac > 0.0 && dev_frac > 0.0 && test_frac > 0.0))
        throw ConfigError("split: all fractions must be positive");
    if (std::abs(train_frac + dev_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("split: fractions must sum to 1");

    std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::size_t n_dev = static_cast<std::size_t>(dev_frac * static_cast<double>(n));
    std::size_t n_test = static_cast<std::size_t>(test_frac * static_cast<double>(n));
    if (n_dev + n_test >= n) throw ConfigError("split: dataset too small for the fractions");
    std::size_t n_train = n - n_dev - n_test;
    if (n_train == 0 || n_dev == 0 || n_test == 0)
        throw ConfigError("split: a split would be empty");

    std::array<Dataset, 3> out;
    for (auto& d : out) {
        d.vocab = data.vocab;
        d.label_names = data.label_names;
        d.max_len = data.max_len;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Example& ex = data.examples[order[i]];
        if (i < n_train)
            out[0].examples.push_back(ex);
        else if (i < n_train + n_dev)
            out[1].examples.push_back(ex);
        else
            out[2].examples.push_back(ex);
    }
    return out;
}

/// Writes a dataset back out as TSV (utterance<TAB>label, LF endings).
inline void write_tsv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open output file: " + path);
    for (const auto& ex : ds.examples)
        out << ex.raw_text << '\t' << ds.label_names[ex.label] << '\n';
}

}  // namespace branchy
