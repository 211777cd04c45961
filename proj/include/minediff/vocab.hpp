#pragma once

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "minediff/rng.hpp"
#include "minediff/tensor.hpp"

namespace minediff {

// Token table plus frozen embedding rows; the stand-in for a frozen text
// encoder. Row i of embedding_table is the embedding of token i.
struct Vocabulary {
    std::vector<std::string> tokens;
    Tensor embedding_table;  // [vocab_size x dim]
    int dim = 0;

    static Vocabulary build(std::vector<std::string> token_list, int embed_dim, uint64_t seed) {
        if (token_list.empty()) throw std::invalid_argument("vocabulary: empty token list");
        Vocabulary v;
        v.tokens = std::move(token_list);
        v.dim = embed_dim;
        Rng rng(seed);
        v.embedding_table = Tensor({static_cast<int>(v.tokens.size()), embed_dim});
        const double sigma = 1.0 / std::sqrt(static_cast<double>(embed_dim));
        for (double& x : v.embedding_table.v) x = rng.normal(0.0, sigma);
        v.rebuild_index();
        return v;
    }

    void rebuild_index() {
        index_.clear();
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (!index_.emplace(tokens[i], static_cast<int>(i)).second) {
                throw std::invalid_argument("vocabulary: duplicate token " + tokens[i]);
            }
        }
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) throw std::invalid_argument("unknown token: " + token);
        return it->second;
    }

    std::vector<int> ids(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    int size() const { return static_cast<int>(tokens.size()); }

    // mean row norm of the table; mining initialization is scaled to it
    double mean_row_norm() const {
        double s = 0.0;
        for (int r = 0; r < embedding_table.rows(); ++r) {
            double q = 0.0;
            for (int c = 0; c < dim; ++c) q += embedding_table.at(r, c) * embedding_table.at(r, c);
            s += std::sqrt(q);
        }
        return s / embedding_table.rows();
    }

private:
    std::map<std::string, int> index_;
};

enum class Provenance { kTokenized, kMined, kAttacked, kScaled };

// A length-L sequence of d-dimensional rows; the unit mined, attacked and
// optimized by every stage.
struct PromptEmbedding {
    Tensor rows;  // [L x d]
    Provenance provenance = Provenance::kTokenized;

    int length() const { return rows.rows(); }
    int dim() const { return rows.cols(); }
};

inline PromptEmbedding encode_prompt(const Vocabulary& vocab, const std::vector<int>& token_ids) {
    if (token_ids.empty()) throw std::invalid_argument("encode_prompt: empty token sequence");
    PromptEmbedding e;
    e.rows = Tensor({static_cast<int>(token_ids.size()), vocab.dim});
    for (size_t i = 0; i < token_ids.size(); ++i) {
        const int id = token_ids[i];
        if (id < 0 || id >= vocab.size()) throw std::invalid_argument("encode_prompt: unknown token id " + std::to_string(id));
        for (int c = 0; c < vocab.dim; ++c) e.rows.at(static_cast<int>(i), c) = vocab.embedding_table.at(id, c);
    }
    e.provenance = Provenance::kTokenized;
    return e;
}

inline PromptEmbedding encode_prompt(const Vocabulary& vocab, const std::vector<std::string>& toks) {
    return encode_prompt(vocab, vocab.ids(toks));
}

inline PromptEmbedding scale_embedding(const PromptEmbedding& c, double gamma) {
    PromptEmbedding out;
    out.rows = scaled(c.rows, gamma);
    out.provenance = Provenance::kScaled;
    return out;
}

// ---- default world vocabulary and prompt lists -----------------------------

inline std::string component_token(int component) { return "comp" + std::to_string(component); }

// Token list for the default world: a null token, fillers, the concept token
// and one token per mixture component.
inline std::vector<std::string> default_tokens(int component_count, const std::string& concept_name) {
    std::vector<std::string> toks = {"<null>", "a", "the", "of", "nice", "photo", concept_name};
    for (int i = 0; i < component_count; ++i) toks.push_back(component_token(i));
    return toks;
}

inline std::vector<std::string> anchor_prompt_tokens() { return {"a", "photo"}; }
inline std::vector<std::string> null_prompt_tokens() { return {"<null>"}; }

// A prompt with a known subject. component < 0 means the subject is the
// concept token rather than a specific component.
struct SubjectPrompt {
    std::vector<std::string> tokens;
    int component = -1;
};

// Training templates: 2-4 token sequences, subject plus fillers.
inline std::vector<std::vector<std::string>> subject_templates(const std::string& subject) {
    return {
        {"a", subject, "photo"},
        {"the", subject, "photo"},
        {"a", "nice", subject, "photo"},
        {"a", "photo", "of", subject},
        {subject, "photo"},
    };
}

inline std::vector<std::vector<std::string>> generic_prompts() {
    return {{"a", "photo"}, {"the", "photo"}, {"a", "nice", "photo"}};
}

// Deterministic evaluation prompts: subject token in a random position among
// 1-3 fillers, deduplicated, exactly `count` entries.
inline std::vector<SubjectPrompt> build_subject_prompts(const std::vector<std::pair<std::string, int>>& subjects,
                                                        int count, uint64_t seed) {
    if (subjects.empty() || count <= 0) throw std::invalid_argument("build_subject_prompts: empty request");
    const std::vector<std::string> fillers = {"a", "the", "of", "nice", "photo"};
    Rng rng(seed);
    std::vector<SubjectPrompt> out;
    std::set<std::string> seen;
    // fixed templates first so the obvious phrasings are always present
    for (const auto& [subject, component] : subjects) {
        for (const auto& tmpl : subject_templates(subject)) {
            if (static_cast<int>(out.size()) >= count) break;
            std::string key;
            for (const auto& t : tmpl) key += t + " ";
            if (seen.insert(key).second) out.push_back({tmpl, component});
        }
    }
    int guard = 0;
    while (static_cast<int>(out.size()) < count) {
        if (++guard > 100000) throw std::runtime_error("build_subject_prompts: cannot reach requested count");
        const auto& [subject, component] = subjects[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(subjects.size()) - 1))];
        const int n_fill = static_cast<int>(rng.uniform_int(1, 3));
        const int subject_pos = static_cast<int>(rng.uniform_int(0, n_fill));
        std::vector<std::string> toks;
        for (int i = 0; i <= n_fill; ++i) {
            if (i == subject_pos) {
                toks.push_back(subject);
            } else {
                toks.push_back(fillers[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(fillers.size()) - 1))]);
            }
        }
        std::string key;
        for (const auto& t : toks) key += t + " ";
        if (seen.insert(key).second) out.push_back({toks, component});
    }
    return out;
}

}  // namespace minediff
