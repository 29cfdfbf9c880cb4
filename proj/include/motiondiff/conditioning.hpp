#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "motiondiff/errors.hpp"
#include "motiondiff/ops.hpp"
#include "motiondiff/rng.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// How the intensity embedding joins the text conditioning.
enum class FusionMode {
    None,         // text tokens only (intensity ignored)
    TokenConcat,  // intensity rows appended to the token sequence (default)
    GlobalAdd,    // intensity pooled into the global conditioning vector
    TextWord,     // reserved intensity word appended to the caption
};

inline FusionMode fusion_from_string(const std::string& s) {
    if (s == "none") return FusionMode::None;
    if (s == "token_concat") return FusionMode::TokenConcat;
    if (s == "global_add") return FusionMode::GlobalAdd;
    if (s == "text_word") return FusionMode::TextWord;
    throw ConfigError("unknown fusion mode '" + s +
                      "' (none | token_concat | global_add | text_word)");
}

inline std::string fusion_to_string(FusionMode m) {
    switch (m) {
        case FusionMode::None: return "none";
        case FusionMode::TokenConcat: return "token_concat";
        case FusionMode::GlobalAdd: return "global_add";
        case FusionMode::TextWord: return "text_word";
    }
    return "none";
}

// Fused conditioning consumed by the denoiser's cross-attention.
template <typename Real>
struct Conditioning {
    Tensor<Real> tokens;      // [N_fused, d]
    Tensor<Real> global_vec;  // [d] when mode == GlobalAdd, empty otherwise
    FusionMode mode = FusionMode::None;
    int text_token_count = 0;       // rows of the text prefix within `tokens`
    std::vector<int> token_ids;     // provenance (text ids only)
};

// Frozen toy vocabulary with fixed random embeddings; the stand-in for a
// pretrained text encoder. Words cover the caption templates of the clip
// generator plus ten reserved intensity words.
template <typename Real>
struct TokenTable {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> ids;
    Tensor<Real> embeddings;  // [V, d]

    int dim() const { return embeddings.dim(1); }
    int size() const { return static_cast<int>(words.size()); }

    int id_of(const std::string& w) const {
        auto it = ids.find(w);
        if (it == ids.end()) throw InputError("unknown word '" + w + "'");
        return it->second;
    }

    int intensity_id(int level) const {
        if (level < 1 || level > 10) {
            throw InputError("intensity level " + std::to_string(level) + " outside [1,10]");
        }
        return id_of("intensity-" + std::to_string(level));
    }
};

inline const std::vector<std::string>& vocabulary_words() {
    static const std::vector<std::string> kWords = [] {
        std::vector<std::string> w = {"red",  "green",  "blue", "yellow", "cyan",
                                      "magenta", "disk", "square", "moves", "drifts",
                                      "left", "right",  "up",   "down"};
        for (int i = 1; i <= 10; ++i) w.push_back("intensity-" + std::to_string(i));
        return w;
    }();
    return kWords;
}

template <typename Real>
TokenTable<Real> make_token_table(int dim, uint64_t seed) {
    TokenTable<Real> table;
    table.words = vocabulary_words();
    for (size_t i = 0; i < table.words.size(); ++i)
        table.ids[table.words[i]] = static_cast<int>(i);
    Rng rng(seed);
    table.embeddings = Tensor<Real>({table.size(), dim});
    for (int64_t i = 0; i < table.embeddings.numel(); ++i)
        table.embeddings.data()[i] = static_cast<Real>(rng.normal());
    // Embedding rows must be pairwise distinct; continuous draws make a
    // collision impossible in practice, but the invariant is cheap to check.
    for (int a = 0; a < table.size(); ++a)
        for (int b = a + 1; b < table.size(); ++b) {
            bool same = true;
            for (int j = 0; j < dim && same; ++j)
                same = table.embeddings.data()[a * dim + j] ==
                       table.embeddings.data()[b * dim + j];
            if (same) throw NumericError("token table produced identical embedding rows");
        }
    return table;
}

template <typename Real>
struct Tokenized {
    std::vector<int> ids;
    Tensor<Real> embeddings;  // [N, d]
};

template <typename Real>
Tokenized<Real> tokenize(const std::vector<std::string>& caption,
                         const TokenTable<Real>& table) {
    if (caption.empty()) throw InputError("empty caption");
    Tokenized<Real> out;
    out.ids.reserve(caption.size());
    for (const auto& w : caption) out.ids.push_back(table.id_of(w));
    out.embeddings = gather_rows(table.embeddings, out.ids);
    return out;
}

// Positions of `phrase` inside `caption` as a contiguous word subsequence.
inline std::vector<int> find_phrase(const std::vector<std::string>& caption,
                                    const std::vector<std::string>& phrase) {
    if (phrase.empty()) throw InputError("empty object phrase");
    for (size_t start = 0; start + phrase.size() <= caption.size(); ++start) {
        bool match = true;
        for (size_t j = 0; j < phrase.size() && match; ++j)
            match = caption[start + j] == phrase[j];
        if (match) {
            std::vector<int> idx(phrase.size());
            for (size_t j = 0; j < phrase.size(); ++j) idx[j] = static_cast<int>(start + j);
            return idx;
        }
    }
    throw InputError("object phrase not found in caption");
}

}  // namespace motiondiff
