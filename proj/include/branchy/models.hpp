#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "branchy/data.hpp"
#include "branchy/errors.hpp"
#include "branchy/rng.hpp"
#include "branchy/tensor.hpp"

namespace branchy {

struct EmbeddingTable {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    Tensor weights;  // [vocab_size x dim]; row 0 is the unknown token
    bool trainable = true;
};

struct DnnBackbone {
    struct Layer {
        Tensor W;  // [in x out]
        Tensor b;  // [out]
    };
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_sizes;
    std::vector<Layer> layers;

    std::size_t depth() const { return layers.size(); }
};

struct LstmCellParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Tensor W_i, W_f, W_o, W_g;  // [input_dim x hidden_dim]
    Tensor U_i, U_f, U_o, U_g;  // [hidden_dim x hidden_dim]
    Tensor b_i, b_f, b_o, b_g;  // [hidden_dim]
};

struct StackedLstmBackbone {
    std::vector<LstmCellParams> cells;

    std::size_t depth() const { return cells.size(); }
};

struct ExitHead {
    Tensor W;  // [feature_dim x C]
    Tensor b;  // [C]
};

/// Arithmetic mean of the embedding rows of `tokens` (bag of words).
/// Gradients flow into the table rows when it is trainable.
inline Tensor mean_embed(const std::vector<std::size_t>& tokens,
                         const EmbeddingTable& table) {
    if (tokens.empty()) throw ParseError("mean_embed: empty utterance");
    for (std::size_t t : tokens)
        if (t >= table.vocab_size)
            throw IndexError("mean_embed: token index " + std::to_string(t) +
                             " out of range for vocab of " +
                             std::to_string(table.vocab_size));
    std::size_t d = table.dim;
    std::vector<double> out(d, 0.0);
    const auto& w = table.weights.values();
    for (std::size_t t : tokens)
        for (std::size_t j = 0; j < d; ++j) out[j] += w[t * d + j];
    double inv = 1.0 / static_cast<double>(tokens.size());
    for (double& v : out) v *= inv;
    if (!table.trainable) return Tensor::from(std::move(out), {d});
    return detail::make_op({d}, std::move(out), {table.weights.node()},
                           [tokens, inv, d](detail::Node& n) {
                               auto& pw = *n.parents[0];
                               pw.ensure_grad();
                               for (std::size_t t : tokens)
                                   for (std::size_t j = 0; j < d; ++j)
                                       pw.grad[t * d + j] += inv * n.grad[j];
                           });
}

/// Single-row embedding lookup with gradient to the row (sequence models).
inline Tensor embed_row(std::size_t token, const EmbeddingTable& table) {
    if (token >= table.vocab_size)
        throw IndexError("embed_row: token index " + std::to_string(token) +
                         " out of range for vocab of " +
                         std::to_string(table.vocab_size));
    std::size_t d = table.dim;
    const auto& w = table.weights.values();
    std::vector<double> out(w.begin() + static_cast<std::ptrdiff_t>(token * d),
                            w.begin() + static_cast<std::ptrdiff_t>((token + 1) * d));
    if (!table.trainable) return Tensor::from(std::move(out), {d});
    return detail::make_op({d}, std::move(out), {table.weights.node()},
                           [token, d](detail::Node& n) {
                               auto& pw = *n.parents[0];
                               pw.ensure_grad();
                               for (std::size_t j = 0; j < d; ++j)
                                   pw.grad[token * d + j] += n.grad[j];
                           });
}

/// Post-ReLU activation of every hidden layer, in order. Exit n reads
/// feature n.
inline std::vector<Tensor> dnn_forward(const Tensor& x, const DnnBackbone& backbone) {
    std::vector<Tensor> features;
    features.reserve(backbone.depth());
    Tensor h = x;
    for (const auto& layer : backbone.layers) {
        h = relu(affine(h, layer.W, layer.b));
        features.push_back(h);
    }
    return features;
}

/// Standard LSTM cell: i/f/o gates sigmoid, candidate tanh.
inline std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x_t, const Tensor& h_prev,
                                                const Tensor& c_prev,
                                                const LstmCellParams& cell) {
    Tensor i = sigmoid(add(affine(x_t, cell.W_i, cell.b_i), matmul(h_prev, cell.U_i)));
    Tensor f = sigmoid(add(affine(x_t, cell.W_f, cell.b_f), matmul(h_prev, cell.U_f)));
    Tensor o = sigmoid(add(affine(x_t, cell.W_o, cell.b_o), matmul(h_prev, cell.U_o)));
    Tensor g = tanh_op(add(affine(x_t, cell.W_g, cell.b_g), matmul(h_prev, cell.U_g)));
    Tensor c_t = add(mul(f, c_prev), mul(i, g));
    Tensor h_t = mul(o, tanh_op(c_t));
    return {h_t, c_t};
}

/// Layer k consumes the full hidden sequence of layer k-1 (layer 1 consumes
/// the embeddings); returns the last-time-step hidden state of each layer.
inline std::vector<Tensor> stacked_lstm_forward(const std::vector<Tensor>& tokens,
                                                const StackedLstmBackbone& backbone) {
    if (tokens.empty()) throw ParseError("stacked_lstm_forward: empty utterance");
    std::vector<Tensor> features;
    features.reserve(backbone.depth());
    std::vector<Tensor> seq = tokens;
    for (const auto& cell : backbone.cells) {
        Tensor h = Tensor::zeros({cell.hidden_dim});
        Tensor c = Tensor::zeros({cell.hidden_dim});
        std::vector<Tensor> next;
        next.reserve(seq.size());
        for (const Tensor& x_t : seq) {
            auto [h_t, c_t] = lstm_cell_step(x_t, h, c, cell);
            h = h_t;
            c = c_t;
            next.push_back(h_t);
        }
        features.push_back(h);
        seq = std::move(next);
    }
    return features;
}

inline Tensor exit_logits(const Tensor& feature, const ExitHead& head) {
    return affine(feature, head.W, head.b);
}

// ---- initialization ----

namespace detail {

inline Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                             std::vector<std::size_t> shape) {
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::size_t total = 1;
    for (std::size_t d : shape) total *= d;
    std::vector<double> v(total);
    for (double& x : v) x = rng.uniform(-s, s);
    return Tensor::from(std::move(v), std::move(shape));
}

inline void check_positive(std::size_t d, const char* what) {
    if (d == 0) throw ConfigError(std::string("init_parameters: ") + what +
                                  " must be positive");
}

}  // namespace detail

inline EmbeddingTable init_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng,
                                     bool trainable = true) {
    detail::check_positive(vocab_size, "vocab size");
    detail::check_positive(dim, "embedding dim");
    EmbeddingTable t;
    t.vocab_size = vocab_size;
    t.dim = dim;
    t.weights = detail::glorot_uniform(rng, vocab_size, dim, {vocab_size, dim});
    t.trainable = trainable;
    return t;
}

inline DnnBackbone init_dnn(std::size_t input_dim,
                            const std::vector<std::size_t>& hidden_sizes, Rng& rng) {
    detail::check_positive(input_dim, "input dim");
    if (hidden_sizes.size() < 2)
        throw ConfigError("init_parameters: DNN needs at least 2 layers (exits)");
    for (std::size_t h : hidden_sizes) detail::check_positive(h, "hidden size");
    DnnBackbone b;
    b.input_dim = input_dim;
    b.hidden_sizes = hidden_sizes;
    std::size_t in = input_dim;
    for (std::size_t out : hidden_sizes) {
        DnnBackbone::Layer layer;
        layer.W = detail::glorot_uniform(rng, in, out, {in, out});
        layer.b = Tensor::zeros({out});
        b.layers.push_back(std::move(layer));
        in = out;
    }
    return b;
}

/// Forget-gate bias starts at 1.0; all other biases at zero.
inline LstmCellParams init_lstm_cell(std::size_t input_dim, std::size_t hidden_dim,
                                     Rng& rng) {
    detail::check_positive(input_dim, "LSTM input dim");
    detail::check_positive(hidden_dim, "LSTM hidden dim");
    LstmCellParams c;
    c.input_dim = input_dim;
    c.hidden_dim = hidden_dim;
    auto w = [&] { return detail::glorot_uniform(rng, input_dim, hidden_dim,
                                                 {input_dim, hidden_dim}); };
    auto u = [&] { return detail::glorot_uniform(rng, hidden_dim, hidden_dim,
                                                 {hidden_dim, hidden_dim}); };
    c.W_i = w(); c.W_f = w(); c.W_o = w(); c.W_g = w();
    c.U_i = u(); c.U_f = u(); c.U_o = u(); c.U_g = u();
    c.b_i = Tensor::zeros({hidden_dim});
    c.b_f = Tensor::from(std::vector<double>(hidden_dim, 1.0), {hidden_dim});
    c.b_o = Tensor::zeros({hidden_dim});
    c.b_g = Tensor::zeros({hidden_dim});
    return c;
}

inline StackedLstmBackbone init_stacked_lstm(std::size_t input_dim,
                                             const std::vector<std::size_t>& hidden_sizes,
                                             Rng& rng) {
    if (hidden_sizes.size() < 2)
        throw ConfigError("init_parameters: stacked LSTM needs at least 2 layers (exits)");
    StackedLstmBackbone b;
    std::size_t in = input_dim;
    for (std::size_t h : hidden_sizes) {
        b.cells.push_back(init_lstm_cell(in, h, rng));
        in = h;
    }
    return b;
}

inline ExitHead init_head(std::size_t feature_dim, std::size_t n_classes, Rng& rng) {
    detail::check_positive(feature_dim, "feature dim");
    detail::check_positive(n_classes, "class count");
    ExitHead h;
    h.W = detail::glorot_uniform(rng, feature_dim, n_classes, {feature_dim, n_classes});
    h.b = Tensor::zeros({n_classes});
    return h;
}

/// Loads "token v_1 ... v_D" lines; rows for in-vocab tokens are overwritten,
/// everything else keeps its current initialization. Returns the number of
/// covered tokens.
inline std::size_t load_embeddings(const std::string& path, const Vocab& vocab,
                                   EmbeddingTable& table) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open embedding file: " + path);
    std::size_t covered = 0;
    std::string line;
    std::size_t lineno = 0;
    auto& w = table.weights.values();
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string tok;
        is >> tok;
        std::vector<double> vals;
        double v;
        while (is >> v) vals.push_back(v);
        if (vals.size() != table.dim) {
            throw ParseError(path + ": line " + std::to_string(lineno) + ": expected " +
                             std::to_string(table.dim) + " floats, got " +
                             std::to_string(vals.size()));
        }
        std::size_t idx = vocab.lookup(tok);
        if (idx == 0) continue;  // unknown or out-of-vocab
        for (std::size_t j = 0; j < table.dim; ++j) w[idx * table.dim + j] = vals[j];
        ++covered;
    }
    return covered;
}

}  // namespace branchy
