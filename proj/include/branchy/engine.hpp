#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "branchy/data.hpp"
#include "branchy/errors.hpp"
#include "branchy/kernels.hpp"
#include "branchy/models.hpp"
#include "branchy/rng.hpp"
#include "branchy/tensor.hpp"

namespace branchy {

enum class ModelKind { kDnn, kStackedLstm };

enum class AlphaMode { kFixed, kTrainable };

/// Per-exit loss weights alpha_n = r_l + (r_u - r_l)/n, n = 1..N.
inline std::vector<double> alpha_weights(std::size_t n_exits, double r_l, double r_u) {
    if (n_exits < 1) throw ConfigError("alpha_weights: need at least one exit");
    if (!(r_l > 0.0) || !(r_u >= r_l))
        throw ConfigError("alpha_weights: bounds must satisfy 0 < r_l <= r_u");
    std::vector<double> w(n_exits);
    for (std::size_t n = 1; n <= n_exits; ++n)
        w[n - 1] = r_l + (r_u - r_l) / static_cast<double>(n);
    return w;
}

struct AlphaSchedule {
    double r_l = 0.3;
    double r_u = 1.0;
    std::size_t n_exits = 0;
    AlphaMode mode = AlphaMode::kFixed;
    std::vector<double> fixed;        // populated in fixed mode
    std::vector<Tensor> trainable;    // scalar tensors in trainable mode

    static AlphaSchedule make(std::size_t n_exits, double r_l, double r_u,
                              AlphaMode mode) {
        AlphaSchedule s;
        s.r_l = r_l;
        s.r_u = r_u;
        s.n_exits = n_exits;
        s.mode = mode;
        auto w = alpha_weights(n_exits, r_l, r_u);
        if (mode == AlphaMode::kFixed) {
            s.fixed = std::move(w);
        } else {
            for (double v : w) s.trainable.push_back(Tensor::scalar(v));
        }
        return s;
    }

    std::vector<double> current() const {
        if (mode == AlphaMode::kFixed) return fixed;
        std::vector<double> w;
        for (const Tensor& t : trainable) w.push_back(t.values()[0]);
        return w;
    }

    /// Keeps trainable weights inside [r_l/10, 10*r_u].
    void clamp() {
        if (mode != AlphaMode::kTrainable) return;
        double lo = r_l / 10.0, hi = 10.0 * r_u;
        for (Tensor& t : trainable)
            t.values()[0] = std::clamp(t.values()[0], lo, hi);
    }
};

struct ThresholdSet {
    std::vector<double> values;  // H_n^T per exit, in [0, ln C]
};

/// Per-query inference record. chosen_exit is 1-based; entropies holds
/// exactly chosen_exit entries because computation stops at the egress point.
struct ExitTrace {
    std::vector<double> entropies;
    std::size_t chosen_exit = 0;
    std::size_t prediction = 0;
    std::vector<double> probs_at_exit;
};

struct BranchyModel {
    ModelKind kind = ModelKind::kDnn;
    EmbeddingTable embedding;
    DnnBackbone dnn;                 // active when kind == kDnn
    StackedLstmBackbone lstm;        // active when kind == kStackedLstm
    std::vector<ExitHead> heads;
    AlphaSchedule alphas;
    std::optional<ThresholdSet> thresholds;

    std::size_t n_exits() const {
        return kind == ModelKind::kDnn ? dnn.depth() : lstm.depth();
    }
    std::size_t n_classes() const {
        return heads.empty() ? 0 : heads.front().b.size();
    }
    bool calibrated() const { return thresholds.has_value(); }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> p;
        if (embedding.trainable) p.push_back(embedding.weights);
        if (kind == ModelKind::kDnn) {
            for (auto& l : dnn.layers) {
                p.push_back(l.W);
                p.push_back(l.b);
            }
        } else {
            for (auto& c : lstm.cells) {
                for (Tensor* t : {&c.W_i, &c.W_f, &c.W_o, &c.W_g, &c.U_i, &c.U_f,
                                  &c.U_o, &c.U_g, &c.b_i, &c.b_f, &c.b_o, &c.b_g})
                    p.push_back(*t);
            }
        }
        for (auto& h : heads) {
            p.push_back(h.W);
            p.push_back(h.b);
        }
        if (alphas.mode == AlphaMode::kTrainable)
            for (auto& a : alphas.trainable) p.push_back(a);
        return p;
    }
};

namespace detail {

struct LayerDims {
    std::size_t in = 0;
    std::size_t out = 0;
};

inline std::vector<LayerDims> backbone_dims(const BranchyModel& model) {
    std::vector<LayerDims> dims;
    if (model.kind == ModelKind::kDnn) {
        for (const auto& l : model.dnn.layers)
            dims.push_back({l.W.shape()[0], l.W.shape()[1]});
    } else {
        for (const auto& c : model.lstm.cells)
            dims.push_back({c.input_dim, c.hidden_dim});
    }
    return dims;
}

}  // namespace detail

struct ArchSpec {
    ModelKind kind = ModelKind::kDnn;
    std::size_t vocab_size = 0;
    std::size_t embedding_dim = 0;
    std::vector<std::size_t> hidden_sizes;  // one entry per exit point
    std::size_t n_classes = 0;
    double r_l = 0.3;
    double r_u = 1.0;
    AlphaMode alpha_mode = AlphaMode::kFixed;
    bool trainable_embedding = true;
};

/// Glorot-uniform weights, zero biases (LSTM forget bias 1.0), deterministic
/// under the seed.
inline BranchyModel init_parameters(const ArchSpec& spec, std::uint64_t seed) {
    if (spec.n_classes < 2)
        throw ConfigError("init_parameters: need at least 2 classes");
    Rng rng(seed);
    BranchyModel m;
    m.kind = spec.kind;
    m.embedding = init_embedding(spec.vocab_size, spec.embedding_dim, rng,
                                 spec.trainable_embedding);
    if (spec.kind == ModelKind::kDnn)
        m.dnn = init_dnn(spec.embedding_dim, spec.hidden_sizes, rng);
    else
        m.lstm = init_stacked_lstm(spec.embedding_dim, spec.hidden_sizes, rng);
    for (std::size_t h : spec.hidden_sizes)
        m.heads.push_back(init_head(h, spec.n_classes, rng));
    m.alphas = AlphaSchedule::make(spec.hidden_sizes.size(), spec.r_l, spec.r_u,
                                   spec.alpha_mode);
    return m;
}

/// L = sum_n alpha_n * cross_entropy(softmax(logits_n), label).
inline Tensor joint_loss(const std::vector<Tensor>& logits_per_exit, std::size_t label,
                         const AlphaSchedule& schedule) {
    if (logits_per_exit.size() != schedule.n_exits)
        throw ConfigError("joint_loss: got " + std::to_string(logits_per_exit.size()) +
                          " exits but schedule has " + std::to_string(schedule.n_exits));
    Tensor total;
    bool first = true;
    for (std::size_t n = 0; n < logits_per_exit.size(); ++n) {
        Tensor ce = cross_entropy(softmax(logits_per_exit[n]), label);
        Tensor term = schedule.mode == AlphaMode::kFixed
                          ? scale(ce, schedule.fixed[n])
                          : mul(schedule.trainable[n], ce);
        total = first ? term : add(total, term);
        first = false;
    }
    return total;
}

// ---- tape-free forward path (inference, calibration, evaluation) ----

namespace detail {

inline std::vector<double> mean_embed_plain(const std::vector<std::size_t>& tokens,
                                            const EmbeddingTable& table) {
    if (tokens.empty()) throw ParseError("inference: empty utterance");
    std::vector<double> x(table.dim, 0.0);
    const auto& w = table.weights.values();
    for (std::size_t t : tokens) {
        if (t >= table.vocab_size)
            throw IndexError("inference: token index out of range");
        for (std::size_t j = 0; j < table.dim; ++j) x[j] += w[t * table.dim + j];
    }
    double inv = 1.0 / static_cast<double>(tokens.size());
    for (double& v : x) v *= inv;
    return x;
}

/// One LSTM layer over a sequence; returns the hidden sequence.
inline std::vector<std::vector<double>> lstm_layer_plain(
    const std::vector<std::vector<double>>& seq, const LstmCellParams& cell,
    MacCounter* mc) {
    std::size_t hd = cell.hidden_dim;
    std::vector<double> h(hd, 0.0), c(hd, 0.0);
    std::vector<double> gi(hd), gf(hd), go(hd), gg(hd), tmp(hd);
    std::vector<std::vector<double>> out;
    out.reserve(seq.size());
    for (const auto& x : seq) {
        auto gate = [&](const Tensor& W, const Tensor& U, const Tensor& b,
                        std::vector<double>& g) {
            kernels::matvec(x.data(), W.values().data(), cell.input_dim, hd, g.data(), mc);
            kernels::matvec(h.data(), U.values().data(), hd, hd, tmp.data(), mc);
            kernels::add_inplace(g.data(), tmp.data(), hd);
            kernels::add_inplace(g.data(), b.values().data(), hd);
        };
        gate(cell.W_i, cell.U_i, cell.b_i, gi);
        gate(cell.W_f, cell.U_f, cell.b_f, gf);
        gate(cell.W_o, cell.U_o, cell.b_o, go);
        gate(cell.W_g, cell.U_g, cell.b_g, gg);
        for (std::size_t j = 0; j < hd; ++j) {
            double i = kernels::sigmoid(gi[j]);
            double f = kernels::sigmoid(gf[j]);
            double o = kernels::sigmoid(go[j]);
            double g = std::tanh(gg[j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * std::tanh(c[j]);
        }
        out.push_back(h);
    }
    return out;
}

/// Lazily extended forward pass: feature n is computed only when requested.
/// Tracks the number of backbone layers evaluated so far.
class LazyForward {
public:
    LazyForward(const BranchyModel& model, const std::vector<std::size_t>& tokens,
                MacCounter* mc)
        : model_(model), mc_(mc) {
        if (model.kind == ModelKind::kDnn) {
            dnn_state_ = mean_embed_plain(tokens, model.embedding);
        } else {
            if (tokens.empty()) throw ParseError("inference: empty utterance");
            const auto& w = model.embedding.weights.values();
            std::size_t d = model.embedding.dim;
            for (std::size_t t : tokens) {
                if (t >= model.embedding.vocab_size)
                    throw IndexError("inference: token index out of range");
                lstm_seq_.emplace_back(w.begin() + static_cast<std::ptrdiff_t>(t * d),
                                       w.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
            }
        }
    }

    /// Feature of exit n (1-based). Must be requested in increasing order.
    const std::vector<double>& feature(std::size_t n) {
        while (evaluated_ < n) advance();
        return model_.kind == ModelKind::kDnn ? dnn_state_ : lstm_seq_.back();
    }

    std::size_t layers_evaluated() const { return evaluated_; }

private:
    void advance() {
        std::size_t k = evaluated_;  // next layer, 0-based
        if (model_.kind == ModelKind::kDnn) {
            const auto& layer = model_.dnn.layers[k];
            std::size_t in = layer.W.shape()[0], out = layer.W.shape()[1];
            std::vector<double> y(out);
            kernels::matvec(dnn_state_.data(), layer.W.values().data(), in, out,
                            y.data(), mc_);
            kernels::add_inplace(y.data(), layer.b.values().data(), out);
            kernels::relu_inplace(y.data(), out);
            dnn_state_ = std::move(y);
        } else {
            lstm_seq_ = lstm_layer_plain(lstm_seq_, model_.lstm.cells[k], mc_);
        }
        ++evaluated_;
    }

    const BranchyModel& model_;
    MacCounter* mc_;
    std::size_t evaluated_ = 0;
    std::vector<double> dnn_state_;                 // current DNN activation
    std::vector<std::vector<double>> lstm_seq_;     // current layer's hidden sequence
};

/// Softmax probabilities at exit n for an already computed feature; charges
/// the head affine, the softmax, and the entropy comparison.
inline std::vector<double> head_probs(const BranchyModel& model, std::size_t n,
                                      const std::vector<double>& feature,
                                      MacCounter* mc) {
    const ExitHead& head = model.heads[n - 1];
    std::size_t fd = head.W.shape()[0], c = head.W.shape()[1];
    std::vector<double> logits(c);
    kernels::matvec(feature.data(), head.W.values().data(), fd, c, logits.data(), mc);
    kernels::add_inplace(logits.data(), head.b.values().data(), c);
    auto probs = kernels::softmax(logits, mc);
    if (mc) mc->macs += fd;  // entropy comparison charge at the exit head
    return probs;
}

}  // namespace detail

/// Full forward: softmax distributions at every exit (no early stopping).
inline std::vector<std::vector<double>> forward_all_probs(
    const BranchyModel& model, const std::vector<std::size_t>& tokens,
    MacCounter* mc = nullptr) {
    detail::LazyForward fwd(model, tokens, mc);
    std::vector<std::vector<double>> probs;
    for (std::size_t n = 1; n <= model.n_exits(); ++n)
        probs.push_back(detail::head_probs(model, n, fwd.feature(n), mc));
    return probs;
}

/// H_n^T = mean entropy of exit n's softmax over the whole dataset, with all
/// exits evaluated for every example.
inline ThresholdSet calibrate_thresholds(const BranchyModel& model,
                                         const Dataset& train) {
    if (train.examples.empty())
        throw CalibrationError("calibrate_thresholds: empty dataset");
    std::size_t n_exits = model.n_exits();
    std::vector<double> sums(n_exits, 0.0);
    for (const auto& ex : train.examples) {
        auto probs = forward_all_probs(model, ex.tokens);
        for (std::size_t n = 0; n < n_exits; ++n) sums[n] += entropy(probs[n]);
    }
    ThresholdSet t;
    for (double s : sums) t.values.push_back(s / static_cast<double>(train.size()));
    return t;
}

/// Scans exits 1..N; fires at the first exit whose entropy is strictly below
/// its threshold, falling back to exit N unconditionally (no threshold
/// comparison there). Layers past the egress point are never evaluated.
/// `force_exit`, when set, disables routing and egresses at that exit while
/// still computing the entropies of every visited exit.
inline ExitTrace infer_early_exit(const BranchyModel& model,
                                  const std::vector<std::size_t>& tokens,
                                  MacCounter* mc = nullptr,
                                  std::size_t* layers_evaluated = nullptr,
                                  std::optional<std::size_t> force_exit = std::nullopt) {
    std::size_t n_exits = model.n_exits();
    if (!force_exit && !model.calibrated())
        throw StateError("infer_early_exit: model has no calibrated thresholds");
    if (force_exit && (*force_exit < 1 || *force_exit > n_exits))
        throw IndexError("infer_early_exit: force_exit out of range");

    std::size_t last = force_exit ? *force_exit : n_exits;
    detail::LazyForward fwd(model, tokens, mc);
    ExitTrace trace;
    for (std::size_t n = 1; n <= last; ++n) {
        auto probs = detail::head_probs(model, n, fwd.feature(n), mc);
        double h = entropy(probs);
        trace.entropies.push_back(h);
        bool fires = force_exit ? n == last
                                : (n == n_exits || h < model.thresholds->values[n - 1]);
        if (fires) {
            trace.chosen_exit = n;
            trace.prediction = kernels::argmax(probs);
            trace.probs_at_exit = std::move(probs);
            break;
        }
    }
    if (layers_evaluated) *layers_evaluated = fwd.layers_evaluated();
    return trace;
}

// ---- training ----

struct TrainConfig {
    double lr = 0.1;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double dev_accuracy = 0.0;
};

namespace detail {

inline std::vector<Tensor> forward_logits_tape(BranchyModel& model,
                                               const std::vector<std::size_t>& tokens) {
    std::vector<Tensor> features;
    if (model.kind == ModelKind::kDnn) {
        features = dnn_forward(mean_embed(tokens, model.embedding), model.dnn);
    } else {
        std::vector<Tensor> xs;
        xs.reserve(tokens.size());
        for (std::size_t t : tokens) xs.push_back(embed_row(t, model.embedding));
        features = stacked_lstm_forward(xs, model.lstm);
    }
    std::vector<Tensor> logits;
    logits.reserve(features.size());
    for (std::size_t n = 0; n < features.size(); ++n)
        logits.push_back(exit_logits(features[n], model.heads[n]));
    return logits;
}

/// Dev-set accuracy of the final exit (the model is not yet calibrated while
/// training, so selection uses the fallback exit's full-depth prediction).
inline double final_exit_accuracy(const BranchyModel& model, const Dataset& data) {
    std::size_t correct = 0;
    for (const auto& ex : data.examples) {
        auto probs = forward_all_probs(model, ex.tokens);
        if (kernels::argmax(probs.back()) == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline std::vector<std::vector<double>> snapshot_params(std::vector<Tensor>& params) {
    std::vector<std::vector<double>> snap;
    snap.reserve(params.size());
    for (auto& p : params) snap.push_back(p.values());
    return snap;
}

inline void restore_params(std::vector<Tensor>& params,
                           const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].values() = snap[i];
}

}  // namespace detail

/// Shuffled mini-batch SGD on the joint multi-exit loss. Retains the
/// parameter snapshot with the best dev accuracy; deterministic under the
/// seed. Trainable alphas are updated by the same SGD step and clamped.
inline std::vector<EpochMetrics> train_branchy(BranchyModel& model, const Dataset& train,
                                               const Dataset& dev,
                                               const TrainConfig& config) {
    if (train.examples.empty() || dev.examples.empty())
        throw TrainingError("train_branchy: empty train or dev split");
    if (train.n_classes() != model.n_classes())
        throw LabelError("train_branchy: dataset has " +
                         std::to_string(train.n_classes()) + " classes but model has " +
                         std::to_string(model.n_classes()));
    if (config.batch_size == 0) throw ConfigError("train_branchy: batch_size must be positive");

    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();

    Rng rng(config.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EpochMetrics> log;
    double best_dev = -1.0;
    std::vector<std::vector<double>> best_snap;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::size_t end = std::min(order.size(), start + config.batch_size);
            double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const Example& ex = train.examples[order[i]];
                Tensor logits_loss = joint_loss(detail::forward_logits_tape(model, ex.tokens),
                                                ex.label, model.alphas);
                double lv = logits_loss.item();
                if (!std::isfinite(lv)) {
                    throw TrainingError("train_branchy: non-finite loss at epoch " +
                                        std::to_string(epoch) + ", batch " +
                                        std::to_string(start / config.batch_size + 1));
                }
                loss_sum += lv;
                backward(scale(logits_loss, inv_batch));
            }
            sgd_step(params, config.lr);
            model.alphas.clamp();
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(train.size());
        em.dev_accuracy = detail::final_exit_accuracy(model, dev);
        log.push_back(em);
        if (em.dev_accuracy > best_dev) {
            best_dev = em.dev_accuracy;
            best_snap = detail::snapshot_params(params);
        }
    }

    if (!best_snap.empty()) detail::restore_params(params, best_snap);
    return log;
}

}  // namespace branchy
