#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "branchy/engine.hpp"
#include "branchy/errors.hpp"

namespace branchy {

/// Everything needed to evaluate a trained model: parameters, vocabulary,
/// label names, calibrated thresholds, and the resolved configuration that
/// produced it.
struct ModelBundle {
    BranchyModel model;
    Vocab vocab;
    std::vector<std::string> labels;
    std::string config_echo;
};

namespace detail {

// Single binary container, version-tagged, little-endian 64-bit floats,
// length-prefixed sections. Round-trips are bit-exact.
inline constexpr char kModelMagic[8] = {'B', 'R', 'A', 'N', 'C', 'H', 'Y', '1'};

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        buf_.append(s);
    }
    void raw(const char* data, std::size_t n) { buf_.append(data, n); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        std::uint64_t n = u64();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void expect_tag(const char* tag) {
        need(4);
        if (std::memcmp(buf_.data() + pos_, tag, 4) != 0)
            throw FormatError(std::string("model file: expected section ") + tag);
        pos_ += 4;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::uint64_t n) {
        if (pos_ + n > buf_.size()) throw FormatError("model file truncated");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

/// Canonical parameter order shared by writer and reader.
inline std::vector<Tensor> enumerate_tensors(BranchyModel& m) {
    std::vector<Tensor> out;
    out.push_back(m.embedding.weights);
    if (m.kind == ModelKind::kDnn) {
        for (auto& l : m.dnn.layers) {
            out.push_back(l.W);
            out.push_back(l.b);
        }
    } else {
        for (auto& c : m.lstm.cells)
            for (Tensor* t : {&c.W_i, &c.W_f, &c.W_o, &c.W_g, &c.U_i, &c.U_f, &c.U_o,
                              &c.U_g, &c.b_i, &c.b_f, &c.b_o, &c.b_g})
                out.push_back(*t);
    }
    for (auto& h : m.heads) {
        out.push_back(h.W);
        out.push_back(h.b);
    }
    return out;
}

}  // namespace detail

inline std::string model_to_bytes(const ModelBundle& bundle) {
    // enumerate_tensors needs mutable access to the shared tensor handles
    auto& m = const_cast<BranchyModel&>(bundle.model);
    detail::ByteWriter w;
    w.raw(detail::kModelMagic, 8);

    w.raw("CONF", 4);
    w.str(bundle.config_echo);

    w.raw("VOCB", 4);
    w.u64(bundle.vocab.index_to_token.size() - 1);
    for (std::size_t i = 1; i < bundle.vocab.index_to_token.size(); ++i)
        w.str(bundle.vocab.index_to_token[i]);

    w.raw("LABL", 4);
    w.u64(bundle.labels.size());
    for (const auto& l : bundle.labels) w.str(l);

    w.raw("ARCH", 4);
    w.u8(m.kind == ModelKind::kDnn ? 0 : 1);
    w.u64(m.embedding.vocab_size);
    w.u64(m.embedding.dim);
    w.u8(m.embedding.trainable ? 1 : 0);
    auto dims = detail::backbone_dims(m);
    w.u64(dims.size());
    for (auto d : dims) w.u64(d.out);
    w.u64(m.n_classes());

    w.raw("ALPH", 4);
    w.f64(m.alphas.r_l);
    w.f64(m.alphas.r_u);
    w.u8(m.alphas.mode == AlphaMode::kFixed ? 0 : 1);
    auto alpha_values = m.alphas.current();
    w.u64(alpha_values.size());
    for (double a : alpha_values) w.f64(a);

    w.raw("PARM", 4);
    auto tensors = detail::enumerate_tensors(m);
    std::uint64_t total = 0;
    for (auto& t : tensors) total += t.size();
    w.u64(total);
    for (auto& t : tensors)
        for (double v : t.values()) w.f64(v);

    w.raw("THRS", 4);
    w.u8(m.thresholds ? 1 : 0);
    if (m.thresholds) {
        w.u64(m.thresholds->values.size());
        for (double v : m.thresholds->values) w.f64(v);
    }

    return w.bytes();
}

inline ModelBundle model_from_bytes(const std::string& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kModelMagic, 8) != 0)
        throw FormatError("model file: unknown format version tag");
    detail::ByteReader r(bytes);
    for (int i = 0; i < 8; ++i) r.u8();  // magic

    ModelBundle b;
    r.expect_tag("CONF");
    b.config_echo = r.str();

    r.expect_tag("VOCB");
    std::uint64_t n_tokens = r.u64();
    for (std::uint64_t i = 0; i < n_tokens; ++i) {
        std::string tok = r.str();
        b.vocab.token_to_index.emplace(tok, b.vocab.index_to_token.size());
        b.vocab.index_to_token.push_back(std::move(tok));
    }

    r.expect_tag("LABL");
    std::uint64_t n_labels = r.u64();
    for (std::uint64_t i = 0; i < n_labels; ++i) b.labels.push_back(r.str());

    r.expect_tag("ARCH");
    ArchSpec spec;
    spec.kind = r.u8() == 0 ? ModelKind::kDnn : ModelKind::kStackedLstm;
    spec.vocab_size = r.u64();
    spec.embedding_dim = r.u64();
    spec.trainable_embedding = r.u8() != 0;
    std::uint64_t n_layers = r.u64();
    for (std::uint64_t i = 0; i < n_layers; ++i) spec.hidden_sizes.push_back(r.u64());
    spec.n_classes = r.u64();

    r.expect_tag("ALPH");
    spec.r_l = r.f64();
    spec.r_u = r.f64();
    spec.alpha_mode = r.u8() == 0 ? AlphaMode::kFixed : AlphaMode::kTrainable;
    std::uint64_t n_alphas = r.u64();
    std::vector<double> alpha_values;
    for (std::uint64_t i = 0; i < n_alphas; ++i) alpha_values.push_back(r.f64());

    b.model = init_parameters(spec, 0);
    if (n_alphas != b.model.n_exits())
        throw FormatError("model file: alpha count does not match exit count");
    if (b.model.alphas.mode == AlphaMode::kTrainable)
        for (std::size_t i = 0; i < n_alphas; ++i)
            b.model.alphas.trainable[i].values()[0] = alpha_values[i];

    r.expect_tag("PARM");
    std::uint64_t total = r.u64();
    auto tensors = detail::enumerate_tensors(b.model);
    std::uint64_t expect = 0;
    for (auto& t : tensors) expect += t.size();
    if (total != expect)
        throw FormatError("model file: parameter count mismatch (" +
                          std::to_string(total) + " vs " + std::to_string(expect) + ")");
    for (auto& t : tensors)
        for (double& v : t.values()) v = r.f64();

    r.expect_tag("THRS");
    if (r.u8()) {
        ThresholdSet ts;
        std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) ts.values.push_back(r.f64());
        if (ts.values.size() != b.model.n_exits())
            throw FormatError("model file: threshold count does not match exit count");
        b.model.thresholds = std::move(ts);
    }
    if (!r.at_end()) throw FormatError("model file: trailing bytes");
    return b;
}

inline void save_model(const ModelBundle& bundle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open model file for writing: " + path);
    std::string bytes = model_to_bytes(bundle);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed to write model file: " + path);
}

inline ModelBundle load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open model file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return model_from_bytes(bytes);
}

}  // namespace branchy
