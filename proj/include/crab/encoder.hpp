#pragma once

// Contextual encoders.  A classifier head consumes the embedding matrix
// B ∈ R^{|k|×N} (column 0 = the ⟨CLS⟩ summary embedding) through the Encoder
// contract, so any producer of such a matrix can stand in.  The default
// implementation is a small deterministic post-norm transformer:
//
//     token embedding + sinusoidal position
//       └─ L × [ masked self-attention → add → layer-norm
//                feed-forward (LeakyReLU) → add → layer-norm ]
//
// Padded positions get -inf attention logits, and their output columns are
// zeroed so downstream position-mixing layers see no padding signal.

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "crab/errors.hpp"
#include "crab/rng.hpp"
#include "crab/tensor.hpp"

namespace crab {

struct EncodedSequence {
    Tensor b;               // |k| x N, column i = embedding of position i
    std::vector<int> mask;  // 1 on real positions; mask[0] is always 1
};

class Encoder {
public:
    virtual ~Encoder() = default;
    virtual EncodedSequence encode(Tape& tape, const std::vector<std::size_t>& ids,
                                   const std::vector<int>& mask) const = 0;
    virtual std::size_t embed_dim() const = 0;
    virtual std::size_t max_len() const = 0;
};

// Splits B into the ⟨CLS⟩ column e (|k|x1) and the remaining token columns
// B' (|k|x(N-1)).
struct ClsSplit {
    Tensor e;
    Tensor b_prime;
};

inline ClsSplit split_cls(Tape& tape, const EncodedSequence& seq) {
    std::size_t n = seq.b.cols();
    if (n < 2) throw ContractError("sequence length must be at least 2 to split off the summary");
    return {slice_cols(tape, seq.b, 0, 1), slice_cols(tape, seq.b, 1, n)};
}

// ---------------------------------------------------------------------------
// Toy transformer encoder.

struct ToyEncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 64;  // |k|
    std::size_t max_len = 64;    // N
    std::size_t layers = 2;      // L
    std::size_t heads = 2;
    double relu_slope = 0.01;

    void validate() const {
        if (vocab_size < 3) throw ConfigError("vocab_size must cover the special tokens");
        if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
        if (max_len < 2) throw ConfigError("max_len must be at least 2");
        if (layers < 1) throw ConfigError("layers must be at least 1");
        if (heads < 1 || embed_dim % heads != 0)
            throw ConfigError("embed_dim (" + std::to_string(embed_dim) +
                              ") must be divisible by heads (" + std::to_string(heads) + ")");
        if (relu_slope <= 0.0 || relu_slope >= 1.0)
            throw ConfigError("relu_slope must lie in (0, 1)");
    }
};

inline constexpr double kLayerNormEps = 1e-5;

// Fixed sinusoidal position table [N x k]:
//   table[p, 2i]   = sin(p / 10000^(2i/k))
//   table[p, 2i+1] = cos(p / 10000^(2i/k))
inline Tensor sinusoidal_table(std::size_t max_len, std::size_t dim) {
    Tensor table({max_len, dim});
    for (std::size_t p = 0; p < max_len; ++p)
        for (std::size_t j = 0; j < dim; ++j) {
            double freq = std::pow(10000.0, -double(2 * (j / 2)) / double(dim));
            double angle = double(p) * freq;
            table(p, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return table;
}

struct EncoderLayerParams {
    Tensor wq, wk, wv, wo;      // k x k projections
    Tensor wff1;                // k x 4k
    Tensor wff2;                // 4k x k
    Tensor ln1_gain, ln1_bias;  // k
    Tensor ln2_gain, ln2_bias;  // k
};

struct ToyEncoderParams {
    Tensor embedding;            // vocab x k, trainable
    Tensor positional;           // N x k, fixed
    std::vector<EncoderLayerParams> layers;

    static ToyEncoderParams init(const ToyEncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        ToyEncoderParams p;
        std::size_t k = cfg.embed_dim;
        p.embedding = Tensor::xavier(cfg.vocab_size, k, rng);
        p.positional = sinusoidal_table(cfg.max_len, k);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            EncoderLayerParams lp;
            lp.wq = Tensor::xavier(k, k, rng);
            lp.wk = Tensor::xavier(k, k, rng);
            lp.wv = Tensor::xavier(k, k, rng);
            lp.wo = Tensor::xavier(k, k, rng);
            lp.wff1 = Tensor::xavier(k, 4 * k, rng);
            lp.wff2 = Tensor::xavier(4 * k, k, rng);
            lp.ln1_gain = Tensor({k}, 1.0, true);
            lp.ln1_bias = Tensor({k}, 0.0, true);
            lp.ln2_gain = Tensor({k}, 1.0, true);
            lp.ln2_bias = Tensor({k}, 0.0, true);
            p.layers.push_back(std::move(lp));
        }
        return p;
    }

    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out{embedding};
        for (const auto& lp : layers)
            for (const Tensor& t : {lp.wq, lp.wk, lp.wv, lp.wo, lp.wff1, lp.wff2, lp.ln1_gain,
                                    lp.ln1_bias, lp.ln2_gain, lp.ln2_bias})
                out.push_back(t);
        return out;
    }

    ToyEncoderParams clone() const {
        ToyEncoderParams p;
        p.embedding = embedding.clone();
        p.positional = positional.clone();
        for (const auto& lp : layers)
            p.layers.push_back({lp.wq.clone(), lp.wk.clone(), lp.wv.clone(), lp.wo.clone(),
                                lp.wff1.clone(), lp.wff2.clone(), lp.ln1_gain.clone(),
                                lp.ln1_bias.clone(), lp.ln2_gain.clone(), lp.ln2_bias.clone()});
        return p;
    }
};

class ToyTransformerEncoder : public Encoder {
public:
    ToyTransformerEncoder(ToyEncoderConfig cfg, ToyEncoderParams params)
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
    }

    static ToyTransformerEncoder make(const ToyEncoderConfig& cfg, Rng& rng) {
        return ToyTransformerEncoder(cfg, ToyEncoderParams::init(cfg, rng));
    }

    std::size_t embed_dim() const override { return cfg_.embed_dim; }
    std::size_t max_len() const override { return cfg_.max_len; }
    const ToyEncoderConfig& config() const { return cfg_; }
    const ToyEncoderParams& params() const { return params_; }
    ToyEncoderParams& params() { return params_; }

    EncodedSequence encode(Tape& tape, const std::vector<std::size_t>& ids,
                           const std::vector<int>& mask) const override {
        std::size_t n = cfg_.max_len, k = cfg_.embed_dim;
        if (ids.size() != n || mask.size() != n)
            throw ContractError("expected " + std::to_string(n) + " ids and mask entries, got " +
                                std::to_string(ids.size()) + " and " + std::to_string(mask.size()));
        if (mask[0] != 1) throw ContractError("position 0 must be a real (summary) token");
        for (int m : mask)
            if (m != 0 && m != 1) throw ContractError("mask entries must be 0 or 1");

        Tensor x = add(tape, embed_rows(tape, params_.embedding, ids), params_.positional);
        std::size_t dh = k / cfg_.heads;
        double attn_scale = 1.0 / std::sqrt(double(dh));
        for (const auto& lp : params_.layers) {
            Tensor q = matmul(tape, x, lp.wq);
            Tensor key = matmul(tape, x, lp.wk);
            Tensor v = matmul(tape, x, lp.wv);
            std::vector<Tensor> head_outs;
            for (std::size_t h = 0; h < cfg_.heads; ++h) {
                Tensor qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
                Tensor kh = slice_cols(tape, key, h * dh, (h + 1) * dh);
                Tensor vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
                Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), attn_scale);
                Tensor probs = masked_row_softmax(tape, scores, mask);
                head_outs.push_back(matmul(tape, probs, vh));
            }
            Tensor attn = matmul(tape, concat_cols(tape, head_outs), lp.wo);
            x = layer_norm_rows(tape, add(tape, x, attn), lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
            Tensor hidden = leaky_relu(tape, matmul(tape, x, lp.wff1), cfg_.relu_slope);
            Tensor ff = matmul(tape, hidden, lp.wff2);
            x = layer_norm_rows(tape, add(tape, x, ff), lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
        }

        // zero padded rows so pad positions cannot feed downstream layers
        Tensor keep({n, k});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) keep(i, j) = double(mask[i]);
        x = mul(tape, x, keep);

        return {transpose(tape, x), mask};
    }

private:
    ToyEncoderConfig cfg_;
    ToyEncoderParams params_;
};

}  // namespace crab
