#pragma once

// Class-representation attentive classifier head.
//
// Given the encoder output B = (e | B′) with summary column e and token
// columns B′ ∈ R^{k×(N−1)}:
//
//   token-wise:    T_i = A_i · B′                      (m heads, A_i ∈ R^{c×k})
//   sentence-wise: w   = S · e                         (S ∈ R^{c×k})
//   aggregation:   T′_i = leaky(T_i · W_fc1 + b_fc1)   (shared W_fc1)
//                  T″   = [T′_0 | ... | T′_{m−1}]      (feature concat)
//                  V    = leaky(T″ · W_fc2 + b_fc2)
//                  z    = V · W_lin                    (c×1)
//   fusion:        s = z/(‖z‖₂+ε) + w/(‖w‖₂+ε), probabilities from softmax(s)
//                  (or elementwise sigmoid(s); w term dropped when the
//                  sentence layer is disabled)
//
// The fused pre-activation s carries the gradient; probabilities are computed
// outside the tape since training losses consume s directly.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "crab/encoder.hpp"
#include "crab/errors.hpp"
#include "crab/rng.hpp"
#include "crab/tensor.hpp"

namespace crab {

inline constexpr double kFuseEps = 1e-12;

enum class OutputMode { softmax, sigmoid };

inline std::string to_string(OutputMode m) {
    return m == OutputMode::softmax ? "softmax" : "sigmoid";
}
inline OutputMode output_mode_from_string(const std::string& s) {
    if (s == "softmax") return OutputMode::softmax;
    if (s == "sigmoid") return OutputMode::sigmoid;
    throw ConfigError("unknown output mode '" + s + "' (expected softmax or sigmoid)");
}

struct CrabConfig {
    std::size_t classes = 0;          // c
    std::size_t heads = 4;            // m
    std::size_t token_positions = 0;  // N-1
    std::size_t embed_dim = 0;        // k
    std::size_t fc1 = 64;             // h1
    std::size_t fc2 = 128;            // h2
    double relu_slope = 0.01;
    OutputMode output_mode = OutputMode::softmax;
    bool sentence_layer = true;

    void validate() const {
        if (classes < 1) throw ConfigError("classes must be at least 1");
        if (heads < 1) throw ConfigError("heads must be at least 1");
        if (token_positions < 1) throw ConfigError("token_positions must be at least 1");
        if (embed_dim < 1) throw ConfigError("embed_dim must be at least 1");
        if (fc1 < 1 || fc2 < 1) throw ConfigError("hidden widths must be at least 1");
        if (relu_slope <= 0.0 || relu_slope >= 1.0) throw ConfigError("relu_slope must lie in (0, 1)");
    }
};

struct CrabParams {
    std::vector<Tensor> a;  // m tensors, c x k
    Tensor s;               // c x k
    Tensor w_fc1;           // (N-1) x h1
    Tensor b_fc1;           // h1
    Tensor w_fc2;           // (m*h1) x h2
    Tensor b_fc2;           // h2
    Tensor w_lin;           // h2 x 1

    static CrabParams init(const CrabConfig& cfg, Rng& rng) {
        cfg.validate();
        CrabParams p;
        for (std::size_t i = 0; i < cfg.heads; ++i)
            p.a.push_back(Tensor::xavier(cfg.classes, cfg.embed_dim, rng));
        p.s = Tensor::xavier(cfg.classes, cfg.embed_dim, rng);
        p.w_fc1 = Tensor::xavier(cfg.token_positions, cfg.fc1, rng);
        p.b_fc1 = Tensor({cfg.fc1}, 0.0, true);
        p.w_fc2 = Tensor::xavier(cfg.heads * cfg.fc1, cfg.fc2, rng);
        p.b_fc2 = Tensor({cfg.fc2}, 0.0, true);
        p.w_lin = Tensor::xavier(cfg.fc2, 1, rng);
        return p;
    }

    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out(a.begin(), a.end());
        for (const Tensor& t : {s, w_fc1, b_fc1, w_fc2, b_fc2, w_lin}) out.push_back(t);
        return out;
    }

    CrabParams clone() const {
        CrabParams p;
        for (const Tensor& t : a) p.a.push_back(t.clone());
        p.s = s.clone();
        p.w_fc1 = w_fc1.clone();
        p.b_fc1 = b_fc1.clone();
        p.w_fc2 = w_fc2.clone();
        p.b_fc2 = b_fc2.clone();
        p.w_lin = w_lin.clone();
        return p;
    }
};

// T_i = A_i · B′, one c×(N−1) interaction map per head.
inline std::vector<Tensor> token_interactions(Tape& tape, const Tensor& b_prime,
                                              const CrabParams& params) {
    std::vector<Tensor> t;
    t.reserve(params.a.size());
    for (const Tensor& a_i : params.a) t.push_back(matmul(tape, a_i, b_prime));
    return t;
}

// w = S · e.
inline Tensor sentence_interaction(Tape& tape, const Tensor& e, const CrabParams& params) {
    return matmul(tape, params.s, e);
}

// Eqs. of the aggregation stack: per-head affine + LeakyReLU, feature concat,
// second affine + LeakyReLU, final linear map to one score per class.
inline Tensor aggregate(Tape& tape, const std::vector<Tensor>& t, const CrabParams& params,
                        const CrabConfig& cfg) {
    if (t.size() != params.a.size())
        throw DimensionError("expected " + std::to_string(params.a.size()) +
                             " interaction maps, got " + std::to_string(t.size()));
    std::vector<Tensor> t_prime;
    t_prime.reserve(t.size());
    for (const Tensor& t_i : t)
        t_prime.push_back(leaky_relu(
            tape, add_bias_row(tape, matmul(tape, t_i, params.w_fc1), params.b_fc1),
            cfg.relu_slope));
    Tensor t_cat = concat_cols(tape, t_prime);
    Tensor v = leaky_relu(
        tape, add_bias_row(tape, matmul(tape, t_cat, params.w_fc2), params.b_fc2), cfg.relu_slope);
    return matmul(tape, v, params.w_lin);
}

struct FusedScores {
    Tensor probs;           // c x 1, detached from the tape
    Tensor pre_activation;  // c x 1, differentiable fused score s
};

inline FusedScores fuse_scores(Tape& tape, const Tensor& z, const std::optional<Tensor>& w,
                               const CrabConfig& cfg) {
    if (z.rank() != 2 || z.cols() != 1 || z.rows() != cfg.classes)
        throw DimensionError("fuse_scores: z must be " + std::to_string(cfg.classes) +
                             "x1, got " + shape_str(z.shape()));
    Tensor s = div_by_scalar(tape, z, l2_norm(tape, z), kFuseEps);
    if (cfg.sentence_layer) {
        if (!w.has_value())
            throw ContractError("sentence layer enabled but no sentence score provided");
        if (w->rank() != 2 || w->cols() != 1 || w->rows() != cfg.classes)
            throw DimensionError("fuse_scores: w must be " + std::to_string(cfg.classes) +
                                 "x1, got " + shape_str(w->shape()));
        s = add(tape, s, div_by_scalar(tape, *w, l2_norm(tape, *w), kFuseEps));
    }

    // probabilities are reporting output; the loss reads the pre-activation
    Tensor probs({cfg.classes, 1});
    if (cfg.output_mode == OutputMode::softmax) {
        double max_s = s.at(0);
        for (std::size_t i = 1; i < cfg.classes; ++i) max_s = std::max(max_s, s.at(i));
        double total = 0.0;
        for (std::size_t i = 0; i < cfg.classes; ++i) total += std::exp(s.at(i) - max_s);
        for (std::size_t i = 0; i < cfg.classes; ++i)
            probs.at(i) = std::exp(s.at(i) - max_s) / total;
    } else {
        for (std::size_t i = 0; i < cfg.classes; ++i) {
            double x = s.at(i);
            probs.at(i) = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        }
    }
    return {probs, s};
}

// Full head: split the summary column, run both interaction branches, fuse.
inline FusedScores crab_forward(Tape& tape, const EncodedSequence& seq, const CrabParams& params,
                                const CrabConfig& cfg) {
    if (seq.b.rows() != cfg.embed_dim || seq.b.cols() != cfg.token_positions + 1)
        throw DimensionError("encoder output " + shape_str(seq.b.shape()) +
                             " does not match head configured for " +
                             std::to_string(cfg.embed_dim) + "x" +
                             std::to_string(cfg.token_positions + 1));
    auto [e, b_prime] = split_cls(tape, seq);
    Tensor z = aggregate(tape, token_interactions(tape, b_prime, params), params, cfg);
    std::optional<Tensor> w;
    if (cfg.sentence_layer) w = sentence_interaction(tape, e, params);
    return fuse_scores(tape, z, w, cfg);
}

// Argmax with ties broken toward the lowest class id.
inline std::size_t predict_class(const Tensor& probs) {
    if (probs.numel() == 0) throw ContractError("predict_class: empty probability vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.numel(); ++i)
        if (probs.at(i) > probs.at(best)) best = i;
    return best;
}

}  // namespace crab
