#pragma once

// Bundles everything a trained classifier needs to go from raw text to class
// probabilities: normalization rules, vocabulary, the toy encoder, and the
// class-representation head, plus the class names for readable output.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crab/encoder.hpp"
#include "crab/errors.hpp"
#include "crab/head.hpp"
#include "crab/rng.hpp"
#include "crab/tensor.hpp"
#include "crab/text.hpp"

namespace crab {

// Trainable parameter values frozen at a point in time (used to keep the
// best-validation epoch while training continues).
struct ModelSnapshot {
    ToyEncoderParams encoder;
    CrabParams head;
};

struct CrabModel {
    NormRules rules;
    Vocab vocab;
    std::vector<std::string> class_names;
    ToyTransformerEncoder encoder;
    CrabConfig head_cfg;
    CrabParams head;

    // Provenance of the last training run (stored in the model file).
    std::uint64_t train_seed = 0;
    std::size_t train_epochs = 0;

    CrabModel(NormRules rules_, Vocab vocab_, std::vector<std::string> class_names_,
              ToyTransformerEncoder encoder_, CrabConfig head_cfg_, CrabParams head_)
        : rules(std::move(rules_)),
          vocab(std::move(vocab_)),
          class_names(std::move(class_names_)),
          encoder(std::move(encoder_)),
          head_cfg(head_cfg_),
          head(std::move(head_)) {
        validate();
    }

    // Builds a freshly initialized model.  The head's dimensions are derived
    // from the encoder configuration; only its capacity knobs are taken from
    // head_cfg (heads, fc sizes, slope, output mode, sentence layer).
    static CrabModel make(NormRules rules, Vocab vocab, std::vector<std::string> class_names,
                          const ToyEncoderConfig& enc_cfg, CrabConfig head_cfg, Rng& rng) {
        ToyEncoderConfig ec = enc_cfg;
        ec.vocab_size = vocab.size();
        head_cfg.classes = class_names.size();
        head_cfg.embed_dim = ec.embed_dim;
        head_cfg.token_positions = ec.max_len - 1;
        ec.validate();
        head_cfg.validate();
        ToyTransformerEncoder encoder = ToyTransformerEncoder::make(ec, rng);
        CrabParams head = CrabParams::init(head_cfg, rng);
        return CrabModel(std::move(rules), std::move(vocab), std::move(class_names),
                         std::move(encoder), head_cfg, std::move(head));
    }

    void validate() const {
        const ToyEncoderConfig& ec = encoder.config();
        if (class_names.empty()) throw ContractError("model has no class names");
        if (head_cfg.classes != class_names.size())
            throw ContractError("head is sized for " + std::to_string(head_cfg.classes) +
                                " classes but the model names " +
                                std::to_string(class_names.size()));
        if (head_cfg.embed_dim != ec.embed_dim)
            throw DimensionError("head embed_dim " + std::to_string(head_cfg.embed_dim) +
                                 " does not match encoder embed_dim " +
                                 std::to_string(ec.embed_dim));
        if (head_cfg.token_positions != ec.max_len - 1)
            throw DimensionError("head expects " + std::to_string(head_cfg.token_positions) +
                                 " token positions but the encoder produces " +
                                 std::to_string(ec.max_len - 1));
        if (ec.vocab_size != vocab.size())
            throw DimensionError("encoder embedding has " + std::to_string(ec.vocab_size) +
                                 " rows but the vocabulary has " + std::to_string(vocab.size()) +
                                 " entries");
    }

    std::size_t num_classes() const { return head_cfg.classes; }

    Encoded encode_text(const std::string& raw) const {
        std::string norm = normalize(raw, rules);
        return encode_ids(tokenize(norm), vocab, encoder.config().max_len);
    }

    FusedScores forward_encoded(Tape& tape, const Encoded& enc) const {
        EncodedSequence seq = encoder.encode(tape, enc.ids, enc.mask);
        return crab_forward(tape, seq, head, head_cfg);
    }

    FusedScores forward_text(Tape& tape, const std::string& raw) const {
        return forward_encoded(tape, encode_text(raw));
    }

    // All trainable tensors, encoder first.  Order is stable; snapshots pair
    // up with it positionally.
    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out = encoder.params().trainable();
        for (const Tensor& t : head.trainable()) out.push_back(t);
        return out;
    }

    ModelSnapshot snapshot() const { return {encoder.params().clone(), head.clone()}; }

    // Copies snapshot values back into the live parameter tensors (tensor
    // identity is preserved, so existing references stay valid).
    void restore(const ModelSnapshot& snap) {
        std::vector<Tensor> dst = trainable();
        std::vector<Tensor> src = snap.encoder.trainable();
        for (const Tensor& t : snap.head.trainable()) src.push_back(t);
        if (dst.size() != src.size())
            throw DimensionError("snapshot has " + std::to_string(src.size()) +
                                 " tensors, model has " + std::to_string(dst.size()));
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i].shape() != src[i].shape())
                throw DimensionError("snapshot tensor " + std::to_string(i) + " has shape " +
                                     shape_str(src[i].shape()) + ", expected " +
                                     shape_str(dst[i].shape()));
            for (std::size_t j = 0; j < dst[i].numel(); ++j) dst[i].at(j) = src[i].values()[j];
        }
    }
};

}  // namespace crab
