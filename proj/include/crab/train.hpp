#pragma once

// Training loop: Adam on a cross-entropy objective over the fused
// pre-activation scores, with deterministic batch shuffling, per-epoch
// validation, and best-epoch parameter retention.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "crab/dataset.hpp"
#include "crab/errors.hpp"
#include "crab/metrics.hpp"
#include "crab/model.hpp"
#include "crab/rng.hpp"
#include "crab/tensor.hpp"

namespace crab {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 0;  // 0 disables early stopping

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(learning_rate > 0) || !std::isfinite(learning_rate))
            throw ConfigError("learning_rate must be positive and finite");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw ConfigError("Adam betas must lie in [0, 1)");
        if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
    }
};

// ---------------------------------------------------------------------------
// Adam optimizer.

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;  // first/second moments per tensor
};

// One Adam update over `params`, reading each tensor's accumulated gradient.
// State is created lazily on first use; a missing gradient counts as zero.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.empty() && state.v.empty()) {
        for (const Tensor& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw DimensionError("Adam state tracks " + std::to_string(state.m.size()) +
                             " tensors but " + std::to_string(params.size()) + " were passed");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (state.m[i].size() != p.numel())
            throw DimensionError("Adam state for tensor " + std::to_string(i) + " holds " +
                                 std::to_string(state.m[i].size()) + " entries, tensor has " +
                                 std::to_string(p.numel()));
        bool has = p.has_grad();
        for (std::size_t j = 0; j < p.numel(); ++j) {
            double g = has ? p.grad()[j] : 0.0;
            state.m[i][j] = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * g;
            state.v[i][j] = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * g * g;
            double mhat = state.m[i][j] / bc1;
            double vhat = state.v[i][j] / bc2;
            p.at(j) -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Cross-entropy loss.

inline Tensor one_hot(std::size_t label, std::size_t classes) {
    if (label >= classes)
        throw ContractError("label " + std::to_string(label) + " out of range for " +
                            std::to_string(classes) + " classes");
    std::vector<double> v(classes, 0.0);
    v[label] = 1.0;
    return Tensor({classes, 1}, v);
}

// Mean over the batch of -sum_j y_j * log_softmax(s)_j.  Targets must be
// exact one-hot columns.
inline Tensor cross_entropy_loss(Tape& tape, const std::vector<Tensor>& pre_activations,
                                 const std::vector<Tensor>& targets) {
    if (pre_activations.empty()) throw ContractError("cross_entropy_loss: empty batch");
    if (pre_activations.size() != targets.size())
        throw ContractError("cross_entropy_loss: " + std::to_string(pre_activations.size()) +
                            " scores but " + std::to_string(targets.size()) + " targets");
    Tensor total;
    for (std::size_t b = 0; b < pre_activations.size(); ++b) {
        const Tensor& s = pre_activations[b];
        const Tensor& y = targets[b];
        if (y.shape() != s.shape())
            throw DimensionError("target " + std::to_string(b) + " has shape " +
                                 shape_str(y.shape()) + ", scores have " + shape_str(s.shape()));
        std::size_t ones = 0;
        for (double v : y.values()) {
            if (v == 1.0)
                ++ones;
            else if (v != 0.0)
                throw ContractError("target " + std::to_string(b) + " is not one-hot");
        }
        if (ones != 1) throw ContractError("target " + std::to_string(b) + " is not one-hot");
        Tensor picked = sum(tape, mul(tape, log_softmax(tape, s), y));
        total = total.defined() ? add(tape, total, picked) : picked;
    }
    return scale(tape, total, -1.0 / double(pre_activations.size()));
}

// ---------------------------------------------------------------------------
// Evaluation.

namespace detail {

inline EvalReport evaluate_encoded(const CrabModel& model, const std::vector<Encoded>& encoded,
                                   const std::vector<std::size_t>& labels) {
    std::size_t c = model.num_classes();
    std::vector<std::vector<std::size_t>> confusion(c, std::vector<std::size_t>(c, 0));
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        Tape tape;
        FusedScores scores = model.forward_encoded(tape, encoded[i]);
        confusion[labels[i]][predict_class(scores.probs)] += 1;
    }
    return report_from_confusion(confusion);
}

inline void check_labels(const CrabModel& model, const LabeledCorpus& data, const char* what) {
    if (data.num_classes() != model.num_classes())
        throw DataError(std::string(what) + " set has " + std::to_string(data.num_classes()) +
                        " classes, model has " + std::to_string(model.num_classes()));
}

}  // namespace detail

// Runs the model over a labeled corpus and tallies the confusion matrix.
inline EvalReport evaluate(const CrabModel& model, const LabeledCorpus& data) {
    detail::check_labels(model, data, "evaluation");
    std::size_t c = model.num_classes();
    std::vector<std::vector<std::size_t>> confusion(c, std::vector<std::size_t>(c, 0));
    for (const LabeledExample& ex : data.examples) {
        Tape tape;
        FusedScores scores = model.forward_text(tape, ex.text);
        confusion[ex.label][predict_class(scores.probs)] += 1;
    }
    return report_from_confusion(confusion);
}

// ---------------------------------------------------------------------------
// Fit loop.

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    bool has_val = false;
    double val_macro_f1 = 0;
    double val_accuracy = 0;
};

struct FitResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;  // 1-based; 0 when no validation ran
    double best_val_macro_f1 = 0;
};

// Trains the model in place.  Batch order is reshuffled every epoch from a
// seed derived from (config seed, epoch), so runs are fully reproducible.
// With a nonempty validation set, the parameters left on the model afterward
// are those of the epoch with the best validation macro-F1.
inline FitResult fit(CrabModel& model, const LabeledCorpus& train, const LabeledCorpus& val,
                     const TrainConfig& cfg) {
    cfg.validate();
    if (train.size() == 0) throw DataError("training set is empty");
    detail::check_labels(model, train, "training");
    bool has_val = val.size() > 0;
    if (has_val) detail::check_labels(model, val, "validation");

    // Normalize, tokenize and id-encode once; epochs reuse the encodings.
    std::vector<Encoded> train_enc;
    std::vector<std::size_t> train_labels;
    for (const LabeledExample& ex : train.examples) {
        train_enc.push_back(model.encode_text(ex.text));
        train_labels.push_back(ex.label);
    }
    std::vector<Encoded> val_enc;
    std::vector<std::size_t> val_labels;
    for (const LabeledExample& ex : val.examples) {
        val_enc.push_back(model.encode_text(ex.text));
        val_labels.push_back(ex.label);
    }

    std::vector<Tensor> params = model.trainable();
    AdamState opt;
    FitResult result;
    ModelSnapshot best;
    double best_f1 = -1.0;
    std::size_t epochs_since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto batches =
            make_batches(train.size(), cfg.batch_size, Rng::derive(cfg.seed, epoch));
        double loss_sum = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            Tape tape;
            std::vector<Tensor> pre, targets;
            for (std::size_t idx : batches[bi]) {
                pre.push_back(model.forward_encoded(tape, train_enc[idx]).pre_activation);
                targets.push_back(one_hot(train_labels[idx], model.num_classes()));
            }
            Tensor loss = cross_entropy_loss(tape, pre, targets);
            double lv = loss.item();
            if (!std::isfinite(lv)) {
                char buf[160];
                std::snprintf(buf, sizeof buf,
                              "training diverged: loss=%g at epoch %zu, batch %zu of %zu", lv,
                              epoch, bi + 1, batches.size());
                throw NumericError(buf);
            }
            loss_sum += lv * double(batches[bi].size());
            for (Tensor& p : params) p.zero_grad();
            tape.backward(loss);
            adam_step(params, opt, cfg);
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / double(train.size());
        if (has_val) {
            EvalReport report = detail::evaluate_encoded(model, val_enc, val_labels);
            st.has_val = true;
            st.val_macro_f1 = report.macro_f1;
            st.val_accuracy = report.accuracy;
            if (report.macro_f1 > best_f1) {
                best_f1 = report.macro_f1;
                best = model.snapshot();
                result.best_epoch = epoch;
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
            }
        }
        result.history.push_back(st);
        if (has_val && cfg.early_stop_patience > 0 &&
            epochs_since_best >= cfg.early_stop_patience)
            break;
    }

    if (has_val && result.best_epoch > 0) {
        model.restore(best);
        result.best_val_macro_f1 = best_f1;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training history log.

inline constexpr const char* kHistoryHeader = "# crab-history v1";

// One tab-separated row per epoch; validation columns show "-" when no
// validation set was used.  Full float precision so reruns can be compared
// byte for byte.
inline std::string format_history(const std::vector<EpochStats>& history) {
    std::string out = std::string(kHistoryHeader) + "\n";
    out += "# epoch\ttrain_loss\tval_macro_f1\tval_accuracy\n";
    char buf[160];
    for (const EpochStats& st : history) {
        if (st.has_val)
            std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\n", st.epoch, st.train_loss,
                          st.val_macro_f1, st.val_accuracy);
        else
            std::snprintf(buf, sizeof buf, "%zu\t%.17g\t-\t-\n", st.epoch, st.train_loss);
        out += buf;
    }
    return out;
}

}  // namespace crab
