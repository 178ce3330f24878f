// crab — train, evaluate, and run a class-representation attention text
// classifier from the command line.
//
// Subcommands: preprocess, split, train, evaluate, predict.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
// Human-readable results go to stdout; diagnostics go to stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crab/dataset.hpp"
#include "crab/io_util.hpp"
#include "crab/model_io.hpp"
#include "crab/stats.hpp"
#include "crab/train.hpp"

namespace {

using namespace crab;

// Every flag the tool understands, across all subcommands.  Defaults mirror
// the library defaults (batch 32, four heads, fc 64/128, 0.8/0.1/0.1 split).
struct RunConfig {
    // Shared
    std::string rules_path;  // empty = built-in rule table
    std::uint64_t seed = 0;

    // preprocess
    std::string pre_input, pre_output;

    // split
    std::string split_input, split_out_dir;
    SplitSpec split_spec;

    // train
    std::string train_input, val_input;
    std::string model_out, history_out;
    std::size_t min_count = 1;
    std::size_t max_vocab = 0;  // 0 = unlimited
    ToyEncoderConfig enc;
    CrabConfig head;
    TrainConfig trainer;
    std::string output_mode = "softmax";
    bool sentence_layer = true;

    // evaluate
    std::string eval_model, eval_input;
    std::vector<std::string> compare_paths;

    // predict
    std::string predict_model;
    std::vector<std::string> predict_texts;
};

NormRules rules_from(const RunConfig& rc) {
    return rc.rules_path.empty() ? NormRules::defaults() : load_norm_rules(rc.rules_path);
}

// One float per line; blank lines are ignored.
std::vector<double> read_score_list(const std::string& path) {
    std::string text = read_text_file(path);
    std::vector<double> scores;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size() && start < text.size() + 1) {
        if (start == text.size()) break;
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) nl = text.size();
        std::string ln = text.substr(start, nl - start);
        start = nl + 1;
        ++line_no;
        if (!ln.empty() && ln.back() == '\r') ln.pop_back();
        if (ln.empty()) continue;
        try {
            std::size_t used = 0;
            double v = std::stod(ln, &used);
            while (used < ln.size() && (ln[used] == ' ' || ln[used] == '\t')) ++used;
            if (used != ln.size()) throw std::invalid_argument(ln);
            scores.push_back(v);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected one number per line, got '" + ln + "'");
        }
    }
    return scores;
}

std::string four_dec(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Subcommand bodies.

void cmd_preprocess(const RunConfig& rc) {
    NormRules rules = rules_from(rc);
    LabeledCorpus corpus = load_corpus(rc.pre_input);
    for (LabeledExample& ex : corpus.examples) ex.text = normalize(ex.text, rules);
    save_corpus(corpus, rc.pre_output);
    std::cout << "normalized " << corpus.size() << " rows -> " << rc.pre_output << "\n";
}

void cmd_split(const RunConfig& rc) {
    LabeledCorpus corpus = load_corpus(rc.split_input);
    SplitSpec spec = rc.split_spec;
    spec.seed = rc.seed;
    SplitIndices idx = stratified_split(corpus, spec);

    std::filesystem::create_directories(rc.split_out_dir);
    auto write_part = [&](const char* name, const std::vector<std::size_t>& ids) {
        std::string path = (std::filesystem::path(rc.split_out_dir) / name).string();
        save_corpus(subset(corpus, ids), path);
        return ids;
    };
    auto train_ids = write_part("train.tsv", idx.train);
    auto val_ids = write_part("val.tsv", idx.val);
    auto test_ids = write_part("test.tsv", idx.test);

    // Per-class counts, classes as columns with a trailing total — one row
    // per output split.
    std::cout << "Class";
    for (const std::string& name : corpus.class_names) std::cout << "\t" << name;
    std::cout << "\tTotal\n";
    auto row = [&](const char* name, const std::vector<std::size_t>& ids) {
        std::vector<std::size_t> counts(corpus.num_classes(), 0);
        for (std::size_t i : ids) counts[corpus.examples[i].label] += 1;
        std::cout << name;
        for (std::size_t c : counts) std::cout << "\t" << c;
        std::cout << "\t" << ids.size() << "\n";
    };
    row("train", train_ids);
    row("val", val_ids);
    row("test", test_ids);
}

void cmd_train(const RunConfig& rc) {
    NormRules rules = rules_from(rc);
    LabeledCorpus train_corpus = load_corpus(rc.train_input);
    LabeledCorpus val_corpus{{}, train_corpus.class_names};
    if (!rc.val_input.empty()) {
        val_corpus = load_corpus(rc.val_input);
        if (val_corpus.class_names != train_corpus.class_names)
            throw DataError("validation set classes do not match training set classes");
    }

    // The vocabulary sees the training split only.
    std::vector<std::vector<std::string>> docs;
    for (const LabeledExample& ex : train_corpus.examples)
        docs.push_back(tokenize(normalize(ex.text, rules)));
    Vocab vocab = Vocab::build(docs, rc.min_count, rc.max_vocab);

    CrabConfig head_cfg = rc.head;
    head_cfg.output_mode = output_mode_from_string(rc.output_mode);
    head_cfg.sentence_layer = rc.sentence_layer;

    TrainConfig tc = rc.trainer;
    tc.seed = rc.seed;
    tc.validate();

    Rng rng(rc.seed);
    CrabModel model =
        CrabModel::make(rules, vocab, train_corpus.class_names, rc.enc, head_cfg, rng);
    std::cerr << "training on " << train_corpus.size() << " examples, "
              << model.vocab.size() << " vocabulary entries, "
              << model.trainable().size() << " parameter tensors\n";

    FitResult result = fit(model, train_corpus, val_corpus, tc);
    model.train_seed = tc.seed;
    model.train_epochs = tc.epochs;
    save_model(model, rc.model_out);
    if (!rc.history_out.empty()) write_text_file(rc.history_out, format_history(result.history));

    if (!result.history.empty())
        std::cout << "final train loss\t" << four_dec(result.history.back().train_loss) << "\n";
    if (result.best_epoch > 0) {
        std::cout << "best val macro f1\t" << four_dec(result.best_val_macro_f1) << "\tepoch "
                  << result.best_epoch << "\n";
    }
    std::cout << "wrote model -> " << rc.model_out << "\n";
    if (!rc.history_out.empty()) std::cout << "wrote history -> " << rc.history_out << "\n";
}

void cmd_compare(const RunConfig& rc) {
    std::vector<double> a = read_score_list(rc.compare_paths[0]);
    std::vector<double> b = read_score_list(rc.compare_paths[1]);
    TTestResult r = paired_t_test(a, b);
    char buf[96];
    std::snprintf(buf, sizeof buf, "t\t%.6g\np_one_tailed\t%.6g\nn\t%zu\n", r.t, r.p_one_sided,
                  r.n);
    std::cout << buf;
}

void cmd_evaluate(const RunConfig& rc) {
    if (!rc.compare_paths.empty()) {
        cmd_compare(rc);
        return;
    }
    if (rc.eval_model.empty() || rc.eval_input.empty())
        throw ConfigError("evaluate needs a model and a test corpus (or --compare A B)");
    CrabModel model = load_model(rc.eval_model);
    LabeledCorpus test = load_corpus(rc.eval_input);
    if (test.size() == 0) throw DataError("empty evaluation set: " + rc.eval_input);
    if (test.class_names != model.class_names)
        throw DataError("test set classes do not match the model's classes");

    EvalReport report = evaluate(model, test);
    std::cout << "Accuracy\tF1\tR\tP\n"
              << four_dec(report.accuracy) << "\t" << four_dec(report.macro_f1) << "\t"
              << four_dec(report.macro_recall) << "\t" << four_dec(report.macro_precision)
              << "\n";
    std::cout << format_report(report, model.class_names);
}

void cmd_predict(const RunConfig& rc) {
    CrabModel model = load_model(rc.predict_model);
    for (const std::string& text : rc.predict_texts) {
        Tape tape;
        FusedScores scores = model.forward_text(tape, text);
        std::size_t pred = predict_class(scores.probs);
        std::cout << model.class_names[pred];
        for (double p : scores.probs.values()) std::cout << "\t" << four_dec(p);
        std::cout << "\n";
    }
}

template <typename F>
int run_guarded(F&& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig rc;
    CLI::App app{"class-representation attention text classifier"};
    app.require_subcommand(1);

    CLI::App* pre = app.add_subcommand("preprocess", "normalize the text column of a corpus");
    pre->add_option("input", rc.pre_input, "corpus file to read")->required();
    pre->add_option("output", rc.pre_output, "normalized corpus file to write")->required();
    pre->add_option("--rules", rc.rules_path, "normalization rule table (default: built-in)");

    CLI::App* spl = app.add_subcommand("split", "stratified train/val/test split");
    spl->add_option("input", rc.split_input, "corpus file to read")->required();
    spl->add_option("out_dir", rc.split_out_dir, "directory for train.tsv/val.tsv/test.tsv")
        ->required();
    spl->add_option("--train-ratio", rc.split_spec.train_ratio, "training fraction")
        ->capture_default_str();
    spl->add_option("--val-ratio", rc.split_spec.val_ratio, "validation fraction")
        ->capture_default_str();
    spl->add_option("--test-ratio", rc.split_spec.test_ratio, "test fraction")
        ->capture_default_str();
    spl->add_option("--seed", rc.seed, "shuffling seed")->capture_default_str();

    CLI::App* trn = app.add_subcommand("train", "train a model on a labeled corpus");
    trn->add_option("train", rc.train_input, "training corpus")->required();
    trn->add_option("--val", rc.val_input, "validation corpus");
    trn->add_option("--out", rc.model_out, "model file to write")->required();
    trn->add_option("--history", rc.history_out, "write per-epoch history log here");
    trn->add_option("--rules", rc.rules_path, "normalization rule table (default: built-in)");
    trn->add_option("--min-count", rc.min_count, "minimum token frequency for the vocabulary")
        ->capture_default_str();
    trn->add_option("--max-vocab", rc.max_vocab, "vocabulary size cap, 0 = unlimited")
        ->capture_default_str();
    trn->add_option("--embed-dim", rc.enc.embed_dim, "encoder embedding width")
        ->capture_default_str();
    trn->add_option("--max-len", rc.enc.max_len, "sequence length including the summary slot")
        ->capture_default_str();
    trn->add_option("--enc-layers", rc.enc.layers, "encoder blocks")->capture_default_str();
    trn->add_option("--attn-heads", rc.enc.heads, "attention heads per block")
        ->capture_default_str();
    trn->add_option("--heads", rc.head.heads, "token-wise class representation heads")
        ->capture_default_str();
    trn->add_option("--fc1", rc.head.fc1, "first aggregation layer width")
        ->capture_default_str();
    trn->add_option("--fc2", rc.head.fc2, "second aggregation layer width")
        ->capture_default_str();
    trn->add_option("--output-mode", rc.output_mode, "softmax or sigmoid")
        ->capture_default_str();
    trn->add_option("--sentence-layer", rc.sentence_layer,
                    "enable the sentence-wise layer (on/off)")
        ->capture_default_str();
    trn->add_option("--batch-size", rc.trainer.batch_size, "examples per batch")
        ->capture_default_str();
    trn->add_option("--epochs", rc.trainer.epochs, "training epochs")->capture_default_str();
    trn->add_option("--lr", rc.trainer.learning_rate, "Adam learning rate")
        ->capture_default_str();
    trn->add_option("--patience", rc.trainer.early_stop_patience,
                    "early-stop patience in epochs, 0 = off")
        ->capture_default_str();
    trn->add_option("--seed", rc.seed, "seed for init and batch shuffling")
        ->capture_default_str();

    CLI::App* evl = app.add_subcommand("evaluate", "score a model on a test corpus");
    evl->add_option("model", rc.eval_model, "model file");
    evl->add_option("test", rc.eval_input, "test corpus");
    evl->add_option("--compare", rc.compare_paths,
                    "two score-list files; runs a paired t-test instead of an evaluation")
        ->expected(2);

    CLI::App* prd = app.add_subcommand("predict", "classify raw text lines");
    prd->add_option("model", rc.predict_model, "model file")->required();
    prd->add_option("text", rc.predict_texts, "one or more texts to classify")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (pre->parsed()) return run_guarded([&] { cmd_preprocess(rc); });
    if (spl->parsed()) return run_guarded([&] { cmd_split(rc); });
    if (trn->parsed()) return run_guarded([&] { cmd_train(rc); });
    if (evl->parsed()) return run_guarded([&] { cmd_evaluate(rc); });
    if (prd->parsed()) return run_guarded([&] { cmd_predict(rc); });
    return 1;
}
