#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "crab/dataset.hpp"
#include "crab/io_util.hpp"
#include "crab/model_io.hpp"
#include "crab/text.hpp"

using namespace crab;

namespace {

namespace fs = std::filesystem;

struct Cmd {
    int code = -1;
    std::string out, err;
};

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "crab_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char c : s)
        if (c == '\'')
            q += "'\\''";
        else
            q += c;
    return q + "'";
}

Cmd run(const std::vector<std::string>& args) {
    fs::path out_path = work_dir() / "cmd_stdout.txt";
    fs::path err_path = work_dir() / "cmd_stderr.txt";
    std::string cmdline = shell_quote(CRAB_BIN);
    for (const std::string& a : args) cmdline += " " + shell_quote(a);
    cmdline += " > " + shell_quote(out_path.string()) + " 2> " + shell_quote(err_path.string());
    int status = std::system(cmdline.c_str());
    Cmd r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text_file(out_path.string());
    r.err = read_text_file(err_path.string());
    return r;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) nl = text.size();
        out.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

std::vector<std::string> fields_of(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

// Finds the first stdout line whose first tab field equals `key`.
std::string line_with_key(const std::string& text, const std::string& key) {
    for (const std::string& ln : lines_of(text))
        if (fields_of(ln)[0] == key) return ln;
    return "";
}

// Separable 4-class corpus mirroring a heavily imbalanced label distribution.
LabeledCorpus imbalanced_corpus(std::uint64_t seed) {
    const std::vector<std::vector<std::string>> pools = {
        {"good", "great", "happy", "lovely", "nice", "win", "fun"},
        {"bad", "awful", "terrible", "sad", "angry", "lose"},
        {"buy", "free", "click", "deal", "sale", "offer"},
        {"maybe", "later", "unsure", "perhaps", "hmm"},
    };
    const std::size_t counts[4] = {80, 40, 20, 10};
    Rng rng(seed);
    LabeledCorpus corpus;
    corpus.class_names = {"normal", "abusive", "spam", "hateful"};
    for (std::size_t label = 0; label < 4; ++label)
        for (std::size_t i = 0; i < counts[label]; ++i) {
            std::string text;
            std::size_t words = 3 + rng.below(4);
            for (std::size_t w = 0; w < words; ++w) {
                if (w) text += " ";
                text += pools[label][rng.below(pools[label].size())];
            }
            corpus.examples.push_back({text, label});
        }
    return corpus;
}

std::string corpus_file(const LabeledCorpus& corpus, const std::string& name) {
    std::string path = (work_dir() / name).string();
    write_text_file(path, format_corpus(corpus));
    return path;
}

// Standard tiny-model training flags used across tests, minus seed/paths.
std::vector<std::string> tiny_train_flags(const std::string& epochs = "8",
                                          const std::string& lr = "5e-3") {
    return {"--embed-dim", "16", "--max-len", "10", "--enc-layers", "1", "--attn-heads", "2",
            "--fc1",       "16", "--fc2",     "32", "--epochs",     epochs,
            "--lr",        lr,   "--batch-size",    "16"};
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
    REQUIRE(run({"--help"}).code == 0);
    REQUIRE(run({"train", "--help"}).code == 0);
    REQUIRE(run({}).code == 1);
    REQUIRE(run({"frobnicate"}).code == 1);
    REQUIRE(run({"train", "missing.tsv"}).code == 1);  // --out is required
    Cmd eval_nothing = run({"evaluate"});
    REQUIRE(eval_nothing.code == 1);

    LabeledCorpus corpus = imbalanced_corpus(1);
    std::string path = corpus_file(corpus, "usage.tsv");
    Cmd bad_mode = run({"train", path, "--out", (work_dir() / "x.bin").string(),
                        "--output-mode", "softplus", "--epochs", "0"});
    REQUIRE(bad_mode.code == 1);
    REQUIRE(bad_mode.err.find("softplus") != std::string::npos);
}

TEST_CASE("preprocess normalizes rows against the frozen tweet fixtures") {
    // Raw tweets and their hand-derived normalizations are the frozen fixture
    // pair; routing them through a corpus file must reproduce the same bytes.
    std::vector<std::string> raw = lines_of(
        read_text_file(std::string(CRAB_TEST_DIR) + "/fixtures/tweets_50_raw.txt"));
    std::vector<std::string> want = lines_of(
        read_text_file(std::string(CRAB_TEST_DIR) + "/fixtures/tweets_50_normalized.txt"));
    REQUIRE(raw.size() == 50);
    REQUIRE(want.size() == 50);

    LabeledCorpus input, expected;
    input.class_names = expected.class_names = {"even", "odd"};
    for (std::size_t i = 0; i < raw.size(); ++i) {
        input.examples.push_back({raw[i], i % 2});
        expected.examples.push_back({want[i], i % 2});
    }
    std::string in_path = corpus_file(input, "pre_in.tsv");
    std::string out_path = (work_dir() / "pre_out.tsv").string();
    Cmd r = run({"preprocess", in_path, out_path});
    REQUIRE(r.code == 0);
    REQUIRE(read_text_file(out_path) == format_corpus(expected));

    // Idempotence: preprocessing the output changes nothing.
    std::string twice_path = (work_dir() / "pre_twice.tsv").string();
    REQUIRE(run({"preprocess", out_path, twice_path}).code == 0);
    REQUIRE(read_text_file(twice_path) == read_text_file(out_path));
}

TEST_CASE("preprocess handles empty data sections and rejects bad files") {
    std::string empty_in = (work_dir() / "empty_in.tsv").string();
    write_text_file(empty_in, "#classes\ta\tb\n");
    std::string empty_out = (work_dir() / "empty_out.tsv").string();
    Cmd r = run({"preprocess", empty_in, empty_out});
    REQUIRE(r.code == 0);
    REQUIRE(read_text_file(empty_out) == "#classes\ta\tb\n");

    std::string bad = (work_dir() / "bad.tsv").string();
    write_text_file(bad, "#classes\ta\tb\na\tfine\nnot-a-label\toops\n");
    Cmd fail = run({"preprocess", bad, empty_out});
    REQUIRE(fail.code == 2);
    REQUIRE(fail.err.find("line 3") != std::string::npos);

    REQUIRE(run({"preprocess", (work_dir() / "nonexistent.tsv").string(), empty_out}).code == 2);
}

TEST_CASE("split writes three files and prints the per-class count table") {
    LabeledCorpus corpus;
    corpus.class_names = {"a", "b", "c", "d"};
    Rng rng(7);
    for (std::size_t label = 0; label < 4; ++label)
        for (std::size_t i = 0; i < 25; ++i)
            corpus.examples.push_back({"w" + std::to_string(rng.below(50)), label});
    std::string path = corpus_file(corpus, "split_in.tsv");

    std::string dir1 = (work_dir() / "splits1").string();
    Cmd r = run({"split", path, dir1, "--seed", "5"});
    REQUIRE(r.code == 0);
    std::vector<std::string> out = lines_of(r.out);
    REQUIRE(out.size() == 4);
    REQUIRE(out[0] == "Class\ta\tb\tc\td\tTotal");
    // floor(25 * 0.8) = 20 train, floor(25 * 0.9) - 20 = 2 val, 3 test.
    REQUIRE(out[1] == "train\t20\t20\t20\t20\t80");
    REQUIRE(out[2] == "val\t2\t2\t2\t2\t8");
    REQUIRE(out[3] == "test\t3\t3\t3\t3\t12");

    // Same seed → byte-identical outputs.
    std::string dir2 = (work_dir() / "splits2").string();
    REQUIRE(run({"split", path, dir2, "--seed", "5"}).code == 0);
    for (const char* name : {"train.tsv", "val.tsv", "test.tsv"})
        REQUIRE(read_text_file(dir1 + "/" + name) == read_text_file(dir2 + "/" + name));

    // Degenerate ratios put everything in train.
    std::string dir3 = (work_dir() / "splits3").string();
    REQUIRE(run({"split", path, dir3, "--train-ratio", "1", "--val-ratio", "0", "--test-ratio",
                 "0"})
                .code == 0);
    REQUIRE(load_corpus(dir3 + "/train.tsv").size() == 100);
    REQUIRE(load_corpus(dir3 + "/val.tsv").size() == 0);
    REQUIRE(load_corpus(dir3 + "/test.tsv").size() == 0);

    // Ratios that do not sum to one are a usage error.
    REQUIRE(run({"split", path, dir3, "--train-ratio", "0.9", "--val-ratio", "0.9",
                 "--test-ratio", "0.1"})
                .code == 1);
}

TEST_CASE("split names the class that has no examples") {
    std::string path = (work_dir() / "ghost.tsv").string();
    write_text_file(path, "#classes\treal\tghost\nreal\thello there\nreal\tmore text\n");
    Cmd r = run({"split", path, (work_dir() / "ghost_splits").string()});
    REQUIRE(r.code == 2);
    REQUIRE(r.err.find("ghost") != std::string::npos);
}

TEST_CASE("train fits a separable corpus and records history") {
    LabeledCorpus corpus = imbalanced_corpus(7);
    std::string full = corpus_file(corpus, "train_full.tsv");
    std::string dir = (work_dir() / "train_splits").string();
    REQUIRE(run({"split", full, dir, "--seed", "5"}).code == 0);

    std::string model_path = (work_dir() / "model.bin").string();
    std::string hist_path = (work_dir() / "hist.tsv").string();
    std::vector<std::string> args = {"train",     dir + "/train.tsv", "--val", dir + "/val.tsv",
                                     "--out",     model_path,         "--history", hist_path,
                                     "--seed",    "3"};
    for (const std::string& f : tiny_train_flags()) args.push_back(f);
    Cmd r = run(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("wrote model") != std::string::npos);

    // History: versioned header, one row per epoch, final val accuracy >= 0.9.
    std::vector<std::string> hist = lines_of(read_text_file(hist_path));
    REQUIRE(hist[0] == "# crab-history v1");
    REQUIRE(hist.size() == 2 + 8);
    std::vector<std::string> last = fields_of(hist.back());
    REQUIRE(last.size() == 4);
    REQUIRE(std::stod(last[3]) >= 0.9);

    // Stored model carries config and training metadata.
    CrabModel model = load_model(model_path);
    REQUIRE(model.class_names == corpus.class_names);
    REQUIRE(model.train_seed == 3);
    REQUIRE(model.train_epochs == 8);
    REQUIRE(model.encoder.config().embed_dim == 16);
    REQUIRE(model.head_cfg.fc1 == 16);
    REQUIRE(model.head_cfg.fc2 == 32);
}

TEST_CASE("train is deterministic: same flags and seed give identical bytes") {
    LabeledCorpus corpus = imbalanced_corpus(8);
    std::string full = corpus_file(corpus, "det_full.tsv");
    std::string dir = (work_dir() / "det_splits").string();
    REQUIRE(run({"split", full, dir, "--seed", "5"}).code == 0);

    auto train_to = [&](const std::string& tag, const std::string& seed) {
        std::string model_path = (work_dir() / ("det_" + tag + ".bin")).string();
        std::string hist_path = (work_dir() / ("det_" + tag + ".hist")).string();
        std::vector<std::string> args = {"train",     dir + "/train.tsv",
                                         "--val",     dir + "/val.tsv",
                                         "--out",     model_path,
                                         "--history", hist_path,
                                         "--seed",    seed};
        for (const std::string& f : tiny_train_flags()) args.push_back(f);
        REQUIRE(run(args).code == 0);
        return std::make_pair(read_text_file(model_path), read_text_file(hist_path));
    };
    auto [model_a, hist_a] = train_to("a", "11");
    auto [model_b, hist_b] = train_to("b", "11");
    REQUIRE(model_a == model_b);
    REQUIRE(hist_a == hist_b);

    auto [model_c, hist_c] = train_to("c", "12");
    REQUIRE(model_a != model_c);
}

TEST_CASE("train flags plumb through to the stored model") {
    LabeledCorpus corpus = imbalanced_corpus(9);
    std::string path = corpus_file(corpus, "plumb.tsv");
    auto train_with = [&](const std::string& tag, std::vector<std::string> extra) {
        std::string model_path = (work_dir() / ("plumb_" + tag + ".bin")).string();
        std::vector<std::string> args = {"train", path, "--out", model_path, "--seed", "3"};
        for (const std::string& f : tiny_train_flags("1")) args.push_back(f);
        for (const std::string& f : extra) args.push_back(f);
        REQUIRE(run(args).code == 0);
        return load_model(model_path);
    };

    // Head-count sweep: models differ only in m and the A stack.
    CrabModel m1 = train_with("m1", {"--heads", "1"});
    CrabModel m2 = train_with("m2", {"--heads", "2"});
    CrabModel m4 = train_with("m4", {"--heads", "4"});
    REQUIRE(m1.head.a.size() == 1);
    REQUIRE(m2.head.a.size() == 2);
    REQUIRE(m4.head.a.size() == 4);
    REQUIRE(m1.head_cfg.fc1 == m4.head_cfg.fc1);
    REQUIRE(m1.head_cfg.fc2 == m4.head_cfg.fc2);
    REQUIRE(m1.encoder.config().embed_dim == m4.encoder.config().embed_dim);
    REQUIRE(m1.head.w_fc2.rows() == 1 * m1.head_cfg.fc1);
    REQUIRE(m4.head.w_fc2.rows() == 4 * m4.head_cfg.fc1);

    CrabModel no_sa = train_with("nosa", {"--sentence-layer", "off"});
    REQUIRE_FALSE(no_sa.head_cfg.sentence_layer);
    REQUIRE(m4.head_cfg.sentence_layer);

    CrabModel sig = train_with("sig", {"--output-mode", "sigmoid"});
    REQUIRE(sig.head_cfg.output_mode == OutputMode::sigmoid);
}

TEST_CASE("vocabulary comes from the training split only") {
    LabeledCorpus corpus = imbalanced_corpus(10);
    std::string train_path = corpus_file(corpus, "leak_train.tsv");

    LabeledCorpus test;
    test.class_names = corpus.class_names;
    test.examples = {{"good zzzunseen deal", 0}, {"awful zzzunseen", 1}};
    std::string test_path = corpus_file(test, "leak_test.tsv");

    std::string model_path = (work_dir() / "leak.bin").string();
    std::vector<std::string> args = {"train", train_path, "--out", model_path, "--seed", "3"};
    for (const std::string& f : tiny_train_flags()) args.push_back(f);
    REQUIRE(run(args).code == 0);

    CrabModel model = load_model(model_path);
    REQUIRE_FALSE(model.vocab.contains("zzzunseen"));
    REQUIRE(model.vocab.contains("good"));

    // Evaluating a corpus with unseen tokens still works (they map to the
    // unknown id).
    Cmd r = run({"evaluate", model_path, test_path});
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("Accuracy\tF1\tR\tP") != std::string::npos);
}

TEST_CASE("evaluate matches the metrics stored during training") {
    LabeledCorpus corpus = imbalanced_corpus(11);
    std::string full = corpus_file(corpus, "consist_full.tsv");
    std::string dir = (work_dir() / "consist_splits").string();
    REQUIRE(run({"split", full, dir, "--seed", "5"}).code == 0);

    std::string model_path = (work_dir() / "consist.bin").string();
    std::string hist_path = (work_dir() / "consist.hist").string();
    std::vector<std::string> args = {"train",     dir + "/train.tsv", "--val", dir + "/val.tsv",
                                     "--out",     model_path,         "--history", hist_path,
                                     "--seed",    "3"};
    for (const std::string& f : tiny_train_flags()) args.push_back(f);
    Cmd train_cmd = run(args);
    REQUIRE(train_cmd.code == 0);

    // The train command reports the best validation macro-F1 and its epoch;
    // re-evaluating the saved model on the same validation file must agree,
    // because the saved parameters are that epoch's snapshot.
    std::string best_line = line_with_key(train_cmd.out, "best val macro f1");
    REQUIRE(!best_line.empty());
    std::vector<std::string> best = fields_of(best_line);
    std::string best_f1 = best[1];
    std::size_t best_epoch = std::stoul(best[2].substr(std::string("epoch ").size()));

    Cmd eval_cmd = run({"evaluate", model_path, dir + "/val.tsv"});
    REQUIRE(eval_cmd.code == 0);
    std::vector<std::string> eval_out = lines_of(eval_cmd.out);
    REQUIRE(eval_out[0] == "Accuracy\tF1\tR\tP");
    std::vector<std::string> summary = fields_of(eval_out[1]);
    REQUIRE(summary[1] == best_f1);

    // And the history row for that epoch shows the same accuracy.
    std::vector<std::string> hist = lines_of(read_text_file(hist_path));
    std::vector<std::string> row = fields_of(hist[1 + best_epoch]);  // 2 header lines, 1-based
    char acc4[16];
    std::snprintf(acc4, sizeof acc4, "%.4f", std::stod(row[3]));
    REQUIRE(summary[0] == acc4);
}

TEST_CASE("evaluate rejects empty or mismatched test sets") {
    LabeledCorpus corpus = imbalanced_corpus(12);
    std::string train_path = corpus_file(corpus, "eval_err_train.tsv");
    std::string model_path = (work_dir() / "eval_err.bin").string();
    std::vector<std::string> args = {"train", train_path, "--out", model_path, "--seed", "3"};
    for (const std::string& f : tiny_train_flags("1")) args.push_back(f);
    REQUIRE(run(args).code == 0);

    std::string empty_path = (work_dir() / "eval_empty.tsv").string();
    write_text_file(empty_path, "#classes\tnormal\tabusive\tspam\thateful\n");
    Cmd empty_cmd = run({"evaluate", model_path, empty_path});
    REQUIRE(empty_cmd.code == 2);
    REQUIRE(empty_cmd.err.find("empty evaluation set") != std::string::npos);

    std::string other_path = (work_dir() / "eval_other.tsv").string();
    write_text_file(other_path, "#classes\tx\ty\nx\thello\ny\tthere\n");
    REQUIRE(run({"evaluate", model_path, other_path}).code == 2);

    // Corrupt model file → data error.
    std::string trunc_path = (work_dir() / "trunc.bin").string();
    std::string bytes = read_text_file(model_path);
    write_text_file(trunc_path, bytes.substr(0, bytes.size() / 2));
    REQUIRE(run({"evaluate", trunc_path, train_path}).code == 2);
    REQUIRE(run({"predict", (work_dir() / "missing.bin").string(), "hello"}).code == 2);
}

TEST_CASE("evaluate --compare runs the paired t-test") {
    // Engineered so the paired t statistic is exactly 2.132 with df = 4.
    const double r2 = std::sqrt(2.0);
    std::string a_path = (work_dir() / "scores_a.txt").string();
    std::string b_path = (work_dir() / "scores_b.txt").string();
    std::string a_text, b_text;
    for (double d : {2.132 - 2 * r2, 2.132 - r2, 2.132, 2.132 + r2, 2.132 + 2 * r2}) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g\n", 0.5 + d);
        a_text += buf;
        b_text += "0.5\n";
    }
    write_text_file(a_path, a_text);
    write_text_file(b_path, b_text);

    Cmd r = run({"evaluate", "--compare", a_path, b_path});
    REQUIRE(r.code == 0);
    double t = std::stod(fields_of(line_with_key(r.out, "t"))[1]);
    double p = std::stod(fields_of(line_with_key(r.out, "p_one_tailed"))[1]);
    REQUIRE(t == Catch::Approx(2.132).margin(1e-4));
    REQUIRE(p > 0.049);
    REQUIRE(p < 0.051);

    // Identical lists: no evidence either way.
    Cmd same = run({"evaluate", "--compare", a_path, a_path});
    REQUIRE(same.code == 0);
    REQUIRE(std::stod(fields_of(line_with_key(same.out, "t"))[1]) == 0.0);
    REQUIRE(std::stod(fields_of(line_with_key(same.out, "p_one_tailed"))[1]) == 0.5);

    // Too short for a t-test → data error; garbage file → data error.
    std::string short_path = (work_dir() / "scores_short.txt").string();
    write_text_file(short_path, "0.5\n");
    REQUIRE(run({"evaluate", "--compare", short_path, short_path}).code == 2);
    std::string junk_path = (work_dir() / "scores_junk.txt").string();
    write_text_file(junk_path, "0.5\nnot a number\n");
    Cmd junk = run({"evaluate", "--compare", junk_path, junk_path});
    REQUIRE(junk.code == 2);
    REQUIRE(junk.err.find(":2") != std::string::npos);
}

TEST_CASE("predict prints a class name and four-decimal probabilities") {
    LabeledCorpus corpus = imbalanced_corpus(13);
    std::string train_path = corpus_file(corpus, "pred_train.tsv");
    std::string model_path = (work_dir() / "pred.bin").string();
    std::vector<std::string> args = {"train", train_path, "--out", model_path, "--seed", "3"};
    for (const std::string& f : tiny_train_flags()) args.push_back(f);
    REQUIRE(run(args).code == 0);

    Cmd r = run({"predict", model_path, "free deal click", "so happy and lovely", ""});
    REQUIRE(r.code == 0);
    std::vector<std::string> out = lines_of(r.out);
    REQUIRE(out.size() == 3);
    for (const std::string& ln : out) {
        std::vector<std::string> f = fields_of(ln);
        REQUIRE(f.size() == 5);  // class name + 4 probabilities
        bool known = false;
        for (const std::string& name : corpus.class_names) known = known || f[0] == name;
        REQUIRE(known);
        double total = 0;
        for (std::size_t i = 1; i < f.size(); ++i) {
            REQUIRE(f[i].size() == 6);  // 0.xxxx
            total += std::stod(f[i]);
        }
        REQUIRE(total == Catch::Approx(1.0).margin(2e-4));
    }

    // Determinism: the same text yields the same line.
    Cmd twice = run({"predict", model_path, "free deal click", "free deal click"});
    std::vector<std::string> twin = lines_of(twice.out);
    REQUIRE(twin.size() == 2);
    REQUIRE(twin[0] == twin[1]);
}

TEST_CASE("numeric blow-up during training exits with code 3") {
    LabeledCorpus corpus = imbalanced_corpus(14);
    std::string path = corpus_file(corpus, "blowup.tsv");
    std::vector<std::string> args = {"train", path, "--out",
                                     (work_dir() / "blowup.bin").string(), "--seed", "3"};
    for (const std::string& f : tiny_train_flags("8", "1e200")) args.push_back(f);
    Cmd r = run(args);
    REQUIRE(r.code == 3);
    REQUIRE(r.err.find("loss") != std::string::npos);
    REQUIRE(r.err.find("epoch 1") != std::string::npos);
}
