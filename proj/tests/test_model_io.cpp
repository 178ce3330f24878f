#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "crab/model_io.hpp"
#include "crab/train.hpp"

using namespace crab;

namespace {

LabeledCorpus demo_corpus() {
    LabeledCorpus corpus;
    corpus.class_names = {"yes", "no", "maybe"};
    corpus.examples = {
        {"sure thing, happy to", 0},   {"great idea so good", 0}, {"absolutely yes do it", 0},
        {"never gonna happen", 1},     {"no way too bad", 1},     {"awful plan, hard pass", 1},
        {"hmm could go either way", 2}, {"not sure about that", 2}, {"ask me again later", 2},
    };
    return corpus;
}

CrabModel demo_model(std::uint64_t seed, bool sentence_layer = true, std::size_t layers = 1,
                     OutputMode mode = OutputMode::softmax, std::size_t heads = 2) {
    LabeledCorpus corpus = demo_corpus();
    NormRules rules = NormRules::defaults();
    std::vector<std::vector<std::string>> docs;
    for (const auto& ex : corpus.examples) docs.push_back(tokenize(normalize(ex.text, rules)));
    Vocab vocab = Vocab::build(docs, 1, 0);
    ToyEncoderConfig ec;
    ec.embed_dim = 8;
    ec.max_len = 7;
    ec.layers = layers;
    ec.heads = 2;
    CrabConfig hc;
    hc.heads = heads;
    hc.fc1 = 6;
    hc.fc2 = 10;
    hc.output_mode = mode;
    hc.sentence_layer = sentence_layer;
    Rng rng(seed);
    return CrabModel::make(rules, vocab, corpus.class_names, ec, hc, rng);
}

void require_same_values(const CrabModel& a, const CrabModel& b) {
    std::vector<Tensor> pa = a.trainable(), pb = b.trainable();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].shape() == pb[i].shape());
        REQUIRE(pa[i].values() == pb[i].values());
    }
    REQUIRE(a.encoder.params().positional.values() == b.encoder.params().positional.values());
}

}  // namespace

TEST_CASE("serialize then deserialize reproduces the model exactly") {
    CrabModel model = demo_model(31001);
    std::string bytes = serialize_model(model);
    REQUIRE(bytes.compare(0, 4, "CRAB") == 0);

    CrabModel loaded = deserialize_model(bytes);
    REQUIRE(loaded.class_names == model.class_names);
    REQUIRE(loaded.num_classes() == 3);
    REQUIRE(loaded.head_cfg.heads == model.head_cfg.heads);
    REQUIRE(loaded.head_cfg.fc1 == model.head_cfg.fc1);
    REQUIRE(loaded.head_cfg.fc2 == model.head_cfg.fc2);
    REQUIRE(loaded.head_cfg.sentence_layer == model.head_cfg.sentence_layer);
    REQUIRE(loaded.head_cfg.output_mode == model.head_cfg.output_mode);
    REQUIRE(loaded.encoder.config().embed_dim == 8);
    REQUIRE(loaded.encoder.config().max_len == 7);
    REQUIRE(loaded.vocab.size() == model.vocab.size());
    require_same_values(model, loaded);

    // Same text, bit-identical scores.
    for (const char* text : {"great idea so good", "never gonna happen", "unseen words here"}) {
        Tape ta, tb;
        FusedScores sa = model.forward_text(ta, text);
        FusedScores sb = loaded.forward_text(tb, text);
        REQUIRE(sa.probs.values() == sb.probs.values());
        REQUIRE(sa.pre_activation.values() == sb.pre_activation.values());
    }
}

TEST_CASE("serialization is canonical: identical bytes every time") {
    CrabModel model = demo_model(31002);
    std::string once = serialize_model(model);
    std::string twice = serialize_model(model);
    REQUIRE(once == twice);
    // A load/save round trip is also byte-identical.
    REQUIRE(serialize_model(deserialize_model(once)) == once);
}

TEST_CASE("round trip covers every configuration axis") {
    for (bool sentence : {true, false})
        for (std::size_t layers : {std::size_t(1), std::size_t(2)})
            for (OutputMode mode : {OutputMode::softmax, OutputMode::sigmoid})
                for (std::size_t heads : {std::size_t(1), std::size_t(3)}) {
                    CrabModel model = demo_model(31003, sentence, layers, mode, heads);
                    CrabModel loaded = deserialize_model(serialize_model(model));
                    REQUIRE(loaded.head_cfg.sentence_layer == sentence);
                    REQUIRE(loaded.encoder.config().layers == layers);
                    REQUIRE(loaded.head_cfg.output_mode == mode);
                    REQUIRE(loaded.head.a.size() == heads);
                    require_same_values(model, loaded);
                }
}

TEST_CASE("loaded parameters keep their trainable flags") {
    CrabModel loaded = deserialize_model(serialize_model(demo_model(31004)));
    REQUIRE(loaded.trainable().size() == demo_model(31004).trainable().size());
    for (const Tensor& t : loaded.trainable()) REQUIRE(t.requires_grad());
    REQUIRE_FALSE(loaded.encoder.params().positional.requires_grad());

    // And fitting a loaded model works (gradients flow into the restored tensors).
    LabeledCorpus corpus = demo_corpus();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    LabeledCorpus no_val{{}, corpus.class_names};
    FitResult r = fit(loaded, corpus, no_val, cfg);
    REQUIRE(r.history.size() == 1);
    REQUIRE(std::isfinite(r.history[0].train_loss));
}

TEST_CASE("a trained model survives the file round trip") {
    LabeledCorpus corpus = demo_corpus();
    CrabModel model = demo_model(31005);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.learning_rate = 5e-3;
    cfg.seed = 9;
    LabeledCorpus no_val{{}, corpus.class_names};
    fit(model, corpus, no_val, cfg);
    model.train_seed = cfg.seed;
    model.train_epochs = cfg.epochs;

    std::filesystem::path path =
        std::filesystem::temp_directory_path() / "crab_model_roundtrip_test.bin";
    save_model(model, path.string());
    CrabModel loaded = load_model(path.string());
    std::filesystem::remove(path);

    REQUIRE(loaded.train_seed == 9);
    REQUIRE(loaded.train_epochs == 3);
    require_same_values(model, loaded);
    EvalReport ra = evaluate(model, corpus);
    EvalReport rb = evaluate(loaded, corpus);
    REQUIRE(ra.confusion == rb.confusion);
    REQUIRE(ra.macro_f1 == rb.macro_f1);
}

TEST_CASE("corrupt model files are rejected with format errors") {
    std::string good = serialize_model(demo_model(31006));

    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        REQUIRE_THROWS_AS(deserialize_model(bad), ModelFormatError);
    }
    SECTION("unsupported version") {
        std::string bad = good;
        bad[4] = 99;
        REQUIRE_THROWS_MATCHES(deserialize_model(bad), ModelFormatError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("version 99")));
    }
    SECTION("truncation anywhere throws, never crashes") {
        for (std::size_t len :
             {std::size_t(0), std::size_t(3), std::size_t(4), std::size_t(11), std::size_t(12),
              std::size_t(40), good.size() / 2, good.size() - 1})
            REQUIRE_THROWS_AS(deserialize_model(good.substr(0, len)), ModelFormatError);
    }
    SECTION("missing sections") {
        std::string empty = "CRAB";
        detail::put_u32(empty, kModelFormatVersion);
        detail::put_u32(empty, 0);
        REQUIRE_THROWS_MATCHES(deserialize_model(empty), ModelFormatError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("missing section")));
    }
    SECTION("flipped payload byte changes a value but never the structure") {
        // Corrupting one f64 byte inside the head section still loads (values
        // are not checksummed) or fails cleanly; it must not crash.  Corrupt
        // the final byte, which lands in w_lin's payload.
        std::string bad = good;
        bad.back() = char(bad.back() ^ 0x40);
        CrabModel loaded = deserialize_model(bad);
        REQUIRE(loaded.num_classes() == 3);
    }
    SECTION("missing file") {
        REQUIRE_THROWS_AS(load_model("/nonexistent/path/model.bin"), DataError);
    }
}
