#include "ila/zoo.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ila/common.hpp"

namespace {

using ila::Model;
using ila::Tape;
using ila::Tensor;

struct ArchInfo {
    const char* name;
    int taps;
};

const ArchInfo kArchs[] = {
    {"plain_cnn", 5},
    {"mini_resnet", 6},
    {"mini_inception", 5},
    {"mini_senet", 6},
};

Tensor random_input(uint64_t seed, int n) {
    ila::Rng rng(seed);
    Tensor x = Tensor::zeros({n, 3, 32, 32});
    for (auto& v : x.values_mut()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return x;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

TEST(Zoo, ArchListMatchesBuildableModels) {
    ASSERT_EQ(ila::kArchNames.size(), 4u);
    for (const auto& name : ila::kArchNames) {
        Model m = Model::build(name, 1);
        EXPECT_EQ(m.arch(), name);
    }
}

TEST(Zoo, UnknownArchThrows) {
    EXPECT_THROW(Model::build("resnet152", 1), ila::Error);
}

TEST(Zoo, TapCountsAndChannels) {
    for (const auto& info : kArchs) {
        Model m = Model::build(info.name, 3);
        EXPECT_EQ(m.num_taps(), info.taps) << info.name;
        EXPECT_EQ(m.tap_names().size(), static_cast<size_t>(info.taps));
        for (int l = 0; l < m.num_taps(); ++l) EXPECT_GT(m.tap_channels(l), 0);
        // every architecture ends in global average pooling over 32 channels
        EXPECT_EQ(m.tap_channels(m.num_taps() - 1), 32) << info.name;
        EXPECT_EQ(m.num_classes(), 10);
        EXPECT_THROW(m.tap_channels(-1), ila::Error);
        EXPECT_THROW(m.tap_channels(m.num_taps()), ila::Error);
    }
}

TEST(Zoo, BuildIsDeterministicInSeed) {
    for (const auto& info : kArchs) {
        Model a = Model::build(info.name, 11);
        Model b = Model::build(info.name, 11);
        Model c = Model::build(info.name, 12);
        ASSERT_EQ(a.params().size(), b.params().size());
        bool any_diff_c = false;
        for (size_t i = 0; i < a.params().size(); ++i) {
            EXPECT_EQ(a.params()[i].name, b.params()[i].name);
            auto va = a.params()[i].tensor.values();
            auto vb = b.params()[i].tensor.values();
            ASSERT_EQ(va.size(), vb.size());
            for (size_t j = 0; j < va.size(); ++j) ASSERT_EQ(va[j], vb[j]);
            auto vc = c.params()[i].tensor.values();
            for (size_t j = 0; j < va.size(); ++j) any_diff_c |= va[j] != vc[j];
        }
        EXPECT_TRUE(any_diff_c) << info.name << ": seed had no effect";
    }
}

TEST(Zoo, BiasesStartAtZero) {
    Model m = Model::build("plain_cnn", 5);
    int bias_params = 0;
    for (const auto& p : m.params()) {
        if (p.name.size() < 2 || p.name.substr(p.name.size() - 2) != ".b") continue;
        ++bias_params;
        for (float v : p.tensor.values()) ASSERT_EQ(v, 0.0f) << p.name;
    }
    EXPECT_GT(bias_params, 0);
}

TEST(Zoo, ForwardShapesAndTaps) {
    Tensor x = random_input(7, 2);
    for (const auto& info : kArchs) {
        Model m = Model::build(info.name, 3);
        Tape tape;
        std::vector<Tensor> taps;
        Tensor logits = m.forward(tape, x, &taps);
        EXPECT_EQ(logits.shape(), (ila::Shape{2, 10})) << info.name;
        ASSERT_EQ(taps.size(), static_cast<size_t>(info.taps)) << info.name;
        for (int l = 0; l < info.taps; ++l) {
            ASSERT_GE(taps[static_cast<size_t>(l)].shape().size(), 2u);
            EXPECT_EQ(taps[static_cast<size_t>(l)].shape()[0], 2);
            EXPECT_EQ(taps[static_cast<size_t>(l)].shape()[1], m.tap_channels(l))
                << info.name << " tap " << l;
        }
        // the last tap is the pooled vector feeding the classifier
        EXPECT_EQ(taps.back().shape(), (ila::Shape{2, 32}));
    }
}

TEST(Zoo, TapsAreNonNegativePostActivation) {
    Tensor x = random_input(19, 1);
    for (const auto& info : kArchs) {
        Model m = Model::build(info.name, 3);
        Tape tape;
        std::vector<Tensor> taps;
        m.forward(tape, x, &taps);
        for (const auto& t : taps) {
            for (float v : t.values()) ASSERT_GE(v, 0.0f) << info.name;
        }
    }
}

TEST(Zoo, ForwardToLayerMatchesTaps) {
    Tensor x = random_input(21, 2);
    for (const auto& info : kArchs) {
        Model m = Model::build(info.name, 9);
        Tape tape;
        std::vector<Tensor> taps;
        m.forward(tape, x, &taps);
        for (int l = 0; l < info.taps; ++l) {
            Tape t2;
            Tensor f = m.forward_to_layer(t2, x, l);
            auto a = f.values();
            auto b = taps[static_cast<size_t>(l)].values();
            ASSERT_EQ(a.size(), b.size());
            for (size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << info.name;
        }
        EXPECT_THROW(m.forward_to_layer(tape, x, info.taps), ila::Error);
        EXPECT_THROW(m.forward_to_layer(tape, x, -1), ila::Error);
    }
}

TEST(Zoo, RejectsWrongInputShape) {
    Model m = Model::build("plain_cnn", 1);
    Tape tape;
    Tensor bad = Tensor::zeros({2, 3, 16, 16});
    EXPECT_THROW(m.forward(tape, bad), ila::ShapeError);
    Tensor bad2 = Tensor::zeros({2, 1, 32, 32});
    EXPECT_THROW(m.forward(tape, bad2), ila::ShapeError);
}

TEST(Zoo, InputGradientsPassFiniteDifferences) {
    for (const auto& info : kArchs) {
        Model m = Model::build(info.name, 3);
        Tensor x = random_input(29, 1);
        ila::GradCheckOptions opt;
        opt.max_coords = 12;
        opt.denom_floor = 1.0;
        double err = ila::grad_check(
            [&](Tape& tape, const Tensor& in) {
                Tensor logits = m.forward(tape, in);
                // Fixed probe turns the logit row into a scalar. Its scale
                // sets the float32 evaluation noise that the difference
                // quotient amplifies; a structural gradient bug still shows
                // up orders of magnitude above the tolerance.
                Tensor probe = Tensor::zeros({1, 10});
                auto pv = probe.values_mut();
                for (size_t i = 0; i < pv.size(); ++i)
                    pv[i] = 0.06f + 0.02f * static_cast<float>(i % 5);
                return tape.dot(logits, probe);
            },
            x, opt);
        EXPECT_LT(err, 1e-3) << info.name;
    }
}

TEST(Zoo, SaveLoadRoundTripIsExact) {
    auto path = temp_path("zoo_roundtrip.ilac");
    Model m = Model::build("mini_senet", 77);
    nlohmann::json meta = {{"note", "fixture"}, {"epochs", 3}};
    m.save(path.string(), meta);

    nlohmann::json meta2;
    Model r = Model::load(path.string(), &meta2);
    EXPECT_EQ(r.arch(), "mini_senet");
    EXPECT_EQ(r.init_seed(), 77u);
    EXPECT_EQ(meta2, meta);
    ASSERT_EQ(r.params().size(), m.params().size());
    for (size_t i = 0; i < m.params().size(); ++i) {
        EXPECT_EQ(r.params()[i].name, m.params()[i].name);
        auto a = m.params()[i].tensor.values();
        auto b = r.params()[i].tensor.values();
        ASSERT_EQ(a.size(), b.size());
        for (size_t j = 0; j < a.size(); ++j) ASSERT_EQ(a[j], b[j]);
    }
    std::filesystem::remove(path);
}

TEST(Zoo, LoadedModelProducesIdenticalLogits) {
    auto path = temp_path("zoo_logits.ilac");
    Model m = Model::build("mini_inception", 5);
    m.save(path.string(), nlohmann::json::object());
    Model r = Model::load(path.string());
    Tensor x = random_input(31, 2);
    Tape t1, t2;
    auto a = m.forward(t1, x).values();
    auto b = r.forward(t2, x).values();
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
    std::filesystem::remove(path);
}

TEST(Zoo, LoadRejectsWrongMagic) {
    auto path = temp_path("zoo_badmagic.ilac");
    std::ofstream(path, std::ios::binary) << "NOPEgarbage";
    EXPECT_THROW(Model::load(path.string()), ila::IoError);
    std::filesystem::remove(path);
}

TEST(Zoo, LoadRejectsTruncatedFile) {
    auto path = temp_path("zoo_trunc.ilac");
    Model m = Model::build("plain_cnn", 2);
    m.save(path.string(), nlohmann::json::object());
    auto bytes = ila::read_file(path.string());
    bytes.resize(bytes.size() / 2);
    ila::atomic_write_file(path.string(), bytes);
    try {
        Model::load(path.string());
        FAIL() << "expected IoError";
    } catch (const ila::IoError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(Zoo, LoadRejectsMissingFile) {
    EXPECT_THROW(Model::load("/nonexistent/model.ilac"), ila::IoError);
}

TEST(Zoo, SpecJsonDescribesParameters) {
    Model m = Model::build("mini_resnet", 4);
    auto spec = m.spec_json();
    EXPECT_EQ(spec["arch"], "mini_resnet");
    EXPECT_EQ(spec["params"].size(), m.params().size());
    EXPECT_EQ(spec["taps"].size(), static_cast<size_t>(m.num_taps()));
}

TEST(Zoo, CopiesShareParameterStorage) {
    Model m = Model::build("plain_cnn", 8);
    Model copy = m;
    EXPECT_EQ(copy.params()[0].tensor.impl(), m.params()[0].tensor.impl());
}

}  // namespace
