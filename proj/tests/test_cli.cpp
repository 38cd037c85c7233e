// End-to-end tests for the ilalab command-line tool. Each test shells out to
// the real binary, so these cover argument parsing, exit codes, and the file
// formats the tool writes.

#include <gtest/gtest.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "ila/attacks.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

CmdResult run_cmd(const std::string& args) {
    const std::string full = std::string(ILALAB_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(full.c_str(), "r");
    if (pipe == nullptr) return {};
    CmdResult result;
    std::array<char, 4096> buf{};
    size_t got = 0;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        result.output.append(buf.data(), got);
    }
    const int status = pclose(pipe);
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One scratch directory with two small checkpoints shared by all tests.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / ("ilalab_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir_);
        const std::string common = data_flags() + " --epochs 2 --batch 8 --lr 0.01 --subset 192";
        CmdResult a = run_cmd("train --arch plain_cnn --seed 42 " + common + " --out " +
                              (dir_ / "plain.ckpt").string());
        CmdResult b = run_cmd("train --arch mini_resnet --seed 7 " + common + " --out " +
                              (dir_ / "resnet.ckpt").string());
        ASSERT_EQ(a.code, 0) << a.output;
        ASSERT_EQ(b.code, 0) << b.output;
    }

    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static std::string data_flags() { return "--synthetic 320 --classes 4 --data-seed 77"; }
    static std::string eval_flags() { return " --slice-start 192 --slice 32 "; }
    static std::string plain() { return (dir_ / "plain.ckpt").string(); }
    static std::string resnet() { return (dir_ / "resnet.ckpt").string(); }
    static fs::path dir0() { return dir_; }

    static fs::path dir_;
};

fs::path CliTest::dir_;

TEST_F(CliTest, TrainWritesLoadableCheckpoint) {
    ASSERT_TRUE(fs::exists(plain()));
    const std::string head = read_file(plain()).substr(0, 4);
    EXPECT_EQ(head, "ILAC");
}

TEST_F(CliTest, UnknownFlagFailsWithUsageHint) {
    CmdResult r = run_cmd("attack --source " + plain() + " --out x.bin " + data_flags() +
                          " --bogus-flag");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("--bogus-flag"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("--help"), std::string::npos) << r.output;
}

TEST_F(CliTest, MissingCheckpointNamesThePath) {
    CmdResult r = run_cmd("attack --source /nonexistent/m.ckpt --out x.bin " + data_flags() +
                          eval_flags());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("/nonexistent/m.ckpt"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnknownArchitectureListsKnownOnes) {
    CmdResult r = run_cmd("train --arch donut " + data_flags() + " --epochs 1 --out " +
                          (dir0() / "x.ckpt").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("plain_cnn"), std::string::npos) << r.output;
}

TEST_F(CliTest, HelpExitsZeroAndNoSubcommandFails) {
    EXPECT_EQ(run_cmd("--help").code, 0);
    EXPECT_EQ(run_cmd("").code, 1);
}

TEST_F(CliTest, AttackWritesAdversarialBatchMatchingSlice) {
    const std::string out = (dir0() / "adv.bin").string();
    CmdResult r = run_cmd("attack --source " + plain() + " " + data_flags() + eval_flags() +
                          "--eps 0.03 --iters 5 --out " + out);
    ASSERT_EQ(r.code, 0) << r.output;

    ila::AdversarialBatch batch = ila::load_adversarial(out);
    ASSERT_EQ(batch.indices.size(), 32u);
    EXPECT_EQ(batch.indices.front(), 192u);
    EXPECT_EQ(batch.indices.back(), 223u);
    EXPECT_FLOAT_EQ(batch.epsilon, 0.03f);
    // manifest sidecar records the configuration
    EXPECT_TRUE(fs::exists(out + ".manifest.json"));
    // no stray temp files from the atomic write
    EXPECT_FALSE(fs::exists(out + ".tmp"));
}

TEST_F(CliTest, ConfigFileAppliesAndFlagsOverrideIt) {
    const fs::path cfg = dir0() / "attack.cfg";
    std::ofstream(cfg) << "# comment line\neps=0.045\niters=6\n";
    const std::string out = (dir0() / "cfg_adv.bin").string();
    CmdResult r = run_cmd("attack --config " + cfg.string() + " --source " + plain() + " " +
                          data_flags() + eval_flags() + "--iters 3 --out " + out);
    ASSERT_EQ(r.code, 0) << r.output;
    // eps comes from the file, iters from the explicit flag
    const std::string manifest = read_file(out + ".manifest.json");
    EXPECT_NE(manifest.find("0.045"), std::string::npos) << manifest;
    EXPECT_NE(r.output.find("iters=3"), std::string::npos) << r.output;

    CmdResult missing = run_cmd("attack --config /nonexistent.cfg --source " + plain() + " " +
                                data_flags() + " --out x.bin");
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.output.find("/nonexistent.cfg"), std::string::npos) << missing.output;
}

TEST_F(CliTest, RefinementReportsSelectedLayer) {
    const std::string out = (dir0() / "ila_adv.bin").string();
    CmdResult r = run_cmd("ila --source " + plain() + " " + data_flags() + eval_flags() +
                          "--baseline-iters 3 --ila-iters 3 --layer auto "
                          "--calib-start 224 --calib 16 --out " + out);
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("selected layer"), std::string::npos) << r.output;
    EXPECT_TRUE(fs::exists(out));
}

TEST_F(CliTest, ReportFailsWithoutManifest) {
    CmdResult r = run_cmd("report --dir " + (dir0() / "empty_dir").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("manifest.json"), std::string::npos) << r.output;
}

TEST_F(CliTest, LrAblationRejectsRefinementFlag) {
    CmdResult r = run_cmd("lr-ablation --source " + plain() + " --target " + resnet() + " " +
                          data_flags() + eval_flags() + "--refine --out-dir " +
                          (dir0() / "lrx").string());
    EXPECT_EQ(r.code, 1) << r.output;
}

// The whole experiment suite on synthetic data, end to end, in under a
// minute: every subcommand runs and every advertised artifact appears.
TEST_F(CliTest, FullPipelineOnSyntheticFinishesUnderSixtySeconds) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string pair = " --source " + plain() + " --target " + plain() + " --target " +
                             resnet() + " " + data_flags() + eval_flags();
    const std::string small_attack = "--iters 5 --baseline-iters 3 --ila-iters 3 ";

    CmdResult sel = run_cmd("select-layer --source " + plain() + " " + data_flags() +
                            " --calib-start 224 --calib 16 --baseline-iters 3 --ila-iters 3 "
                            "--out-dir " + (dir0() / "sel").string());
    ASSERT_EQ(sel.code, 0) << sel.output;

    CmdResult tr = run_cmd("transfer" + pair + small_attack + "--refine --layer 2 --out-dir " +
                           (dir0() / "tr").string());
    ASSERT_EQ(tr.code, 0) << tr.output;

    CmdResult sw = run_cmd("sweep" + pair + small_attack + "--out-dir " +
                           (dir0() / "sw").string());
    ASSERT_EQ(sw.code, 0) << sw.output;

    CmdResult ep = run_cmd("eps-sweep" + pair + small_attack +
                           "--layer 2 --eps-list 0.02,0.05 --out-dir " +
                           (dir0() / "ep").string());
    ASSERT_EQ(ep.code, 0) << ep.output;

    CmdResult lr = run_cmd("lr-ablation" + pair + "--iters 5 --lr-list 0.004,0.02 --out-dir " +
                           (dir0() / "lr").string());
    ASSERT_EQ(lr.code, 0) << lr.output;

    CmdResult ch = run_cmd("channels --source " + plain() + " --target " + resnet() + " " +
                           data_flags() + " --slice-start 192 --slice 16 " + small_attack +
                           "--layer 1 --out-dir " + (dir0() / "ch").string());
    ASSERT_EQ(ch.code, 0) << ch.output;

    const std::pair<const char*, const char*> artifacts[] = {
        {"sel", "profiles.csv"}, {"tr", "transfer.csv"}, {"sw", "sweep.csv"},
        {"ep", "eps.csv"},       {"lr", "lr.csv"},       {"ch", "channels.csv"},
    };
    for (const auto& [sub, csv] : artifacts) {
        EXPECT_TRUE(fs::exists(dir0() / sub / csv)) << sub << "/" << csv;
        EXPECT_TRUE(fs::exists(dir0() / sub / "manifest.json")) << sub;
    }

    CmdResult rep = run_cmd("report --dir " + (dir0() / "tr").string());
    ASSERT_EQ(rep.code, 0) << rep.output;
    EXPECT_NE(rep.output.find("transfer.csv"), std::string::npos) << rep.output;

    const auto elapsed = std::chrono::steady_clock::now() - t0;
    EXPECT_LT(std::chrono::duration_cast<std::chrono::seconds>(elapsed).count(), 60)
        << "pipeline took too long";
}

TEST_F(CliTest, TransferCsvRoundTripsAndMarksSelfRow) {
    const std::string out_dir = (dir0() / "tr2").string();
    CmdResult r = run_cmd("transfer --source " + plain() + " --target " + plain() +
                          " --target " + resnet() + " " + data_flags() + eval_flags() +
                          "--iters 4 --out-dir " + out_dir);
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream csv(fs::path(out_dir) / "transfer.csv");
    std::string header;
    ASSERT_TRUE(std::getline(csv, header));
    EXPECT_EQ(header, "source,attack,epsilon,target,self,accuracy");
    int self_rows = 0, rows = 0;
    std::string line;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        // field 5 is the self marker
        std::stringstream ss(line);
        std::string field;
        for (int i = 0; i < 5; ++i) ASSERT_TRUE(std::getline(ss, field, ','));
        self_rows += field == "1";
        ASSERT_TRUE(std::getline(ss, field, ','));
        const double acc = std::stod(field);
        EXPECT_GE(acc, 0.0);
        EXPECT_LE(acc, 1.0);
    }
    EXPECT_EQ(rows, 2);
    EXPECT_EQ(self_rows, 1);
}

}  // namespace
