// Exercises the installed binary end to end via std::system. The build passes
// the binary location as EF_CLI_PATH and the source tree as EF_SOURCE_DIR.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "test_util.hpp"

using namespace engageformer;
using testutil::TempDir;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run(const std::string& args, const TempDir& tmp, const std::string& env = "") {
    static int counter = 0;
    const std::string capture = tmp.file("cli_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(EF_CLI_PATH) + " " +
                            args + " > " + capture + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(capture);
    std::ostringstream os;
    os << is.rdbuf();
    r.out = os.str();
    return r;
}

// Small model matching 4x8x8x3 synthetic clips; cheap enough to train in
// milliseconds inside the test.
const char* kMicroCfg =
    "model.frames = 4\nmodel.height = 8\nmodel.width = 8\n"
    "model.views = 2x4x4,4x4x4\nmodel.d = 8\nmodel.view_layers = 1\n"
    "model.view_heads = 2\nmodel.global_layers = 1\nmodel.global_heads = 2\n"
    "model.mlp_dim = 16\nmodel.stochastic_depth = 0\n"
    "model.classes = 2\nmodel.labels = calm,engaged\n"
    "train.epochs = 2\ntrain.batch_size = 4\ntrain.seed = 3\n";

std::string write_micro_cfg(const TempDir& tmp) {
    std::ofstream(tmp.file("micro.cfg")) << kMicroCfg;
    return tmp.file("micro.cfg");
}

}  // namespace

TEST(Cli, RequiresASubcommand) {
    TempDir tmp;
    EXPECT_EQ(run("", tmp).code, 2);
    EXPECT_EQ(run("--help", tmp).code, 0);
    EXPECT_EQ(run("launder --now", tmp).code, 2);
    EXPECT_EQ(run("train --no-such-flag", tmp).code, 2);
}

TEST(Cli, SynthTrainEvalPredictPipeline) {
    TempDir tmp;
    const std::string cfg = write_micro_cfg(tmp);

    RunResult synth = run("synth --out " + tmp.file("data") +
                              " --n 2 --classes 2 --geometry 4x8x8x3 --seed 5",
                          tmp);
    ASSERT_EQ(synth.code, 0) << synth.out;
    EXPECT_NE(synth.out.find("wrote 4 clips"), std::string::npos) << synth.out;

    RunResult train = run("train --config " + cfg + " --data " + tmp.file("data/manifest.tsv") +
                              " --out " + tmp.file("ckpt"),
                          tmp);
    ASSERT_EQ(train.code, 0) << train.out;
    EXPECT_NE(train.out.find("epoch=1 loss="), std::string::npos) << train.out;
    EXPECT_NE(train.out.find("epoch=2 loss="), std::string::npos) << train.out;
    EXPECT_NE(train.out.find("final checkpoint: "), std::string::npos) << train.out;

    RunResult eval = run("eval --config " + cfg + " --checkpoint " +
                             tmp.file("ckpt/epoch_2.efck") + " --data " +
                             tmp.file("data/manifest.tsv") + " --threads 2",
                         tmp);
    ASSERT_EQ(eval.code, 0) << eval.out;
    EXPECT_NE(eval.out.find("samples = 4"), std::string::npos) << eval.out;
    EXPECT_NE(eval.out.find("accuracy = "), std::string::npos);
    EXPECT_NE(eval.out.find("confusion (rows = true, cols = predicted):"), std::string::npos);

    RunResult pred = run("predict --config " + cfg + " --checkpoint " +
                             tmp.file("ckpt/epoch_2.efck") + " --clip " +
                             tmp.file("data/clip_c0_s0.efv"),
                         tmp);
    ASSERT_EQ(pred.code, 0) << pred.out;
    EXPECT_NE(pred.out.find("prediction = "), std::string::npos) << pred.out;
    EXPECT_NE(pred.out.find("prob calm = "), std::string::npos);
    EXPECT_NE(pred.out.find("prob engaged = "), std::string::npos);
}

TEST(Cli, PredictReadsPpmDirectories) {
    TempDir tmp;
    const std::string cfg = write_micro_cfg(tmp);
    RunResult synth =
        run("synth --out " + tmp.file("d") + " --n 2 --classes 2 --geometry 4x8x8x3", tmp);
    ASSERT_EQ(synth.code, 0) << synth.out;
    RunResult train = run("train --config " + cfg + " --data " + tmp.file("d/manifest.tsv") +
                              " --out " + tmp.file("ck") + " --epochs 1",
                          tmp);
    ASSERT_EQ(train.code, 0) << train.out;

    std::filesystem::create_directories(tmp.file("frames"));
    for (int i = 0; i < 6; ++i) {  // more frames than the model takes
        std::ofstream os(tmp.file("frames/f" + std::to_string(i) + ".ppm"), std::ios::binary);
        os << "P6\n8 8\n255\n";
        for (int j = 0; j < 8 * 8 * 3; ++j) os.put(static_cast<char>((i * 40 + j) % 256));
    }
    RunResult pred = run("predict --config " + cfg + " --checkpoint " +
                             tmp.file("ck/epoch_1.efck") + " --clip " + tmp.file("frames"),
                         tmp);
    ASSERT_EQ(pred.code, 0) << pred.out;
    EXPECT_NE(pred.out.find("prediction = "), std::string::npos) << pred.out;
}

TEST(Cli, PrintConfigRoundTripsShippedToyConfig) {
    TempDir tmp;
    const std::string toy = std::string(EF_SOURCE_DIR) + "/configs/toy.cfg";
    RunResult rr = run("train --config " + toy + " --print-config", tmp);
    ASSERT_EQ(rr.code, 0) << rr.out;
    EXPECT_EQ(rr.out, print_config(load_config(toy)));
    // And the printed text parses back to the same configuration.
    EXPECT_TRUE(parse_config(rr.out) == load_config(toy));
}

TEST(Cli, SeedPrecedenceFlagThenEnvThenConfig) {
    TempDir tmp;
    const std::string cfg = write_micro_cfg(tmp);  // train.seed = 3
    const std::string base = "train --config " + cfg + " --print-config";
    RunResult from_config = run(base, tmp, "env -u ENGAGEFORMER_SEED");
    EXPECT_NE(from_config.out.find("train.seed = 3\n"), std::string::npos) << from_config.out;
    RunResult from_env = run(base, tmp, "ENGAGEFORMER_SEED=123");
    EXPECT_NE(from_env.out.find("train.seed = 123\n"), std::string::npos) << from_env.out;
    RunResult from_flag = run(base + " --seed 7", tmp, "ENGAGEFORMER_SEED=123");
    EXPECT_NE(from_flag.out.find("train.seed = 7\n"), std::string::npos) << from_flag.out;
    RunResult bad_env = run(base, tmp, "ENGAGEFORMER_SEED=banana");
    EXPECT_EQ(bad_env.code, 2) << bad_env.out;
}

TEST(Cli, ExitCodesFollowErrorTaxonomy) {
    TempDir tmp;
    const std::string cfg = write_micro_cfg(tmp);
    // 2: broken config file.
    std::ofstream(tmp.file("bad.cfg")) << "model.quantum = yes\n";
    EXPECT_EQ(run("train --config " + tmp.file("bad.cfg") + " --print-config", tmp).code, 2);
    // 2: train without --data.
    EXPECT_EQ(run("train --config " + cfg + " --out " + tmp.file("o"), tmp).code, 2);
    // 3: manifest that does not exist.
    RunResult synth =
        run("synth --out " + tmp.file("d") + " --n 2 --classes 2 --geometry 4x8x8x3", tmp);
    ASSERT_EQ(synth.code, 0);
    EXPECT_EQ(run("train --config " + cfg + " --data " + tmp.file("nope.tsv") + " --out " +
                      tmp.file("o"),
                  tmp)
                  .code,
              3);
    // 3: checkpoint file missing entirely.
    EXPECT_EQ(run("eval --config " + cfg + " --checkpoint " + tmp.file("ghost.efck") +
                      " --data " + tmp.file("d/manifest.tsv"),
                  tmp)
                  .code,
              3);
    // 5: checkpoint incompatible with the configured model.
    RunResult train = run("train --config " + cfg + " --data " + tmp.file("d/manifest.tsv") +
                              " --out " + tmp.file("ck") + " --epochs 1",
                          tmp);
    ASSERT_EQ(train.code, 0) << train.out;
    std::ofstream(tmp.file("three.cfg"))
        << "model.frames = 4\nmodel.height = 8\nmodel.width = 8\n"
           "model.views = 2x4x4,4x4x4\nmodel.d = 8\nmodel.view_layers = 1\n"
           "model.view_heads = 2\nmodel.global_layers = 1\nmodel.global_heads = 2\n"
           "model.mlp_dim = 16\nmodel.stochastic_depth = 0\n"
           "model.classes = 3\nmodel.labels = a,b,c\n";
    RunResult mismatch = run("eval --config " + tmp.file("three.cfg") + " --checkpoint " +
                                 tmp.file("ck/epoch_1.efck") + " --data " +
                                 tmp.file("d/manifest.tsv"),
                             tmp);
    EXPECT_EQ(mismatch.code, 5) << mismatch.out;
}

TEST(Cli, GradcheckPassesOnMicroModel) {
    TempDir tmp;
    std::ofstream(tmp.file("tiny.cfg"))
        << "model.frames = 4\nmodel.height = 8\nmodel.width = 8\n"
           "model.views = 2x4x4,4x4x4\nmodel.d = 4\nmodel.view_layers = 1\n"
           "model.view_heads = 1\nmodel.global_layers = 1\nmodel.global_heads = 1\n"
           "model.mlp_dim = 8\nmodel.stochastic_depth = 0\n"
           "model.classes = 2\nmodel.labels = lo,hi\n";
    RunResult rr = run("gradcheck --config " + tmp.file("tiny.cfg") + " --seed 4 --threads 2",
                       tmp);
    ASSERT_EQ(rr.code, 0) << rr.out;
    EXPECT_NE(rr.out.find("PASS worst"), std::string::npos) << rr.out;
}
