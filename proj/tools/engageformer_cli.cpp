// Command-line front end: train / eval / predict / gradcheck / synth.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// abort, 5 checkpoint mismatch, 1 anything unexpected.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "engageformer/engageformer.hpp"

namespace ef = engageformer;

namespace {

// --seed beats the ENGAGEFORMER_SEED environment variable, which beats
// train.seed from the config file.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& cli_seed,
                           std::uint64_t config_seed) {
    if (cli_seed) return *cli_seed;
    if (const char* env = std::getenv("ENGAGEFORMER_SEED")) {
        const std::string s(env);
        try {
            std::size_t used = 0;
            const std::uint64_t v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ef::ConfigError("ENGAGEFORMER_SEED is not an integer: '" + s + "'");
        }
    }
    return config_seed;
}

ef::FullConfig load_or_default(const std::string& path) {
    return path.empty() ? ef::FullConfig{} : ef::load_config(path);
}

ef::ClipGeometry parse_geometry(const std::string& s) {
    const auto parts = ef::detail::split(s, 'x');
    if (parts.size() != 4)
        throw ef::ConfigError("--geometry expects TxHxWxD, got '" + s + "'");
    ef::ClipGeometry g;
    g.frames = ef::detail::parse_u64("--geometry", parts[0]);
    g.height = ef::detail::parse_u64("--geometry", parts[1]);
    g.width = ef::detail::parse_u64("--geometry", parts[2]);
    g.channels = ef::detail::parse_u64("--geometry", parts[3]);
    return g;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, const std::optional<std::uint64_t>& seed,
              const std::optional<std::size_t>& epochs, std::size_t threads,
              bool print_config) {
    ef::FullConfig fc = load_or_default(config_path);
    fc.train.seed = resolve_seed(seed, fc.train.seed);
    if (epochs) fc.train.epochs = *epochs;
    if (print_config) {
        std::cout << ef::print_config(fc);
        return 0;
    }
    if (data_path.empty()) throw ef::ConfigError("train needs --data <manifest>");
    if (out_dir.empty()) throw ef::ConfigError("train needs --out <dir>");
    const ef::ModelLayout lay = ef::build_layout(fc.model);
    ef::ParamSet<float> params = ef::init_params<float>(lay, fc.train.seed);
    const ef::Manifest manifest = ef::load_manifest(data_path);
    const ef::TrainResult res =
        ef::train_model(lay, params, manifest, fc.train, out_dir, &std::cout, threads);
    std::cout << "final checkpoint: " << res.last_checkpoint << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& data_path, std::size_t threads) {
    const ef::FullConfig fc = load_or_default(config_path);
    const ef::ModelLayout lay = ef::build_layout(fc.model);
    const ef::ParamSet<float> params = ef::load_checkpoint<float>(ckpt_path, lay);
    const ef::Manifest manifest = ef::load_manifest(data_path);
    const ef::EvalReport rep = ef::evaluate(lay, params, manifest, threads);
    std::cout << ef::format_report(rep, manifest.labels);
    return 0;
}

int cmd_predict(const std::string& config_path, const std::string& ckpt_path,
                const std::string& clip_path) {
    const ef::FullConfig fc = load_or_default(config_path);
    const ef::ModelLayout lay = ef::build_layout(fc.model);
    const ef::ParamSet<float> params = ef::load_checkpoint<float>(ckpt_path, lay);
    ef::Tensor<float> clip = std::filesystem::is_directory(clip_path)
                                 ? ef::ingest_ppm_sequence<float>(clip_path,
                                                                  fc.model.geometry.frames)
                                 : ef::read_clip<float>(clip_path);
    clip = ef::normalize_clip(clip);
    const ef::Prediction pred = ef::predict(lay, params, clip);
    std::cout << "prediction = " << fc.model.labels[pred.cls] << "\n";
    for (std::size_t c = 0; c < pred.probs.size(); ++c) {
        std::ostringstream line;
        line << "prob " << fc.model.labels[c] << " = " << std::fixed << std::setprecision(6)
             << pred.probs[c];
        std::cout << line.str() << "\n";
    }
    return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                  std::size_t threads) {
    const ef::FullConfig fc = load_or_default(config_path);
    const std::uint64_t s = resolve_seed(seed, fc.train.seed);
    const ef::GradCheckReport rep = ef::gradcheck_model(fc.model, s, threads);
    std::cout << ef::format_gradcheck_report(rep);
    if (!rep.pass) throw ef::NumericError("gradient check failed");
    return 0;
}

int cmd_synth(const std::string& out_dir, std::size_t n, std::size_t classes,
              const std::string& geometry, const std::optional<std::uint64_t>& seed) {
    const ef::ClipGeometry geom = parse_geometry(geometry);
    const std::uint64_t s = resolve_seed(seed, 0);
    const std::string manifest = ef::synth_dataset(n, classes, geom, s, out_dir);
    std::cout << "wrote " << n * classes << " clips, manifest: " << manifest << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"engageformer: three-view video transformer for affective-state recognition"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_dir, ckpt_path, clip_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::size_t threads = 1;
    bool print_config = false;
    std::size_t synth_n = 8, synth_classes = 6;
    std::string synth_geometry = "8x16x16x3";

    CLI::App* train = app.add_subcommand("train", "train a model and write checkpoints");
    train->add_option("--config", config_path, "config file (key = value)");
    train->add_option("--data", data_path, "training manifest");
    train->add_option("--out", out_dir, "output directory for checkpoints");
    train->add_option("--seed", seed, "RNG seed (beats ENGAGEFORMER_SEED and train.seed)");
    train->add_option("--epochs", epochs, "override train.epochs");
    train->add_option("--threads", threads, "worker threads per batch (same bits as 1)");
    train->add_flag("--print-config", print_config, "print the effective config and exit");

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a manifest");
    eval->add_option("--config", config_path, "config file");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint to load")->required();
    eval->add_option("--data", data_path, "evaluation manifest")->required();
    eval->add_option("--threads", threads, "evaluation threads");

    CLI::App* predict = app.add_subcommand("predict", "classify one clip");
    predict->add_option("--config", config_path, "config file");
    predict->add_option("--checkpoint", ckpt_path, "checkpoint to load")->required();
    predict->add_option("--clip", clip_path, "clip file or directory of .ppm frames")
        ->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--config", config_path, "config file giving the model to check");
    gradcheck->add_option("--seed", seed, "RNG seed");
    gradcheck->add_option("--threads", threads, "check threads");

    CLI::App* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--n", synth_n, "clips per class");
    synth->add_option("--classes", synth_classes, "number of classes");
    synth->add_option("--geometry", synth_geometry, "clip geometry TxHxWxD");
    synth->add_option("--seed", seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed())
            return cmd_train(config_path, data_path, out_dir, seed, epochs, threads,
                             print_config);
        if (eval->parsed()) return cmd_eval(config_path, ckpt_path, data_path, threads);
        if (predict->parsed()) return cmd_predict(config_path, ckpt_path, clip_path);
        if (gradcheck->parsed()) return cmd_gradcheck(config_path, seed, threads);
        if (synth->parsed())
            return cmd_synth(out_dir, synth_n, synth_classes, synth_geometry, seed);
    } catch (const ef::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ef::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ef::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ef::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
