#include "srae_cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "srae/config.hpp"
#include "srae/error.hpp"
#include "srae/image_io.hpp"
#include "srae/selftest.hpp"
#include "srae/tasks.hpp"

namespace srae::cli {

namespace {

namespace fs = std::filesystem;

// SRAE_THREADS caps internal parallelism. Every kernel is currently
// single-threaded, so the value is only validated.
void check_thread_env() {
    const char* env = std::getenv("SRAE_THREADS");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError(std::string("SRAE_THREADS must be a positive integer, got '") + env + "'");
}

Dataset load_for(const Checkpoint& ckpt, const fs::path& dir) {
    Dataset ds = load_directory(dir, ckpt.hyper.image_h, ckpt.hyper.image_w);
    if (ds.image_shape().back() != ckpt.hyper.image_c) {
        throw ConfigError(dir.string() + ": images have " + std::to_string(ds.image_shape().back()) +
                          " channels, checkpoint expects " + std::to_string(ckpt.hyper.image_c));
    }
    return ds;
}

Tensor load_image_for(const Checkpoint& ckpt, const fs::path& path) {
    Tensor img = read_pnm(path);
    if (img.dim(2) != ckpt.hyper.image_c) {
        throw ConfigError(path.string() + ": image has " + std::to_string(img.dim(2)) + " channels, checkpoint expects " +
                          std::to_string(ckpt.hyper.image_c));
    }
    if (img.dim(0) != ckpt.hyper.image_h || img.dim(1) != ckpt.hyper.image_w) {
        img = area_resize(img, ckpt.hyper.image_h, ckpt.hyper.image_w);
    }
    return img;
}

Dataset training_data(const CliConfig& cfg, const std::string& data_dir) {
    const SraeHyper& h = cfg.train.hyper;
    if (!data_dir.empty()) return load_directory(data_dir, h.image_h, h.image_w);
    if (cfg.data_kind == DataKind::Directory) return load_directory(cfg.data_path, h.image_h, h.image_w);
    return generate_synthetic(cfg.synth);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Split representation auto-encoder: data generation, training and latent-space tasks", "srae"};
    app.require_subcommand(1);
    bool nondeterministic = false;
    app.add_flag("--nondeterministic", nondeterministic,
                 "Allow run-to-run differences from internal parallelism (no effect in single-threaded builds)");

    std::string config_path, data_dir, out_path, ckpt_path, metrics_path, src_path, style_path, target_path,
        candidates_dir, field = "zd";
    std::size_t k = 5;
    std::uint64_t split_seed = 0;
    int seeds = 3;

    auto* gen = app.add_subcommand("gen-data", "Write the configured synthetic dataset as domain<i>/ PGM directories");
    gen->add_option("--config", config_path, "JSON run configuration")->required();
    gen->add_option("--out", out_path, "Output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
    train_cmd->add_option("--config", config_path, "JSON run configuration")->required();
    train_cmd->add_option("--data", data_dir, "Dataset directory (default: the config's data section)");
    train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
    train_cmd->add_option("--metrics", metrics_path, "Per-step metrics CSV");

    auto* recon = app.add_subcommand("reconstruct", "Write a montage of originals and reconstructions");
    recon->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    recon->add_option("--data", data_dir, "Dataset directory")->required();
    recon->add_option("--out", out_path, "Montage image (PGM/PPM)")->required();

    auto* trans = app.add_subcommand("translate", "Decode the source's content code with the style image's domain code");
    trans->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    trans->add_option("--src", src_path, "Source image (PGM/PPM)")->required();
    trans->add_option("--style", style_path, "Style image (PGM/PPM)")->required();
    trans->add_option("--out", out_path, "Output image (PGM/PPM)")->required();

    auto* nn = app.add_subcommand("nn", "Rank candidates by content-code distance to a target image");
    nn->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    nn->add_option("--target", target_path, "Target image (PGM/PPM)")->required();
    nn->add_option("--candidates", candidates_dir, "Candidate dataset directory")->required();
    nn->add_option("-k", k, "Number of neighbours")->capture_default_str();

    auto* cls = app.add_subcommand("classify", "Fit a domain classifier on mean encodings and print accuracies");
    cls->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    cls->add_option("--data", data_dir, "Dataset directory")->required();
    cls->add_option("--field", field, "Encoding to classify from: zd or zc")
        ->check(CLI::IsMember({"zd", "zc"}))
        ->capture_default_str();
    cls->add_option("--seed", split_seed, "Train/test split seed")->capture_default_str();

    auto* exp = app.add_subcommand("export", "Write mean encodings of a dataset as CSV");
    exp->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    exp->add_option("--data", data_dir, "Dataset directory")->required();
    exp->add_option("--out", out_path, "CSV path")->required();

    auto* self = app.add_subcommand("selftest", "Run finite-difference gradient checks and invariant checks");
    self->add_option("--seeds", seeds, "Random seeds per gradient check")->check(CLI::PositiveNumber)->capture_default_str();

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    (void)nondeterministic;

    try {
        check_thread_env();
        if (gen->parsed()) {
            const CliConfig cfg = load_config(config_path);
            if (cfg.data_kind != DataKind::Synthetic) throw ConfigError("gen-data needs data.kind = \"synthetic\"");
            const Dataset ds = generate_synthetic(cfg.synth);
            save_directory(ds, out_path);
            out << "wrote " << ds.size() << " images to " << out_path << "\n";
        } else if (train_cmd->parsed()) {
            const CliConfig cfg = load_config(config_path);
            const Dataset ds = training_data(cfg, data_dir);
            TrainHooks hooks;
            hooks.on_epoch = [&](int epoch, const MetricsLog& log) {
                const MetricsRecord& r = log.records().back();
                err << "epoch " << epoch << "/" << cfg.train.epochs << "  l_r " << format_double(r.l_r) << "  l_q_c "
                    << format_double(r.l_q_c) << "  H(q_c) " << format_double(r.entropy_qc) << "\n";
            };
            hooks.on_checkpoint = [&](int epoch, const Checkpoint& ckpt) {
                const fs::path p = fs::path(out_path).string() + ".epoch" + std::to_string(epoch);
                save_checkpoint(ckpt, p);
            };
            const TrainResult result = train(cfg.train, ds, hooks);
            save_checkpoint(result.checkpoint, out_path);
            if (!metrics_path.empty()) result.metrics.write_csv(metrics_path);
            out << "trained " << result.checkpoint.step << " steps; checkpoint " << out_path << "\n";
        } else if (recon->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Dataset ds = load_for(ckpt, data_dir);
            write_pnm(out_path, reconstruction_montage(ckpt, ds));
            out << "wrote " << out_path << "\n";
        } else if (trans->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Tensor src = load_image_for(ckpt, src_path);
            const Tensor style = load_image_for(ckpt, style_path);
            write_pnm(out_path, translate(ckpt, src, style));
            out << "wrote " << out_path << "\n";
        } else if (nn->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Tensor target = load_image_for(ckpt, target_path);
            const Dataset cands = load_for(ckpt, candidates_dir);
            const auto ranked = nn_search(ckpt, target, cands, k);
            out << "rank,index,domain,distance\n";
            for (std::size_t r = 0; r < ranked.size(); ++r) {
                char line[96];
                std::snprintf(line, sizeof line, "%zu,%zu,%d,%.9g\n", r + 1, ranked[r].index,
                              cands.labels[ranked[r].index], ranked[r].distance);
                out << line;
            }
        } else if (cls->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Dataset ds = load_for(ckpt, data_dir);
            const ClassifierFit fit = fit_domain_classifier(
                encode_dataset(ckpt, ds), field == "zd" ? EncodingField::DomainCode : EncodingField::ContentCode, split_seed);
            out << "field " << field << "\ntrain_accuracy " << format_double(fit.train_accuracy) << "\ntest_accuracy "
                << format_double(fit.test_accuracy) << "\nepochs " << fit.epochs_run << "\n";
        } else if (exp->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Dataset ds = load_for(ckpt, data_dir);
            export_encodings(ckpt, ds, out_path);
            out << "wrote " << ds.size() << " rows to " << out_path << "\n";
        } else if (self->parsed()) {
            int failed = 0;
            run_selftest(seeds, [&](const SelftestResult& r) {
                out << (r.passed ? "PASS " : "FAIL ") << r.name;
                if (!r.detail.empty()) out << "  (" << r.detail << ")";
                out << "\n";
                if (!r.passed) ++failed;
            });
            if (failed > 0) {
                err << failed << " selftest check(s) failed\n";
                return kExitRuntime;
            }
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace srae::cli
