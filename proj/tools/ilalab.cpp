// ilalab — train the small CNN zoo, craft adversarial batches, and run the
// transferability experiment suite from the command line.
//
// Subcommands: train, attack, ila, select-layer, transfer, sweep, eps-sweep,
// lr-ablation, channels, report. Every flag can also be supplied through
// `--config file` (flat key=value lines; command-line flags win). Exit codes:
// 0 success, 1 validation error, 2 runtime error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ila/analysis.hpp"
#include "ila/attacks.hpp"
#include "ila/common.hpp"
#include "ila/data.hpp"
#include "ila/harness.hpp"
#include "ila/train.hpp"
#include "ila/zoo.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Thrown for bad invocations (missing files, inconsistent flags): exit 1.
// Errors raised while an otherwise valid job is running map to exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// shared flag groups
// ---------------------------------------------------------------------------

struct DataArgs {
    std::string data_dir = ila::default_data_dir();
    std::string split = "test";
    int synthetic = 0;  // > 0: generate a synthetic dataset with this many samples
    int classes = 10;
    uint64_t data_seed = 1234;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--data", data_dir, "CIFAR-10 batch directory (default: $ILA_DATA_DIR)")
            ->capture_default_str();
        cmd.add_option("--split", split, "dataset split for evaluation slices")
            ->check(CLI::IsMember({"train", "test"}))
            ->capture_default_str();
        cmd.add_option("--synthetic", synthetic,
                       "use a synthetic dataset with this many samples instead of CIFAR-10");
        cmd.add_option("--classes", classes, "synthetic class count")->capture_default_str();
        cmd.add_option("--data-seed", data_seed, "synthetic generator seed")
            ->capture_default_str();
    }

    // The split used for gradient descent (always "train" for CIFAR-10).
    ila::Dataset load_train() const { return load(true); }
    // The split named by --split (synthetic data has a single split).
    ila::Dataset load_eval() const { return load(split == "train"); }

    json to_json() const {
        return {{"data", data_dir},
                {"split", split},
                {"synthetic", synthetic},
                {"classes", classes},
                {"data_seed", data_seed}};
    }

private:
    ila::Dataset load(bool train_split) const {
        if (synthetic > 0) {
            return ila::synthetic_dataset(data_seed, synthetic, classes);
        }
        if (!fs::exists(fs::path(data_dir) / "data_batch_1.bin")) {
            throw UsageError("no dataset: " + data_dir +
                             " has no CIFAR-10 batches and --synthetic was not given");
        }
        auto [train, test] = ila::load_cifar10(data_dir);
        return train_split ? std::move(train) : std::move(test);
    }
};

struct SliceArgs {
    size_t start = 0;
    int count = 1000;  // 0 = everything after start

    void add_to(CLI::App& cmd) {
        cmd.add_option("--slice-start", start, "first dataset index of the evaluation slice")
            ->capture_default_str();
        cmd.add_option("--slice", count, "evaluation slice size (0 = rest of the split)")
            ->capture_default_str();
    }

    size_t resolve(size_t available) const {
        if (start >= available) {
            throw UsageError("slice start " + std::to_string(start) +
                             " is past the end of the dataset (" + std::to_string(available) +
                             " samples)");
        }
        const size_t rest = available - start;
        if (count == 0) return rest;
        if (static_cast<size_t>(count) > rest) {
            throw UsageError("slice of " + std::to_string(count) + " samples starting at " +
                             std::to_string(start) + " exceeds the dataset (" +
                             std::to_string(available) + " samples)");
        }
        return static_cast<size_t>(count);
    }

    json to_json() const { return {{"slice_start", start}, {"slice", count}}; }
};

// Baseline attack plus optional refinement stage; mirrors AttackPipeline.
struct PipelineArgs {
    std::string method = "ifgsm";
    double eps = 0.03;
    double step = 0.002;
    int iters = 20;
    double momentum_decay = 1.0;

    bool refine = false;
    int ila_iters = 10;
    double ila_step = 1.0;
    double alpha = 3.0;
    std::string layer = "auto";
    int channel = -1;
    int calib = 512;
    size_t calib_start = 0;

    // `with_layer_controls` is off for subcommands that manage the target
    // layer/channel themselves (channels sweeps them internally).
    void add_to(CLI::App& cmd, bool with_refine = true, bool with_layer_controls = true) {
        cmd.add_option("--method", method, "baseline attack")
            ->check(CLI::IsMember({"ifgsm", "mifgsm"}))
            ->capture_default_str();
        cmd.add_option("--eps", eps, "L-inf radius in normalized units")->capture_default_str();
        cmd.add_option("--step", step, "baseline sign-step size")->capture_default_str();
        cmd.add_option("--iters", iters, "baseline iterations")->capture_default_str();
        cmd.add_option("--momentum-decay", momentum_decay, "mifgsm accumulator decay")
            ->capture_default_str();
        if (!with_refine) return;
        cmd.add_flag("--refine", refine, "fine-tune the baseline output at an intermediate layer");
        cmd.add_option("--baseline-iters", iters, "baseline iterations (alias of --iters)")
            ->capture_default_str();
        cmd.add_option("--ila-iters", ila_iters, "refinement iterations")->capture_default_str();
        cmd.add_option("--ila-step", ila_step, "refinement raw-gradient scale")
            ->capture_default_str();
        cmd.add_option("--alpha", alpha, "disturbance-magnitude weight")->capture_default_str();
        if (!with_layer_controls) return;
        cmd.add_option("--layer", layer, "target tap index, or 'auto' to calibrate")
            ->capture_default_str();
        cmd.add_option("--channel", channel, "restrict refinement to one channel (-1 = all)")
            ->capture_default_str();
        cmd.add_option("--calib", calib, "calibration slice size for --layer auto")
            ->capture_default_str();
        cmd.add_option("--calib-start", calib_start, "first dataset index of the calibration slice")
            ->capture_default_str();
    }

    ila::BaselineKind kind() const {
        return method == "ifgsm" ? ila::BaselineKind::Ifgsm : ila::BaselineKind::MomentumIfgsm;
    }

    // Resolves "--layer auto" against a calibration slice of `data`.
    ila::AttackPipeline to_pipeline(const ila::Model& source, const ila::Dataset& data,
                                    bool* used_fallback = nullptr) const {
        ila::AttackPipeline p;
        p.baseline = kind();
        p.baseline_cfg.epsilon = eps;
        p.baseline_cfg.step_size = step;
        p.baseline_cfg.iterations = iters;
        p.baseline_cfg.momentum_decay = momentum_decay;
        if (!refine) return p;

        p.use_ila = true;
        p.ila_cfg = p.baseline_cfg;
        p.ila_cfg.iterations = ila_iters;
        p.ila_cfg.step_size = ila_step;
        p.ila_cfg.alpha = alpha;
        p.ila_cfg.target_channel = channel;
        if (layer == "auto") {
            SliceArgs calib_slice{calib_start, calib};
            const size_t n = calib_slice.resolve(data.size());
            ila::Tensor cx = ila::normalize(data, calib_start, n);
            auto cl = ila::label_slice(data, calib_start, n);
            ila::LayerSelection sel =
                ila::select_layer(source, cx, cl, p.baseline_cfg, p.baseline, p.ila_cfg);
            p.ila_cfg.target_layer = sel.layer;
            if (used_fallback) *used_fallback = sel.used_fallback;
        } else {
            try {
                p.ila_cfg.target_layer = std::stoi(layer);
            } catch (const std::exception&) {
                throw UsageError("--layer expects a tap index or 'auto', got '" + layer + "'");
            }
        }
        return p;
    }

    json to_json() const {
        json j{{"method", method},
               {"eps", eps},
               {"step", step},
               {"iters", iters},
               {"momentum_decay", momentum_decay},
               {"refine", refine}};
        if (refine) {
            j["ila_iters"] = ila_iters;
            j["ila_step"] = ila_step;
            j["alpha"] = alpha;
            j["layer"] = layer;
            j["channel"] = channel;
            j["calib"] = calib;
            j["calib_start"] = calib_start;
        }
        return j;
    }
};

// ---------------------------------------------------------------------------
// small helpers
// ---------------------------------------------------------------------------

ila::Model load_checkpoint(const std::string& path) {
    if (!fs::exists(path)) {
        throw UsageError("checkpoint not found: " + path);
    }
    ila::Model m = ila::Model::load(path);
    m.set_params_requires_grad(false);
    return m;
}

std::string model_display_name(const std::string& path) {
    return fs::path(path).stem().string();
}

ila::NamedModel load_named(const std::string& path) {
    return {model_display_name(path), load_checkpoint(path)};
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

// Atomic variant of save_adversarial: write to a sibling temp file, rename.
void save_adversarial_atomic(const std::string& path, const ila::AdversarialBatch& batch) {
    ensure_parent_dir(path);
    const std::string tmp = path + ".tmp";
    ila::save_adversarial(tmp, batch);
    fs::rename(tmp, path);
}

void write_csv(const std::string& dir, const std::string& name, const std::string& content) {
    fs::create_directories(dir);
    ila::atomic_write_file((fs::path(dir) / name).string(), content);
}

struct EvalSlice {
    ila::Tensor x;
    std::vector<int> labels;
    std::vector<uint32_t> indices;
};

EvalSlice make_eval_slice(const ila::Dataset& data, const SliceArgs& slice) {
    const size_t n = slice.resolve(data.size());
    EvalSlice s;
    s.x = ila::normalize(data, slice.start, n);
    s.labels = ila::label_slice(data, slice.start, n);
    s.indices.resize(n);
    for (size_t i = 0; i < n; ++i) s.indices[i] = static_cast<uint32_t>(slice.start + i);
    return s;
}

ila::AdversarialBatch make_batch(const EvalSlice& slice, const ila::Tensor& adv, double eps) {
    ila::AdversarialBatch b;
    b.epsilon = static_cast<float>(eps);
    b.indices = slice.indices;
    b.labels.reserve(slice.labels.size());
    for (int l : slice.labels) b.labels.push_back(static_cast<uint8_t>(l));
    b.clean = slice.x;
    b.adv = adv;
    return b;
}

void print_report(const ila::TransferReport& r) {
    std::printf("attack %s  eps %s  source %s\n", r.attack.c_str(),
                ila::format_double(r.epsilon).c_str(), r.source.c_str());
    if (r.degenerate > 0) {
        std::printf("  (refinement passed %d degenerate samples through)\n", r.degenerate);
    }
    for (const auto& row : r.rows) {
        std::printf("  %-24s %s %.4f\n", row.target.c_str(), row.self ? "self    " : "transfer",
                    row.accuracy);
    }
}

// ---------------------------------------------------------------------------
// subcommand payloads
// ---------------------------------------------------------------------------

struct TrainCmd {
    DataArgs data;
    std::string arch = "plain_cnn";
    uint64_t seed = 42;
    ila::TrainConfig cfg;
    std::string out;

    int run() {
        if (std::find(ila::kArchNames.begin(), ila::kArchNames.end(), arch) ==
            ila::kArchNames.end()) {
            std::string known;
            for (const auto& a : ila::kArchNames) known += (known.empty() ? "" : ", ") + a;
            throw UsageError("unknown architecture '" + arch + "' (known: " + known + ")");
        }
        cfg.validate();
        ila::Dataset train_data = data.load_train();

        ila::Model model = ila::Model::build(arch, seed);
        auto history = ila::train_model(model, train_data, cfg);
        for (size_t e = 0; e < history.size(); ++e) {
            std::printf("epoch %zu  loss %.4f  train-acc %.4f\n", e + 1, history[e].loss,
                        history[e].accuracy);
        }

        json meta = {{"arch", arch},
                     {"seed", seed},
                     {"epochs", cfg.epochs},
                     {"batch_size", cfg.batch_size},
                     {"lr", cfg.lr},
                     {"momentum", cfg.momentum},
                     {"weight_decay", cfg.weight_decay},
                     {"train_seed", cfg.seed},
                     {"train_subset", cfg.train_subset},
                     {"final_train_accuracy", history.empty() ? 0.0 : history.back().accuracy},
                     {"dataset", data.to_json()},
                     {"build", ila::git_describe()}};
        ensure_parent_dir(out);
        const std::string tmp = out + ".tmp";
        model.save(tmp, meta);
        fs::rename(tmp, out);
        std::printf("saved %s\n", out.c_str());
        return 0;
    }
};

struct AttackCmd {
    DataArgs data;
    SliceArgs slice;
    PipelineArgs pipeline;
    std::string source;
    std::string out;

    int run() {
        ila::NamedModel src = load_named(source);
        ila::Dataset eval_data = data.load_eval();
        EvalSlice s = make_eval_slice(eval_data, slice);
        ila::AttackPipeline p = pipeline.to_pipeline(src.model, eval_data);

        ila::PipelineResult result = ila::run_pipeline(src, s.x, s.labels, p);
        const double clean = ila::evaluate_accuracy(src.model, s.x, s.labels);
        const double advacc = ila::evaluate_accuracy(src.model, result.adv, s.labels);
        std::printf("%s on %s: clean %.4f -> adversarial %.4f\n", result.descriptor.c_str(),
                    src.name.c_str(), clean, advacc);

        save_adversarial_atomic(out, make_batch(s, result.adv, pipeline.eps));
        json manifest = {{"command", pipeline.refine ? "ila" : "attack"},
                         {"source", source},
                         {"descriptor", result.descriptor},
                         {"degenerate", result.degenerate},
                         {"pipeline", pipeline.to_json()},
                         {"dataset", data.to_json()},
                         {"slice", slice.to_json()}};
        ila::atomic_write_file(out + ".manifest.json",
                               json({{"config", manifest}, {"build", ila::git_describe()}}).dump(2) + "\n");
        std::printf("wrote %s\n", out.c_str());
        return 0;
    }
};

struct IlaCmd {
    AttackCmd inner;

    int run() {
        inner.pipeline.refine = true;
        bool used_fallback = false;
        // Resolve the layer up front so the choice can be reported even
        // though run() re-resolves nothing (to_pipeline is deterministic).
        ila::NamedModel src = load_named(inner.source);
        ila::Dataset eval_data = inner.data.load_eval();
        ila::AttackPipeline p = inner.pipeline.to_pipeline(src.model, eval_data, &used_fallback);
        if (inner.pipeline.layer == "auto") {
            std::printf("selected layer %d%s\n", p.ila_cfg.target_layer,
                        used_fallback ? " (no self-peaked candidate; argmax fallback)" : "");
        }
        EvalSlice s = make_eval_slice(eval_data, inner.slice);
        ila::PipelineResult result = ila::run_pipeline(src, s.x, s.labels, p);
        const double clean = ila::evaluate_accuracy(src.model, s.x, s.labels);
        const double advacc = ila::evaluate_accuracy(src.model, result.adv, s.labels);
        std::printf("%s on %s: clean %.4f -> adversarial %.4f\n", result.descriptor.c_str(),
                    src.name.c_str(), clean, advacc);
        if (result.degenerate > 0) {
            std::printf("warning: %d degenerate baseline samples passed through\n",
                        result.degenerate);
        }

        save_adversarial_atomic(inner.out, make_batch(s, result.adv, inner.pipeline.eps));
        json manifest = {{"command", "ila"},
                         {"source", inner.source},
                         {"descriptor", result.descriptor},
                         {"resolved_layer", p.ila_cfg.target_layer},
                         {"degenerate", result.degenerate},
                         {"pipeline", inner.pipeline.to_json()},
                         {"dataset", inner.data.to_json()},
                         {"slice", inner.slice.to_json()}};
        ila::atomic_write_file(
            inner.out + ".manifest.json",
            json({{"config", manifest}, {"build", ila::git_describe()}}).dump(2) + "\n");
        std::printf("wrote %s\n", inner.out.c_str());
        return 0;
    }
};

struct SelectLayerCmd {
    DataArgs data;
    PipelineArgs pipeline;
    std::string source;
    std::string out_dir;

    int run() {
        ila::NamedModel src = load_named(source);
        ila::Dataset eval_data = data.load_eval();
        SliceArgs calib_slice{pipeline.calib_start, pipeline.calib};
        const size_t n = calib_slice.resolve(eval_data.size());
        ila::Tensor cx = ila::normalize(eval_data, pipeline.calib_start, n);
        auto cl = ila::label_slice(eval_data, pipeline.calib_start, n);

        // build the two stage configs directly; to_pipeline would already
        // run the calibration when --layer is left at "auto"
        ila::AttackConfig base_cfg;
        base_cfg.epsilon = pipeline.eps;
        base_cfg.step_size = pipeline.step;
        base_cfg.iterations = pipeline.iters;
        base_cfg.momentum_decay = pipeline.momentum_decay;
        ila::AttackConfig ila_cfg = base_cfg;
        ila_cfg.iterations = pipeline.ila_iters;
        ila_cfg.step_size = pipeline.ila_step;
        ila_cfg.alpha = pipeline.alpha;
        ila::LayerSelection sel =
            ila::select_layer(src.model, cx, cl, base_cfg, pipeline.kind(), ila_cfg);

        std::printf("selected layer %d%s\n", sel.layer,
                    sel.used_fallback ? " (no self-peaked candidate; argmax fallback)" : "");
        std::ostringstream csv;
        csv << "targeted,layer,f,excluded\n";
        for (const auto& prof : sel.profiles) {
            for (size_t l = 0; l < prof.values.size(); ++l) {
                csv << prof.targeted_layer << ',' << l << ',' << ila::format_double(prof.values[l])
                    << ',' << prof.excluded[l] << '\n';
            }
        }
        write_csv(out_dir, "profiles.csv", csv.str());
        json manifest = {{"command", "select-layer"}, {"source", source},
                         {"selected_layer", sel.layer},  {"used_fallback", sel.used_fallback},
                         {"pipeline", pipeline.to_json()}, {"dataset", data.to_json()}};
        ila::write_manifest(out_dir, manifest);
        return 0;
    }
};

// Shared scaffolding for the multi-model experiment commands.
struct ExperimentCmd {
    DataArgs data;
    SliceArgs slice;
    PipelineArgs pipeline;
    std::string source;
    std::vector<std::string> targets;
    std::string out_dir = ".";

    ila::NamedModel load_source() const { return load_named(source); }

    // Targets naming the source checkpoint reuse its model object: the
    // harness flags the self row by parameter storage identity.
    std::vector<ila::NamedModel> load_targets(const ila::NamedModel& src) const {
        if (targets.empty()) throw UsageError("at least one --target checkpoint is required");
        std::vector<ila::NamedModel> models;
        models.reserve(targets.size());
        for (const auto& t : targets) {
            if (fs::exists(t) && fs::equivalent(t, source)) {
                models.push_back({model_display_name(t), src.model});
            } else {
                models.push_back(load_named(t));
            }
        }
        return models;
    }

    json manifest_config(const char* command) const {
        return {{"command", command},     {"source", source}, {"targets", targets},
                {"pipeline", pipeline.to_json()}, {"dataset", data.to_json()},
                {"slice", slice.to_json()}};
    }
};

struct TransferCmd : ExperimentCmd {
    int run() {
        ila::NamedModel src = load_source();
        std::vector<ila::NamedModel> tgts = load_targets(src);
        ila::Dataset eval_data = data.load_eval();
        EvalSlice s = make_eval_slice(eval_data, slice);
        ila::AttackPipeline p = pipeline.to_pipeline(src.model, eval_data);

        ila::TransferReport report = ila::run_transfer(src, tgts, p, s.x, s.labels);
        print_report(report);
        write_csv(out_dir, "transfer.csv", ila::transfer_csv({&report, 1}));
        ila::write_manifest(out_dir, manifest_config("transfer"));
        return 0;
    }
};

struct SweepCmd : ExperimentCmd {
    int run() {
        pipeline.refine = true;
        pipeline.layer = "0";  // sweep targets every tap; the flag is ignored
        ila::NamedModel src = load_source();
        std::vector<ila::NamedModel> tgts = load_targets(src);
        ila::Dataset eval_data = data.load_eval();
        EvalSlice s = make_eval_slice(eval_data, slice);
        ila::AttackPipeline p = pipeline.to_pipeline(src.model, eval_data);

        auto reports = ila::sweep_layers(src, tgts, p, s.x, s.labels);
        double best = 2.0;
        size_t best_layer = 0;
        for (size_t l = 0; l < reports.size(); ++l) {
            const double mean = ila::mean_transfer_accuracy(reports[l]);
            std::printf("layer %zu  mean transfer accuracy %.4f\n", l, mean);
            if (mean < best) {
                best = mean;
                best_layer = l;
            }
        }
        std::printf("best layer %zu (mean %.4f)\n", best_layer, best);
        write_csv(out_dir, "sweep.csv", ila::sweep_csv(reports));
        ila::write_manifest(out_dir, manifest_config("sweep"));
        return 0;
    }
};

struct EpsSweepCmd : ExperimentCmd {
    std::vector<double> eps_list = {0.02, 0.03, 0.04, 0.05};

    int run() {
        pipeline.refine = true;
        ila::NamedModel src = load_source();
        std::vector<ila::NamedModel> tgts = load_targets(src);
        ila::Dataset eval_data = data.load_eval();
        EvalSlice s = make_eval_slice(eval_data, slice);
        ila::AttackPipeline p = pipeline.to_pipeline(src.model, eval_data);

        ila::EpsilonSweep sweep = ila::epsilon_sweep(src, tgts, p, eps_list, s.x, s.labels);
        for (size_t i = 0; i < sweep.epsilons.size(); ++i) {
            std::printf("eps %-8s baseline mean %.4f  refined mean %.4f\n",
                        ila::format_double(sweep.epsilons[i]).c_str(),
                        ila::mean_transfer_accuracy(sweep.baseline[i]),
                        ila::mean_transfer_accuracy(sweep.refined[i]));
        }
        write_csv(out_dir, "eps.csv", ila::epsilon_csv(sweep));
        json cfg = manifest_config("eps-sweep");
        cfg["eps_list"] = eps_list;
        ila::write_manifest(out_dir, cfg);
        return 0;
    }
};

struct LrAblationCmd : ExperimentCmd {
    std::vector<double> lr_list = {0.002, 0.008, 0.014, 0.02};

    int run() {
        if (pipeline.refine) {
            throw UsageError("lr-ablation varies the baseline step size; drop --refine");
        }
        ila::NamedModel src = load_source();
        std::vector<ila::NamedModel> tgts = load_targets(src);
        ila::Dataset eval_data = data.load_eval();
        EvalSlice s = make_eval_slice(eval_data, slice);
        ila::AttackPipeline p = pipeline.to_pipeline(src.model, eval_data);

        ila::LrAblation ablation = ila::lr_ablation(src, tgts, p, lr_list, s.x, s.labels);
        for (const auto& [target, spread] : ablation.spread) {
            std::printf("%-24s spread %.4f\n", target.c_str(), spread);
        }
        write_csv(out_dir, "lr.csv", ila::lr_csv(ablation));
        json cfg = manifest_config("lr-ablation");
        cfg["lr_list"] = lr_list;
        ila::write_manifest(out_dir, cfg);
        return 0;
    }
};

struct ChannelsCmd : ExperimentCmd {
    int layer = 0;
    int sg_window = 41;
    int sg_degree = 2;

    int run() {
        pipeline.refine = true;
        ila::NamedModel src = load_source();
        if (targets.size() != 1) {
            throw UsageError("channels compares one source against exactly one --target");
        }
        ila::NamedModel tgt = load_named(targets[0]);
        ila::Dataset eval_data = data.load_eval();
        EvalSlice s = make_eval_slice(eval_data, slice);
        pipeline.layer = std::to_string(layer);
        ila::AttackPipeline p = pipeline.to_pipeline(src.model, eval_data);

        ila::ChannelExperiment exp = ila::channel_experiment(src, tgt, layer, p, s.x, s.labels,
                                                             sg_window, sg_degree);
        if (exp.rho) {
            std::printf("spearman rho(channel std, transfer error) = %.4f\n", *exp.rho);
        } else {
            std::printf("spearman rho unavailable: %s\n", exp.rho_message.c_str());
        }
        write_csv(out_dir, "channels.csv", exp.csv);
        json cfg = manifest_config("channels");
        cfg["layer"] = layer;
        cfg["sg_window"] = sg_window;
        cfg["sg_degree"] = sg_degree;
        cfg["rho"] = exp.rho ? json(*exp.rho) : json();
        ila::write_manifest(out_dir, cfg);
        return 0;
    }
};

struct ReportCmd {
    std::string dir = ".";

    int run() {
        const fs::path manifest_path = fs::path(dir) / "manifest.json";
        if (!fs::exists(manifest_path)) {
            throw UsageError("no manifest.json in " + dir);
        }
        std::ifstream in(manifest_path);
        json manifest = json::parse(in);
        std::printf("experiment %s\n", manifest_path.c_str());
        std::printf("  build %s\n", manifest.value("build", std::string("unknown")).c_str());
        if (manifest.contains("config")) {
            const json& cfg = manifest["config"];
            std::printf("  command %s\n", cfg.value("command", std::string("?")).c_str());
            std::printf("  config %s\n", cfg.dump().c_str());
        }
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() != ".csv") continue;
            std::ifstream csv(entry.path());
            std::string line;
            size_t rows = 0;
            std::getline(csv, line);  // header
            const std::string header = line;
            while (std::getline(csv, line))
                if (!line.empty()) ++rows;
            std::printf("  %-14s %4zu rows  [%s]\n", entry.path().filename().c_str(), rows,
                        header.c_str());
        }
        return 0;
    }
};

// ---------------------------------------------------------------------------
// wiring
// ---------------------------------------------------------------------------

// Expands `--config file` (flat key=value) into tokens inserted right after
// the subcommand so explicit command-line flags take precedence (options use
// the take-last policy).
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
            break;
        }
    }
    if (config_path.empty()) return args;

    auto entries = ila::parse_config(config_path);  // throws IoError when missing
    std::vector<std::string> tokens;
    for (const auto& [key, value] : entries) {
        tokens.push_back("--" + key + "=" + value);
    }
    // insert after the subcommand token (the first non-flag argument)
    auto insert_at = args.begin();
    while (insert_at != args.end() && !insert_at->empty() && (*insert_at)[0] == '-') ++insert_at;
    if (insert_at != args.end()) ++insert_at;
    args.insert(insert_at, tokens.begin(), tokens.end());
    return args;
}

void add_targets_option(CLI::App& cmd, ExperimentCmd& exp) {
    cmd.add_option("--target", exp.targets, "target checkpoint (repeatable or comma-separated)")
        ->delimiter(',')
        ->take_all();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial transferability laboratory"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    // --config is consumed by expand_config; registered per subcommand so the
    // flag still shows up in help output
    std::string config_dummy;

    TrainCmd train;
    auto* train_cmd = app.add_subcommand("train", "train one architecture and save a checkpoint");
    train_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    train_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    train.data.add_to(*train_cmd);
    train_cmd->add_option("--arch", train.arch, "architecture name")->capture_default_str();
    train_cmd->add_option("--seed", train.seed, "weight init seed")->capture_default_str();
    train_cmd->add_option("--epochs", train.cfg.epochs, "training epochs")->capture_default_str();
    train_cmd->add_option("--batch", train.cfg.batch_size, "batch size")->capture_default_str();
    train_cmd->add_option("--lr", train.cfg.lr, "learning rate")->capture_default_str();
    train_cmd->add_option("--momentum", train.cfg.momentum, "SGD momentum")->capture_default_str();
    train_cmd->add_option("--wd", train.cfg.weight_decay, "weight decay")->capture_default_str();
    train_cmd->add_option("--train-seed", train.cfg.seed, "shuffle seed")->capture_default_str();
    train_cmd->add_option("--subset", train.cfg.train_subset, "train on the first N samples only")
        ->capture_default_str();
    train_cmd->add_option("--out", train.out, "checkpoint path")->required();

    AttackCmd attack;
    auto* attack_cmd = app.add_subcommand("attack", "run a baseline attack and save the batch");
    attack_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    attack_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    attack.data.add_to(*attack_cmd);
    attack.slice.add_to(*attack_cmd);
    attack.pipeline.add_to(*attack_cmd, /*with_refine=*/false);
    attack_cmd->add_option("--source", attack.source, "source checkpoint")->required();
    attack_cmd->add_option("--out", attack.out, "adversarial batch path")->required();

    IlaCmd ila_cmd_data;
    auto* ila_cmd = app.add_subcommand("ila", "refine a baseline attack at an intermediate layer");
    ila_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    ila_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    ila_cmd_data.inner.pipeline.iters = 10;
    ila_cmd_data.inner.data.add_to(*ila_cmd);
    ila_cmd_data.inner.slice.add_to(*ila_cmd);
    ila_cmd_data.inner.pipeline.add_to(*ila_cmd);
    ila_cmd->add_option("--baseline", ila_cmd_data.inner.pipeline.method,
                        "baseline attack (alias of --method)")
        ->check(CLI::IsMember({"ifgsm", "mifgsm"}));
    ila_cmd->add_option("--source", ila_cmd_data.inner.source, "source checkpoint")->required();
    ila_cmd->add_option("--out", ila_cmd_data.inner.out, "adversarial batch path")->required();

    SelectLayerCmd select;
    auto* select_cmd =
        app.add_subcommand("select-layer", "calibrate the refinement layer on a slice");
    select_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    select_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    select.pipeline.iters = 10;
    select.data.add_to(*select_cmd);
    select.pipeline.add_to(*select_cmd);
    select_cmd->add_option("--source", select.source, "source checkpoint")->required();
    select_cmd->add_option("--out-dir", select.out_dir, "directory for profiles.csv + manifest")
        ->required();

    TransferCmd transfer;
    auto* transfer_cmd =
        app.add_subcommand("transfer", "evaluate one attack against target models");
    transfer_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    transfer_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    transfer.data.add_to(*transfer_cmd);
    transfer.slice.add_to(*transfer_cmd);
    transfer.pipeline.add_to(*transfer_cmd);
    transfer_cmd->add_option("--source", transfer.source, "source checkpoint")->required();
    add_targets_option(*transfer_cmd, transfer);
    transfer_cmd->add_option("--out-dir", transfer.out_dir, "directory for transfer.csv + manifest")
        ->capture_default_str();

    SweepCmd sweep;
    auto* sweep_cmd =
        app.add_subcommand("sweep", "refinement transfer report for every tap of the source");
    sweep_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sweep_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    sweep.pipeline.iters = 10;
    sweep.data.add_to(*sweep_cmd);
    sweep.slice.add_to(*sweep_cmd);
    sweep.pipeline.add_to(*sweep_cmd, /*with_refine=*/true, /*with_layer_controls=*/false);
    sweep_cmd->add_option("--source", sweep.source, "source checkpoint")->required();
    add_targets_option(*sweep_cmd, sweep);
    sweep_cmd->add_option("--out-dir", sweep.out_dir, "directory for sweep.csv + manifest")
        ->capture_default_str();

    EpsSweepCmd eps_sweep;
    auto* eps_cmd = app.add_subcommand("eps-sweep", "baseline vs refined transfer per epsilon");
    eps_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    eps_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    eps_sweep.pipeline.iters = 10;
    eps_sweep.data.add_to(*eps_cmd);
    eps_sweep.slice.add_to(*eps_cmd);
    eps_sweep.pipeline.add_to(*eps_cmd);
    eps_cmd->add_option("--eps-list", eps_sweep.eps_list, "epsilons to sweep")
        ->delimiter(',')
        ->take_all();
    eps_cmd->add_option("--source", eps_sweep.source, "source checkpoint")->required();
    add_targets_option(*eps_cmd, eps_sweep);
    eps_cmd->add_option("--out-dir", eps_sweep.out_dir, "directory for eps.csv + manifest")
        ->capture_default_str();

    LrAblationCmd lr_ablation;
    auto* lr_cmd = app.add_subcommand("lr-ablation", "baseline transfer across step sizes");
    lr_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    lr_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    lr_ablation.data.add_to(*lr_cmd);
    lr_ablation.slice.add_to(*lr_cmd);
    lr_ablation.pipeline.add_to(*lr_cmd, /*with_refine=*/false);
    lr_cmd->add_option("--lr-list", lr_ablation.lr_list, "step sizes to sweep")
        ->delimiter(',')
        ->take_all();
    lr_cmd->add_option("--source", lr_ablation.source, "source checkpoint")->required();
    add_targets_option(*lr_cmd, lr_ablation);
    lr_cmd->add_option("--out-dir", lr_ablation.out_dir, "directory for lr.csv + manifest")
        ->capture_default_str();

    ChannelsCmd channels;
    auto* channels_cmd =
        app.add_subcommand("channels", "per-channel refinement vs activation std");
    channels_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    channels_cmd->add_option("--config", config_dummy, "flat key=value file mirroring the flags");
    channels.pipeline.iters = 10;
    channels.data.add_to(*channels_cmd);
    channels.slice.add_to(*channels_cmd);
    channels.pipeline.add_to(*channels_cmd, /*with_refine=*/true, /*with_layer_controls=*/false);
    channels_cmd->add_option("--source", channels.source, "source checkpoint")->required();
    add_targets_option(*channels_cmd, channels);
    channels_cmd->add_option("--layer", channels.layer, "tap index to split by channel")
        ->required();
    channels_cmd->add_option("--sg-window", channels.sg_window, "smoothing window")
        ->capture_default_str();
    channels_cmd->add_option("--sg-degree", channels.sg_degree, "smoothing polynomial degree")
        ->capture_default_str();
    channels_cmd->add_option("--out-dir", channels.out_dir, "directory for channels.csv + manifest")
        ->capture_default_str();

    ReportCmd report;
    auto* report_cmd = app.add_subcommand("report", "summarize a saved experiment directory");
    report_cmd->add_option("--dir", report.dir, "experiment directory")->capture_default_str();

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
    } catch (const ila::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    try {
        // CLI11 parses reversed token lists
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd) return train.run();
        if (*attack_cmd) return attack.run();
        if (*ila_cmd) return ila_cmd_data.run();
        if (*select_cmd) return select.run();
        if (*transfer_cmd) return transfer.run();
        if (*sweep_cmd) return sweep.run();
        if (*eps_cmd) return eps_sweep.run();
        if (*lr_cmd) return lr_ablation.run();
        if (*channels_cmd) return channels.run();
        if (*report_cmd) return report.run();
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ila::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
