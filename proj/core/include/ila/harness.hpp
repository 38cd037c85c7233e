#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ila/analysis.hpp"
#include "ila/attacks.hpp"
#include "ila/train.hpp"
#include "ila/zoo.hpp"

namespace ila {

struct NamedModel {
    std::string name;
    Model model;
};

// A complete generation recipe: a baseline attack, optionally refined.
struct AttackPipeline {
    BaselineKind baseline = BaselineKind::Ifgsm;
    AttackConfig baseline_cfg;
    bool use_ila = false;
    AttackConfig ila_cfg;  // target_layer must be resolved before running

    std::string describe() const;
};

struct PipelineResult {
    Tensor adv;
    std::string descriptor;
    int degenerate = 0;  // refinement pass-throughs
};

// Generates the adversarial batch for a pipeline on the source model.
PipelineResult run_pipeline(const NamedModel& source, const Tensor& x,
                            std::span<const int> labels, const AttackPipeline& pipeline);

struct TransferRow {
    std::string target;
    bool self = false;
    double accuracy = 0.0;
};

struct TransferReport {
    std::string source;
    std::string attack;
    double epsilon = 0.0;
    std::vector<TransferRow> rows;
    int degenerate = 0;
};

// mean accuracy over non-self rows
double mean_transfer_accuracy(const TransferReport& report);

// Generates adversarial examples once on the source and evaluates every
// target on the identical batch. The self row is matched by parameter
// storage identity, not by name.
TransferReport run_transfer(const NamedModel& source, std::span<const NamedModel> targets,
                            const AttackPipeline& pipeline, const Tensor& x,
                            std::span<const int> labels);

// One refinement run per tap of the source; pipeline.use_ila is implied.
std::vector<TransferReport> sweep_layers(const NamedModel& source,
                                         std::span<const NamedModel> targets,
                                         const AttackPipeline& pipeline, const Tensor& x,
                                         std::span<const int> labels);

struct EpsilonSweep {
    std::vector<double> epsilons;
    std::vector<TransferReport> baseline;  // aligned with epsilons
    std::vector<TransferReport> refined;
};

// Baseline-vs-refined comparison at each epsilon on a fixed slice; both
// stage step sizes stay as configured, only the ball radius changes.
EpsilonSweep epsilon_sweep(const NamedModel& source, std::span<const NamedModel> targets,
                           const AttackPipeline& pipeline, std::span<const double> epsilons,
                           const Tensor& x, std::span<const int> labels);

struct LrAblation {
    std::vector<double> lrs;
    std::vector<TransferReport> reports;
    // per target: max - min transfer accuracy across lrs
    std::map<std::string, double> spread;
};

LrAblation lr_ablation(const NamedModel& source, std::span<const NamedModel> targets,
                       const AttackPipeline& baseline_pipeline, std::span<const double> lrs,
                       const Tensor& x, std::span<const int> labels);

struct ChannelExperiment {
    int layer = -1;
    // indexed by channel
    std::vector<double> stds;
    std::vector<double> transfer_error;
    std::vector<double> smoothed_std;  // std series sorted by error, then smoothed
    std::optional<double> rho;         // empty when rank variance is zero
    std::string rho_message;
    std::string csv;  // rows sorted by increasing transfer error
};

// Channel-targeted refinement per channel of the tap; joins per-channel
// target error rates with activation stds. The smoothing window shrinks to
// the largest odd value <= channel count when necessary.
ChannelExperiment channel_experiment(const NamedModel& source, const NamedModel& target,
                                     int layer, const AttackPipeline& pipeline,
                                     const Tensor& x, std::span<const int> labels,
                                     int sg_window = 41, int sg_degree = 2);

// ---- CSV emission (schemas in docs/formats.md) ----
std::string transfer_csv(std::span<const TransferReport> reports);
std::string sweep_csv(std::span<const TransferReport> reports);  // one report per layer
std::string epsilon_csv(const EpsilonSweep& sweep);
std::string lr_csv(const LrAblation& ablation);

// ---- experiment bookkeeping ----
// flat key=value file; '#' comments and blank lines ignored
std::map<std::string, std::string> parse_config(const std::string& path);

// dir/manifest.json: configuration + build stamp, atomically written
void write_manifest(const std::string& dir, const nlohmann::json& config);

std::string git_describe();  // build stamp baked into the library

}  // namespace ila
