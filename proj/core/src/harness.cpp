#include "ila/harness.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "ila/common.hpp"

namespace ila {

namespace {

// Self rows are matched by parameter storage, so renamed or reloaded copies
// of the same weights still count as white-box.
bool same_weights(const Model& a, const Model& b) {
    return a.params()[0].tensor.impl() == b.params()[0].tensor.impl();
}

void check_class_counts(const NamedModel& source, std::span<const NamedModel> targets) {
    if (targets.empty()) throw Error("run_transfer: empty target set");
    for (const auto& t : targets) {
        if (t.model.num_classes() != source.model.num_classes()) {
            throw Error("class-count mismatch: source '" + source.name + "' has " +
                        std::to_string(source.model.num_classes()) + " classes, target '" +
                        t.name + "' has " + std::to_string(t.model.num_classes()));
        }
    }
}

std::vector<TransferRow> evaluate_targets(const NamedModel& source,
                                          std::span<const NamedModel> targets, const Tensor& adv,
                                          std::span<const int> labels) {
    std::vector<TransferRow> rows;
    rows.reserve(targets.size());
    int self_rows = 0;
    for (const auto& t : targets) {
        TransferRow row;
        row.target = t.name;
        row.self = same_weights(source.model, t.model);
        row.accuracy = evaluate_accuracy(t.model, adv, labels);
        self_rows += row.self ? 1 : 0;
        rows.push_back(std::move(row));
    }
    if (self_rows > 1) {
        throw Error("target set contains the source model " + std::to_string(self_rows) +
                    " times; expected at most one self row");
    }
    return rows;
}

TransferReport make_report(const NamedModel& source, std::span<const NamedModel> targets,
                           const AttackPipeline& pipeline, const Tensor& adv,
                           std::span<const int> labels, int degenerate) {
    TransferReport report;
    report.source = source.name;
    report.attack = pipeline.describe();
    report.epsilon = pipeline.baseline_cfg.epsilon;
    report.rows = evaluate_targets(source, targets, adv, labels);
    report.degenerate = degenerate;
    return report;
}

}  // namespace

// Descriptors land in CSV fields, so they must stay comma-free.
std::string AttackPipeline::describe() const {
    std::ostringstream ss;
    ss << (baseline == BaselineKind::Ifgsm ? "ifgsm" : "mifgsm") << "(iters="
       << baseline_cfg.iterations << ";step=" << format_double(baseline_cfg.step_size) << ')';
    if (use_ila) {
        ss << "+ila(iters=" << ila_cfg.iterations << ";layer=" << ila_cfg.target_layer
           << ";alpha=" << format_double(ila_cfg.alpha);
        if (ila_cfg.target_channel >= 0) ss << ";channel=" << ila_cfg.target_channel;
        ss << ')';
    }
    return ss.str();
}

PipelineResult run_pipeline(const NamedModel& source, const Tensor& x,
                            std::span<const int> labels, const AttackPipeline& pipeline) {
    Tensor adv = run_baseline(source.model, x, labels, pipeline.baseline_cfg, pipeline.baseline);
    if (!pipeline.use_ila) return {adv, pipeline.describe(), 0};
    if (pipeline.ila_cfg.epsilon != pipeline.baseline_cfg.epsilon) {
        throw Error("refinement epsilon " + format_double(pipeline.ila_cfg.epsilon) +
                    " differs from baseline epsilon " +
                    format_double(pipeline.baseline_cfg.epsilon));
    }
    IlaOutput out = ila_attack(source.model, x, adv, labels, pipeline.ila_cfg);
    return {out.x, pipeline.describe(), out.degenerate_count};
}

double mean_transfer_accuracy(const TransferReport& report) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : report.rows) {
        if (row.self) continue;
        sum += row.accuracy;
        ++n;
    }
    if (n == 0) throw Error("report for '" + report.source + "' has no transfer rows");
    return sum / n;
}

TransferReport run_transfer(const NamedModel& source, std::span<const NamedModel> targets,
                            const AttackPipeline& pipeline, const Tensor& x,
                            std::span<const int> labels) {
    check_class_counts(source, targets);
    PipelineResult result = run_pipeline(source, x, labels, pipeline);
    return make_report(source, targets, pipeline, result.adv, labels, result.degenerate);
}

std::vector<TransferReport> sweep_layers(const NamedModel& source,
                                         std::span<const NamedModel> targets,
                                         const AttackPipeline& pipeline, const Tensor& x,
                                         std::span<const int> labels) {
    check_class_counts(source, targets);
    // One baseline serves every per-layer refinement.
    Tensor adv = run_baseline(source.model, x, labels, pipeline.baseline_cfg, pipeline.baseline);
    std::vector<TransferReport> reports;
    reports.reserve(static_cast<size_t>(source.model.num_taps()));
    for (int l = 0; l < source.model.num_taps(); ++l) {
        AttackPipeline p = pipeline;
        p.use_ila = true;
        p.ila_cfg.epsilon = p.baseline_cfg.epsilon;
        p.ila_cfg.target_layer = l;
        p.ila_cfg.target_channel = -1;
        IlaOutput out = ila_attack(source.model, x, adv, labels, p.ila_cfg);
        reports.push_back(make_report(source, targets, p, out.x, labels, out.degenerate_count));
    }
    return reports;
}

EpsilonSweep epsilon_sweep(const NamedModel& source, std::span<const NamedModel> targets,
                           const AttackPipeline& pipeline, std::span<const double> epsilons,
                           const Tensor& x, std::span<const int> labels) {
    if (epsilons.empty()) throw Error("epsilon_sweep: empty epsilon list");
    if (!pipeline.use_ila) throw Error("epsilon_sweep: pipeline has no refinement stage");
    EpsilonSweep sweep;
    sweep.epsilons.assign(epsilons.begin(), epsilons.end());
    for (double eps : epsilons) {
        if (eps <= 0.0) throw Error("epsilon_sweep: epsilon must be positive");
        // The unrefined comparator gets the refinement's iteration budget so
        // both attacks spend the same number of gradient steps.
        AttackPipeline base = pipeline;
        base.use_ila = false;
        base.baseline_cfg.epsilon = eps;
        base.baseline_cfg.iterations += pipeline.ila_cfg.iterations;
        sweep.baseline.push_back(run_transfer(source, targets, base, x, labels));

        AttackPipeline refined = pipeline;
        refined.baseline_cfg.epsilon = eps;
        refined.ila_cfg.epsilon = eps;
        sweep.refined.push_back(run_transfer(source, targets, refined, x, labels));
    }
    return sweep;
}

LrAblation lr_ablation(const NamedModel& source, std::span<const NamedModel> targets,
                       const AttackPipeline& baseline_pipeline, std::span<const double> lrs,
                       const Tensor& x, std::span<const int> labels) {
    if (lrs.empty()) throw Error("lr_ablation: empty learning-rate list");
    if (baseline_pipeline.use_ila) {
        throw Error("lr_ablation varies the baseline step size; pass a pipeline without "
                    "a refinement stage");
    }
    LrAblation ablation;
    ablation.lrs.assign(lrs.begin(), lrs.end());
    for (double lr : lrs) {
        if (lr <= 0.0) throw Error("lr_ablation: learning rate must be positive");
        AttackPipeline p = baseline_pipeline;
        p.baseline_cfg.step_size = lr;
        ablation.reports.push_back(run_transfer(source, targets, p, x, labels));
    }
    for (const auto& row : ablation.reports.front().rows) {
        double lo = 1.0, hi = 0.0;
        for (const auto& report : ablation.reports) {
            for (const auto& r : report.rows) {
                if (r.target != row.target) continue;
                lo = std::min(lo, r.accuracy);
                hi = std::max(hi, r.accuracy);
            }
        }
        ablation.spread[row.target] = hi - lo;
    }
    return ablation;
}

ChannelExperiment channel_experiment(const NamedModel& source, const NamedModel& target,
                                     int layer, const AttackPipeline& pipeline,
                                     const Tensor& x, std::span<const int> labels,
                                     int sg_window, int sg_degree) {
    const int channels = source.model.tap_channels(layer);
    if (target.model.num_classes() != source.model.num_classes()) {
        throw Error("class-count mismatch between '" + source.name + "' and '" + target.name +
                    "'");
    }
    ChannelExperiment ex;
    ex.layer = layer;
    ex.stds = channel_std(source.model, x, layer);

    Tensor adv = run_baseline(source.model, x, labels, pipeline.baseline_cfg, pipeline.baseline);
    ex.transfer_error.resize(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        AttackConfig cfg = pipeline.ila_cfg;
        cfg.epsilon = pipeline.baseline_cfg.epsilon;
        cfg.target_layer = layer;
        cfg.target_channel = c;
        IlaOutput out = channel_ila(source.model, x, adv, labels, cfg);
        ex.transfer_error[static_cast<size_t>(c)] =
            1.0 - evaluate_accuracy(target.model, out.x, labels);
    }

    std::vector<int> order(static_cast<size_t>(channels));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double ea = ex.transfer_error[static_cast<size_t>(a)];
        double eb = ex.transfer_error[static_cast<size_t>(b)];
        return ea != eb ? ea < eb : a < b;
    });
    std::vector<double> sorted_std(order.size());
    std::vector<double> sorted_err(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        sorted_std[i] = ex.stds[static_cast<size_t>(order[i])];
        sorted_err[i] = ex.transfer_error[static_cast<size_t>(order[i])];
    }

    int window = std::min(sg_window, channels);
    if (window % 2 == 0) --window;
    ex.smoothed_std = savitzky_golay(sorted_std, window, sg_degree);

    try {
        ex.rho = rank_correlation(ex.stds, ex.transfer_error);
        ex.rho_message = "ok";
    } catch (const Error& e) {
        ex.rho.reset();
        ex.rho_message = e.what();
    }
    ex.csv = channels_csv(order, sorted_std, sorted_err, ex.smoothed_std);
    return ex;
}

std::string transfer_csv(std::span<const TransferReport> reports) {
    std::ostringstream ss;
    ss << "source,attack,epsilon,target,self,accuracy\n";
    for (const auto& report : reports) {
        for (const auto& row : report.rows) {
            ss << report.source << ',' << report.attack << ',' << format_double(report.epsilon)
               << ',' << row.target << ',' << (row.self ? 1 : 0) << ','
               << format_double(row.accuracy) << '\n';
        }
    }
    return ss.str();
}

std::string sweep_csv(std::span<const TransferReport> reports) {
    std::ostringstream ss;
    ss << "source,layer,target,self,accuracy\n";
    for (size_t l = 0; l < reports.size(); ++l) {
        for (const auto& row : reports[l].rows) {
            ss << reports[l].source << ',' << l << ',' << row.target << ','
               << (row.self ? 1 : 0) << ',' << format_double(row.accuracy) << '\n';
        }
    }
    return ss.str();
}

std::string epsilon_csv(const EpsilonSweep& sweep) {
    std::vector<TransferReport> rows;
    rows.reserve(sweep.baseline.size() + sweep.refined.size());
    for (size_t i = 0; i < sweep.baseline.size(); ++i) {
        rows.push_back(sweep.baseline[i]);
        rows.push_back(sweep.refined[i]);
    }
    return transfer_csv(rows);
}

std::string lr_csv(const LrAblation& ablation) {
    std::ostringstream ss;
    ss << "source,lr,target,self,accuracy\n";
    for (size_t i = 0; i < ablation.reports.size(); ++i) {
        for (const auto& row : ablation.reports[i].rows) {
            ss << ablation.reports[i].source << ',' << format_double(ablation.lrs[i]) << ','
               << row.target << ',' << (row.self ? 1 : 0) << ','
               << format_double(row.accuracy) << '\n';
        }
    }
    return ss.str();
}

std::map<std::string, std::string> parse_config(const std::string& path) {
    const std::string text = read_file(path);
    std::map<std::string, std::string> out;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        size_t b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        size_t e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(lines, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw Error(path + ":" + std::to_string(lineno) + ": empty key");
        }
        out[key] = trim(t.substr(eq + 1));
    }
    return out;
}

void write_manifest(const std::string& dir, const nlohmann::json& config) {
    nlohmann::json manifest;
    manifest["config"] = config;
    manifest["build"] = git_describe();
    atomic_write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::string git_describe() {
#ifdef ILALAB_GIT_DESCRIBE
    return ILALAB_GIT_DESCRIBE;
#else
    return "unknown";
#endif
}

}  // namespace ila
