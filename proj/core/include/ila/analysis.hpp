#pragma once

#include <span>
#include <string>
#include <vector>

#include "ila/attacks.hpp"
#include "ila/zoo.hpp"

namespace ila {

// f(l) = mean over samples of ||F_l(x'') - F_l(x)|| / ||F_l(x') - F_l(x)||,
// the per-layer disturbance curve of a refined batch.
struct DisturbanceProfile {
    std::string source;
    int targeted_layer = -1;
    std::vector<double> values;    // f(0..T-1)
    std::vector<int> excluded;     // per-layer count of degenerate baseline samples
};

DisturbanceProfile disturbance_profile(const Model& model, const Tensor& x_clean,
                                       const Tensor& x_adv, const Tensor& x_refined,
                                       int targeted_layer);

// strict local max; a missing neighbor imposes no constraint
bool has_peak(const std::vector<double>& values, int l);

enum class BaselineKind { Ifgsm, MomentumIfgsm };

Tensor run_baseline(const Model& model, const Tensor& x, std::span<const int> labels,
                    const AttackConfig& cfg, BaselineKind kind);

struct LayerSelection {
    int layer = -1;
    bool used_fallback = false;                 // no candidate peaked at itself
    std::vector<DisturbanceProfile> profiles;   // one per candidate layer
};

// Runs the baseline once on the calibration batch, then one refinement per
// candidate tap; picks the deepest tap whose own profile peaks at itself,
// falling back to argmax_l f_l(l).
LayerSelection select_layer(const Model& model, const Tensor& x, std::span<const int> labels,
                            const AttackConfig& baseline_cfg, BaselineKind baseline_kind,
                            const AttackConfig& ila_cfg);

// Population std per channel, pooled over samples and spatial positions of
// the tap activation.
std::vector<double> channel_std(const Model& model, const Tensor& images, int layer,
                                int chunk = 256);

// Least-squares polynomial smoothing weights for the window center.
std::vector<double> savitzky_golay_coefficients(int window, int degree);

// Convolution with the central coefficients; edges use mirror padding
// (reflection about the end element, which is not duplicated).
std::vector<double> savitzky_golay(std::span<const double> series, int window, int degree);

// Spearman rank correlation with average ranks for ties; throws on
// zero-variance rank vectors.
double rank_correlation(std::span<const double> a, std::span<const double> b);

// CSV emitters (header + rows, '\n' separated, fixed formatting)
std::string profile_csv(const DisturbanceProfile& profile);
std::string channels_csv(std::span<const int> channels, std::span<const double> stds,
                         std::span<const double> transfer_error,
                         std::span<const double> smoothed_std);
std::string format_double(double v);  // shortest round-trip-stable form used in CSVs

}  // namespace ila
