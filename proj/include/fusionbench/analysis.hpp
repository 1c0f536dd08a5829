#pragma once

#include <array>
#include <string>
#include <vector>

#include "fusionbench/attacks.hpp"
#include "fusionbench/data.hpp"
#include "fusionbench/model.hpp"

namespace fusion::analysis {

struct PcaModel {
    std::vector<double> mean;
    std::array<std::vector<double>, 2> components;  // unit-norm, orthogonal
    std::array<double, 2> explained_variance;       // descending
};

struct Pca2Result {
    PcaModel model;
    std::vector<std::array<double, 2>> projection;  // one point per row
};

// Top-2 principal components by power iteration with deflation
// (tolerance 1e-9, at most 10,000 iterations). Component signs are fixed so
// the largest-magnitude entry is positive.
Pca2Result pca2(const Tensor& features);

struct ShiftReport {
    std::vector<double> per_class_displacement;
    double spread = 0.0;  // mean clean within-class standard deviation
    double score = 0.0;   // mean displacement / spread
};

// Per-class centroid displacement between clean and perturbed features,
// normalized by the pooled clean within-class spread. Computed in the full
// feature space.
ShiftReport subspace_shift(const Tensor& clean_feats, const Tensor& pert_feats,
                           const std::vector<int>& labels);

struct WeightSummary {
    double avg_abs_fg = 0.0;
    double avg_abs_bg = 0.0;
};

// Mean |W| over each row block of the fusion head; biases excluded.
WeightSummary weight_stream_summary(const model::FusionHead& head);

struct RobustnessCurve {
    enum class Axis { epsilon, sigma } axis = Axis::sigma;
    std::vector<float> grid;
    std::vector<std::string> model_names;
    std::vector<std::vector<double>> accuracy;  // [model][grid point]
    int sample_count = 0;
};

// Accuracy of every model on identically perturbed test inputs, one shared
// perturbation per grid value. Sigma curves blur each sample's bbox; epsilon
// curves craft FGSM against `fgsm_source`.
RobustnessCurve robustness_curve(const std::vector<const model::Classifier*>& models,
                                 const std::vector<std::string>& names,
                                 const data::Dataset& testset, RobustnessCurve::Axis axis,
                                 const std::vector<float>& grid,
                                 const model::Classifier* fgsm_source = nullptr);

// "strength,<model>..." header then one row per grid value, accuracies to
// four decimals. Lines in `header` are emitted first, '#'-prefixed.
std::string curve_csv(const RobustnessCurve& curve, const std::vector<std::string>& header = {});
void save_curve_csv(const std::string& path, const RobustnessCurve& curve,
                    const std::vector<std::string>& header = {});

// Self-contained polyline chart of the curve.
std::string curve_svg(const RobustnessCurve& curve, const std::string& title);
void save_curve_svg(const std::string& path, const RobustnessCurve& curve,
                    const std::string& title);

void save_keyvalue(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& pairs,
                   const std::vector<std::string>& header = {});

}  // namespace fusion::analysis
