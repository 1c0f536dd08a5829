#include "fusionbench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "fusionbench/rng.hpp"

namespace fusion::analysis {

namespace {

constexpr double kPowerTol = 1e-9;
constexpr int kPowerMaxIter = 10000;

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Leading eigenvector of a symmetric matrix by power iteration. Returns the
// Rayleigh quotient; the start vector is seeded deterministically.
double power_iteration(const std::vector<double>& m, int d, std::vector<double>& v,
                       std::uint64_t seed) {
    Rng rng(seed);
    v.assign(d, 0.0);
    for (auto& x : v) x = rng.normal();
    double n = norm2(v);
    for (auto& x : v) x /= n;

    std::vector<double> next(d);
    for (int it = 0; it < kPowerMaxIter; ++it) {
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += m[static_cast<std::size_t>(i) * d + j] * v[j];
            next[i] = s;
        }
        const double nn = norm2(next);
        if (nn < 1e-30) break;  // matrix annihilates the iterate: eigenvalue ~ 0
        double delta = 0.0;
        for (int i = 0; i < d; ++i) {
            next[i] /= nn;
            delta = std::max(delta, std::abs(next[i] - v[i]));
        }
        v = next;
        if (delta <= kPowerTol) break;
    }
    double lambda = 0.0;
    for (int i = 0; i < d; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += m[static_cast<std::size_t>(i) * d + j] * v[j];
        lambda += v[i] * s;
    }
    return lambda;
}

void fix_sign(std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[best])) best = i;
    if (v[best] < 0.0)
        for (auto& x : v) x = -x;
}

}  // namespace

Pca2Result pca2(const Tensor& features) {
    if (features.rank() != 2)
        throw DimensionError("pca2 expects a feature matrix, got " + shape_str(features.shape()));
    const int n = features.size(0), d = features.size(1);
    if (n < 3) throw ConfigError("pca2 needs at least 3 points, got " + std::to_string(n));

    Pca2Result res;
    res.model.mean.assign(d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            res.model.mean[j] += features.data()[static_cast<std::size_t>(i) * d + j];
    for (auto& m : res.model.mean) m /= n;

    // sample covariance
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> centered(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            centered[static_cast<std::size_t>(i) * d + j] =
                features.data()[static_cast<std::size_t>(i) * d + j] - res.model.mean[j];
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            const double va = centered[static_cast<std::size_t>(i) * d + a];
            for (int bcol = a; bcol < d; ++bcol)
                cov[static_cast<std::size_t>(a) * d + bcol] +=
                    va * centered[static_cast<std::size_t>(i) * d + bcol];
        }
    for (int a = 0; a < d; ++a)
        for (int bcol = a; bcol < d; ++bcol) {
            cov[static_cast<std::size_t>(a) * d + bcol] /= (n - 1);
            cov[static_cast<std::size_t>(bcol) * d + a] = cov[static_cast<std::size_t>(a) * d + bcol];
        }

    double total = 0.0;
    for (int a = 0; a < d; ++a) total += cov[static_cast<std::size_t>(a) * d + a];
    if (total < 1e-18) throw DegenerateDataError("pca2: all points are identical");

    auto& c1 = res.model.components[0];
    res.model.explained_variance[0] = std::max(0.0, power_iteration(cov, d, c1, 0xACE1));

    // deflate and repeat
    auto deflated = cov;
    for (int a = 0; a < d; ++a)
        for (int bcol = 0; bcol < d; ++bcol)
            deflated[static_cast<std::size_t>(a) * d + bcol] -=
                res.model.explained_variance[0] * c1[a] * c1[bcol];
    auto& c2 = res.model.components[1];
    res.model.explained_variance[1] = std::max(0.0, power_iteration(deflated, d, c2, 0xACE2));

    // re-orthogonalize against c1 to clean up residual numerical drift
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += c1[j] * c2[j];
    for (int j = 0; j < d; ++j) c2[j] -= dot * c1[j];
    const double n2 = norm2(c2);
    if (n2 > 1e-12)
        for (auto& x : c2) x /= n2;
    else {
        // rank-1 data: any unit vector orthogonal to c1 works
        c2.assign(d, 0.0);
        std::size_t pivot = 0;
        for (std::size_t j = 1; j < c1.size(); ++j)
            if (std::abs(c1[j]) < std::abs(c1[pivot])) pivot = j;
        c2[pivot] = 1.0;
        double dd = c1[pivot];
        for (int j = 0; j < d; ++j) c2[j] -= dd * c1[j];
        for (auto& x : c2) x /= norm2(c2);
    }

    fix_sign(c1);
    fix_sign(c2);
    if (res.model.explained_variance[1] > res.model.explained_variance[0]) {
        std::swap(res.model.components[0], res.model.components[1]);
        std::swap(res.model.explained_variance[0], res.model.explained_variance[1]);
    }

    res.projection.resize(n);
    for (int i = 0; i < n; ++i) {
        double p0 = 0.0, p1 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = centered[static_cast<std::size_t>(i) * d + j];
            p0 += v * res.model.components[0][j];
            p1 += v * res.model.components[1][j];
        }
        res.projection[i] = {p0, p1};
    }
    return res;
}

ShiftReport subspace_shift(const Tensor& clean_feats, const Tensor& pert_feats,
                           const std::vector<int>& labels) {
    if (clean_feats.shape() != pert_feats.shape())
        throw DimensionError("subspace_shift: feature shapes differ, " +
                             shape_str(clean_feats.shape()) + " vs " +
                             shape_str(pert_feats.shape()));
    if (clean_feats.rank() != 2 ||
        static_cast<std::size_t>(clean_feats.size(0)) != labels.size())
        throw DimensionError("subspace_shift: labels do not match feature rows");

    const int n = clean_feats.size(0), d = clean_feats.size(1);
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

    ShiftReport rep;
    double spread_sum = 0.0;
    for (const auto& [cls, rows] : by_class) {
        std::vector<double> mc(d, 0.0), mp(d, 0.0);
        for (int r : rows)
            for (int j = 0; j < d; ++j) {
                mc[j] += clean_feats.data()[static_cast<std::size_t>(r) * d + j];
                mp[j] += pert_feats.data()[static_cast<std::size_t>(r) * d + j];
            }
        for (int j = 0; j < d; ++j) {
            mc[j] /= rows.size();
            mp[j] /= rows.size();
        }
        double disp = 0.0;
        for (int j = 0; j < d; ++j) disp += (mp[j] - mc[j]) * (mp[j] - mc[j]);
        rep.per_class_displacement.push_back(std::sqrt(disp));

        double var = 0.0;  // mean per-dimension variance of the clean features
        for (int r : rows)
            for (int j = 0; j < d; ++j) {
                const double dv = clean_feats.data()[static_cast<std::size_t>(r) * d + j] - mc[j];
                var += dv * dv;
            }
        var /= static_cast<double>(rows.size()) * d;
        spread_sum += std::sqrt(var);
    }
    rep.spread = spread_sum / static_cast<double>(by_class.size());
    if (rep.spread < 1e-9)
        throw DegenerateDataError("subspace_shift: clean within-class spread is zero");
    double mean_disp = 0.0;
    for (double v : rep.per_class_displacement) mean_disp += v;
    mean_disp /= static_cast<double>(rep.per_class_displacement.size());
    rep.score = mean_disp / rep.spread;
    return rep;
}

WeightSummary weight_stream_summary(const model::FusionHead& head) {
    WeightSummary s;
    auto fg = head.theta_fg();
    auto bg = head.theta_bg();
    for (float v : fg) s.avg_abs_fg += std::abs(static_cast<double>(v));
    for (float v : bg) s.avg_abs_bg += std::abs(static_cast<double>(v));
    if (!fg.empty()) s.avg_abs_fg /= static_cast<double>(fg.size());
    if (!bg.empty()) s.avg_abs_bg /= static_cast<double>(bg.size());
    return s;
}

RobustnessCurve robustness_curve(const std::vector<const model::Classifier*>& models,
                                 const std::vector<std::string>& names,
                                 const data::Dataset& testset, RobustnessCurve::Axis axis,
                                 const std::vector<float>& grid,
                                 const model::Classifier* fgsm_source) {
    if (models.empty() || grid.empty() || testset.samples.empty())
        throw ConfigError("robustness_curve needs models, a grid, and data");
    if (models.size() != names.size())
        throw ConfigError("robustness_curve: one name per model required");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (grid[i] <= grid[i - 1]) throw ConfigError("grid must be strictly increasing");
    if (axis == RobustnessCurve::Axis::epsilon && fgsm_source == nullptr)
        throw ConfigError("epsilon curves need a source model");

    RobustnessCurve curve;
    curve.axis = axis;
    curve.grid = grid;
    curve.model_names = names;
    curve.sample_count = static_cast<int>(testset.samples.size());
    curve.accuracy.assign(models.size(), {});

    for (float strength : grid) {
        if (axis == RobustnessCurve::Axis::sigma) {
            attack::BlurConfig cfg;
            cfg.sigma = strength;
            auto blurred = attack::blur_dataset(testset, cfg);
            auto batch = data::make_batch(blurred);
            for (std::size_t m = 0; m < models.size(); ++m)
                curve.accuracy[m].push_back(
                    model::accuracy(*models[m], batch.images, batch.labels));
        } else {
            std::vector<const model::Classifier*> targets = models;
            auto res = attack::transfer_attack(*fgsm_source, targets, testset, strength);
            // transfer_attack may prepend the source; align by pointer
            for (std::size_t m = 0; m < models.size(); ++m) {
                double acc = 0.0;
                for (std::size_t r = 0; r < res.models.size(); ++r)
                    if (res.models[r] == models[m]) acc = res.accuracy[r];
                curve.accuracy[m].push_back(acc);
            }
        }
    }
    return curve;
}

std::string curve_csv(const RobustnessCurve& curve, const std::vector<std::string>& header) {
    std::string out;
    for (const auto& h : header) out += "# " + h + "\n";
    out += "strength";
    for (const auto& n : curve.model_names) out += "," + n;
    out += "\n";
    char buf[64];
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        std::snprintf(buf, sizeof buf, "%g", curve.grid[g]);
        out += buf;
        for (const auto& row : curve.accuracy) {
            std::snprintf(buf, sizeof buf, ",%.4f", row[g]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

void save_curve_csv(const std::string& path, const RobustnessCurve& curve,
                    const std::vector<std::string>& header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << curve_csv(curve, header);
}

namespace {

const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                               "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

std::string curve_svg(const RobustnessCurve& curve, const std::string& title) {
    const int W = 640, H = 420, ml = 60, mr = 170, mt = 40, mb = 50;
    const double px = ml, pw = W - ml - mr, py = mt, ph = H - mt - mb;
    const double x0 = curve.grid.front(), x1 = curve.grid.back();
    const double span = (x1 - x0) > 0 ? (x1 - x0) : 1.0;

    auto sx = [&](double v) { return px + (v - x0) / span * pw; };
    auto sy = [&](double acc) { return py + (1.0 - acc) * ph; };

    std::string s;
    char buf[256];
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\">\n";
    s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">%s</text>\n",
                  ml, title.c_str());
    s += buf;
    // axes
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", px,
                  py + ph, px + pw, py + ph);
    s += buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", px, py, px,
                  py + ph);
    s += buf;
    for (int t = 0; t <= 4; ++t) {
        const double acc = t / 4.0;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"end\">%.2f</text>\n",
                      px - 6, sy(acc) + 4, acc);
        s += buf;
    }
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%g</text>\n",
                      sx(curve.grid[g]), py + ph + 16, curve.grid[g]);
        s += buf;
    }
    const char* axis_label = curve.axis == RobustnessCurve::Axis::sigma ? "sigma" : "epsilon";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  px + pw / 2, H - 14, axis_label);
    s += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"16\" y=\"%g\" font-family=\"sans-serif\" font-size=\"12\" "
                  "transform=\"rotate(-90 16 %g)\" text-anchor=\"middle\">accuracy</text>\n",
                  py + ph / 2, py + ph / 2);
    s += buf;

    for (std::size_t m = 0; m < curve.model_names.size(); ++m) {
        const char* color = kSeriesColors[m % 8];
        s += "<polyline fill=\"none\" stroke=\"";
        s += color;
        s += "\" stroke-width=\"2\" points=\"";
        for (std::size_t g = 0; g < curve.grid.size(); ++g) {
            std::snprintf(buf, sizeof buf, "%g,%g ", sx(curve.grid[g]), sy(curve.accuracy[m][g]));
            s += buf;
        }
        s += "\"/>\n";
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%d\" y=\"%g\" width=\"12\" height=\"3\" fill=\"%s\"/>\n",
                      W - mr + 16, mt + 14.0 * m + 6, color);
        s += buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%d\" y=\"%g\" font-family=\"sans-serif\" "
                      "font-size=\"11\">%s</text>\n",
                      W - mr + 34, mt + 14.0 * m + 11, curve.model_names[m].c_str());
        s += buf;
    }
    s += "</svg>\n";
    return s;
}

void save_curve_svg(const std::string& path, const RobustnessCurve& curve,
                    const std::string& title) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << curve_svg(curve, title);
}

void save_keyvalue(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& pairs,
                   const std::vector<std::string>& header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    for (const auto& h : header) out << "# " << h << "\n";
    for (const auto& [k, v] : pairs) out << k << "=" << v << "\n";
}

}  // namespace fusion::analysis
