#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fusionbench/analysis.hpp"
#include "fusionbench/rng.hpp"

using namespace fusion;
using namespace fusion::analysis;

namespace {

// Closed-form eigendecomposition of a 2x2 symmetric matrix [[a,b],[b,c]].
void eigen2x2(double a, double b, double c, double& l1, double& l2, std::array<double, 2>& v1) {
    const double tr = (a + c) / 2.0;
    const double det = std::sqrt((a - c) * (a - c) / 4.0 + b * b);
    l1 = tr + det;
    l2 = tr - det;
    if (std::abs(b) > 1e-15) {
        v1 = {b, l1 - a};
    } else {
        v1 = a >= c ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
    }
    const double n = std::sqrt(v1[0] * v1[0] + v1[1] * v1[1]);
    v1[0] /= n;
    v1[1] /= n;
}

Tensor feature_matrix(const std::vector<std::array<double, 2>>& pts) {
    auto t = Tensor::zeros({static_cast<int>(pts.size()), 2});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        t.data()[i * 2] = static_cast<float>(pts[i][0]);
        t.data()[i * 2 + 1] = static_cast<float>(pts[i][1]);
    }
    return t;
}

}  // namespace

TEST_CASE("pca2 on rank-1 data recovers the line direction") {
    std::vector<std::array<double, 2>> pts;
    for (int i = 0; i < 20; ++i) {
        const double t = (i - 10) * 0.37;
        pts.push_back({t, 2.0 * t});
    }
    auto res = pca2(feature_matrix(pts));
    const double inv_s5 = 1.0 / std::sqrt(5.0);
    CHECK(std::abs(std::abs(res.model.components[0][0]) - inv_s5) <= 1e-5);
    CHECK(std::abs(std::abs(res.model.components[0][1]) - 2.0 * inv_s5) <= 1e-5);
    CHECK(res.model.explained_variance[1] <= 1e-6 * res.model.explained_variance[0]);
    // sign rule: largest-magnitude entry positive
    CHECK(res.model.components[0][1] > 0.0);
}

TEST_CASE("pca2 on an isotropic Gaussian sample has balanced variances") {
    Rng rng(99);
    std::vector<std::array<double, 2>> pts;
    for (int i = 0; i < 10000; ++i) pts.push_back({rng.normal(), rng.normal()});
    auto res = pca2(feature_matrix(pts));
    const double ratio = res.model.explained_variance[0] / res.model.explained_variance[1];
    CHECK(ratio <= 1.10);
    CHECK(ratio >= 1.0);  // descending by contract
}

TEST_CASE("pca2 matches the closed-form 2x2 eigendecomposition") {
    std::vector<std::array<double, 2>> pts{{0.0, 0.0}, {1.0, 0.4}, {0.3, 1.2}};
    auto res = pca2(feature_matrix(pts));

    // sample covariance of the 3 points
    double mx = 0, my = 0;
    for (auto& p : pts) {
        mx += p[0];
        my += p[1];
    }
    mx /= 3;
    my /= 3;
    double a = 0, b = 0, c = 0;
    for (auto& p : pts) {
        a += (p[0] - mx) * (p[0] - mx);
        b += (p[0] - mx) * (p[1] - my);
        c += (p[1] - my) * (p[1] - my);
    }
    a /= 2;
    b /= 2;
    c /= 2;
    double l1, l2;
    std::array<double, 2> v1;
    eigen2x2(a, b, c, l1, l2, v1);

    CHECK(res.model.explained_variance[0] == doctest::Approx(l1).epsilon(1e-6));
    CHECK(res.model.explained_variance[1] == doctest::Approx(l2).epsilon(1e-6));
    const double dot =
        res.model.components[0][0] * v1[0] + res.model.components[0][1] * v1[1];
    CHECK(std::abs(std::abs(dot) - 1.0) <= 1e-6);  // same direction up to sign

    // explained variance sums to the total variance when D = 2
    CHECK(res.model.explained_variance[0] + res.model.explained_variance[1] ==
          doctest::Approx(a + c).epsilon(1e-6));
}

TEST_CASE("pca2 components are orthonormal on real-looking features") {
    Rng rng(7);
    auto t = Tensor::zeros({50, 16});
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    auto res = pca2(t);
    double n1 = 0, n2 = 0, dot = 0;
    for (int j = 0; j < 16; ++j) {
        n1 += res.model.components[0][j] * res.model.components[0][j];
        n2 += res.model.components[1][j] * res.model.components[1][j];
        dot += res.model.components[0][j] * res.model.components[1][j];
    }
    CHECK(std::abs(n1 - 1.0) <= 1e-6);
    CHECK(std::abs(n2 - 1.0) <= 1e-6);
    CHECK(std::abs(dot) <= 1e-6);
    CHECK(res.model.explained_variance[0] >= res.model.explained_variance[1]);

    // total variance bounds the explained pair
    double total = 0;
    std::vector<double> mean(16, 0.0);
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 16; ++j) mean[j] += t.data()[i * 16 + j];
    for (auto& m : mean) m /= 50;
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 16; ++j) {
            const double d = t.data()[i * 16 + j] - mean[j];
            total += d * d / 49.0;
        }
    CHECK(res.model.explained_variance[0] + res.model.explained_variance[1] <= total + 1e-9);
}

TEST_CASE("pca2 rejects degenerate inputs") {
    CHECK_THROWS_AS(pca2(Tensor::zeros({2, 4})), ConfigError);
    CHECK_THROWS_AS(pca2(Tensor::filled({5, 4}, 1.f)), DegenerateDataError);
}

TEST_CASE("subspace_shift: identity, translation, degenerate spread") {
    Rng rng(3);
    const int N = 30, D = 8;
    auto clean = Tensor::zeros({N, D});
    for (auto& v : clean.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    std::vector<int> labels;
    for (int i = 0; i < N; ++i) labels.push_back(i % 3);

    auto rep0 = subspace_shift(clean, clean, labels);
    CHECK(rep0.score == 0.0);

    // constant translation: mean displacement equals the vector norm
    std::vector<float> v(D);
    double vn = 0;
    for (int j = 0; j < D; ++j) {
        v[j] = static_cast<float>(rng.uniform(-1.0, 1.0));
        vn += static_cast<double>(v[j]) * v[j];
    }
    vn = std::sqrt(vn);
    auto moved = Tensor::zeros({N, D});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < D; ++j) moved.data()[i * D + j] = clean.data()[i * D + j] + v[j];
    auto rep = subspace_shift(clean, moved, labels);
    double mean_disp = 0;
    for (double d : rep.per_class_displacement) mean_disp += d;
    mean_disp /= rep.per_class_displacement.size();
    CHECK(mean_disp == doctest::Approx(vn).epsilon(1e-5));

    CHECK_THROWS_AS(subspace_shift(Tensor::filled({4, 2}, 1.f), Tensor::zeros({4, 2}),
                                   std::vector<int>{0, 0, 1, 1}),
                    DegenerateDataError);
    CHECK_THROWS_AS(subspace_shift(clean, Tensor::zeros({N, D + 1}), labels), DimensionError);
}

TEST_CASE("subspace_shift is invariant under a joint orthogonal transform") {
    Rng rng(17);
    const int N = 40, D = 6;
    auto clean = Tensor::zeros({N, D});
    auto pert = Tensor::zeros({N, D});
    for (auto& v : clean.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (std::size_t i = 0; i < pert.numel(); ++i)
        pert.data()[i] = clean.data()[i] + static_cast<float>(rng.uniform(-0.3, 0.3));
    std::vector<int> labels;
    for (int i = 0; i < N; ++i) labels.push_back(i % 4);

    // random orthogonal matrix via Gram-Schmidt
    std::vector<std::vector<double>> q(D, std::vector<double>(D));
    for (int r = 0; r < D; ++r) {
        for (int c = 0; c < D; ++c) q[r][c] = rng.normal();
        for (int p = 0; p < r; ++p) {
            double dot = 0;
            for (int c = 0; c < D; ++c) dot += q[r][c] * q[p][c];
            for (int c = 0; c < D; ++c) q[r][c] -= dot * q[p][c];
        }
        double n = 0;
        for (int c = 0; c < D; ++c) n += q[r][c] * q[r][c];
        n = std::sqrt(n);
        for (int c = 0; c < D; ++c) q[r][c] /= n;
    }
    auto rotate = [&](const Tensor& t) {
        auto out = Tensor::zeros({N, D});
        for (int i = 0; i < N; ++i)
            for (int r = 0; r < D; ++r) {
                double s = 0;
                for (int c = 0; c < D; ++c) s += q[r][c] * t.data()[i * D + c];
                out.data()[i * D + r] = static_cast<float>(s);
            }
        return out;
    };

    auto base = subspace_shift(clean, pert, labels);
    auto rot = subspace_shift(rotate(clean), rotate(pert), labels);
    CHECK(rot.score == doctest::Approx(base.score).epsilon(1e-5));
}

TEST_CASE("weight_stream_summary: constants, zero block, oracle, scaling") {
    model::FusionHead head;
    head.d_fg = 3;
    head.d_bg = 2;
    head.W = Tensor::filled({5, 4}, 1.f);
    head.b = Tensor::zeros({4});
    auto s = weight_stream_summary(head);
    CHECK(s.avg_abs_fg == 1.0);
    CHECK(s.avg_abs_bg == 1.0);

    Rng rng(5);
    for (auto& v : head.W.data()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    double fg = 0, bg = 0;
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) {
            const double a = std::abs(head.W.data()[r * 4 + c]);
            if (r < 3)
                fg += a;
            else
                bg += a;
        }
    auto s2 = weight_stream_summary(head);
    CHECK(s2.avg_abs_fg == doctest::Approx(fg / 12.0).epsilon(1e-6));
    CHECK(s2.avg_abs_bg == doctest::Approx(bg / 8.0).epsilon(1e-6));

    for (auto& v : head.W.data()) v *= -3.f;
    auto s3 = weight_stream_summary(head);
    CHECK(s3.avg_abs_fg == doctest::Approx(3.0 * s2.avg_abs_fg).epsilon(1e-6));
    CHECK(s3.avg_abs_bg == doctest::Approx(3.0 * s2.avg_abs_bg).epsilon(1e-6));

    for (auto& v : head.theta_fg()) v = 0.f;
    auto s4 = weight_stream_summary(head);
    CHECK(s4.avg_abs_fg == 0.0);
    CHECK(s4.avg_abs_bg > 0.0);
}

TEST_CASE("robustness_curve: no-op grid, counting, permutation invariance") {
    data::DatasetMeta meta;
    meta.class_count = 3;
    auto ds = data::generate_synthetic(meta, 8, 11);

    model::ArchConfig arch;
    arch.channels = {4};
    arch.output_dim = 8;
    auto a = model::build_classifier(model::Kind::foreground, arch, 3, 1);
    auto b = model::build_classifier(model::Kind::background, arch, 3, 2);

    auto batch = data::make_batch(ds);
    const double ca = model::accuracy(a, batch.images, batch.labels);
    const double cb = model::accuracy(b, batch.images, batch.labels);

    auto curve = robustness_curve({&a, &b}, {"a", "b"}, ds, RobustnessCurve::Axis::sigma, {0.f});
    CHECK(curve.accuracy[0][0] == doctest::Approx(ca));
    CHECK(curve.accuracy[1][0] == doctest::Approx(cb));

    auto swapped =
        robustness_curve({&b, &a}, {"b", "a"}, ds, RobustnessCurve::Axis::sigma, {0.f});
    CHECK(swapped.accuracy[0][0] == curve.accuracy[1][0]);
    CHECK(swapped.accuracy[1][0] == curve.accuracy[0][0]);

    // epsilon axis with a source, at eps 0, equals clean accuracy as well
    auto eps_curve = robustness_curve({&a, &b}, {"a", "b"}, ds, RobustnessCurve::Axis::epsilon,
                                      {0.f, 0.1f}, &a);
    CHECK(eps_curve.accuracy[0][0] == doctest::Approx(ca));
    CHECK(eps_curve.accuracy[1][0] == doctest::Approx(cb));

    // single-sample dataset: every entry is 0 or 1
    data::Dataset one;
    one.meta = ds.meta;
    one.samples.push_back(ds.samples[0]);
    auto c1 = robustness_curve({&a}, {"a"}, one, RobustnessCurve::Axis::sigma, {0.f, 1.f});
    for (double v : c1.accuracy[0]) CHECK((v == 0.0 || v == 1.0));

    CHECK_THROWS_AS(robustness_curve({}, {}, ds, RobustnessCurve::Axis::sigma, {0.f}),
                    ConfigError);
    CHECK_THROWS_AS(robustness_curve({&a}, {"a"}, ds, RobustnessCurve::Axis::sigma, {}),
                    ConfigError);
    CHECK_THROWS_AS(
        robustness_curve({&a}, {"a"}, ds, RobustnessCurve::Axis::sigma, {0.5f, 0.5f}),
        ConfigError);
    CHECK_THROWS_AS(
        robustness_curve({&a}, {"a"}, ds, RobustnessCurve::Axis::epsilon, {0.f}, nullptr),
        ConfigError);
}

TEST_CASE("curve CSV and SVG formatting") {
    RobustnessCurve curve;
    curve.axis = RobustnessCurve::Axis::sigma;
    curve.grid = {0.f, 1.f, 5.f};
    curve.model_names = {"foreground", "joint"};
    curve.accuracy = {{0.9125, 0.5, 0.25}, {0.95, 0.875, 0.8}};
    curve.sample_count = 80;

    auto csv = curve_csv(curve, {"config_hash=abc123"});
    CHECK(csv.find("# config_hash=abc123\n") != std::string::npos);
    CHECK(csv.find("strength,foreground,joint\n") != std::string::npos);
    CHECK(csv.find("0,0.9125,0.9500\n") != std::string::npos);
    CHECK(csv.find("5,0.2500,0.8000\n") != std::string::npos);

    auto svg = curve_svg(curve, "blur robustness");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("blur robustness") != std::string::npos);
    CHECK(svg.find("foreground") != std::string::npos);
}
