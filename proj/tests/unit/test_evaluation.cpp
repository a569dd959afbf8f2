#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "poselift/errors.hpp"
#include "poselift/evaluation.hpp"
#include "poselift/rng.hpp"

using namespace poselift;

namespace {

Eigen::MatrixXd mat(const Tensor& t) { return testutil::to_eigen(t); }

Tensor tensor(const Eigen::MatrixXd& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.at(i, j) = m(i, j);
    return t;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized().toRotationMatrix();
}

Tensor random_pose(Rng& rng, std::size_t J = 17, double scale = 300.0) {
    Tensor t = rng.normal_tensor({J, 3});
    for (double& v : t.data()) v *= scale;
    return t;
}

// Sum of squared residuals after the best scale and translation for a fixed rotation.
double residual_for_rotation(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Eigen::Matrix3d& R) {
    const Eigen::RowVector3d mx = X.colwise().mean(), my = Y.colwise().mean();
    const Eigen::MatrixXd Xc = (X.rowwise() - mx) * R.transpose();
    const Eigen::MatrixXd Yc = Y.rowwise() - my;
    // a negative scale would be a reflection in disguise
    const double s = std::max(0.0, (Xc.array() * Yc.array()).sum() / Xc.squaredNorm());
    return (s * Xc - Yc).squaredNorm();
}

double squared_residual(const Tensor& a, const Tensor& b) { return (mat(a) - mat(b)).squaredNorm(); }

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("mpjpe examples") {
    const Tensor zero({17, 3}, 0.0);
    CHECK(mpjpe(zero, zero) == 0.0);

    Tensor shifted = zero;
    shifted.at(4, 0) = 3.0;
    shifted.at(4, 1) = 4.0;
    CHECK(mpjpe(shifted, zero) == doctest::Approx(5.0 / 17.0));

    Tensor all = zero;
    for (std::size_t j = 0; j < 17; ++j) all.at(j, 2) = 10.0;
    CHECK(mpjpe(all, zero) == 10.0);

    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = random_pose(rng), b = random_pose(rng);
        double brute = 0.0;
        for (std::size_t j = 0; j < 17; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < 3; ++c) d2 += (a.at(j, c) - b.at(j, c)) * (a.at(j, c) - b.at(j, c));
            brute += std::sqrt(d2);
        }
        CHECK(mpjpe(a, b) == doctest::Approx(brute / 17.0).epsilon(1e-13));
        CHECK(mpjpe(a, b) == doctest::Approx(mpjpe(b, a)).epsilon(1e-13));
        const Tensor c = random_pose(rng);
        CHECK(mpjpe(a, c) <= mpjpe(a, b) + mpjpe(b, c) + 1e-9);
    }
    CHECK_THROWS_AS(mpjpe(Tensor({17, 3}), Tensor({16, 3})), ShapeError);
    CHECK_THROWS_AS(mpjpe(Tensor({17, 2}), Tensor({17, 2})), ShapeError);
}

TEST_CASE("root_relative") {
    Rng rng(2);
    const Tensor p = random_pose(rng);
    const Tensor r = root_relative(p);
    for (std::size_t c = 0; c < 3; ++c) CHECK(r.at(0, c) == 0.0);
    CHECK(r.at(5, 1) == p.at(5, 1) - p.at(0, 1));
}

TEST_CASE("p_mpjpe is invariant to similarity transforms") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor gt = random_pose(rng);
        const Eigen::Matrix3d R = random_rotation(rng);
        const double s = rng.uniform(0.2, 5.0);
        const Eigen::RowVector3d t(rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-500, 500));
        const Tensor moved = tensor((s * mat(gt) * R.transpose()).rowwise() + t);
        CHECK(p_mpjpe(moved, gt) < 1e-8);
        CHECK(mpjpe(moved, gt) > 1.0);
    }
}

TEST_CASE("p_mpjpe uses a proper rotation") {
    Rng rng(4);
    const Tensor gt = random_pose(rng);
    Tensor mirrored = gt;
    for (std::size_t j = 0; j < 17; ++j) mirrored.at(j, 0) = -mirrored.at(j, 0);
    CHECK(p_mpjpe(mirrored, gt) > 1.0);
}

TEST_CASE("procrustes alignment beats every other rotation") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor pred = random_pose(rng), gt = random_pose(rng);
        const double best = squared_residual(procrustes_align(pred, gt), gt);
        for (int k = 0; k < 300; ++k) CHECK(best <= residual_for_rotation(mat(pred), mat(gt), random_rotation(rng)) + 1e-6);
        CHECK(p_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9);
    }
}

TEST_CASE("p_mpjpe rejects degenerate ground truth") {
    Tensor gt({17, 3}, 0.0);
    for (std::size_t j = 0; j < 17; ++j)
        for (std::size_t c = 0; c < 3; ++c) gt.at(j, c) = 7.0;
    CHECK_THROWS_AS(p_mpjpe(Tensor({17, 3}, 1.0), gt), ValidationError);
}

TEST_CASE("pck and auc") {
    const std::vector<double> zeros(17, 0.0);
    CHECK(pck(zeros, 0.0) == 100.0);
    CHECK(pck(zeros) == 100.0);
    CHECK(auc(zeros) == 100.0);

    const std::vector<double> near(17, 149.0);
    CHECK(pck(near) == 100.0);
    // only the 150 mm threshold admits 149 mm
    CHECK(auc(near) == doctest::Approx(100.0 / 31.0));

    const std::vector<double> on(17, 150.0);
    CHECK(pck(on) == 0.0);

    std::vector<double> mixed;
    for (int i = 0; i < 10; ++i) mixed.push_back(i * 40.0);
    CHECK(pck(mixed) == doctest::Approx(40.0));
    double expected = 0.0;
    for (int k = 0; k <= 30; ++k) {
        int below = 0;
        for (double e : mixed) below += e == 0.0 || e < 5.0 * k;
        expected += 10.0 * below;
    }
    CHECK(auc(mixed) == doctest::Approx(expected / 31.0));

    Rng rng(6);
    std::vector<double> errs;
    for (int i = 0; i < 200; ++i) errs.push_back(rng.uniform(0.0, 250.0));
    double prev = -1.0;
    for (double th = 0.0; th <= 300.0; th += 2.5) {
        const double p = pck(errs, th);
        CHECK(p >= prev);
        prev = p;
    }
    CHECK(auc(errs) >= 0.0);
    CHECK(auc(errs) <= 100.0);
    CHECK_THROWS_AS(pck(std::vector<double>{}), ValidationError);
}

TEST_CASE("aggregate_hypotheses") {
    Tensor hyps({3, 2, 3}, 0.0);
    for (std::size_t i = 0; i < 6; ++i) {
        hyps[i] = 1.0;
        hyps[6 + i] = 2.0;
        hyps[12 + i] = 6.0;
    }
    const Tensor gt({2, 3}, 2.2);
    const AggregatedPose a = aggregate_hypotheses(hyps, &gt);
    CHECK(a.mean_pose == Tensor({2, 3}, 3.0));
    CHECK(a.best_index == std::optional<std::size_t>(1));
    CHECK_FALSE(aggregate_hypotheses(hyps).best_index.has_value());
    CHECK_THROWS_AS(aggregate_hypotheses(Tensor({2, 3})), ShapeError);
}

TEST_CASE("evaluate on exact predictions") {
    const Skeleton sk = default_skeleton();
    const auto records = synth_dataset(6, sk, 1);
    std::map<std::string, Tensor> hyps;
    for (const auto& r : records) {
        Tensor h({2, 17, 3});
        std::copy(r.y->data().begin(), r.y->data().end(), h.data().begin());
        std::copy(r.y->data().begin(), r.y->data().end(), h.data().begin() + 51);
        hyps[r.id] = h;
    }
    const MetricReport rep = evaluate(records, hyps);
    CHECK(rep.mpjpe_mean_hyp == 0.0);
    CHECK(rep.mpjpe_best_hyp == 0.0);
    CHECK(rep.mpjpe_mean_pose == 0.0);
    CHECK(rep.p_mpjpe < 1e-9);
    CHECK(rep.pck150 == 100.0);
    CHECK(rep.auc == 100.0);
    CHECK(rep.records == 6);
    CHECK(rep.hypotheses == 2);
}

TEST_CASE("evaluate ordering of hypothesis metrics") {
    const Skeleton sk = default_skeleton();
    const auto records = synth_dataset(8, sk, 2);
    Rng rng(7);
    std::map<std::string, Tensor> hyps;
    for (const auto& r : records) {
        Tensor h = rng.normal_tensor({5, 17, 3});
        for (std::size_t k = 0; k < 5; ++k)
            for (std::size_t i = 0; i < 51; ++i) h[k * 51 + i] = h[k * 51 + i] * 30.0 + (*r.y)[i];
        hyps[r.id] = h;
    }
    const MetricReport rep = evaluate(records, hyps);
    CHECK(rep.mpjpe_best_hyp <= rep.mpjpe_mean_hyp);
    // the mean pose is never worse than the average hypothesis (convexity)
    CHECK(rep.mpjpe_mean_pose <= rep.mpjpe_mean_hyp + 1e-9);
    CHECK(rep.p_mpjpe <= rep.mpjpe_mean_pose + 1e-9);
    CHECK(rep.all_finite());

    // root translation of predictions does not matter
    std::map<std::string, Tensor> shifted = hyps;
    for (auto& [id, h] : shifted)
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += (i % 3 == 0 ? 1000.0 : -250.0);
    const MetricReport rep2 = evaluate(records, shifted);
    CHECK(rep2.mpjpe_mean_hyp == doctest::Approx(rep.mpjpe_mean_hyp));
    CHECK(rep2.mpjpe_best_hyp == doctest::Approx(rep.mpjpe_best_hyp));

    const nlohmann::json j = rep.to_json();
    CHECK(j["mpjpe_mean_hyp"].get<double>() == rep.mpjpe_mean_hyp);
    CHECK(j["auc"].get<double>() == rep.auc);
    CHECK(j["records"].get<std::size_t>() == 8);
    const std::string text = rep.to_text();
    CHECK(text.find("mpjpe_best_hyp") != std::string::npos);
    CHECK(text.find("pck150") != std::string::npos);
}

TEST_CASE("evaluate rejects mismatched ids") {
    const Skeleton sk = default_skeleton();
    const auto records = synth_dataset(3, sk, 3);
    std::map<std::string, Tensor> hyps;
    hyps[records[0].id] = Tensor({1, 17, 3});
    hyps[records[1].id] = Tensor({1, 17, 3});
    try {
        evaluate(records, hyps);
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(records[2].id) != std::string::npos);
    }
    hyps[records[2].id] = Tensor({1, 17, 3});
    hyps["stranger"] = Tensor({1, 17, 3});
    CHECK_THROWS_WITH_AS(evaluate(records, hyps), doctest::Contains("stranger"), ValidationError);
}

TEST_CASE("records and predictions round trip") {
    const Skeleton sk = default_skeleton();
    auto records = synth_dataset(4, sk, 4, 2.0);
    records[3].y.reset();
    const auto dir = testutil::temp_dir("records");
    save_records(records, dir / "r.jsonl");
    CHECK(load_records(dir / "r.jsonl", sk) == records);

    Rng rng(8);
    std::vector<Tensor> hyps;
    for (std::size_t i = 0; i < 4; ++i) hyps.push_back(rng.normal_tensor({3, 17, 3}));
    save_predictions(records, hyps, dir / "p.jsonl");
    const auto back = load_predictions(dir / "p.jsonl", sk);
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(back.at(records[i].id) == hyps[i]);
}

TEST_CASE("record loading errors") {
    const Skeleton sk = default_skeleton();
    const auto dir = testutil::temp_dir("records_bad");
    std::string joints16 = "[";
    for (int j = 0; j < 16; ++j) joints16 += std::string(j ? "," : "") + "[0,0]";
    joints16 += "]";
    testutil::write_file(dir / "short.jsonl", "{\"id\":\"a\",\"x\":" + joints16 + "}\n");
    CHECK_THROWS_WITH_AS(load_records(dir / "short.jsonl", sk), doctest::Contains("16 joints"), ValidationError);

    testutil::write_file(dir / "nox.jsonl", "{\"id\":\"a\"}\n");
    CHECK_THROWS_WITH_AS(load_records(dir / "nox.jsonl", sk), doctest::Contains("'x'"), ParseError);

    testutil::write_file(dir / "junk.jsonl", "\n{not json\n");
    CHECK_THROWS_WITH_AS(load_records(dir / "junk.jsonl", sk), doctest::Contains(":2:"), ParseError);

    CHECK_THROWS_AS(load_records(dir / "absent.jsonl", sk), ConfigError);
}

TEST_CASE("synthetic data") {
    const Skeleton sk = default_skeleton();
    const auto a = synth_dataset(20, sk, 5);
    const auto b = synth_dataset(20, sk, 5);
    CHECK(a == b);
    CHECK(synth_dataset(20, sk, 6) != a);

    std::vector<double> bones;
    for (std::size_t j = 1; j < 17; ++j) {
        const std::size_t p = sk.parents()[j];
        Eigen::Vector3d d;
        for (int c = 0; c < 3; ++c) d(c) = a[0].y->at(j, c) - a[0].y->at(p, c);
        bones.push_back(d.norm());
    }
    for (const auto& r : a) {
        REQUIRE(r.y.has_value());
        for (std::size_t c = 0; c < 3; ++c) CHECK(r.y->at(0, c) == 0.0);
        for (std::size_t j = 0; j < 17; ++j)
            for (std::size_t c = 0; c < 2; ++c) CHECK(r.x.at(j, c) == r.y->at(j, c));
        for (std::size_t j = 1; j < 17; ++j) {
            const std::size_t p = sk.parents()[j];
            Eigen::Vector3d d;
            for (int c = 0; c < 3; ++c) d(c) = r.y->at(j, c) - r.y->at(p, c);
            CHECK(d.norm() == doctest::Approx(bones[j - 1]).epsilon(1e-10));
            CHECK(d.norm() > 50.0);
        }
    }
    // poses actually vary
    CHECK(mpjpe(*a[0].y, *a[1].y) > 10.0);

    const auto noisy = synth_dataset(20, sk, 5, 3.0);
    CHECK(noisy[0].y == a[0].y);
    CHECK(noisy[0].x != a[0].x);
}

}  // TEST_SUITE
