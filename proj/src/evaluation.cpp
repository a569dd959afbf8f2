#include "poselift/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "poselift/errors.hpp"
#include "poselift/rng.hpp"

namespace poselift {

using nlohmann::json;

namespace {

using PoseMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

void check_pose_pair(const Tensor& pred, const Tensor& gt, const char* who) {
    if (pred.shape() != gt.shape() || pred.rank() != 2 || pred.dim(1) != 3)
        throw ShapeError(std::string(who) + ": poses must both be [J, 3], got " + to_string(pred.shape()) + " and " +
                         to_string(gt.shape()));
}

PoseMatrix as_matrix(const Tensor& t) {
    return Eigen::Map<const PoseMatrix>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), 3);
}

std::string dump_number(double v) { return json(v).dump(); }

}  // namespace

std::vector<double> joint_errors(const Tensor& pred, const Tensor& gt) {
    check_pose_pair(pred, gt, "joint_errors");
    std::vector<double> out(pred.dim(0));
    for (std::size_t j = 0; j < out.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = pred.at(j, c) - gt.at(j, c);
            s += d * d;
        }
        out[j] = std::sqrt(s);
    }
    return out;
}

double mpjpe(const Tensor& pred, const Tensor& gt) {
    const auto e = joint_errors(pred, gt);
    double s = 0.0;
    for (double v : e) s += v;
    return s / static_cast<double>(e.size());
}

Tensor procrustes_align(const Tensor& pred, const Tensor& gt) {
    check_pose_pair(pred, gt, "p_mpjpe");
    const PoseMatrix X = as_matrix(gt);
    const PoseMatrix Y = as_matrix(pred);
    const Eigen::RowVector3d mu_x = X.colwise().mean();
    const Eigen::RowVector3d mu_y = Y.colwise().mean();
    PoseMatrix X0 = X.rowwise() - mu_x;
    PoseMatrix Y0 = Y.rowwise() - mu_y;
    const double norm_x = X0.norm();
    const double norm_y = Y0.norm();
    if (norm_x == 0.0) throw ValidationError("p_mpjpe: ground-truth joints all coincide");

    PoseMatrix aligned(X.rows(), 3);
    if (norm_y == 0.0) {
        aligned = mu_x.replicate(X.rows(), 1);
    } else {
        X0 /= norm_x;
        Y0 /= norm_y;
        const Eigen::Matrix3d M = X0.transpose() * Y0;
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::Matrix3d U = svd.matrixU();
        Eigen::Matrix3d V = svd.matrixV();
        Eigen::Vector3d S = svd.singularValues();
        Eigen::Matrix3d R = V * U.transpose();
        if (R.determinant() < 0.0) {
            // no reflections
            V.col(2) *= -1.0;
            S(2) *= -1.0;
            R = V * U.transpose();
        }
        const double scale = S.sum() * norm_x / norm_y;
        const Eigen::RowVector3d shift = mu_x - scale * mu_y * R;
        aligned = (scale * Y * R).rowwise() + shift;
    }
    Tensor out(pred.shape());
    Eigen::Map<PoseMatrix>(out.data().data(), aligned.rows(), 3) = aligned;
    return out;
}

double p_mpjpe(const Tensor& pred, const Tensor& gt) { return mpjpe(procrustes_align(pred, gt), gt); }

Tensor root_relative(const Tensor& pose, std::size_t root) {
    if (pose.rank() != 2 || root >= pose.dim(0)) throw ShapeError("root_relative: bad pose " + to_string(pose.shape()));
    Tensor out = pose;
    for (std::size_t j = 0; j < pose.dim(0); ++j)
        for (std::size_t c = 0; c < pose.dim(1); ++c) out.at(j, c) -= pose.at(root, c);
    return out;
}

double pck(std::span<const double> errors, double threshold) {
    if (errors.empty()) throw ValidationError("pck: empty error set");
    std::size_t hit = 0;
    for (double e : errors)
        if (e < threshold || e == 0.0) ++hit;
    return 100.0 * static_cast<double>(hit) / static_cast<double>(errors.size());
}

double auc(std::span<const double> errors) {
    constexpr int kPoints = static_cast<int>(kPckThresholdMm / kAucStepMm) + 1;
    double s = 0.0;
    for (int i = 0; i < kPoints; ++i) s += pck(errors, kAucStepMm * i);
    return s / kPoints;
}

namespace {
std::vector<double> pooled_errors(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    if (preds.size() != gts.size()) throw ShapeError("prediction and ground-truth sets differ in length");
    std::vector<double> all;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto e = joint_errors(preds[i], gts[i]);
        all.insert(all.end(), e.begin(), e.end());
    }
    return all;
}
}  // namespace

double pck(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, double threshold) {
    return pck(pooled_errors(preds, gts), threshold);
}

double auc(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) { return auc(pooled_errors(preds, gts)); }

AggregatedPose aggregate_hypotheses(const Tensor& hyps, const Tensor* gt) {
    if (hyps.rank() != 3 || hyps.dim(2) != 3) throw ShapeError("aggregate_hypotheses: expected [H, J, 3], got " + to_string(hyps.shape()));
    const std::size_t H = hyps.dim(0), J = hyps.dim(1);
    AggregatedPose out{Tensor({J, 3}), std::nullopt};
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < J * 3; ++i) out.mean_pose[i] += hyps[h * J * 3 + i];
    for (double& v : out.mean_pose.data()) v /= static_cast<double>(H);
    if (gt) {
        double best = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
            Tensor pose({J, 3}, std::vector<double>(hyps.data().begin() + h * J * 3, hyps.data().begin() + (h + 1) * J * 3));
            const double e = mpjpe(pose, *gt);
            if (!out.best_index || e < best) {
                best = e;
                out.best_index = h;
            }
        }
    }
    return out;
}

json MetricReport::to_json() const {
    return json{{"mpjpe_mean_hyp", mpjpe_mean_hyp}, {"mpjpe_best_hyp", mpjpe_best_hyp}, {"mpjpe_mean_pose", mpjpe_mean_pose},
                {"p_mpjpe", p_mpjpe},             {"pck150", pck150},                {"auc", auc},
                {"records", records},             {"hypotheses", hypotheses}};
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os << "records          " << records << '\n'
       << "hypotheses       " << hypotheses << '\n'
       << "mpjpe_mean_hyp   " << dump_number(mpjpe_mean_hyp) << " mm\n"
       << "mpjpe_best_hyp   " << dump_number(mpjpe_best_hyp) << " mm\n"
       << "mpjpe_mean_pose  " << dump_number(mpjpe_mean_pose) << " mm\n"
       << "p_mpjpe          " << dump_number(p_mpjpe) << " mm\n"
       << "pck150           " << dump_number(pck150) << " %\n"
       << "auc              " << dump_number(auc) << " %\n";
    return os.str();
}

bool MetricReport::all_finite() const {
    for (double v : {mpjpe_mean_hyp, mpjpe_best_hyp, mpjpe_mean_pose, p_mpjpe, pck150, auc})
        if (!std::isfinite(v)) return false;
    return true;
}

MetricReport evaluate(const std::vector<PoseRecord>& records, const std::map<std::string, Tensor>& hyps,
                      std::size_t root) {
    std::vector<const PoseRecord*> scored;
    std::vector<std::string> missing;
    std::set<std::string> ids;
    for (const auto& r : records) {
        ids.insert(r.id);
        if (!r.y) continue;
        if (!hyps.count(r.id)) missing.push_back(r.id);
        scored.push_back(&r);
    }
    std::vector<std::string> unknown;
    for (const auto& [id, _] : hyps)
        if (!ids.count(id)) unknown.push_back(id);
    if (!missing.empty() || !unknown.empty()) {
        std::string msg = "prediction ids do not match records;";
        if (!missing.empty()) {
            msg += " without predictions:";
            for (const auto& id : missing) msg += " " + id;
            msg += ";";
        }
        if (!unknown.empty()) {
            msg += " unknown ids:";
            for (const auto& id : unknown) msg += " " + id;
        }
        throw ValidationError(msg);
    }
    if (scored.empty()) throw ValidationError("no records with ground truth to evaluate");
    std::sort(scored.begin(), scored.end(), [](const PoseRecord* a, const PoseRecord* b) { return a->id < b->id; });

    struct PerRecord {
        double mean_hyp = 0.0, best_hyp = 0.0, mean_pose = 0.0, p_mpjpe = 0.0;
        std::vector<double> errors;
        std::size_t hypotheses = 0;
    };
    std::vector<PerRecord> per(scored.size());
    const long n = static_cast<long>(scored.size());
    // Per-record work is independent; the reduction below runs in id order.
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        const PoseRecord& r = *scored[i];
        const Tensor& h = hyps.at(r.id);
        const Tensor gt = root_relative(*r.y, root);
        const std::size_t H = h.dim(0), J = h.dim(1);
        PerRecord& out = per[i];
        out.hypotheses = H;
        out.best_hyp = 0.0;
        for (std::size_t k = 0; k < H; ++k) {
            Tensor pose({J, 3}, std::vector<double>(h.data().begin() + k * J * 3, h.data().begin() + (k + 1) * J * 3));
            const double e = mpjpe(root_relative(pose, root), gt);
            out.mean_hyp += e;
            out.best_hyp = k == 0 ? e : std::min(out.best_hyp, e);
        }
        out.mean_hyp /= static_cast<double>(H);
        const Tensor mean_pose = root_relative(aggregate_hypotheses(h).mean_pose, root);
        out.errors = joint_errors(mean_pose, gt);
        out.mean_pose = mpjpe(mean_pose, gt);
        out.p_mpjpe = p_mpjpe(mean_pose, gt);
    }

    MetricReport report;
    report.records = scored.size();
    std::vector<double> all_errors;
    for (const auto& p : per) {
        report.mpjpe_mean_hyp += p.mean_hyp;
        report.mpjpe_best_hyp += p.best_hyp;
        report.mpjpe_mean_pose += p.mean_pose;
        report.p_mpjpe += p.p_mpjpe;
        report.hypotheses = std::max(report.hypotheses, p.hypotheses);
        all_errors.insert(all_errors.end(), p.errors.begin(), p.errors.end());
    }
    const double count = static_cast<double>(scored.size());
    report.mpjpe_mean_hyp /= count;
    report.mpjpe_best_hyp /= count;
    report.mpjpe_mean_pose /= count;
    report.p_mpjpe /= count;
    report.pck150 = pck(all_errors);
    report.auc = auc(all_errors);
    return report;
}

namespace {

json pose_to_json(const Tensor& t) {
    json rows = json::array();
    for (std::size_t j = 0; j < t.dim(0); ++j) {
        json row = json::array();
        for (std::size_t c = 0; c < t.dim(1); ++c) row.push_back(t.at(j, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Tensor pose_from_json(const json& j, std::size_t J, std::size_t width, const std::string& ctx) {
    if (!j.is_array()) throw ParseError(ctx + ": expected a list of joints");
    if (j.size() != J)
        throw ValidationError(ctx + ": has " + std::to_string(j.size()) + " joints, skeleton has " + std::to_string(J));
    Tensor t({J, width});
    for (std::size_t r = 0; r < J; ++r) {
        if (!j[r].is_array() || j[r].size() != width)
            throw ParseError(ctx + ": joint " + std::to_string(r) + " needs " + std::to_string(width) + " coordinates");
        for (std::size_t c = 0; c < width; ++c) {
            if (!j[r][c].is_number()) throw ParseError(ctx + ": non-numeric coordinate at joint " + std::to_string(r));
            t.at(r, c) = j[r][c].get<double>();
        }
    }
    if (!t.all_finite()) throw ValidationError(ctx + ": non-finite coordinate");
    return t;
}

json record_to_json(const PoseRecord& r) {
    json j{{"id", r.id}, {"x", pose_to_json(r.x)}};
    if (r.y) j["y"] = pose_to_json(*r.y);
    return j;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F f) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object()) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected an object");
        if (!j.contains("id") || !j["id"].is_string())
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing string field 'id'");
        f(j, path.string() + ":" + std::to_string(lineno) + " (record '" + j["id"].get<std::string>() + "')");
    }
}

}  // namespace

std::vector<PoseRecord> load_records(const std::filesystem::path& path, const Skeleton& skeleton) {
    std::vector<PoseRecord> out;
    std::set<std::string> ids;
    const std::size_t J = skeleton.num_joints();
    for_each_line(path, [&](const json& j, const std::string& ctx) {
        PoseRecord r;
        r.id = j["id"].get<std::string>();
        if (!ids.insert(r.id).second) throw ValidationError(ctx + ": duplicate id");
        if (!j.contains("x")) throw ParseError(ctx + ": missing field 'x'");
        r.x = pose_from_json(j["x"], J, 2, ctx + " field 'x'");
        if (j.contains("y") && !j["y"].is_null()) r.y = pose_from_json(j["y"], J, 3, ctx + " field 'y'");
        out.push_back(std::move(r));
    });
    return out;
}

void save_records(const std::vector<PoseRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

void save_predictions(const std::vector<PoseRecord>& records, const std::vector<Tensor>& hyps,
                      const std::filesystem::path& path) {
    if (records.size() != hyps.size()) throw ShapeError("save_predictions: one hypothesis set per record required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Tensor& h = hyps[i];
        const std::size_t J = h.dim(1);
        for (std::size_t k = 0; k < h.dim(0); ++k) {
            json j = record_to_json(records[i]);
            j["hyp"] = k;
            Tensor pose({J, 3}, std::vector<double>(h.data().begin() + k * J * 3, h.data().begin() + (k + 1) * J * 3));
            j["y_hat"] = pose_to_json(pose);
            out << j.dump() << '\n';
        }
    }
}

std::map<std::string, Tensor> load_predictions(const std::filesystem::path& path, const Skeleton& skeleton) {
    const std::size_t J = skeleton.num_joints();
    std::map<std::string, std::map<std::size_t, Tensor>> by_id;
    for_each_line(path, [&](const json& j, const std::string& ctx) {
        if (!j.contains("hyp") || !j["hyp"].is_number_unsigned()) throw ParseError(ctx + ": missing field 'hyp'");
        if (!j.contains("y_hat")) throw ParseError(ctx + ": missing field 'y_hat'");
        const auto h = j["hyp"].get<std::size_t>();
        auto& slot = by_id[j["id"].get<std::string>()];
        if (!slot.emplace(h, pose_from_json(j["y_hat"], J, 3, ctx + " field 'y_hat'")).second)
            throw ValidationError(ctx + ": duplicate hypothesis " + std::to_string(h));
    });
    std::map<std::string, Tensor> out;
    for (auto& [id, poses] : by_id) {
        const std::size_t H = poses.size();
        Tensor t({H, J, 3});
        std::size_t k = 0;
        for (auto& [h, pose] : poses) {
            if (h != k) throw ValidationError(path.string() + ": record '" + id + "' hypotheses are not numbered 0.." + std::to_string(H - 1));
            std::copy(pose.data().begin(), pose.data().end(), t.data().begin() + k * J * 3);
            ++k;
        }
        out.emplace(id, std::move(t));
    }
    return out;
}

namespace {

using Mat3 = Eigen::Matrix3d;

Mat3 rotation_xyz(double rx, double ry, double rz) {
    return (Eigen::AngleAxisd(rz, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(ry, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(rx, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

// Rest-pose bone vectors (child relative to parent) in millimeters; y is up,
// z is depth.
Eigen::Vector3d rest_offset(const std::string& name) {
    static const std::map<std::string, Eigen::Vector3d> table = {
        {"rhip", {-130, 0, 0}},     {"rknee", {0, -450, 0}},  {"rfoot", {0, -440, 0}},
        {"lhip", {130, 0, 0}},      {"lknee", {0, -450, 0}},  {"lfoot", {0, -440, 0}},
        {"spine", {0, 230, 0}},     {"thorax", {0, 250, 0}},  {"neck", {0, 100, 0}},
        {"head", {0, 120, 0}},      {"lshoulder", {150, 0, 0}}, {"lelbow", {0, -280, 0}},
        {"lwrist", {0, -250, 0}},   {"rshoulder", {-150, 0, 0}}, {"relbow", {0, -280, 0}},
        {"rwrist", {0, -250, 0}},
    };
    const auto it = table.find(name);
    return it != table.end() ? it->second : Eigen::Vector3d(0, -150, 0);
}

}  // namespace

std::vector<PoseRecord> synth_dataset(std::size_t n, const Skeleton& skeleton, std::uint64_t seed, double noise_2d) {
    if (n < 1) throw ConfigError("synth_dataset: need at least one record");
    constexpr double kJointRange = 0.35;   // radians per local Euler angle
    constexpr double kHeadingRange = std::numbers::pi / 4;
    const std::size_t J = skeleton.num_joints();
    const auto& parents = skeleton.parents();
    std::vector<PoseRecord> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        Rng rng(seed, 0x5e17, s);
        std::vector<Mat3> frame(J);
        std::vector<Eigen::Vector3d> pos(J, Eigen::Vector3d::Zero());
        frame[skeleton.root()] = rotation_xyz(0.0, rng.uniform(-kHeadingRange, kHeadingRange), 0.0);
        for (std::size_t j : skeleton.topological_order()) {
            if (j == skeleton.root()) continue;
            const Mat3 local = rotation_xyz(rng.uniform(-kJointRange, kJointRange), rng.uniform(-kJointRange, kJointRange),
                                            rng.uniform(-kJointRange, kJointRange));
            frame[j] = frame[parents[j]] * local;
            pos[j] = pos[parents[j]] + frame[j] * rest_offset(skeleton.name(j));
        }
        PoseRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "synth-%06zu", s);
        r.id = id;
        Tensor y({J, 3}), x({J, 2});
        for (std::size_t j = 0; j < J; ++j) {
            for (int c = 0; c < 3; ++c) y.at(j, c) = pos[j](c);
            for (int c = 0; c < 2; ++c) x.at(j, c) = pos[j](c) + (noise_2d > 0.0 ? noise_2d * rng.normal() : 0.0);
        }
        r.x = std::move(x);
        r.y = std::move(y);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace poselift
