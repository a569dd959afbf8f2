#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poselift/skeleton.hpp"
#include "poselift/tensor.hpp"

namespace poselift {

struct PoseRecord {
    std::string id;
    Tensor x;                // [J, 2]
    std::optional<Tensor> y; // [J, 3], millimeters, root-relative
    bool operator==(const PoseRecord&) const = default;
};

// Mean Euclidean distance over joints of two [J, 3] poses (no centering).
double mpjpe(const Tensor& pred, const Tensor& gt);
std::vector<double> joint_errors(const Tensor& pred, const Tensor& gt);

// pred after the optimal similarity transform (rotation, translation,
// uniform scale) onto gt.
Tensor procrustes_align(const Tensor& pred, const Tensor& gt);
double p_mpjpe(const Tensor& pred, const Tensor& gt);

// Subtracts joint `root` from every joint.
Tensor root_relative(const Tensor& pose, std::size_t root = 0);

inline constexpr double kPckThresholdMm = 150.0;
inline constexpr double kAucStepMm = 5.0;

// Percent of joint errors below the threshold. An exact zero error counts at
// every threshold, including 0.
double pck(std::span<const double> errors, double threshold_mm = kPckThresholdMm);
// Mean PCK over thresholds 0, 5, ..., 150 mm (31 points).
double auc(std::span<const double> errors);
double pck(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, double threshold_mm = kPckThresholdMm);
double auc(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);

struct AggregatedPose {
    Tensor mean_pose;                      // [J, 3]
    std::optional<std::size_t> best_index; // argmin MPJPE, when gt is given
};
AggregatedPose aggregate_hypotheses(const Tensor& hyps, const Tensor* gt = nullptr);

// mpjpe_mean_hyp averages per-hypothesis MPJPE, so best <= mean always holds;
// mpjpe_mean_pose scores the per-joint mean pose. P-MPJPE, PCK and AUC use
// the mean pose. Everything is root-relative.
struct MetricReport {
    double mpjpe_mean_hyp = 0.0;
    double mpjpe_best_hyp = 0.0;
    double mpjpe_mean_pose = 0.0;
    double p_mpjpe = 0.0;
    double pck150 = 0.0;
    double auc = 0.0;
    std::size_t records = 0;
    std::size_t hypotheses = 0;

    nlohmann::json to_json() const;
    std::string to_text() const;
    bool all_finite() const;
};

// `hyps` maps record id to a [H, J, 3] tensor in millimeters.
MetricReport evaluate(const std::vector<PoseRecord>& records, const std::map<std::string, Tensor>& hyps,
                      std::size_t root = 0);

std::vector<PoseRecord> load_records(const std::filesystem::path& path, const Skeleton& skeleton);
void save_records(const std::vector<PoseRecord>& records, const std::filesystem::path& path);

// One line per (record, hypothesis): the record fields plus "hyp" and "y_hat".
// `hyps[i]` is [H, J, 3] for records[i].
void save_predictions(const std::vector<PoseRecord>& records, const std::vector<Tensor>& hyps,
                      const std::filesystem::path& path);
std::map<std::string, Tensor> load_predictions(const std::filesystem::path& path, const Skeleton& skeleton);

// Poses from bounded joint-angle perturbations of a rest pose along the
// kinematic tree (bone lengths fixed), plus a random heading. x is the
// orthographic projection (first two coordinates) plus optional N(0, noise_2d^2)
// pixel noise.
std::vector<PoseRecord> synth_dataset(std::size_t n, const Skeleton& skeleton, std::uint64_t seed,
                                      double noise_2d = 0.0);

}  // namespace poselift
