#pragma once

#include <span>
#include <string>
#include <vector>

#include "poselift/autograd.hpp"
#include "poselift/skeleton.hpp"

namespace poselift {

// Degrees are clamped below at this value before any inverse square root.
inline constexpr double kDegreeFloor = 1e-8;

// Lambda = D^{-1/2} (A + I) D^{-1/2}; `degrees` are those of A + I.
struct GraphKernel {
    Tensor matrix;
    std::vector<double> degrees;
};

// G = Dv^{-1/2} H M De^{-1} H^T Dv^{-1/2} with M = diag(edge_weights) and
// Dv(i) = sum_e H(i,e) M(e,e).
struct HypergraphKernel {
    Tensor matrix;
    std::vector<double> vertex_degrees;
    std::vector<double> edge_degrees;
    std::vector<double> edge_weights;
};

GraphKernel graph_kernel(const Tensor& adjacency);

std::vector<double> hyperedge_degrees(const Tensor& incidence);
std::vector<double> vertex_degrees(const Tensor& incidence, std::span<const double> edge_weights);

// `joint_names`, when given, is used to name an uncovered joint in errors.
HypergraphKernel hypergraph_kernel(const Tensor& incidence, std::span<const double> edge_weights,
                                   std::span<const std::string> joint_names = {});

// Same kernel as an autograd value of the log edge weights (M = exp(log_m)),
// which keeps M positive under unconstrained optimizer steps.
ag::Var hypergraph_kernel_var(const Tensor& incidence, const ag::Var& log_edge_weights,
                              std::span<const std::string> joint_names = {});

}  // namespace poselift
