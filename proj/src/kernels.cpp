#include "poselift/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "poselift/errors.hpp"

namespace poselift {
namespace {

void check_incidence(const Tensor& h, std::span<const std::string> names) {
    if (h.rank() != 2) throw ShapeError("incidence must be a J x E matrix, got " + to_string(h.shape()));
    const std::size_t J = h.dim(0), E = h.dim(1);
    for (double v : h.data())
        if (v != 0.0 && v != 1.0) throw ValidationError("incidence entries must be 0 or 1");
    for (std::size_t e = 0; e < E; ++e) {
        double col = 0.0;
        for (std::size_t i = 0; i < J; ++i) col += h.at(i, e);
        if (col < 1.0) throw ValidationError("hyperedge " + std::to_string(e) + " has no members");
    }
    for (std::size_t i = 0; i < J; ++i) {
        double row = 0.0;
        for (std::size_t e = 0; e < E; ++e) row += h.at(i, e);
        if (row < 1.0) {
            const std::string who = i < names.size() ? "'" + names[i] + "'" : std::to_string(i);
            throw ValidationError("joint " + who + " belongs to no hyperedge");
        }
    }
}

// Shared assembly; returns G and fills the intermediates the backward needs.
struct Assembly {
    Tensor g;
    std::vector<double> dv, de, weights, inv_sqrt_dv;
    std::vector<bool> clamped;
};

Assembly assemble(const Tensor& h, std::span<const double> weights) {
    const std::size_t J = h.dim(0), E = h.dim(1);
    if (weights.size() != E)
        throw ShapeError("edge weight count " + std::to_string(weights.size()) + " does not match " + std::to_string(E) +
                         " hyperedges");
    Assembly a;
    a.weights.assign(weights.begin(), weights.end());
    a.de = hyperedge_degrees(h);
    a.dv.assign(J, 0.0);
    a.clamped.assign(J, false);
    a.inv_sqrt_dv.assign(J, 0.0);
    for (std::size_t i = 0; i < J; ++i) {
        for (std::size_t e = 0; e < E; ++e) a.dv[i] += h.at(i, e) * weights[e];
        if (a.dv[i] < kDegreeFloor) {
            a.dv[i] = kDegreeFloor;
            a.clamped[i] = true;
        }
        a.inv_sqrt_dv[i] = 1.0 / std::sqrt(a.dv[i]);
    }
    a.g = Tensor({J, J});
    for (std::size_t i = 0; i < J; ++i)
        for (std::size_t j = 0; j < J; ++j) {
            double p = 0.0;
            for (std::size_t e = 0; e < E; ++e) p += h.at(i, e) * h.at(j, e) * weights[e] / std::max(a.de[e], kDegreeFloor);
            a.g.at(i, j) = a.inv_sqrt_dv[i] * a.inv_sqrt_dv[j] * p;
        }
    return a;
}

}  // namespace

GraphKernel graph_kernel(const Tensor& adj) {
    if (adj.rank() != 2 || adj.dim(0) != adj.dim(1))
        throw ShapeError("adjacency must be square, got " + to_string(adj.shape()));
    const std::size_t J = adj.dim(0);
    for (std::size_t i = 0; i < J; ++i) {
        if (adj.at(i, i) != 0.0) throw ValidationError("adjacency has a nonzero diagonal at " + std::to_string(i));
        for (std::size_t j = 0; j < i; ++j)
            if (adj.at(i, j) != adj.at(j, i))
                throw ValidationError("adjacency is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
    GraphKernel k{Tensor({J, J}), std::vector<double>(J, 0.0)};
    for (std::size_t i = 0; i < J; ++i) {
        k.degrees[i] = 1.0;
        for (std::size_t j = 0; j < J; ++j) k.degrees[i] += adj.at(i, j);
    }
    for (std::size_t i = 0; i < J; ++i)
        for (std::size_t j = 0; j < J; ++j) {
            const double a = adj.at(i, j) + (i == j ? 1.0 : 0.0);
            k.matrix.at(i, j) = a / std::sqrt(std::max(k.degrees[i], kDegreeFloor) * std::max(k.degrees[j], kDegreeFloor));
        }
    return k;
}

std::vector<double> hyperedge_degrees(const Tensor& h) {
    std::vector<double> de(h.dim(1), 0.0);
    for (std::size_t i = 0; i < h.dim(0); ++i)
        for (std::size_t e = 0; e < h.dim(1); ++e) de[e] += h.at(i, e);
    return de;
}

std::vector<double> vertex_degrees(const Tensor& h, std::span<const double> weights) {
    std::vector<double> dv(h.dim(0), 0.0);
    for (std::size_t i = 0; i < h.dim(0); ++i)
        for (std::size_t e = 0; e < h.dim(1); ++e) dv[i] += h.at(i, e) * weights[e];
    return dv;
}

HypergraphKernel hypergraph_kernel(const Tensor& h, std::span<const double> weights,
                                   std::span<const std::string> names) {
    check_incidence(h, names);
    Assembly a = assemble(h, weights);
    return {std::move(a.g), std::move(a.dv), std::move(a.de), std::move(a.weights)};
}

ag::Var hypergraph_kernel_var(const Tensor& h, const ag::Var& log_m, std::span<const std::string> names) {
    check_incidence(h, names);
    if (log_m.value().size() != h.dim(1))
        throw ShapeError("log edge weights " + to_string(log_m.shape()) + " do not match " + std::to_string(h.dim(1)) +
                         " hyperedges");
    std::vector<double> weights(h.dim(1));
    for (std::size_t e = 0; e < weights.size(); ++e) weights[e] = std::exp(log_m.value()[e]);
    auto a = std::make_shared<Assembly>(assemble(h, weights));
    Tensor g = a->g;
    return ag::make_result(std::move(g), {log_m}, [a, h](ag::Node& self) {
        // G_ij = s_i s_j P_ij with s = Dv^{-1/2}, P = H diag(w) H^T, w_e = m_e / De_e.
        const std::size_t J = h.dim(0), E = h.dim(1);
        const Tensor& gbar = self.grad;
        const auto& s = a->inv_sqrt_dv;
        std::vector<double> dw(E, 0.0), ds(J, 0.0);
        for (std::size_t i = 0; i < J; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                const double gij = gbar.at(i, j);
                if (gij == 0.0) continue;
                double p = 0.0;
                for (std::size_t e = 0; e < E; ++e) {
                    const double hh = h.at(i, e) * h.at(j, e);
                    if (hh == 0.0) continue;
                    dw[e] += gij * s[i] * s[j];
                    p += hh * a->weights[e] / std::max(a->de[e], kDegreeFloor);
                }
                ds[i] += gij * s[j] * p;
                ds[j] += gij * s[i] * p;
            }
        std::vector<double> ddv(J, 0.0);
        for (std::size_t i = 0; i < J; ++i)
            if (!a->clamped[i]) ddv[i] = ds[i] * -0.5 * s[i] / a->dv[i];
        Tensor& glog = self.inputs[0]->grad_buffer();
        for (std::size_t e = 0; e < E; ++e) {
            double dm = dw[e] / std::max(a->de[e], kDegreeFloor);
            for (std::size_t i = 0; i < J; ++i) dm += ddv[i] * h.at(i, e);
            glog[e] += dm * a->weights[e];
        }
    });
}

}  // namespace poselift
