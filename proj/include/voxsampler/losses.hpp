#ifndef VOXSAMPLER_LOSSES_HPP
#define VOXSAMPLER_LOSSES_HPP

#include <memory>
#include <utility>
#include <vector>

#include "voxsampler/grid.hpp"
#include "voxsampler/model.hpp"
#include "voxsampler/tensor.hpp"

namespace vxs {

struct LossWeights {
    double chamfer = 1.0;
    double bce = 1.0;
    double consistency = 0.1;

    void validate() const {
        if (chamfer < 0 || bce < 0 || consistency < 0)
            throw ContractError("loss weights must be non-negative");
    }
};

namespace detail {

inline std::pair<std::size_t, double> nearest_sq(const Vec3& p,
                                                 const std::vector<Vec3>& set) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double d = sq_norm(p - set[i]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return {best, best_d};
}

} // namespace detail

/// Chamfer pseudo-distance: sums of non-squared nearest-neighbor distances
/// in both directions. Cardinalities may differ.
inline double chamfer(const PointCloud& x, const PointCloud& y) {
    if (x.empty() || y.empty()) throw ContractError("chamfer of empty cloud");
    double total = 0;
    for (const auto& p : x.points)
        total += std::sqrt(detail::nearest_sq(p, y.points).second);
    for (const auto& p : y.points)
        total += std::sqrt(detail::nearest_sq(p, x.points).second);
    return total;
}

/// Cardinality-normalized symmetric Chamfer, d(X|Y)/|X| + d(Y|X)/|Y|.
/// Used for evaluation so the value is a length in domain units.
inline double chamfer_normalized(const PointCloud& x, const PointCloud& y) {
    if (x.empty() || y.empty()) throw ContractError("chamfer of empty cloud");
    double dx = 0, dy = 0;
    for (const auto& p : x.points)
        dx += std::sqrt(detail::nearest_sq(p, y.points).second);
    for (const auto& p : y.points)
        dy += std::sqrt(detail::nearest_sq(p, x.points).second);
    return dx / double(x.size()) + dy / double(y.size());
}

/// Exact closed form of E_T[d(X|Y)]: sum over all candidate voxels of
/// o_n * min_y ||(center_n + delta_n * cell) - y||. Differentiable in O and
/// delta; summation order is the flat voxel index.
inline Tensor expected_chamfer_term1(const Tensor& occupancy,
                                     const OffsetField& delta,
                                     const PointCloud& y, const GridSpec& spec) {
    if (y.empty()) throw ContractError("expected_chamfer_term1 needs non-empty target");
    const std::size_t nv = spec.voxel_count();
    if (occupancy.size() != nv || delta.size() != 3 * nv)
        throw DimensionError("field size does not match grid");

    const double h = spec.cell_edge();
    const std::size_t n = spec.resolution;
    auto dist = std::make_shared<std::vector<double>>(nv);
    auto diff = std::make_shared<std::vector<Vec3>>(nv); // x_n - y*
    double loss = 0;
    {
        const auto o = occupancy.data();
        const auto d = delta.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t f = spec.flat(i, j, k);
                    const Vec3 x = spec.voxel_center(i, j, k) +
                                   Vec3{d[f], d[nv + f], d[2 * nv + f]} * h;
                    const auto [yi, sq] = detail::nearest_sq(x, y.points);
                    (*dist)[f] = std::sqrt(sq);
                    (*diff)[f] = x - y.points[yi];
                    loss += o[f] * (*dist)[f];
                }
    }
    return detail::make_op(
        {1}, {loss}, {occupancy, delta},
        [dist, diff, nv, h](detail::Node& self) {
            const double g = self.grad[0];
            auto& po = *self.parents[0];
            auto& pd = *self.parents[1];
            for (std::size_t f = 0; f < nv; ++f) {
                if (po.requires_grad) po.grad[f] += g * (*dist)[f];
                if (pd.requires_grad && (*dist)[f] > 0) {
                    const double s = g * po.data[f] * h / (*dist)[f];
                    pd.grad[f] += s * (*diff)[f].x;
                    pd.grad[nv + f] += s * (*diff)[f].y;
                    pd.grad[2 * nv + f] += s * (*diff)[f].z;
                }
            }
        });
}

/// Single-realization approximation of E[d(Y|X)]: draw one topology from O,
/// realize points, and sum each target's nearest realized distance. The draw
/// is non-differentiable; gradients flow to delta only. If the realization
/// is empty, resample once, then force the highest-occupancy voxel on.
inline Tensor sampled_chamfer_term2(const Tensor& occupancy,
                                    const OffsetField& delta,
                                    const PointCloud& y, const GridSpec& spec,
                                    std::uint64_t rng_seed) {
    if (y.empty()) throw ContractError("sampled_chamfer_term2 needs non-empty target");
    const std::size_t nv = spec.voxel_count();
    if (occupancy.size() != nv || delta.size() != 3 * nv)
        throw DimensionError("field size does not match grid");
    const std::size_t n = spec.resolution;

    Topology topo = sample_topology(occupancy.data(), n, split_seed(rng_seed, 0));
    if (topo.count() == 0)
        topo = sample_topology(occupancy.data(), n, split_seed(rng_seed, 1));
    if (topo.count() == 0) {
        const auto o = occupancy.data();
        std::size_t best = 0;
        for (std::size_t f = 1; f < nv; ++f)
            if (o[f] > o[best]) best = f;
        topo.t[best] = 1;
    }

    const double h = spec.cell_edge();
    std::vector<Vec3> realized;
    std::vector<std::size_t> voxel_of_realized;
    {
        const auto d = delta.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t f = spec.flat(i, j, k);
                    if (!topo.t[f]) continue;
                    realized.push_back(spec.voxel_center(i, j, k) +
                                       Vec3{d[f], d[nv + f], d[2 * nv + f]} * h);
                    voxel_of_realized.push_back(f);
                }
    }

    // per target: nearest realized point, its voxel, and the unit direction
    auto grads = std::make_shared<std::vector<std::pair<std::size_t, Vec3>>>();
    double loss = 0;
    for (const auto& pt : y.points) {
        const auto [xi, sq] = detail::nearest_sq(pt, realized);
        const double dd = std::sqrt(sq);
        loss += dd;
        if (dd > 0)
            grads->emplace_back(voxel_of_realized[xi],
                                (realized[xi] - pt) * (1.0 / dd));
    }
    return detail::make_op({1}, {loss}, {delta},
                           [grads, nv, h](detail::Node& self) {
                               const double g = self.grad[0];
                               auto& pd = *self.parents[0];
                               for (const auto& [f, dir] : *grads) {
                                   pd.grad[f] += g * h * dir.x;
                                   pd.grad[nv + f] += g * h * dir.y;
                                   pd.grad[2 * nv + f] += g * h * dir.z;
                               }
                           });
}

/// Binary cross entropy between occupancy and a target voxelization,
/// clamped at eps = 1e-7. Non-negative, minimized at o = t.
inline Tensor bce_occupancy(const Tensor& occupancy, const Topology& target) {
    if (occupancy.size() != target.t.size())
        throw DimensionError("occupancy / topology size mismatch");
    constexpr double eps = 1e-7;
    const auto o = occupancy.data();
    double loss = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        const double oc = std::clamp(o[i], eps, 1.0 - eps);
        loss -= target.t[i] ? std::log(oc) : std::log(1.0 - oc);
    }
    auto t = std::make_shared<std::vector<std::uint8_t>>(target.t);
    return detail::make_op(
        {1}, {loss}, {occupancy}, [t](detail::Node& self) {
            const double g = self.grad[0];
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                const double ov = p.data[i];
                if (ov < eps || ov > 1.0 - eps) continue; // clamped: flat
                p.grad[i] += g * ((*t)[i] ? -1.0 / ov : 1.0 / (1.0 - ov));
            }
        });
}

/// Sum over the batch of squared distances to the batch-mean latent.
inline Tensor consistency_loss(const std::vector<LatentCode>& latents) {
    if (latents.size() < 2)
        throw ContractError("consistency_loss needs at least two latents");
    const std::size_t dim = latents[0].size();
    for (const auto& z : latents)
        if (z.size() != dim)
            throw DimensionError("latent dimension mismatch in consistency_loss");

    const std::size_t b = latents.size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& z : latents)
        for (std::size_t i = 0; i < dim; ++i) mean[i] += z[i];
    for (auto& m : mean) m /= double(b);

    double loss = 0;
    for (const auto& z : latents)
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = z[i] - mean[i];
            loss += d * d;
        }
    auto mean_ptr = std::make_shared<std::vector<double>>(std::move(mean));
    return detail::make_op(
        {1}, {loss}, latents, [mean_ptr, dim](detail::Node& self) {
            // d/dz_b = 2 (z_b - mean); the mean terms cancel.
            const double g = self.grad[0];
            for (auto& pz : self.parents) {
                if (!pz->requires_grad) continue;
                for (std::size_t i = 0; i < dim; ++i)
                    pz->grad[i] += g * 2.0 * (pz->data[i] - (*mean_ptr)[i]);
            }
        });
}

/// Weighted combination for one batch element; the consistency term is
/// optional (computed once per group by the caller).
inline Tensor total_loss(const SurfaceDescriptor& descriptor,
                         const OffsetField& delta, const PointCloud& y_out,
                         const Topology& t_target, const LossWeights& weights,
                         const GridSpec& spec, std::uint64_t rng_seed,
                         const Tensor& consistency = Tensor()) {
    weights.validate();
    Tensor total = scale(
        add(expected_chamfer_term1(descriptor.occupancy, delta, y_out, spec),
            sampled_chamfer_term2(descriptor.occupancy, delta, y_out, spec,
                                  rng_seed)),
        weights.chamfer);
    total = add(total, scale(bce_occupancy(descriptor.occupancy, t_target),
                             weights.bce));
    if (consistency.defined())
        total = add(total, scale(consistency, weights.consistency));
    return total;
}

} // namespace vxs

#endif // VOXSAMPLER_LOSSES_HPP
