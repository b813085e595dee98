#ifndef VOXSAMPLER_GRID_HPP
#define VOXSAMPLER_GRID_HPP

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "voxsampler/common.hpp"
#include "voxsampler/geometry.hpp"
#include "voxsampler/tensor.hpp"

namespace vxs {

/// Cubic voxel grid over an axis-aligned domain, default [-1,1]^3.
/// Offsets are expressed in cell units so they live in [-1/2,1/2]
/// regardless of the physical cell size.
struct GridSpec {
    std::size_t resolution = 8;
    Vec3 domain_min{-1, -1, -1};
    double domain_edge = 2.0;

    GridSpec() = default;
    GridSpec(std::size_t n, Vec3 dmin = {-1, -1, -1}, double edge = 2.0)
        : resolution(n), domain_min(dmin), domain_edge(edge) {
        if (n < 2) throw ContractError("grid resolution must be >= 2");
        if (edge <= 0) throw ContractError("domain edge must be positive");
    }

    double cell_edge() const { return domain_edge / double(resolution); }
    std::size_t voxel_count() const {
        return resolution * resolution * resolution;
    }
    std::size_t flat(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * resolution + j) * resolution + k;
    }
    Vec3 voxel_center(std::size_t i, std::size_t j, std::size_t k) const {
        const double h = cell_edge();
        return {domain_min.x + (double(i) + 0.5) * h,
                domain_min.y + (double(j) + 0.5) * h,
                domain_min.z + (double(k) + 0.5) * h};
    }
};

/// Binary voxel assignment: which voxels emit a point in one realization.
struct Topology {
    std::size_t resolution = 0;
    std::vector<std::uint8_t> t; // flat (i*N + j)*N + k

    std::size_t count() const {
        std::size_t c = 0;
        for (auto v : t) c += v;
        return c;
    }
};

inline std::array<std::size_t, 3> voxel_of(const Vec3& p, const GridSpec& spec) {
    const double h = spec.cell_edge();
    const double hi = spec.domain_edge;
    const Vec3 d = p - spec.domain_min;
    if (d.x < 0 || d.y < 0 || d.z < 0 || d.x > hi || d.y > hi || d.z > hi)
        throw GeometryError("point outside grid domain");
    const auto cell = [&](double v) {
        const auto c = std::ptrdiff_t(std::floor(v / h));
        return std::size_t(std::clamp<std::ptrdiff_t>(
            c, 0, std::ptrdiff_t(spec.resolution) - 1));
    };
    return {cell(d.x), cell(d.y), cell(d.z)};
}

inline Topology voxelize(const PointCloud& cloud, const GridSpec& spec) {
    Topology topo;
    topo.resolution = spec.resolution;
    topo.t.assign(spec.voxel_count(), 0);
    for (const auto& p : cloud.points) {
        const auto [i, j, k] = voxel_of(p, spec);
        topo.t[spec.flat(i, j, k)] = 1;
    }
    return topo;
}

/// Product of per-voxel Bernoulli masses, Prod_n o_n^{t_n} (1-o_n)^{1-t_n}.
/// Returns (probability, log-probability); the product underflows quickly,
/// use the log form for anything beyond toy grids.
inline std::pair<double, double> topology_probability(
    std::span<const double> occupancy, const Topology& t_star) {
    if (occupancy.size() != t_star.t.size())
        throw DimensionError("occupancy / topology size mismatch");
    double log_p = 0;
    for (std::size_t n = 0; n < occupancy.size(); ++n) {
        const double o = occupancy[n];
        const double mass = t_star.t[n] ? o : 1.0 - o;
        if (mass <= 0) return {0.0, -std::numeric_limits<double>::infinity()};
        log_p += std::log(mass);
    }
    return {std::exp(log_p), log_p};
}

inline std::pair<double, double> topology_probability(const Tensor& occupancy,
                                                      const Topology& t_star) {
    return topology_probability(occupancy.data(), t_star);
}

/// Independent Bernoulli draw per voxel.
inline Topology sample_topology(std::span<const double> occupancy,
                                std::size_t resolution, std::uint64_t rng_seed) {
    if (occupancy.size() != resolution * resolution * resolution)
        throw DimensionError("occupancy size does not match resolution");
    Rng rng(rng_seed);
    Topology topo;
    topo.resolution = resolution;
    topo.t.resize(occupancy.size());
    for (std::size_t n = 0; n < occupancy.size(); ++n) {
        const double o = occupancy[n];
        if (o < 0 || o > 1) throw ContractError("occupancy entry outside [0,1]");
        topo.t[n] = rng.bernoulli(o) ? 1 : 0;
    }
    return topo;
}

/// One point per occupied voxel at center + offset*cell_edge.
/// offsets: flat [3, N^3] in cell units, componentwise in [-1/2,1/2].
inline PointCloud realize_points(const Topology& topo,
                                 std::span<const double> offsets,
                                 const GridSpec& spec) {
    const std::size_t nv = spec.voxel_count();
    if (topo.resolution != spec.resolution)
        throw DimensionError("topology resolution mismatch");
    if (offsets.size() != 3 * nv)
        throw DimensionError("offset field size mismatch");
    const double h = spec.cell_edge();
    PointCloud cloud;
    const std::size_t n = spec.resolution;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t f = spec.flat(i, j, k);
                if (!topo.t[f]) continue;
                const Vec3 d{offsets[f], offsets[nv + f], offsets[2 * nv + f]};
                if (d.x < -0.5 || d.x > 0.5 || d.y < -0.5 || d.y > 0.5 ||
                    d.z < -0.5 || d.z > 0.5)
                    throw ContractError("offset outside [-1/2,1/2]");
                cloud.points.push_back(spec.voxel_center(i, j, k) + d * h);
            }
    return cloud;
}

} // namespace vxs

#endif // VOXSAMPLER_GRID_HPP
