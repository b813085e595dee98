#ifndef VOXSAMPLER_METRICS_HPP
#define VOXSAMPLER_METRICS_HPP

#include <string>
#include <vector>

#include "voxsampler/geometry.hpp"
#include "voxsampler/losses.hpp"
#include "voxsampler/model.hpp"

namespace vxs {

struct NucConfig {
    std::size_t disk_count = 9000;
    std::vector<double> area_fractions = {0.002, 0.004, 0.006, 0.008, 0.010, 0.012};
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (disk_count < 1) throw ContractError("nuc disk count must be >= 1");
        for (double p : area_fractions)
            if (p <= 0 || p >= 1)
                throw ContractError("nuc area fractions must lie in (0,1)");
    }
};

struct NucResult {
    double area_fraction = 0;
    double avg = 0;
    double nuc = 0;
    bool radius_warning = false; // disk radius exceeded a bounding diameter
};

/// avg and NUC from precomputed counts: counts[k][d] and the per-object
/// expected count pN^k. Shared by the metric proper and by test oracles.
inline NucResult nuc_from_counts(const std::vector<std::vector<double>>& counts,
                                 const std::vector<double>& expected,
                                 double area_fraction) {
    const std::size_t k_total = counts.size();
    if (k_total == 0 || expected.size() != k_total)
        throw ContractError("nuc_from_counts shape mismatch");
    const std::size_t d_total = counts[0].size();
    double avg = 0;
    for (std::size_t k = 0; k < k_total; ++k)
        for (std::size_t d = 0; d < d_total; ++d)
            avg += counts[k][d] / expected[k];
    avg /= double(k_total * d_total);
    double var = 0;
    for (std::size_t k = 0; k < k_total; ++k)
        for (std::size_t d = 0; d < d_total; ++d) {
            const double r = counts[k][d] / expected[k] - avg;
            var += r * r;
        }
    var /= double(k_total * d_total);
    return {area_fraction, avg, std::sqrt(var)};
}

/// Normalized uniformity coefficient: disks are Euclidean balls of radius
/// sqrt(p*A/pi) centered at area-uniform surface samples, intersected with
/// the point set (closed balls, boundary included).
inline std::vector<NucResult> nuc(const std::vector<PointCloud>& clouds,
                                  const std::vector<TriangleMesh>& meshes,
                                  const NucConfig& cfg) {
    cfg.validate();
    if (clouds.size() != meshes.size() || clouds.empty())
        throw ContractError("nuc needs matching non-empty cloud/mesh lists");
    for (const auto& c : clouds)
        if (c.empty()) throw ContractError("nuc on empty cloud");

    const std::size_t k_total = clouds.size();
    const std::size_t n_p = cfg.area_fractions.size();
    std::vector<std::vector<std::vector<double>>> counts(
        n_p, std::vector<std::vector<double>>(k_total,
                                              std::vector<double>(cfg.disk_count, 0)));
    std::vector<std::vector<double>> expected(n_p, std::vector<double>(k_total));
    std::vector<bool> warn(n_p, false);

    for (std::size_t k = 0; k < k_total; ++k) {
        const double area = surface_area(meshes[k]);
        const PointCloud centers =
            sample_surface(meshes[k], cfg.disk_count, split_seed(cfg.rng_seed, k));

        Vec3 lo = clouds[k].points[0], hi = lo;
        for (const auto& p : clouds[k].points) {
            lo.x = std::min(lo.x, p.x); hi.x = std::max(hi.x, p.x);
            lo.y = std::min(lo.y, p.y); hi.y = std::max(hi.y, p.y);
            lo.z = std::min(lo.z, p.z); hi.z = std::max(hi.z, p.z);
        }
        const double diameter = norm(hi - lo);

        std::vector<double> radius_sq(n_p);
        for (std::size_t pi = 0; pi < n_p; ++pi) {
            const double p = cfg.area_fractions[pi];
            const double r = std::sqrt(p * area / M_PI);
            radius_sq[pi] = r * r;
            if (r > diameter) warn[pi] = true;
            expected[pi][k] = p * double(clouds[k].size());
        }
        for (std::size_t d = 0; d < cfg.disk_count; ++d) {
            const Vec3& c = centers.points[d];
            for (const auto& pt : clouds[k].points) {
                const double sq = sq_norm(pt - c);
                for (std::size_t pi = 0; pi < n_p; ++pi)
                    if (sq <= radius_sq[pi]) counts[pi][k][d] += 1;
            }
        }
    }

    std::vector<NucResult> results;
    for (std::size_t pi = 0; pi < n_p; ++pi) {
        NucResult r = nuc_from_counts(counts[pi], expected[pi], cfg.area_fractions[pi]);
        r.radius_warning = warn[pi];
        results.push_back(r);
    }
    return results;
}

struct ReconstructionRow {
    std::string label;
    bool ok = false;
    double chamfer_normalized = 0;
    double distance_mean = 0;
    double distance_std = 0;
    std::size_t point_count = 0;
};

struct ReconstructionReport {
    std::vector<ReconstructionRow> rows;
    double chamfer_mean = 0, chamfer_std = 0;
    double distance_mean = 0, distance_std = 0;
    std::size_t failures = 0;
};

/// Per shape: sample an input cloud, auto-encode, resample the generated
/// shape, and compare against a fresh ground-truth sampling and the mesh.
inline ReconstructionReport eval_reconstruction(
    const ModelParams& params, const GridSpec& spec,
    const std::vector<TriangleMesh>& meshes, std::size_t passes,
    std::size_t input_points, std::size_t reference_points,
    std::uint64_t rng_seed) {
    if (passes < 1) throw ContractError("eval needs passes >= 1");
    ReconstructionReport report;
    std::vector<double> chs, dms;
    for (std::size_t k = 0; k < meshes.size(); ++k) {
        const std::uint64_t s = split_seed(rng_seed, k);
        ReconstructionRow row;
        row.label = "shape_" + std::to_string(k);
        const PointCloud input =
            sample_surface(meshes[k], input_points, split_seed(s, 0));
        const PointCloud reference =
            sample_surface(meshes[k], reference_points, split_seed(s, 1));
        const LatentCode z = encode(input, params, spec);
        const PointCloud generated =
            sample_cloud(z, params, spec, passes, split_seed(s, 2));
        if (generated.empty()) {
            report.failures++;
            report.rows.push_back(row);
            continue;
        }
        row.ok = true;
        row.point_count = generated.size();
        row.chamfer_normalized = chamfer_normalized(generated, reference);
        const auto [dm, ds] = point_to_mesh_distance(generated, meshes[k]);
        row.distance_mean = dm;
        row.distance_std = ds;
        chs.push_back(row.chamfer_normalized);
        dms.push_back(dm);
        report.rows.push_back(row);
    }
    auto mean_std = [](const std::vector<double>& v) -> std::pair<double, double> {
        if (v.empty()) return {0, 0};
        double s = 0, sq = 0;
        for (double x : v) { s += x; sq += x * x; }
        const double m = s / double(v.size());
        return {m, std::sqrt(std::max(0.0, sq / double(v.size()) - m * m))};
    };
    std::tie(report.chamfer_mean, report.chamfer_std) = mean_std(chs);
    std::tie(report.distance_mean, report.distance_std) = mean_std(dms);
    return report;
}

} // namespace vxs

#endif // VOXSAMPLER_METRICS_HPP
