#ifndef VOXSAMPLER_GEOMETRY_HPP
#define VOXSAMPLER_GEOMETRY_HPP

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "voxsampler/common.hpp"

namespace vxs {

struct PointCloud {
    std::vector<Vec3> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::size_t, 3>> triangles;

    void validate() const {
        for (const auto& t : triangles)
            for (std::size_t i : t)
                if (i >= vertices.size())
                    throw GeometryError("triangle index out of range");
    }
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * norm(cross(b - a, c - a));
}

inline double surface_area(const TriangleMesh& mesh) {
    double area = 0;
    for (const auto& t : mesh.triangles)
        area += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]],
                              mesh.vertices[t[2]]);
    return area;
}

/// Scale and center so every vertex fits in [-1,1]^3 with the given margin.
/// The bound is the max of the XZ radial extent and |Y|, so rotations about
/// the gravity (+Y) axis keep vertices inside the cube.
inline double normalize(TriangleMesh& mesh, double margin = 0.05) {
    if (mesh.vertices.empty()) throw GeometryError("normalize of empty mesh");
    Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
    for (const auto& v : mesh.vertices) {
        lo.x = std::min(lo.x, v.x); hi.x = std::max(hi.x, v.x);
        lo.y = std::min(lo.y, v.y); hi.y = std::max(hi.y, v.y);
        lo.z = std::min(lo.z, v.z); hi.z = std::max(hi.z, v.z);
    }
    const Vec3 center = (lo + hi) * 0.5;
    double bound = 0;
    for (const auto& v : mesh.vertices) {
        const Vec3 d = v - center;
        bound = std::max(bound, std::sqrt(d.x * d.x + d.z * d.z));
        bound = std::max(bound, std::abs(d.y));
    }
    if (bound <= 0) throw GeometryError("normalize of degenerate mesh");
    const double s = (1.0 - margin) / bound;
    for (auto& v : mesh.vertices) v = (v - center) * s;
    return s;
}

/// Area-weighted uniform sampling: triangle by area, position by the
/// (1-sqrt(u), sqrt(u)(1-v), sqrt(u)v) barycentric map.
inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t count,
                                 std::uint64_t rng_seed) {
    if (count < 1) throw ContractError("sample_surface needs count >= 1");
    mesh.validate();
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]],
                               mesh.vertices[t[2]]);
        cumulative[i] = total;
    }
    if (total <= 0) throw GeometryError("sample_surface on zero-area mesh");

    Rng rng(rng_seed);
    PointCloud cloud;
    cloud.points.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double r = rng.uniform() * total;
        const std::size_t ti =
            std::size_t(std::lower_bound(cumulative.begin(), cumulative.end(), r) -
                        cumulative.begin());
        const auto& t = mesh.triangles[std::min(ti, mesh.triangles.size() - 1)];
        const double u = rng.uniform();
        const double v = rng.uniform();
        const double su = std::sqrt(u);
        const double b0 = 1.0 - su;
        const double b1 = su * (1.0 - v);
        const double b2 = su * v;
        cloud.points.push_back(mesh.vertices[t[0]] * b0 +
                               mesh.vertices[t[1]] * b1 +
                               mesh.vertices[t[2]] * b2);
    }
    return cloud;
}

enum class ShapeKind { Sphere, Torus, Box };

struct ShapeParams {
    double radius = 1.0;       // sphere
    double major_radius = 1.0; // torus
    double minor_radius = 0.3; // torus
    Vec3 extents{2, 2, 2};     // box
};

inline double analytic_area(ShapeKind kind, const ShapeParams& p) {
    switch (kind) {
        case ShapeKind::Sphere:
            return 4.0 * M_PI * p.radius * p.radius;
        case ShapeKind::Torus:
            return 4.0 * M_PI * M_PI * p.major_radius * p.minor_radius;
        case ShapeKind::Box:
            return 2.0 * (p.extents.x * p.extents.y + p.extents.y * p.extents.z +
                          p.extents.x * p.extents.z);
    }
    throw ContractError("unknown shape kind");
}

inline TriangleMesh make_sphere(double radius, std::size_t resolution) {
    if (radius <= 0) throw GeometryError("sphere radius must be positive");
    if (resolution < 4) throw GeometryError("resolution must be >= 4");
    TriangleMesh m;
    const std::size_t rings = resolution, segs = resolution;
    // poles + interior latitude rings
    m.vertices.push_back({0, radius, 0});
    for (std::size_t r = 1; r < rings; ++r) {
        const double phi = M_PI * double(r) / double(rings);
        for (std::size_t s = 0; s < segs; ++s) {
            const double th = 2.0 * M_PI * double(s) / double(segs);
            m.vertices.push_back({radius * std::sin(phi) * std::cos(th),
                                  radius * std::cos(phi),
                                  radius * std::sin(phi) * std::sin(th)});
        }
    }
    m.vertices.push_back({0, -radius, 0});
    const std::size_t south = m.vertices.size() - 1;
    auto ring_v = [&](std::size_t r, std::size_t s) {
        return 1 + (r - 1) * segs + (s % segs);
    };
    for (std::size_t s = 0; s < segs; ++s)
        m.triangles.push_back({0, ring_v(1, s + 1), ring_v(1, s)});
    for (std::size_t r = 1; r + 1 < rings; ++r)
        for (std::size_t s = 0; s < segs; ++s) {
            m.triangles.push_back({ring_v(r, s), ring_v(r, s + 1), ring_v(r + 1, s)});
            m.triangles.push_back({ring_v(r, s + 1), ring_v(r + 1, s + 1), ring_v(r + 1, s)});
        }
    for (std::size_t s = 0; s < segs; ++s)
        m.triangles.push_back({south, ring_v(rings - 1, s), ring_v(rings - 1, s + 1)});
    return m;
}

inline TriangleMesh make_torus(double major_radius, double minor_radius,
                               std::size_t resolution) {
    if (major_radius <= 0 || minor_radius <= 0)
        throw GeometryError("torus radii must be positive");
    if (minor_radius >= major_radius)
        throw GeometryError("torus minor radius must be smaller than major");
    if (resolution < 4) throw GeometryError("resolution must be >= 4");
    TriangleMesh m;
    const std::size_t nu = resolution, nv = resolution;
    for (std::size_t i = 0; i < nu; ++i) {
        const double a = 2.0 * M_PI * double(i) / double(nu);
        for (std::size_t j = 0; j < nv; ++j) {
            const double b = 2.0 * M_PI * double(j) / double(nv);
            const double w = major_radius + minor_radius * std::cos(b);
            m.vertices.push_back({w * std::cos(a), minor_radius * std::sin(b),
                                  w * std::sin(a)});
        }
    }
    auto vid = [&](std::size_t i, std::size_t j) {
        return (i % nu) * nv + (j % nv);
    };
    for (std::size_t i = 0; i < nu; ++i)
        for (std::size_t j = 0; j < nv; ++j) {
            m.triangles.push_back({vid(i, j), vid(i + 1, j), vid(i, j + 1)});
            m.triangles.push_back({vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    return m;
}

inline TriangleMesh make_box(const Vec3& extents) {
    if (extents.x <= 0 || extents.y <= 0 || extents.z <= 0)
        throw GeometryError("box extents must be positive");
    TriangleMesh m;
    const double hx = extents.x / 2, hy = extents.y / 2, hz = extents.z / 2;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({(i & 1) ? hx : -hx, (i & 2) ? hy : -hy,
                              (i & 4) ? hz : -hz});
    const std::size_t quads[6][4] = {
        {0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
        {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.triangles.push_back({q[0], q[1], q[2]});
        m.triangles.push_back({q[0], q[2], q[3]});
    }
    return m;
}

inline TriangleMesh procedural_shape(ShapeKind kind, const ShapeParams& p,
                                     std::size_t resolution) {
    switch (kind) {
        case ShapeKind::Sphere: return make_sphere(p.radius, resolution);
        case ShapeKind::Torus:
            return make_torus(p.major_radius, p.minor_radius, resolution);
        case ShapeKind::Box: return make_box(p.extents);
    }
    throw ContractError("unknown shape kind");
}

/// Rotate about the gravity (+Y) axis; Y coordinates unchanged.
inline PointCloud rotate_gravity_axis(const PointCloud& cloud, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points)
        out.points.push_back({c * p.x + s * p.z, p.y, -s * p.x + c * p.z});
    return out;
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a,
                                      const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = dot(ab, ap), d2 = dot(ac, ap);
    if (d1 <= 0 && d2 <= 0) return a;

    const Vec3 bp = p - b;
    const double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));

    const Vec3 cp = p - c;
    const double d5 = dot(ab, cp), d6 = dot(ac, cp);
    if (d6 >= 0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double point_to_mesh_distance_one(const Vec3& p, const TriangleMesh& mesh) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : mesh.triangles) {
        const Vec3 q = closest_point_on_triangle(p, mesh.vertices[t[0]],
                                                 mesh.vertices[t[1]],
                                                 mesh.vertices[t[2]]);
        best = std::min(best, sq_norm(p - q));
    }
    return std::sqrt(best);
}

/// Exact point-to-surface distance per point, brute force over triangles.
/// Returns population mean and standard deviation.
inline std::pair<double, double> point_to_mesh_distance(const PointCloud& cloud,
                                                        const TriangleMesh& mesh) {
    if (cloud.empty()) throw ContractError("point_to_mesh_distance on empty cloud");
    if (mesh.triangles.empty()) throw GeometryError("mesh has no triangles");
    mesh.validate();
    double sum = 0, sum_sq = 0;
    for (const auto& p : cloud.points) {
        const double d = point_to_mesh_distance_one(p, mesh);
        sum += d;
        sum_sq += d * d;
    }
    const double n = double(cloud.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    return {mean, std::sqrt(var)};
}

} // namespace vxs

#endif // VOXSAMPLER_GEOMETRY_HPP
