#ifndef VOXSAMPLER_MODEL_HPP
#define VOXSAMPLER_MODEL_HPP

#include <map>
#include <string>
#include <vector>

#include "voxsampler/grid.hpp"
#include "voxsampler/tensor.hpp"

namespace vxs {

/// Layer widths. The reference config targets the full-size setup; the desk
/// config is small enough to train and finite-difference-check on one core.
struct ModelConfig {
    std::size_t grid_resolution = 8; // N, must be even
    std::size_t latent_dim = 64;
    std::size_t point_channels = 32;  // first per-point feature width
    std::size_t grid_channels = 16;   // second per-point width == grid field width
    std::size_t feature_channels = 16; // C_F
    std::size_t sampler_hidden = 32;

    static ModelConfig reference() {
        ModelConfig c;
        c.grid_resolution = 16;
        c.latent_dim = 512;
        c.point_channels = 64;
        c.grid_channels = 128;
        c.feature_channels = 32;
        c.sampler_hidden = 64;
        return c;
    }

    static ModelConfig desk() { return ModelConfig{}; }

    std::size_t pooled_resolution() const { return grid_resolution / 2; }

    void validate() const {
        if (grid_resolution < 2 || grid_resolution % 2 != 0)
            throw ContractError("grid resolution must be even and >= 2");
        if (latent_dim < 1 || point_channels < 1 || grid_channels < 1 ||
            feature_channels < 1 || sampler_hidden < 1)
            throw ContractError("model widths must be positive");
    }
};

struct SurfaceDescriptor {
    Tensor occupancy; // [1,N,N,N], entries in (0,1)
    Tensor features;  // [C_F,N,N,N]
};

using LatentCode = Tensor; // [latent_dim]
using OffsetField = Tensor; // [3,N,N,N], cell units in [-1/2,1/2]

/// Named learnable tensors of encoder, decoder, and sampling layer.
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors; // name order is canonical

    void zero_grad() {
        for (auto& [name, t] : tensors) t.zero_grad();
    }

    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
};

namespace detail {

inline Tensor init_param(ModelParams& params, const std::string& name,
                         Shape shape, std::size_t fan_in, Rng& rng,
                         bool zero = false) {
    std::vector<double> data(shape_numel(shape));
    if (!zero) {
        const double limit = std::sqrt(6.0 / double(fan_in));
        for (auto& v : data) v = rng.uniform(-limit, limit);
    }
    Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
    t.set_name(name);
    params.tensors.emplace(name, t);
    return t;
}

inline void init_conv(ModelParams& p, const std::string& prefix, std::size_t co,
                      std::size_t ci, std::size_t k, Rng& rng,
                      bool transposed = false) {
    const std::size_t fan_in = ci * k * k * k;
    if (transposed)
        init_param(p, prefix + ".kernel", {ci, co, k, k, k}, fan_in, rng);
    else
        init_param(p, prefix + ".kernel", {co, ci, k, k, k}, fan_in, rng);
    init_param(p, prefix + ".bias", {co}, fan_in, rng, true);
}

inline void init_linear(ModelParams& p, const std::string& prefix,
                        std::size_t ci, std::size_t co, Rng& rng) {
    init_param(p, prefix + ".weight", {ci, co}, ci, rng);
    init_param(p, prefix + ".bias", {co}, ci, rng, true);
}

} // namespace detail

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams params;
    params.config = cfg;
    Rng rng(split_seed(seed, 7));
    const std::size_t c = cfg.grid_channels;
    const std::size_t m = cfg.pooled_resolution();

    detail::init_linear(params, "encoder.point1", 3, cfg.point_channels, rng);
    detail::init_linear(params, "encoder.point2", cfg.point_channels, c, rng);
    detail::init_conv(params, "encoder.res1.conv1", c, c, 3, rng);
    detail::init_conv(params, "encoder.res1.conv2", c, c, 3, rng);
    detail::init_conv(params, "encoder.down", c, c, 2, rng);
    detail::init_conv(params, "encoder.res2.conv1", c, c, 3, rng);
    detail::init_conv(params, "encoder.res2.conv2", c, c, 3, rng);
    detail::init_linear(params, "encoder.latent", c * m * m * m, cfg.latent_dim, rng);

    detail::init_linear(params, "decoder.expand", cfg.latent_dim, c * m * m * m, rng);
    detail::init_conv(params, "decoder.res1.conv1", c, c, 3, rng);
    detail::init_conv(params, "decoder.res1.conv2", c, c, 3, rng);
    detail::init_conv(params, "decoder.up", c, c, 2, rng, /*transposed=*/true);
    detail::init_conv(params, "decoder.res2.conv1", c, c, 3, rng);
    detail::init_conv(params, "decoder.res2.conv2", c, c, 3, rng);
    detail::init_conv(params, "decoder.occupancy", 1, c, 1, rng);
    detail::init_conv(params, "decoder.features", cfg.feature_channels, c, 1, rng);

    detail::init_conv(params, "sampler.conv1", cfg.sampler_hidden,
                      cfg.feature_channels + 2, 1, rng);
    detail::init_conv(params, "sampler.conv2", 3, cfg.sampler_hidden, 1, rng);
    return params;
}

namespace detail {

// Pre-activation residual block: x + conv(relu(conv(relu(x)))).
inline Tensor residual_block(const Tensor& x, const ModelParams& p,
                             const std::string& prefix) {
    Tensor h = relu(x);
    h = conv3d(h, p.at(prefix + ".conv1.kernel"), 1, 1, p.at(prefix + ".conv1.bias"));
    h = relu(h);
    h = conv3d(h, p.at(prefix + ".conv2.kernel"), 1, 1, p.at(prefix + ".conv2.bias"));
    return add(x, h);
}

} // namespace detail

/// Per-point features -> grid pooling -> residual 3D net -> latent code.
/// Exactly permutation- and duplication-invariant via the per-voxel max.
inline LatentCode encode(const PointCloud& cloud, const ModelParams& params,
                         const GridSpec& spec) {
    if (cloud.empty()) throw ContractError("encode of empty cloud");
    const ModelConfig& cfg = params.config;
    if (spec.resolution != cfg.grid_resolution)
        throw ContractError("grid spec resolution does not match model config");

    const std::size_t p = cloud.size();
    std::vector<double> xyz(p * 3);
    std::vector<std::size_t> vidx(p);
    for (std::size_t i = 0; i < p; ++i) {
        const Vec3& pt = cloud.points[i];
        xyz[3 * i] = pt.x;
        xyz[3 * i + 1] = pt.y;
        xyz[3 * i + 2] = pt.z;
        const auto [a, b, c] = voxel_of(pt, spec);
        vidx[i] = spec.flat(a, b, c);
    }
    Tensor x = Tensor::from_data({p, 3}, std::move(xyz));

    Tensor f = relu(linear(x, params.at("encoder.point1.weight"),
                           params.at("encoder.point1.bias")));
    f = relu(linear(f, params.at("encoder.point2.weight"),
                    params.at("encoder.point2.bias")));

    const std::size_t n = cfg.grid_resolution;
    Tensor field = grid_max_pool(f, vidx, spec.voxel_count());
    field = reshape(field, {1, cfg.grid_channels, n, n, n});

    field = detail::residual_block(field, params, "encoder.res1");
    field = conv3d(field, params.at("encoder.down.kernel"), 2, 0,
                   params.at("encoder.down.bias"));
    field = detail::residual_block(field, params, "encoder.res2");

    Tensor flat = reshape(field, {field.size()});
    return linear(flat, params.at("encoder.latent.weight"),
                  params.at("encoder.latent.bias"));
}

/// Latent code -> occupancy O in (0,1)^{N^3} and feature field F.
inline SurfaceDescriptor decode(const LatentCode& z, const ModelParams& params) {
    const ModelConfig& cfg = params.config;
    if (z.rank() != 1 || z.shape()[0] != cfg.latent_dim)
        throw DimensionError("latent dimension mismatch");
    z.check_finite("latent code");

    const std::size_t c = cfg.grid_channels;
    const std::size_t m = cfg.pooled_resolution();
    const std::size_t n = cfg.grid_resolution;

    Tensor h = linear(z, params.at("decoder.expand.weight"),
                      params.at("decoder.expand.bias"));
    h = reshape(h, {1, c, m, m, m});
    h = detail::residual_block(h, params, "decoder.res1");
    h = conv3d_transposed(h, params.at("decoder.up.kernel"), 2, 0,
                          params.at("decoder.up.bias"));
    h = detail::residual_block(h, params, "decoder.res2");

    SurfaceDescriptor d;
    d.occupancy = reshape(sigmoid(conv3d(h, params.at("decoder.occupancy.kernel"),
                                         1, 0, params.at("decoder.occupancy.bias"))),
                          {1, n, n, n});
    d.features = reshape(conv3d(h, params.at("decoder.features.kernel"), 1, 0,
                                params.at("decoder.features.bias")),
                         {cfg.feature_channels, n, n, n});
    return d;
}

/// Uniform sampling coordinates, one (u,v) pair per voxel. Shape [2,N,N,N].
inline Tensor draw_uv(std::size_t n, std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    std::vector<double> data(2 * n * n * n);
    for (auto& v : data) v = rng.uniform();
    return Tensor::from_data({2, n, n, n}, std::move(data));
}

/// Map [F || u || v] through two 1x1x1 conv layers to offsets in
/// [-1/2,1/2]^3 per voxel. Deterministic given (F, uv).
inline OffsetField sample_offsets(const SurfaceDescriptor& descriptor,
                                  const Tensor& uv, const ModelParams& params) {
    const ModelConfig& cfg = params.config;
    const std::size_t n = cfg.grid_resolution;
    if (uv.shape() != Shape{2, n, n, n})
        throw DimensionError("uv field must have shape [2,N,N,N]");
    for (double v : uv.data())
        if (v < 0 || v > 1) throw ContractError("uv entry outside [0,1]");

    Tensor x = concat({descriptor.features, uv}, 0);
    x = reshape(x, {1, cfg.feature_channels + 2, n, n, n});
    x = relu(conv3d(x, params.at("sampler.conv1.kernel"), 1, 0,
                    params.at("sampler.conv1.bias")));
    x = conv3d(x, params.at("sampler.conv2.kernel"), 1, 0,
               params.at("sampler.conv2.bias"));
    return reshape(scale(tanh_op(x), 0.5), {3, n, n, n});
}

/// Decode once, then accumulate `passes` independent realizations:
/// fresh topology draw and fresh (u,v) field per pass.
inline PointCloud sample_cloud(const LatentCode& z, const ModelParams& params,
                               const GridSpec& spec, std::size_t passes,
                               std::uint64_t rng_seed) {
    if (passes < 1) throw ContractError("sample_cloud needs passes >= 1");
    const SurfaceDescriptor desc = decode(z, params);
    const std::size_t n = spec.resolution;
    PointCloud out;
    for (std::size_t pass = 0; pass < passes; ++pass) {
        const Topology topo = sample_topology(desc.occupancy.data(), n,
                                              split_seed(rng_seed, 2 * pass));
        const Tensor uv = draw_uv(n, split_seed(rng_seed, 2 * pass + 1));
        const OffsetField delta = sample_offsets(desc, uv, params);
        PointCloud pts = realize_points(topo, delta.data(), spec);
        out.points.insert(out.points.end(), pts.points.begin(), pts.points.end());
    }
    return out;
}

enum class Subnetwork { Encoder, DecoderTotal };

/// Learnable entries in a subset; decoder_total = decoder + sampling layer.
inline std::size_t parameter_count(const ModelParams& params, Subnetwork which) {
    std::size_t count = 0;
    for (const auto& [name, t] : params.tensors) {
        const bool enc = name.starts_with("encoder.");
        const bool dec = name.starts_with("decoder.") || name.starts_with("sampler.");
        if ((which == Subnetwork::Encoder && enc) ||
            (which == Subnetwork::DecoderTotal && dec))
            count += t.size();
    }
    return count;
}

inline Subnetwork subnetwork_from_name(const std::string& name) {
    if (name == "encoder") return Subnetwork::Encoder;
    if (name == "decoder_total") return Subnetwork::DecoderTotal;
    throw ContractError("unknown subnetwork '" + name + "'");
}

} // namespace vxs

#endif // VOXSAMPLER_MODEL_HPP
