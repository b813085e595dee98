#ifndef VOXSAMPLER_TEST_UTIL_HPP
#define VOXSAMPLER_TEST_UTIL_HPP

#include <functional>
#include <vector>

#include "voxsampler/model.hpp"
#include "voxsampler/tensor.hpp"

namespace vxs::test {

// Central finite-difference check of d loss / d param against the reverse
// pass. `forward` must rebuild the graph from the current parameter data.
// Returns the worst relative error over all checked entries.
inline double gradient_check(const std::function<Tensor()>& forward,
                             std::vector<Tensor> params, double step = 1e-5,
                             std::size_t max_entries_per_param = 0) {
    for (auto& p : params) p.zero_grad();
    Tensor loss = forward();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params)
        analytic.emplace_back(p.grad().begin(), p.grad().end());

    double worst = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        const std::size_t n = p.size();
        const std::size_t stride =
            (max_entries_per_param && n > max_entries_per_param)
                ? n / max_entries_per_param
                : 1;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = p[i];
            p[i] = saved + step;
            const double up = forward()[0];
            p[i] = saved - step;
            const double down = forward()[0];
            p[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double an = analytic[pi][i];
            const double err =
                std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
    Rng rng(seed);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Small model config for finite-difference work: N=4, tiny widths.
inline ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.grid_resolution = 4;
    cfg.latent_dim = 8;
    cfg.point_channels = 6;
    cfg.grid_channels = 5;
    cfg.feature_channels = 4;
    cfg.sampler_hidden = 6;
    return cfg;
}

} // namespace vxs::test

#endif
