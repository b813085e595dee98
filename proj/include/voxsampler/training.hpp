#ifndef VOXSAMPLER_TRAINING_HPP
#define VOXSAMPLER_TRAINING_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "voxsampler/geometry.hpp"
#include "voxsampler/losses.hpp"
#include "voxsampler/model.hpp"

namespace vxs {

struct DatasetEntry {
    TriangleMesh mesh;
    std::string family;
    double area = 0; // triangulated surface area of the stored mesh
};

using Dataset = std::vector<DatasetEntry>;

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
    std::size_t epochs = 50;
    double learning_rate = 0.001;
    // 44 rather than the published 43: batches are groups of
    // samplings_per_surface samplings, so the size must divide evenly.
    std::size_t batch_size = 44;
    std::size_t samplings_per_surface = 4;
    std::size_t input_points = 2048;
    std::size_t grid_resolution = 8;
    std::size_t latent_dim = 64;
    LossWeights weights;
    std::uint64_t master_seed = 1;
    OptimizerKind optimizer = OptimizerKind::Adam;

    void validate() const {
        if (epochs < 1 || batch_size < 1 || samplings_per_surface < 1 ||
            input_points < 1 || grid_resolution < 2 || latent_dim < 1)
            throw ConfigError("train config fields must be positive");
        if (learning_rate < 0) throw ConfigError("learning rate must be >= 0");
        if (batch_size % samplings_per_surface != 0)
            throw ConfigError("batch_size must be divisible by samplings_per_surface");
        weights.validate();
    }
};

struct BatchItem {
    PointCloud y_in;
    PointCloud y_out;
    std::size_t group_id = 0;
    std::size_t surface_index = 0;
};

/// batch_size / S_b distinct surfaces, S_b independent (Y_in, Y_out) sampling
/// pairs each, one shared gravity-axis rotation per surface instance.
inline std::vector<BatchItem> build_batch(const Dataset& dataset,
                                          const TrainConfig& cfg,
                                          std::uint64_t batch_seed) {
    cfg.validate();
    if (dataset.empty()) throw ContractError("build_batch on empty dataset");
    const std::size_t sb = cfg.samplings_per_surface;
    const std::size_t groups = cfg.batch_size / sb;

    Rng rng(batch_seed);
    // distinct surfaces when possible, with replacement otherwise
    std::vector<std::size_t> pick;
    if (dataset.size() >= groups) {
        std::vector<std::size_t> idx(dataset.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t j = g + rng.uniform_index(idx.size() - g);
            std::swap(idx[g], idx[j]);
            pick.push_back(idx[g]);
        }
    } else {
        for (std::size_t g = 0; g < groups; ++g)
            pick.push_back(rng.uniform_index(dataset.size()));
    }

    std::vector<BatchItem> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t g = 0; g < groups; ++g) {
        const double angle = rng.uniform(0.0, 2.0 * M_PI);
        const TriangleMesh& mesh = dataset[pick[g]].mesh;
        for (std::size_t s = 0; s < sb; ++s) {
            BatchItem item;
            item.group_id = g;
            item.surface_index = pick[g];
            item.y_in = rotate_gravity_axis(
                sample_surface(mesh, cfg.input_points, rng.next_u64()), angle);
            item.y_out = rotate_gravity_axis(
                sample_surface(mesh, cfg.input_points, rng.next_u64()), angle);
            batch.push_back(std::move(item));
        }
    }
    return batch;
}

struct OptimizerState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> first_moment;
    std::map<std::string, std::vector<double>> second_moment;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD. Parameter order
/// never affects the update.
inline void optimizer_step(ModelParams& params, OptimizerState& state,
                           const TrainConfig& cfg) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    state.step++;
    for (auto& [name, t] : params.tensors) {
        if (!t.has_grad())
            throw ContractError("missing gradient for parameter '" + name + "'");
        const auto g = t.grad();
        auto d = t.data();
        if (cfg.optimizer == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] -= cfg.learning_rate * g[i];
            continue;
        }
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.size() != d.size()) m.assign(d.size(), 0.0);
        if (v.size() != d.size()) v.assign(d.size(), 0.0);
        const double bc1 = 1.0 - std::pow(beta1, double(state.step));
        const double bc2 = 1.0 - std::pow(beta2, double(state.step));
        for (std::size_t i = 0; i < d.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            d[i] -= cfg.learning_rate * (m[i] / bc1) /
                    (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

struct EpochStats {
    std::size_t epoch = 0;
    double chamfer = 0;
    double bce = 0;
    double consistency = 0;
    double total = 0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochStats> curve;
};

namespace detail {

inline void require_finite_term(double v, const std::string& term,
                                std::size_t epoch, std::size_t iter) {
    if (!std::isfinite(v))
        throw NumericError("loss term '" + term + "' is not finite at epoch " +
                           std::to_string(epoch) + " iteration " +
                           std::to_string(iter));
}

} // namespace detail

/// Full optimization loop. The per-epoch callback (may be null) receives the
/// current parameters for checkpointing and the epoch's averaged stats.
inline TrainResult train(
    const Dataset& dataset, const TrainConfig& cfg, const ModelConfig& model_cfg,
    const std::function<void(std::size_t, const ModelParams&, const EpochStats&)>&
        on_epoch = {},
    ModelParams resume_params = ModelParams{}, std::size_t start_epoch = 0) {
    cfg.validate();
    model_cfg.validate();
    if (dataset.empty()) throw ContractError("train on empty dataset");
    if (model_cfg.grid_resolution != cfg.grid_resolution ||
        model_cfg.latent_dim != cfg.latent_dim)
        throw ConfigError("model config does not match train config");

    const GridSpec spec(cfg.grid_resolution);
    TrainResult result;
    result.params = resume_params.tensors.empty()
                        ? init_model(model_cfg, cfg.master_seed)
                        : std::move(resume_params);
    ModelParams& params = result.params;
    OptimizerState opt_state;

    const std::size_t iterations = std::max<std::size_t>(
        1, dataset.size() * cfg.samplings_per_surface / cfg.batch_size);

    for (std::size_t epoch = start_epoch; epoch < start_epoch + cfg.epochs; ++epoch) {
        EpochStats stats;
        stats.epoch = epoch;
        for (std::size_t iter = 0; iter < iterations; ++iter) {
            const std::uint64_t iter_seed =
                split_seed(split_seed(cfg.master_seed, 101 + epoch), iter);
            const auto batch = build_batch(dataset, cfg, split_seed(iter_seed, 0));

            params.zero_grad();
            Tensor batch_loss;
            double sum_chamfer = 0, sum_bce = 0, sum_consistency = 0;
            std::size_t item_index = 0;
            for (std::size_t g = 0; g * cfg.samplings_per_surface < batch.size(); ++g) {
                std::vector<LatentCode> latents;
                std::vector<Tensor> elem_losses;
                for (std::size_t s = 0; s < cfg.samplings_per_surface; ++s) {
                    const BatchItem& item = batch[g * cfg.samplings_per_surface + s];
                    const std::uint64_t elem_seed = split_seed(iter_seed, 1 + item_index);
                    ++item_index;

                    const LatentCode z = encode(item.y_in, params, spec);
                    latents.push_back(z);
                    const SurfaceDescriptor desc = decode(z, params);
                    const Tensor uv = draw_uv(cfg.grid_resolution, split_seed(elem_seed, 0));
                    const OffsetField delta = sample_offsets(desc, uv, params);
                    const Topology t_target = voxelize(item.y_out, spec);

                    const Tensor term1 = expected_chamfer_term1(
                        desc.occupancy, delta, item.y_out, spec);
                    const Tensor term2 = sampled_chamfer_term2(
                        desc.occupancy, delta, item.y_out, spec, split_seed(elem_seed, 1));
                    const Tensor bce = bce_occupancy(desc.occupancy, t_target);
                    detail::require_finite_term(term1[0] + term2[0], "chamfer", epoch, iter);
                    detail::require_finite_term(bce[0], "bce", epoch, iter);
                    sum_chamfer += term1[0] + term2[0];
                    sum_bce += bce[0];

                    elem_losses.push_back(add(scale(add(term1, term2), cfg.weights.chamfer),
                                              scale(bce, cfg.weights.bce)));
                }
                Tensor group_loss = elem_losses[0];
                for (std::size_t s = 1; s < elem_losses.size(); ++s)
                    group_loss = add(group_loss, elem_losses[s]);
                if (cfg.samplings_per_surface >= 2) {
                    const Tensor cons = consistency_loss(latents);
                    detail::require_finite_term(cons[0], "consistency", epoch, iter);
                    sum_consistency += cons[0];
                    group_loss = add(group_loss, scale(cons, cfg.weights.consistency));
                }
                batch_loss = batch_loss.defined() ? add(batch_loss, group_loss)
                                                  : group_loss;
            }
            batch_loss = scale(batch_loss, 1.0 / double(cfg.batch_size));
            detail::require_finite_term(batch_loss[0], "total", epoch, iter);
            batch_loss.backward();
            optimizer_step(params, opt_state, cfg);

            stats.chamfer += sum_chamfer / double(cfg.batch_size);
            stats.bce += sum_bce / double(cfg.batch_size);
            stats.consistency += sum_consistency / double(cfg.batch_size);
            stats.total += batch_loss[0];
        }
        stats.chamfer /= double(iterations);
        stats.bce /= double(iterations);
        stats.consistency /= double(iterations);
        stats.total /= double(iterations);
        result.curve.push_back(stats);
        if (on_epoch) on_epoch(epoch, params, stats);
    }
    return result;
}

} // namespace vxs

#endif // VOXSAMPLER_TRAINING_HPP
