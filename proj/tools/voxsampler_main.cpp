// voxsampler CLI: dataset generation, training, encoding, latent
// interpolation, upsampling, and evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxsampler/io.hpp"

namespace fs = std::filesystem;
using namespace vxs;

namespace {

void emit(const std::string& path, const std::string& content) {
    if (path == "-")
        std::cout << content;
    else
        write_file_atomic(path, content);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_dataset_gen(const std::string& out_dir, const std::string& families_csv,
                    std::size_t count, std::uint64_t seed, std::size_t resolution) {
    fs::create_directories(out_dir);
    const auto families = split_csv(families_csv);
    if (families.empty()) throw ConfigError("no families given");

    std::vector<ManifestEntry> manifest;
    std::size_t index = 0;
    for (const auto& family : families) {
        for (std::size_t i = 0; i < count; ++i, ++index) {
            Rng rng(split_seed(seed, index));
            ShapeParams sp;
            ShapeKind kind;
            if (family == "sphere") {
                kind = ShapeKind::Sphere;
                sp.radius = rng.uniform(0.5, 1.0);
            } else if (family == "torus") {
                kind = ShapeKind::Torus;
                sp.major_radius = rng.uniform(0.6, 1.0);
                sp.minor_radius = rng.uniform(0.15, 0.45) * sp.major_radius;
            } else if (family == "box") {
                kind = ShapeKind::Box;
                sp.extents = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                              rng.uniform(0.5, 2.0)};
            } else {
                throw ConfigError("unknown family '" + family + "'");
            }
            TriangleMesh mesh = procedural_shape(kind, sp, resolution);
            const double s = normalize(mesh);

            char name[64];
            std::snprintf(name, sizeof name, "%s_%03zu.ply", family.c_str(), i);
            write_ply((fs::path(out_dir) / name).string(), mesh);

            ManifestEntry e;
            e.path = name;
            e.family = family;
            e.area = surface_area(mesh);
            e.analytic_area = analytic_area(kind, sp) * s * s;
            manifest.push_back(e);
        }
    }
    write_file_atomic((fs::path(out_dir) / "manifest.txt").string(),
                      manifest_to_string(manifest));
    std::cerr << "wrote " << manifest.size() << " meshes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_path,
              std::size_t start_epoch) {
    const RunConfig cfg = parse_config(read_file(config_path));
    cfg.train.validate();
    const Dataset dataset = load_dataset(data_dir);
    fs::create_directories(out_dir);
    const std::string snapshot = serialize_config(cfg);

    ModelParams resume;
    if (!resume_path.empty()) resume = load_checkpoint(resume_path).params;

    const std::string curve_path = (fs::path(out_dir) / "learning_curve.log").string();
    auto on_epoch = [&](std::size_t epoch, const ModelParams& params,
                        const EpochStats& stats) {
        char name[64];
        std::snprintf(name, sizeof name, "epoch_%zu.nsck", epoch);
        save_checkpoint((fs::path(out_dir) / name).string(), params, snapshot);
        std::ofstream log(curve_path, std::ios::app);
        log << curve_line(stats) << "\n";
        std::cerr << curve_line(stats) << "\n";
    };

    const TrainResult result =
        train(dataset, cfg.train, cfg.model(), on_epoch, std::move(resume), start_epoch);

    save_checkpoint((fs::path(out_dir) / "final.nsck").string(), result.params,
                    snapshot);
    std::vector<std::pair<std::string, std::string>> report;
    report.emplace_back("epochs", std::to_string(result.curve.size()));
    if (!result.curve.empty()) {
        const auto& last = result.curve.back();
        report.emplace_back("final_total", fmt(last.total));
        report.emplace_back("final_chamfer", fmt(last.chamfer));
        report.emplace_back("final_bce", fmt(last.bce));
        report.emplace_back("final_consistency", fmt(last.consistency));
    }
    report.emplace_back("parameters_encoder",
                        std::to_string(parameter_count(result.params, Subnetwork::Encoder)));
    report.emplace_back("parameters_decoder_total",
                        std::to_string(parameter_count(result.params, Subnetwork::DecoderTotal)));
    write_file_atomic((fs::path(out_dir) / "report.txt").string(),
                      report_to_string(report));
    return 0;
}

int cmd_encode(const std::string& ckpt, const std::string& in,
               const std::string& out) {
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const PointCloud cloud = read_cloud(in);
    if (cloud.empty()) throw ContractError("input cloud is empty");
    const GridSpec spec(loaded.params.config.grid_resolution);
    const LatentCode z = encode(cloud, loaded.params, spec);
    if (out == "-") {
        std::string text;
        for (double v : z.data()) text += fmt(v) + std::string("\n");
        std::cout << text;
    } else {
        write_latent(out, z);
    }
    return 0;
}

int cmd_interpolate(const std::string& ckpt, const std::string& a_path,
                    const std::string& b_path, std::size_t steps,
                    const std::string& out_dir, std::size_t passes,
                    std::uint64_t seed) {
    if (steps < 2) throw ContractError("interpolate needs steps >= 2");
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Tensor a = read_latent(a_path);
    const Tensor b = read_latent(b_path);
    if (a.size() != loaded.params.config.latent_dim ||
        b.size() != loaded.params.config.latent_dim)
        throw ContractError("latent dimension does not match checkpoint");
    fs::create_directories(out_dir);
    const GridSpec spec(loaded.params.config.grid_resolution);
    for (std::size_t i = 0; i < steps; ++i) {
        const double w = double(i) / double(steps - 1);
        std::vector<double> mix(a.size());
        for (std::size_t j = 0; j < mix.size(); ++j)
            mix[j] = (1.0 - w) * a[j] + w * b[j];
        const std::size_t dim = mix.size();
        const LatentCode z = Tensor::from_data({dim}, std::move(mix));
        const PointCloud cloud = sample_cloud(z, loaded.params, spec, passes, seed);
        char name[64];
        std::snprintf(name, sizeof name, "step_%03zu.xyz", i);
        write_xyz((fs::path(out_dir) / name).string(), cloud);
    }
    return 0;
}

int cmd_upsample(const std::string& ckpt, const std::string& in,
                 std::size_t passes, std::uint64_t seed, const std::string& out) {
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const PointCloud cloud = read_cloud(in);
    if (cloud.empty()) throw ContractError("input cloud is empty");
    const GridSpec spec(loaded.params.config.grid_resolution);
    const LatentCode z = encode(cloud, loaded.params, spec);
    const PointCloud result = sample_cloud(z, loaded.params, spec, passes, seed);
    emit(out, xyz_to_string(result));
    return 0;
}

int cmd_eval_chamfer(const std::string& a_path, const std::string& b_path,
                     const std::string& out) {
    const PointCloud a = read_cloud(a_path);
    const PointCloud b = read_cloud(b_path);
    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("chamfer", fmt(chamfer(a, b)));
    rows.emplace_back("chamfer_normalized", fmt(chamfer_normalized(a, b)));
    emit(out, report_to_string(rows));
    return 0;
}

int cmd_eval_distance(const std::string& cloud_path, const std::string& mesh_path,
                      const std::string& out) {
    const PointCloud cloud = read_cloud(cloud_path);
    const TriangleMesh mesh = read_mesh(mesh_path);
    const auto [mean, std_dev] = point_to_mesh_distance(cloud, mesh);
    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("distance_mean", fmt(mean));
    rows.emplace_back("distance_std", fmt(std_dev));
    emit(out, report_to_string(rows));
    return 0;
}

int cmd_eval_nuc(const std::vector<std::string>& cloud_paths,
                 const std::vector<std::string>& mesh_paths, std::size_t disks,
                 std::uint64_t seed, const std::string& fractions_csv,
                 const std::string& out) {
    std::vector<PointCloud> clouds;
    std::vector<TriangleMesh> meshes;
    for (const auto& p : cloud_paths) clouds.push_back(read_cloud(p));
    for (const auto& p : mesh_paths) meshes.push_back(read_mesh(p));
    NucConfig cfg;
    cfg.disk_count = disks;
    cfg.rng_seed = seed;
    if (!fractions_csv.empty()) {
        cfg.area_fractions.clear();
        for (const auto& tok : split_csv(fractions_csv))
            cfg.area_fractions.push_back(std::stod(tok));
    }
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& r : nuc(clouds, meshes, cfg)) {
        const std::string suffix = fmt(r.area_fraction);
        rows.emplace_back("avg_" + suffix, fmt(r.avg));
        rows.emplace_back("nuc_" + suffix, fmt(r.nuc));
        if (r.radius_warning)
            std::cerr << "warning: disk radius exceeds cloud diameter at p="
                      << suffix << "\n";
    }
    emit(out, report_to_string(rows));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"point cloud auto-encoder with voxel-grid latent sampling"};
    app.require_subcommand(1);

    // dataset gen
    auto* dataset = app.add_subcommand("dataset", "dataset utilities");
    dataset->require_subcommand(1);
    auto* gen = dataset->add_subcommand("gen", "generate a procedural mesh dataset");
    std::string gen_out, gen_families = "sphere,torus,box";
    std::size_t gen_count = 0, gen_resolution = 32;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--families", gen_families);
    gen->add_option("--count", gen_count)->required();
    gen->add_option("--seed", gen_seed);
    gen->add_option("--resolution", gen_resolution);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string tr_config, tr_data, tr_out, tr_resume;
    std::size_t tr_start_epoch = 0;
    train_cmd->add_option("--config", tr_config)->required();
    train_cmd->add_option("--data", tr_data)->required();
    train_cmd->add_option("--out", tr_out)->required();
    train_cmd->add_option("--resume", tr_resume);
    train_cmd->add_option("--start-epoch", tr_start_epoch);

    // encode
    auto* enc = app.add_subcommand("encode", "encode a cloud to a latent vector");
    std::string enc_ckpt, enc_in, enc_out;
    enc->add_option("--ckpt", enc_ckpt)->required();
    enc->add_option("--in", enc_in)->required();
    enc->add_option("--out", enc_out)->required();

    // interpolate
    auto* interp = app.add_subcommand("interpolate", "decode blends of two latents");
    std::string in_ckpt, in_a, in_b, in_out;
    std::size_t in_steps = 0, in_passes = 1;
    std::uint64_t in_seed = 0;
    interp->add_option("--ckpt", in_ckpt)->required();
    interp->add_option("--a", in_a)->required();
    interp->add_option("--b", in_b)->required();
    interp->add_option("--steps", in_steps)->required();
    interp->add_option("--out", in_out)->required();
    interp->add_option("--passes", in_passes);
    interp->add_option("--seed", in_seed);

    // upsample
    auto* up = app.add_subcommand("upsample", "re-sample a cloud at higher density");
    std::string up_ckpt, up_in, up_out;
    std::size_t up_passes = 1;
    std::uint64_t up_seed = 0;
    up->add_option("--ckpt", up_ckpt)->required();
    up->add_option("--in", up_in)->required();
    up->add_option("--passes", up_passes);
    up->add_option("--seed", up_seed);
    up->add_option("--out", up_out)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "metrics");
    eval->require_subcommand(1);
    auto* ev_ch = eval->add_subcommand("chamfer", "chamfer between two clouds");
    std::string ch_a, ch_b, ch_out = "-";
    ev_ch->add_option("--a", ch_a)->required();
    ev_ch->add_option("--b", ch_b)->required();
    ev_ch->add_option("--out", ch_out);
    auto* ev_d = eval->add_subcommand("distance", "point-to-mesh distance stats");
    std::string d_cloud, d_mesh, d_out = "-";
    ev_d->add_option("--cloud", d_cloud)->required();
    ev_d->add_option("--mesh", d_mesh)->required();
    ev_d->add_option("--out", d_out);
    auto* ev_n = eval->add_subcommand("nuc", "normalized uniformity coefficient");
    std::vector<std::string> n_clouds, n_meshes;
    std::string n_fractions, n_out = "-";
    std::size_t n_disks = 9000;
    std::uint64_t n_seed = 0;
    ev_n->add_option("--cloud", n_clouds)->required();
    ev_n->add_option("--mesh", n_meshes)->required();
    ev_n->add_option("--disks", n_disks);
    ev_n->add_option("--seed", n_seed);
    ev_n->add_option("--fractions", n_fractions);
    ev_n->add_option("--out", n_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed())
            return cmd_dataset_gen(gen_out, gen_families, gen_count, gen_seed,
                                   gen_resolution);
        if (train_cmd->parsed())
            return cmd_train(tr_config, tr_data, tr_out, tr_resume, tr_start_epoch);
        if (enc->parsed()) return cmd_encode(enc_ckpt, enc_in, enc_out);
        if (interp->parsed())
            return cmd_interpolate(in_ckpt, in_a, in_b, in_steps, in_out,
                                   in_passes, in_seed);
        if (up->parsed())
            return cmd_upsample(up_ckpt, up_in, up_passes, up_seed, up_out);
        if (ev_ch->parsed()) return cmd_eval_chamfer(ch_a, ch_b, ch_out);
        if (ev_d->parsed()) return cmd_eval_distance(d_cloud, d_mesh, d_out);
        if (ev_n->parsed())
            return cmd_eval_nuc(n_clouds, n_meshes, n_disks, n_seed, n_fractions,
                                n_out);
        std::cerr << "no command given\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
