#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "voxsampler/io.hpp"

using namespace vxs;
namespace fs = std::filesystem;

namespace {

const std::string kCli = VOXSAMPLER_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    if (status < 0) throw std::runtime_error("system() failed");
    return WEXITSTATUS(status);
}

// One-time CLI fixture: a generated dataset and a tiny trained checkpoint.
struct Fixture {
    fs::path dir;
    std::string data_dir, run_dir, ckpt, config_path;

    Fixture() {
        dir = fs::temp_directory_path() / "vxs_cli_fixture";
        fs::remove_all(dir);
        fs::create_directories(dir);
        data_dir = (dir / "data").string();
        run_dir = (dir / "run").string();
        config_path = (dir / "train.cfg").string();
        REQUIRE(run("dataset gen --out " + data_dir +
                    " --count 1 --seed 3 --resolution 12") == 0);
        const std::string cfg =
            "epochs = 2\nlearning_rate = 0.002\nbatch_size = 4\n"
            "samplings_per_surface = 2\ninput_points = 64\n"
            "grid_resolution = 4\nlatent_dim = 8\npoint_channels = 6\n"
            "grid_channels = 5\nfeature_channels = 4\nsampler_hidden = 6\n"
            "master_seed = 7\n";
        write_file_atomic(config_path, cfg);
        REQUIRE(run("train --config " + config_path + " --data " + data_dir +
                    " --out " + run_dir) == 0);
        ckpt = (fs::path(run_dir) / "final.nsck").string();
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("cli usage errors exit with code 1") {
    REQUIRE(run("") == 1);
    REQUIRE(run("dataset gen --count 2") == 1); // missing --out
    REQUIRE(run("no_such_command") == 1);
}

TEST_CASE("cli data errors exit with code 2") {
    const auto& f = fixture();
    REQUIRE(run("encode --ckpt /nonexistent.nsck --in x.xyz --out -") == 2);
    REQUIRE(run("eval chamfer --a /nonexistent.xyz --b /nonexistent.xyz") == 2);
    REQUIRE(run("train --config " + f.config_path +
                " --data /nonexistent_dir --out " + f.run_dir) == 2);
}

TEST_CASE("dataset gen writes meshes and a consistent manifest") {
    const auto& f = fixture();
    const auto entries =
        parse_manifest(read_file((fs::path(f.data_dir) / "manifest.txt").string()));
    REQUIRE(entries.size() == 3); // one per default family
    for (const auto& e : entries) {
        const TriangleMesh mesh =
            read_mesh((fs::path(f.data_dir) / e.path).string());
        // stored area is the recomputed triangulated area
        REQUIRE(e.area == Catch::Approx(surface_area(mesh)).margin(1e-9));
        // analytic column tracks it up to triangulation error
        REQUIRE(std::abs(e.analytic_area - e.area) / e.analytic_area < 0.2);
        // normalized shapes fit the unit cube
        for (const auto& v : mesh.vertices) {
            REQUIRE(std::abs(v.x) <= 1.0);
            REQUIRE(std::abs(v.y) <= 1.0);
            REQUIRE(std::abs(v.z) <= 1.0);
        }
    }
}

TEST_CASE("dataset gen is deterministic in the seed") {
    const auto& f = fixture();
    const std::string again = (f.dir / "data_again").string();
    REQUIRE(run("dataset gen --out " + again +
                " --count 1 --seed 3 --resolution 12") == 0);
    REQUIRE(read_file((fs::path(again) / "manifest.txt").string()) ==
            read_file((fs::path(f.data_dir) / "manifest.txt").string()));
    REQUIRE(read_file((fs::path(again) / "sphere_000.ply").string()) ==
            read_file((fs::path(f.data_dir) / "sphere_000.ply").string()));
}

TEST_CASE("train emits checkpoints, a learning curve, and a report") {
    const auto& f = fixture();
    REQUIRE(fs::exists(f.ckpt));
    REQUIRE(fs::exists(fs::path(f.run_dir) / "epoch_0.nsck"));
    REQUIRE(fs::exists(fs::path(f.run_dir) / "epoch_1.nsck"));

    const std::string curve =
        read_file((fs::path(f.run_dir) / "learning_curve.log").string());
    REQUIRE(curve.find("epoch 0 chamfer ") != std::string::npos);
    REQUIRE(curve.find("epoch 1 chamfer ") != std::string::npos);
    REQUIRE(curve.find(" bce ") != std::string::npos);
    REQUIRE(curve.find(" total ") != std::string::npos);

    const std::string report =
        read_file((fs::path(f.run_dir) / "report.txt").string());
    REQUIRE(report.find("epochs 2") != std::string::npos);
    REQUIRE(report.find("parameters_encoder ") != std::string::npos);
    REQUIRE(report.find("parameters_decoder_total ") != std::string::npos);

    // the checkpoint embeds the run configuration
    const LoadedCheckpoint ck = load_checkpoint(f.ckpt);
    REQUIRE(parse_config(ck.config_text).train.latent_dim == 8);
}

TEST_CASE("training can resume from a checkpoint") {
    const auto& f = fixture();
    const std::string out2 = (f.dir / "run_resume").string();
    REQUIRE(run("train --config " + f.config_path + " --data " + f.data_dir +
                " --out " + out2 + " --resume " +
                (fs::path(f.run_dir) / "epoch_1.nsck").string() +
                " --start-epoch 2") == 0);
    const std::string curve =
        read_file((fs::path(out2) / "learning_curve.log").string());
    REQUIRE(curve.find("epoch 2 ") != std::string::npos);
    REQUIRE(curve.find("epoch 3 ") != std::string::npos);
}

TEST_CASE("encode writes a latent of the configured width") {
    const auto& f = fixture();
    const std::string cloud_path = (f.dir / "in.xyz").string();
    const TriangleMesh mesh =
        read_mesh((fs::path(f.data_dir) / "sphere_000.ply").string());
    write_xyz(cloud_path, sample_surface(mesh, 128, 9));

    const std::string latent_path = (f.dir / "z.txt").string();
    REQUIRE(run("encode --ckpt " + f.ckpt + " --in " + cloud_path + " --out " +
                latent_path) == 0);
    const Tensor z = read_latent(latent_path);
    REQUIRE(z.size() == 8);

    // identical invocation, identical bytes
    const std::string latent2 = (f.dir / "z2.txt").string();
    REQUIRE(run("encode --ckpt " + f.ckpt + " --in " + cloud_path + " --out " +
                latent2) == 0);
    REQUIRE(read_file(latent_path) == read_file(latent2));
}

TEST_CASE("upsample produces proportionally more points per pass") {
    const auto& f = fixture();
    const std::string cloud_path = (f.dir / "in.xyz").string();
    if (!fs::exists(cloud_path)) {
        const TriangleMesh mesh =
            read_mesh((fs::path(f.data_dir) / "sphere_000.ply").string());
        write_xyz(cloud_path, sample_surface(mesh, 128, 9));
    }
    const std::string one = (f.dir / "up1.xyz").string();
    const std::string eight = (f.dir / "up8.xyz").string();
    REQUIRE(run("upsample --ckpt " + f.ckpt + " --in " + cloud_path +
                " --passes 1 --seed 5 --out " + one) == 0);
    REQUIRE(run("upsample --ckpt " + f.ckpt + " --in " + cloud_path +
                " --passes 8 --seed 5 --out " + eight) == 0);
    const std::size_t n1 = read_xyz(one).size();
    const std::size_t n8 = read_xyz(eight).size();
    REQUIRE(n8 > n1);
    REQUIRE(n8 >= 4 * std::max<std::size_t>(n1, 1));

    // identical seeds give identical output files
    const std::string again = (f.dir / "up8_again.xyz").string();
    REQUIRE(run("upsample --ckpt " + f.ckpt + " --in " + cloud_path +
                " --passes 8 --seed 5 --out " + again) == 0);
    REQUIRE(read_file(eight) == read_file(again));
}

TEST_CASE("interpolate endpoints and midpoint follow latent arithmetic") {
    const auto& f = fixture();
    // two distinct latents from two shapes
    const std::string za = (f.dir / "za.txt").string();
    const std::string zb = (f.dir / "zb.txt").string();
    for (const auto& [family, path] :
         {std::pair<std::string, std::string>{"sphere_000.ply", za},
          {"torus_000.ply", zb}}) {
        const TriangleMesh mesh =
            read_mesh((fs::path(f.data_dir) / family).string());
        const std::string cp = (f.dir / (family + ".xyz")).string();
        write_xyz(cp, sample_surface(mesh, 128, 10));
        REQUIRE(run("encode --ckpt " + f.ckpt + " --in " + cp + " --out " +
                    path) == 0);
    }

    const std::string out_ab = (f.dir / "interp_ab").string();
    REQUIRE(run("interpolate --ckpt " + f.ckpt + " --a " + za + " --b " + zb +
                " --steps 3 --passes 2 --seed 11 --out " + out_ab) == 0);
    REQUIRE(fs::exists(fs::path(out_ab) / "step_000.xyz"));
    REQUIRE(fs::exists(fs::path(out_ab) / "step_002.xyz"));

    // endpoint identity: step_000 of (a,b) equals step_000 of (a,a)
    const std::string out_aa = (f.dir / "interp_aa").string();
    REQUIRE(run("interpolate --ckpt " + f.ckpt + " --a " + za + " --b " + za +
                " --steps 2 --passes 2 --seed 11 --out " + out_aa) == 0);
    REQUIRE(read_file((fs::path(out_ab) / "step_000.xyz").string()) ==
            read_file((fs::path(out_aa) / "step_000.xyz").string()));

    // midpoint arithmetic: step_001 of (a,b) equals decoding (a+b)/2
    const Tensor a = read_latent(za);
    const Tensor b = read_latent(zb);
    std::vector<double> mid(a.size());
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (a[i] + b[i]);
    const std::size_t dim = mid.size();
    const std::string zm = (f.dir / "zm.txt").string();
    write_latent(zm, Tensor::from_data({dim}, std::move(mid)));
    const std::string out_mm = (f.dir / "interp_mm").string();
    REQUIRE(run("interpolate --ckpt " + f.ckpt + " --a " + zm + " --b " + zm +
                " --steps 2 --passes 2 --seed 11 --out " + out_mm) == 0);
    REQUIRE(read_file((fs::path(out_ab) / "step_001.xyz").string()) ==
            read_file((fs::path(out_mm) / "step_000.xyz").string()));

    REQUIRE(run("interpolate --ckpt " + f.ckpt + " --a " + za + " --b " + zb +
                " --steps 1 --out " + out_ab) == 2);
}

TEST_CASE("eval chamfer of a cloud against itself is zero") {
    const auto& f = fixture();
    const std::string cloud_path = (f.dir / "selfcmp.xyz").string();
    const TriangleMesh mesh =
        read_mesh((fs::path(f.data_dir) / "box_000.ply").string());
    write_xyz(cloud_path, sample_surface(mesh, 50, 13));
    const std::string out = (f.dir / "chamfer.txt").string();
    REQUIRE(run("eval chamfer --a " + cloud_path + " --b " + cloud_path +
                " --out " + out) == 0);
    const std::string rep = read_file(out);
    REQUIRE(rep.find("chamfer 0\n") != std::string::npos);
    REQUIRE(rep.find("chamfer_normalized 0\n") != std::string::npos);
}

TEST_CASE("eval distance of on-surface samples is near zero") {
    const auto& f = fixture();
    const std::string mesh_path = (fs::path(f.data_dir) / "torus_000.ply").string();
    const std::string cloud_path = (f.dir / "onsurf.xyz").string();
    write_xyz(cloud_path, sample_surface(read_mesh(mesh_path), 60, 14));
    const std::string out = (f.dir / "distance.txt").string();
    REQUIRE(run("eval distance --cloud " + cloud_path + " --mesh " + mesh_path +
                " --out " + out) == 0);
    std::istringstream in(read_file(out));
    std::string key;
    double mean = 1;
    in >> key >> mean;
    REQUIRE(key == "distance_mean");
    REQUIRE(mean < 1e-9);
}

TEST_CASE("eval nuc runs end to end") {
    const auto& f = fixture();
    const std::string mesh_path = (fs::path(f.data_dir) / "sphere_000.ply").string();
    const std::string cloud_path = (f.dir / "nuccloud.xyz").string();
    write_xyz(cloud_path, sample_surface(read_mesh(mesh_path), 500, 15));
    const std::string out = (f.dir / "nuc.txt").string();
    REQUIRE(run("eval nuc --cloud " + cloud_path + " --mesh " + mesh_path +
                " --disks 100 --seed 2 --fractions 0.01,0.02 --out " + out) == 0);
    const std::string rep = read_file(out);
    REQUIRE(rep.find("avg_0.01 ") != std::string::npos);
    REQUIRE(rep.find("nuc_0.02 ") != std::string::npos);
}
