#ifndef VOXSAMPLER_IO_HPP
#define VOXSAMPLER_IO_HPP

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "voxsampler/geometry.hpp"
#include "voxsampler/metrics.hpp"
#include "voxsampler/model.hpp"
#include "voxsampler/training.hpp"

namespace vxs {

// ---------------------------------------------------------------------------
// Atomic text/binary writing: write to a temp file, then rename.
// ---------------------------------------------------------------------------

inline void write_file_atomic(const std::string& path, const std::string& content,
                              bool binary = false) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
        if (!out) throw IoError("cannot write '" + tmp + "'");
        out.write(content.data(), std::streamsize(content.size()));
        if (!out) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename to '" + path + "' failed: " + ec.message());
}

inline std::string read_file(const std::string& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace detail {

inline std::string fmt_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Point clouds: XYZ text and ASCII PLY
// ---------------------------------------------------------------------------

inline std::string xyz_to_string(const PointCloud& cloud) {
    std::string out;
    for (const auto& p : cloud.points) {
        out += detail::fmt_g9(p.x);
        out += ' ';
        out += detail::fmt_g9(p.y);
        out += ' ';
        out += detail::fmt_g9(p.z);
        out += '\n';
    }
    return out;
}

inline void write_xyz(const std::string& path, const PointCloud& cloud) {
    write_file_atomic(path, xyz_to_string(cloud));
}

inline PointCloud parse_xyz(const std::string& text) {
    PointCloud cloud;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p.x >> p.y >> p.z))
            throw IoError("malformed xyz line: '" + line + "'");
        cloud.points.push_back(p);
    }
    return cloud;
}

inline PointCloud read_xyz(const std::string& path) {
    return parse_xyz(read_file(path));
}

inline std::string ply_to_string(const TriangleMesh& mesh) {
    std::string out = "ply\nformat ascii 1.0\nelement vertex " +
                      std::to_string(mesh.vertices.size()) +
                      "\nproperty float x\nproperty float y\nproperty float z\n"
                      "element face " +
                      std::to_string(mesh.triangles.size()) +
                      "\nproperty list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices)
        out += detail::fmt_g9(v.x) + " " + detail::fmt_g9(v.y) + " " +
               detail::fmt_g9(v.z) + "\n";
    for (const auto& t : mesh.triangles)
        out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " +
               std::to_string(t[2]) + "\n";
    return out;
}

inline std::string ply_to_string(const PointCloud& cloud) {
    std::string out = "ply\nformat ascii 1.0\nelement vertex " +
                      std::to_string(cloud.points.size()) +
                      "\nproperty float x\nproperty float y\nproperty float z\n"
                      "end_header\n";
    for (const auto& v : cloud.points)
        out += detail::fmt_g9(v.x) + " " + detail::fmt_g9(v.y) + " " +
               detail::fmt_g9(v.z) + "\n";
    return out;
}

inline void write_ply(const std::string& path, const TriangleMesh& mesh) {
    write_file_atomic(path, ply_to_string(mesh));
}

inline void write_ply(const std::string& path, const PointCloud& cloud) {
    write_file_atomic(path, ply_to_string(cloud));
}

/// Parses the ASCII PLY subset this project writes: float x/y/z vertex
/// properties, optional face element with index lists.
inline TriangleMesh parse_ply(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "ply")
        throw IoError("not a PLY file (missing 'ply' magic)");
    std::size_t n_vertices = 0, n_faces = 0;
    bool ascii = false, in_vertex = false;
    std::vector<std::string> vertex_props;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string kind;
            ls >> kind;
            ascii = (kind == "ascii");
        } else if (tok == "element") {
            std::string what;
            std::size_t count = 0;
            ls >> what >> count;
            if (what == "vertex") { n_vertices = count; in_vertex = true; }
            else { if (what == "face") n_faces = count; in_vertex = false; }
        } else if (tok == "property") {
            if (in_vertex) {
                std::string type, name;
                ls >> type >> name;
                if (type != "list") vertex_props.push_back(name);
            }
        } else if (tok == "end_header") {
            break;
        } else if (tok == "comment" || tok == "obj_info") {
            continue;
        }
    }
    if (!ascii) throw IoError("only ASCII PLY is supported");

    TriangleMesh mesh;
    mesh.vertices.reserve(n_vertices);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        if (!std::getline(in, line)) throw IoError("PLY vertex list truncated");
        std::istringstream ls(line);
        Vec3 v;
        double value;
        std::size_t got = 0;
        for (const auto& name : vertex_props) {
            if (!(ls >> value)) throw IoError("malformed PLY vertex line");
            if (name == "x") { v.x = value; got++; }
            else if (name == "y") { v.y = value; got++; }
            else if (name == "z") { v.z = value; got++; }
        }
        if (got != 3) throw IoError("PLY vertex lacks x/y/z properties");
        mesh.vertices.push_back(v);
    }
    for (std::size_t i = 0; i < n_faces; ++i) {
        if (!std::getline(in, line)) throw IoError("PLY face list truncated");
        std::istringstream ls(line);
        std::size_t cnt = 0;
        if (!(ls >> cnt)) throw IoError("malformed PLY face line");
        std::vector<std::size_t> idx(cnt);
        for (auto& ix : idx)
            if (!(ls >> ix)) throw IoError("malformed PLY face line");
        // fan-triangulate polygons
        for (std::size_t j = 2; j < cnt; ++j)
            mesh.triangles.push_back({idx[0], idx[j - 1], idx[j]});
    }
    mesh.validate();
    return mesh;
}

inline TriangleMesh read_mesh_ply(const std::string& path) {
    return parse_ply(read_file(path));
}

inline TriangleMesh parse_off(const std::string& text) {
    std::istringstream in(text);
    std::string tok;
    if (!(in >> tok) || tok != "OFF") throw IoError("not an OFF file");
    std::size_t nv = 0, nf = 0, ne = 0;
    if (!(in >> nv >> nf >> ne)) throw IoError("malformed OFF counts");
    TriangleMesh mesh;
    mesh.vertices.resize(nv);
    for (auto& v : mesh.vertices)
        if (!(in >> v.x >> v.y >> v.z)) throw IoError("malformed OFF vertex");
    for (std::size_t i = 0; i < nf; ++i) {
        std::size_t cnt = 0;
        if (!(in >> cnt)) throw IoError("malformed OFF face");
        std::vector<std::size_t> idx(cnt);
        for (auto& ix : idx)
            if (!(in >> ix)) throw IoError("malformed OFF face");
        for (std::size_t j = 2; j < cnt; ++j)
            mesh.triangles.push_back({idx[0], idx[j - 1], idx[j]});
    }
    mesh.validate();
    return mesh;
}

inline TriangleMesh read_mesh(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".off")
        return parse_off(read_file(path));
    return parse_ply(read_file(path));
}

/// Reads a point cloud from .xyz text or a vertex-only/mesh PLY.
inline PointCloud read_cloud(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") {
        const TriangleMesh m = parse_ply(read_file(path));
        return PointCloud{m.vertices};
    }
    return read_xyz(path);
}

// ---------------------------------------------------------------------------
// Latent vectors: one float per line
// ---------------------------------------------------------------------------

inline void write_latent(const std::string& path, const Tensor& z) {
    std::string out;
    for (double v : z.data()) out += detail::fmt_g17(v) + "\n";
    write_file_atomic(path, out);
}

inline Tensor read_latent(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<double> values;
    double v;
    while (in >> v) values.push_back(v);
    if (values.empty()) throw IoError("empty latent file '" + path + "'");
    const std::size_t n = values.size();
    return Tensor::from_data({n}, std::move(values));
}

// ---------------------------------------------------------------------------
// Run configuration: line-oriented `key = value`, unknown keys rejected
// ---------------------------------------------------------------------------

struct RunConfig {
    TrainConfig train;
    NucConfig nuc;
    // model widths not implied by the train config
    std::size_t point_channels = 32;
    std::size_t grid_channels = 16;
    std::size_t feature_channels = 16;
    std::size_t sampler_hidden = 32;

    ModelConfig model() const {
        ModelConfig m;
        m.grid_resolution = train.grid_resolution;
        m.latent_dim = train.latent_dim;
        m.point_channels = point_channels;
        m.grid_channels = grid_channels;
        m.feature_channels = feature_channels;
        m.sampler_hidden = sampler_hidden;
        return m;
    }

    bool operator==(const RunConfig&) const = default;
};

inline bool operator==(const LossWeights& a, const LossWeights& b) {
    return a.chamfer == b.chamfer && a.bce == b.bce &&
           a.consistency == b.consistency;
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.epochs == b.epochs && a.learning_rate == b.learning_rate &&
           a.batch_size == b.batch_size &&
           a.samplings_per_surface == b.samplings_per_surface &&
           a.input_points == b.input_points &&
           a.grid_resolution == b.grid_resolution &&
           a.latent_dim == b.latent_dim && a.weights == b.weights &&
           a.master_seed == b.master_seed && a.optimizer == b.optimizer;
}

inline bool operator==(const NucConfig& a, const NucConfig& b) {
    return a.disk_count == b.disk_count && a.area_fractions == b.area_fractions &&
           a.rng_seed == b.rng_seed;
}

inline std::string serialize_config(const RunConfig& c) {
    std::string out;
    auto kv = [&out](const std::string& k, const std::string& v) {
        out += k + " = " + v + "\n";
    };
    kv("epochs", std::to_string(c.train.epochs));
    kv("learning_rate", detail::fmt_g17(c.train.learning_rate));
    kv("batch_size", std::to_string(c.train.batch_size));
    kv("samplings_per_surface", std::to_string(c.train.samplings_per_surface));
    kv("input_points", std::to_string(c.train.input_points));
    kv("grid_resolution", std::to_string(c.train.grid_resolution));
    kv("latent_dim", std::to_string(c.train.latent_dim));
    kv("w_chamfer", detail::fmt_g17(c.train.weights.chamfer));
    kv("w_bce", detail::fmt_g17(c.train.weights.bce));
    kv("w_consistency", detail::fmt_g17(c.train.weights.consistency));
    kv("master_seed", std::to_string(c.train.master_seed));
    kv("optimizer", c.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd");
    kv("point_channels", std::to_string(c.point_channels));
    kv("grid_channels", std::to_string(c.grid_channels));
    kv("feature_channels", std::to_string(c.feature_channels));
    kv("sampler_hidden", std::to_string(c.sampler_hidden));
    kv("nuc_disk_count", std::to_string(c.nuc.disk_count));
    std::string fr;
    for (double p : c.nuc.area_fractions) {
        if (!fr.empty()) fr += ",";
        fr += detail::fmt_g17(p);
    }
    kv("nuc_area_fractions", fr);
    kv("nuc_seed", std::to_string(c.nuc.rng_seed));
    return out;
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        if (eq == std::string::npos) {
            if (!trim(line).empty())
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto bad = [&](const std::string& why) {
            return ConfigError("line " + std::to_string(line_no) + ", key '" +
                               key + "': " + why);
        };
        auto as_size = [&]() -> std::size_t {
            try { return std::stoull(value); }
            catch (...) { throw bad("expected an unsigned integer"); }
        };
        auto as_double = [&]() -> double {
            try { return std::stod(value); }
            catch (...) { throw bad("expected a number"); }
        };
        if (key == "epochs") c.train.epochs = as_size();
        else if (key == "learning_rate") c.train.learning_rate = as_double();
        else if (key == "batch_size") c.train.batch_size = as_size();
        else if (key == "samplings_per_surface") c.train.samplings_per_surface = as_size();
        else if (key == "input_points") c.train.input_points = as_size();
        else if (key == "grid_resolution") c.train.grid_resolution = as_size();
        else if (key == "latent_dim") c.train.latent_dim = as_size();
        else if (key == "w_chamfer") c.train.weights.chamfer = as_double();
        else if (key == "w_bce") c.train.weights.bce = as_double();
        else if (key == "w_consistency") c.train.weights.consistency = as_double();
        else if (key == "master_seed") c.train.master_seed = as_size();
        else if (key == "optimizer") {
            if (value == "adam") c.train.optimizer = OptimizerKind::Adam;
            else if (value == "sgd") c.train.optimizer = OptimizerKind::Sgd;
            else throw bad("expected 'adam' or 'sgd'");
        }
        else if (key == "point_channels") c.point_channels = as_size();
        else if (key == "grid_channels") c.grid_channels = as_size();
        else if (key == "feature_channels") c.feature_channels = as_size();
        else if (key == "sampler_hidden") c.sampler_hidden = as_size();
        else if (key == "nuc_disk_count") c.nuc.disk_count = as_size();
        else if (key == "nuc_area_fractions") {
            c.nuc.area_fractions.clear();
            std::istringstream fs(value);
            std::string tok;
            while (std::getline(fs, tok, ','))
                try { c.nuc.area_fractions.push_back(std::stod(tok)); }
                catch (...) { throw bad("expected comma-separated numbers"); }
        }
        else if (key == "nuc_seed") c.nuc.rng_seed = as_size();
        else throw bad("unknown key");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "NSCK", little-endian fixed
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += char((v >> (8 * i)) & 0xff);
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out += char((v >> (8 * i)) & 0xff);
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace detail

inline std::string checkpoint_to_string(const ModelParams& params,
                                        const std::string& config_text) {
    std::string out = "NSCK";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, config_text.size());
    out += config_text;
    detail::put_u64(out, params.tensors.size());
    for (const auto& [name, t] : params.tensors) {
        detail::put_u64(out, name.size());
        out += name;
        detail::put_u32(out, std::uint32_t(t.rank()));
        for (std::size_t e : t.shape()) detail::put_u64(out, e);
        for (double v : t.data()) detail::put_f64(out, v);
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const std::string& config_text) {
    write_file_atomic(path, checkpoint_to_string(params, config_text),
                      /*binary=*/true);
}

struct LoadedCheckpoint {
    ModelParams params;
    std::string config_text;
};

inline LoadedCheckpoint checkpoint_from_string(const std::string& buf) {
    detail::Reader r{buf};
    if (r.bytes(4) != "NSCK") throw IoError("bad checkpoint magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    LoadedCheckpoint ck;
    ck.config_text = r.bytes(r.u64());
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u64());
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& e : shape) e = r.u64();
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = r.f64();
        Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
        t.set_name(name);
        ck.params.tensors.emplace(name, std::move(t));
    }
    ck.params.config = parse_config(ck.config_text).model();
    return ck;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_string(read_file(path, /*binary=*/true));
}

// ---------------------------------------------------------------------------
// Dataset manifest and reports
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;
    std::string family;
    double area = 0;          // triangulated area of the stored mesh
    double analytic_area = 0; // closed-form area of the generating shape
};

inline std::string manifest_to_string(const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries)
        out += e.path + " " + e.family + " " + detail::fmt_g17(e.area) + " " +
               detail::fmt_g17(e.analytic_area) + "\n";
    return out;
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> entries;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.path >> e.family >> e.area >> e.analytic_area))
            throw IoError("malformed manifest line: '" + line + "'");
        entries.push_back(e);
    }
    return entries;
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
    const auto entries = parse_manifest(read_file(manifest_path));
    if (entries.empty()) throw IoError("empty manifest in '" + dir + "'");
    Dataset dataset;
    for (const auto& e : entries) {
        DatasetEntry d;
        d.mesh = read_mesh((fs::path(dir) / e.path).string());
        d.family = e.family;
        d.area = e.area;
        dataset.push_back(std::move(d));
    }
    return dataset;
}

/// `key value` lines.
inline std::string report_to_string(
    const std::vector<std::pair<std::string, std::string>>& rows) {
    std::string out;
    for (const auto& [k, v] : rows) out += k + " " + v + "\n";
    return out;
}

inline std::string curve_line(const EpochStats& s) {
    return "epoch " + std::to_string(s.epoch) + " chamfer " +
           detail::fmt_g9(s.chamfer) + " bce " + detail::fmt_g9(s.bce) +
           " consistency " + detail::fmt_g9(s.consistency) + " total " +
           detail::fmt_g9(s.total);
}

} // namespace vxs

#endif // VOXSAMPLER_IO_HPP
