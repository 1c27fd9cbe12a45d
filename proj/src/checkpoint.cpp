#include "tacorr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tacorr {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'C', 'O', 'R', 'R', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t read_u64(std::istream& is, const std::string& what) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ParseError("checkpoint: truncated while reading " + what);
    return v;
}
double read_f64(std::istream& is, const std::string& what) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ParseError("checkpoint: truncated while reading " + what);
    return v;
}

void write_config(std::ostream& os, const ModelConfig& c) {
    write_u64(os, c.points);
    write_u64(os, c.feature_dim);
    write_u64(os, c.layers);
    write_u64(os, c.templates);
    write_u64(os, c.template_points);
    write_u64(os, c.knn_k);
    write_f64(os, c.gumbel_temperature);
    write_f64(os, c.template_embedding_std);
    write_f64(os, c.trans_reverse_weight);
    write_f64(os, c.trans_reverse_ramp_start);
    std::uint64_t flags = 0;
    const bool bits[] = {c.use_template_generation, c.use_tc_loss, c.use_selector,
                         c.use_fusion,              c.use_trans_loss, c.align_templates,
                         c.encoder_absolute_coords, c.fusion_detaches_embeddings};
    for (std::size_t i = 0; i < std::size(bits); ++i)
        if (bits[i]) flags |= 1ull << i;
    write_u64(os, flags);
}

ModelConfig read_config(std::istream& is) {
    ModelConfig c;
    c.points = read_u64(is, "points");
    c.feature_dim = read_u64(is, "feature_dim");
    c.layers = read_u64(is, "layers");
    c.templates = read_u64(is, "templates");
    c.template_points = read_u64(is, "template_points");
    c.knn_k = read_u64(is, "knn_k");
    c.gumbel_temperature = read_f64(is, "gumbel_temperature");
    c.template_embedding_std = read_f64(is, "template_embedding_std");
    c.trans_reverse_weight = read_f64(is, "trans_reverse_weight");
    c.trans_reverse_ramp_start = read_f64(is, "trans_reverse_ramp_start");
    const std::uint64_t flags = read_u64(is, "flags");
    c.use_template_generation = flags & 1;
    c.use_tc_loss = flags & 2;
    c.use_selector = flags & 4;
    c.use_fusion = flags & 8;
    c.use_trans_loss = flags & 16;
    c.align_templates = flags & 32;
    c.encoder_absolute_coords = flags & 64;
    c.fusion_detaches_embeddings = flags & 128;
    return c;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    write_config(os, model.cfg);
    Model& mutable_model = const_cast<Model&>(model);  // collect() is non-const only
    std::vector<Parameter*> params = mutable_model.parameters();
    write_u64(os, params.size());
    for (const Parameter* p : params) {
        write_u64(os, p->name.size());
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u64(os, p->value.shape.size());
        for (std::size_t d : p->value.shape) write_u64(os, d);
        os.write(reinterpret_cast<const char*>(p->value.values.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failure on checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ParseError("checkpoint " + path.string() + ": bad magic/version header");
    const ModelConfig cfg = read_config(is);
    // Build a skeleton with the right shapes, then overwrite every tensor.
    Rng rng(0);
    PointCloud placeholder;
    placeholder.positions.assign(cfg.template_points, Vec3{0, 0, 0});
    Model model = Model::init(cfg, {placeholder}, rng);
    std::vector<Parameter*> params = model.parameters();
    const std::uint64_t count = read_u64(is, "parameter count");
    if (count != params.size())
        throw ParseError("checkpoint " + path.string() + ": holds " + std::to_string(count) +
                         " tensors, model needs " + std::to_string(params.size()));
    for (Parameter* p : params) {
        const std::uint64_t name_len = read_u64(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
            throw ParseError("checkpoint: truncated tensor name");
        if (name != p->name)
            throw ParseError("checkpoint " + path.string() + ": expected tensor '" + p->name +
                             "', found '" + name + "'");
        const std::uint64_t ndim = read_u64(is, "rank of " + name);
        Shape shape(ndim);
        for (std::uint64_t d = 0; d < ndim; ++d) shape[d] = read_u64(is, "dim of " + name);
        if (shape != p->value.shape)
            throw ParseError("checkpoint " + path.string() + ": tensor '" + name + "' has shape " +
                             shape_str(shape) + ", model needs " + shape_str(p->value.shape));
        if (!is.read(reinterpret_cast<char*>(p->value.values.data()),
                     static_cast<std::streamsize>(p->value.size() * sizeof(double))))
            throw ParseError("checkpoint: truncated data for tensor '" + name + "'");
        if (!all_finite(p->value))
            throw NumericError("checkpoint: non-finite values in tensor '" + name + "'");
    }
    return model;
}

}  // namespace tacorr
