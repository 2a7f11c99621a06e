#include "xmid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace xmid {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("checkpoint truncated");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > 4096) throw std::runtime_error("checkpoint name field too long");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw std::runtime_error("checkpoint truncated");
    return s;
}

void put_int_vector(std::ostream& os, const std::vector<int>& v) {
    put_u32(os, static_cast<std::uint32_t>(v.size()));
    for (int x : v) put_u32(os, static_cast<std::uint32_t>(x));
}

std::vector<int> get_int_vector(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > 1024) throw std::runtime_error("checkpoint schedule too long");
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(get_u32(is));
    return v;
}

ModelSpec read_spec_fields(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw std::runtime_error("not a model checkpoint (bad magic)");
    }
    const std::uint32_t version = get_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    ModelSpec spec;
    spec.kind = static_cast<ModelKind>(get_u32(is));
    if (static_cast<int>(spec.kind) < 0 || static_cast<int>(spec.kind) >= kModelKindCount) {
        throw std::runtime_error("checkpoint has unknown model kind");
    }
    spec.n_classes = static_cast<int>(get_u32(is));
    spec.input_h = static_cast<int>(get_u32(is));
    spec.input_w = static_cast<int>(get_u32(is));
    spec.bn_position = get_u32(is) == 0 ? BnPosition::before_cross : BnPosition::after_cross;
    spec.chain_kernels = get_int_vector(is);
    spec.cross_kernels = get_int_vector(is);
    spec.dense_widths = get_int_vector(is);
    spec.dropout_rate = static_cast<double>(get_f32(is));
    spec.dropout_last_chain = get_u32(is) != 0;
    spec.l2 = static_cast<double>(get_f32(is));
    return spec;
}

}  // namespace

void save_checkpoint(Model<float>& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    const ModelSpec& spec = model.spec();
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(spec.kind));
    put_u32(os, static_cast<std::uint32_t>(spec.n_classes));
    put_u32(os, static_cast<std::uint32_t>(spec.input_h));
    put_u32(os, static_cast<std::uint32_t>(spec.input_w));
    put_u32(os, spec.bn_position == BnPosition::before_cross ? 0u : 1u);
    put_int_vector(os, spec.chain_kernels);
    put_int_vector(os, spec.cross_kernels);
    put_int_vector(os, spec.dense_widths);
    put_f32(os, static_cast<float>(spec.dropout_rate));
    put_u32(os, spec.dropout_last_chain ? 1u : 0u);
    put_f32(os, static_cast<float>(spec.l2));

    auto tensors = model.state_tensors();
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (auto& [name, tensor] : tensors) {
        put_string(os, name);
        put_u32(os, static_cast<std::uint32_t>(tensor->rank()));
        for (std::int64_t e : tensor->shape()) put_u32(os, static_cast<std::uint32_t>(e));
        for (std::size_t i = 0; i < tensor->numel(); ++i) put_f32(os, (*tensor)[i]);
    }
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

ModelSpec read_checkpoint_spec(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    return read_spec_fields(is);
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    const ModelSpec spec = read_spec_fields(is);
    SeededRng rng(0);
    Model<float> model(spec, rng);

    auto tensors = model.state_tensors();
    const std::uint32_t count = get_u32(is);
    if (count != tensors.size()) {
        throw std::runtime_error("checkpoint blob count mismatch: file has " +
                                 std::to_string(count) + ", model expects " +
                                 std::to_string(tensors.size()));
    }
    for (auto& [name, tensor] : tensors) {
        const std::string file_name = get_string(is);
        if (file_name != name) {
            throw std::runtime_error("checkpoint blob order mismatch: expected " + name + ", got " +
                                     file_name);
        }
        const std::uint32_t rank = get_u32(is);
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::int64_t>(get_u32(is));
        if (shape != tensor->shape()) {
            throw std::runtime_error("checkpoint blob shape mismatch for " + name);
        }
        for (std::size_t i = 0; i < tensor->numel(); ++i) (*tensor)[i] = get_f32(is);
    }
    return model;
}

}  // namespace xmid
