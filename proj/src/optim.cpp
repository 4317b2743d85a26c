#include "freqmix/optim.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "freqmix/errors.hpp"

namespace freqmix {

void sgd_step(std::vector<Parameter*>& params, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay) {
    if (lr < 0.0) throw std::invalid_argument("sgd_step: learning rate must be >= 0");
    if (velocity.size() != params.size()) {
        velocity.clear();
        for (Parameter* p : params) velocity.emplace_back(p->value.shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        Tensor& v = velocity[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            v[j] = momentum * v[j] + p.grad[j] + weight_decay * p.value[j];
            p.value[j] -= lr * v[j];
        }
        p.zero_grad();
    }
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void SgdOptimizer::step(double lr) { sgd_step(params_, velocity_, lr, momentum_, weight_decay_); }

namespace {

constexpr char kMagic[4] = {'F', 'M', 'X', 'C'};
constexpr std::uint8_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        write_u32(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u32(os, static_cast<std::uint32_t>(p->value.rank()));
        for (std::size_t d : p->value.shape()) write_u32(os, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < p->value.size(); ++i) write_f64(os, p->value[i]);
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, std::vector<Parameter*>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("checkpoint magic mismatch: " + path);
    }
    const int version = is.get();
    if (version != kVersion) {
        throw IoError("checkpoint version " + std::to_string(version) + " unsupported");
    }
    const std::uint32_t count = read_u32(is);
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : params) by_name[p->name] = p;
    std::size_t matched = 0;
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = read_u32(is);
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = read_u32(is);
            total *= shape[i];
        }
        std::vector<double> data(total);
        for (std::size_t i = 0; i < total; ++i) data[i] = read_f64(is);
        if (!is) throw IoError("checkpoint truncated: " + path);
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw IoError("checkpoint parameter '" + name + "' unknown to this model");
        }
        Parameter& p = *it->second;
        if (p.value.shape() != shape) {
            throw IoError("checkpoint parameter '" + name + "' shape " + shape_str(shape) +
                          " does not match model " + p.value.shape_str());
        }
        p.value = Tensor(shape, std::move(data));
        ++matched;
    }
    if (matched != params.size()) {
        throw IoError("checkpoint covers " + std::to_string(matched) + " of " +
                      std::to_string(params.size()) + " parameters");
    }
}

}  // namespace freqmix
