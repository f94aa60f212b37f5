#include "ddn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ddn {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'N', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& buf, double d) { put_u64(buf, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError(path + ": truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void Checkpoint::add(const std::string& name, std::vector<std::size_t> shape,
                     std::vector<double> data) {
    if (index_.count(name)) throw ContractError("checkpoint: duplicate array '" + name + "'");
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    if (count != data.size()) {
        throw ShapeError("checkpoint: array '" + name + "' payload does not match shape");
    }
    index_[name] = arrays_.size();
    arrays_.push_back({name, std::move(shape), std::move(data)});
}

bool Checkpoint::has(const std::string& name) const { return index_.count(name) != 0; }

const Checkpoint::Array& Checkpoint::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("checkpoint: missing array '" + name + "'");
    return arrays_[it->second];
}

void Checkpoint::set_meta_u64(const std::string& key, std::uint64_t value) {
    meta_[key] = std::to_string(value);
}

std::string Checkpoint::meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw ContractError("checkpoint: missing metadata '" + key + "'");
    return it->second;
}

std::uint64_t Checkpoint::meta_u64(const std::string& key) const {
    return std::stoull(meta(key));
}

void Checkpoint::save(const std::string& path) const {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(meta_.size()));
    for (const auto& [k, v] : meta_) {
        put_u32(buf, static_cast<std::uint32_t>(k.size()));
        buf.append(k);
        put_u32(buf, static_cast<std::uint32_t>(v.size()));
        buf.append(v);
    }
    put_u32(buf, static_cast<std::uint32_t>(arrays_.size()));
    for (const Array& a : arrays_) {
        put_u32(buf, static_cast<std::uint32_t>(a.name.size()));
        buf.append(a.name);
        put_u32(buf, static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape) put_u64(buf, d);
        for (double x : a.data) put_f64(buf, x);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf, 0, path};

    if (r.str(4) != std::string(kMagic, 4)) throw ParseError(path + ": bad checkpoint magic");
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    const std::uint32_t n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        const std::string k = r.str(r.u32());
        const std::string v = r.str(r.u32());
        ck.meta_[k] = v;
    }
    const std::uint32_t n_arrays = r.u32();
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        Array a;
        a.name = r.str(r.u32());
        const std::uint32_t ndim = r.u32();
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(static_cast<std::size_t>(r.u64()));
            count *= a.shape.back();
        }
        a.data.resize(count);
        for (double& x : a.data) x = r.f64();
        if (ck.index_.count(a.name)) throw ParseError(path + ": duplicate array " + a.name);
        ck.index_[a.name] = ck.arrays_.size();
        ck.arrays_.push_back(std::move(a));
    }
    if (r.pos != buf.size()) throw ParseError(path + ": trailing bytes in checkpoint");
    return ck;
}

}  // namespace ddn
