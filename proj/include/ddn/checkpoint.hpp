// checkpoint.hpp - binary container for named f64 arrays plus metadata.
//
// Layout (all integers little-endian):
//   magic "DDN1" | u32 version | u32 meta count | (u32 klen, key, u32 vlen,
//   value)* sorted by key | u32 array count | (u32 name len, name, u32 ndim,
//   u64 dims..., f64 payload...)* in insertion order.

#ifndef DDN_CHECKPOINT_HPP_
#define DDN_CHECKPOINT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ddn/errors.hpp"

namespace ddn {

class Checkpoint {
public:
    struct Array {
        std::string name;
        std::vector<std::size_t> shape;
        std::vector<double> data;
    };

    void add(const std::string& name, std::vector<std::size_t> shape, std::vector<double> data);
    bool has(const std::string& name) const;
    const Array& get(const std::string& name) const;
    const std::vector<Array>& arrays() const { return arrays_; }

    void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
    void set_meta_u64(const std::string& key, std::uint64_t value);
    std::string meta(const std::string& key) const;
    std::uint64_t meta_u64(const std::string& key) const;
    bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    std::vector<Array> arrays_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> meta_;
};

}  // namespace ddn

#endif  // DDN_CHECKPOINT_HPP_
