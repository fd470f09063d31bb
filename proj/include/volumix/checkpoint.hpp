#pragma once

#include <string>
#include <utility>
#include <vector>

#include "volumix/tensor.hpp"

namespace volumix {

// Flat binary tensor archive.
// Layout: magic "CKPT", version u16, count u32, then per entry:
//   name length u16, UTF-8 name, rank u8, extents u32 each, f32 little-endian values.
struct CkptEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_ckpt(const std::string& path, const std::vector<CkptEntry>& entries);
std::vector<CkptEntry> read_ckpt(const std::string& path);

// Named, insertion-ordered trainable parameters.
template <typename S>
class ParamStore {
 public:
  Tensor<S> add(const std::string& name, const Shape& shape, std::vector<S> values);
  // Dense/conv weight init: uniform in ±(1/sqrt(fan_in)).
  Tensor<S> add_uniform(const std::string& name, const Shape& shape, int64_t fan_in,
                        SplitMix64& rng);
  Tensor<S> add_zeros(const std::string& name, const Shape& shape);
  Tensor<S> add_full(const std::string& name, const Shape& shape, S value);

  bool has(const std::string& name) const;
  Tensor<S> get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor<S>>>& entries() const { return entries_; }
  int64_t total_params() const;
  int64_t total_params(const std::string& prefix) const;
  void zero_grad();

  std::vector<CkptEntry> to_entries() const;
  // Assigns values for every stored parameter from `entries`; names absent from
  // the store are ignored so side-channel entries can ride along.
  void load_entries(const std::vector<CkptEntry>& entries);

 private:
  std::vector<std::pair<std::string, Tensor<S>>> entries_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace volumix
