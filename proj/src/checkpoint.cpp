#include <cmath>
#include <cstring>
#include <fstream>

#include "volumix/checkpoint.hpp"

namespace volumix {

namespace {

void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

struct Reader {
  const unsigned char* p;
  size_t n;
  size_t pos = 0;
  void need(size_t k, const char* what) {
    if (pos + k > n) throw DataError(std::string("checkpoint: truncated while reading ") + what);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

void write_ckpt(const std::string& path, const std::vector<CkptEntry>& entries) {
  std::string buf;
  buf += "CKPT";
  put_u16(buf, 1);
  put_u32(buf, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw DataError("checkpoint: name too long: " + e.name);
    if (e.shape.size() > 0xFF) throw DataError("checkpoint: rank too large for " + e.name);
    put_u16(buf, static_cast<uint16_t>(e.name.size()));
    buf += e.name;
    buf.push_back(static_cast<char>(e.shape.size()));
    int64_t count = 1;
    for (int64_t ext : e.shape) {
      if (ext < 1 || ext > 0xFFFFFFFFLL) throw DataError("checkpoint: bad extent in " + e.name);
      put_u32(buf, static_cast<uint32_t>(ext));
      count *= ext;
    }
    if (count != static_cast<int64_t>(e.values.size())) {
      throw DataError("checkpoint: " + e.name + " has " + std::to_string(e.values.size()) +
                      " values for shape " + str(e.shape));
    }
    for (float v : e.values) put_f32(buf, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("checkpoint: write failed: " + path);
}

std::vector<CkptEntry> read_ckpt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open: " + path);
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{reinterpret_cast<const unsigned char*>(raw.data()), raw.size()};
  r.need(4, "magic");
  if (std::memcmp(raw.data(), "CKPT", 4) != 0) throw DataError("checkpoint: bad magic in " + path);
  r.pos = 4;
  uint16_t ver = r.u16("version");
  if (ver != 1) throw DataError("checkpoint: unsupported version " + std::to_string(ver));
  uint32_t count = r.u32("count");
  std::vector<CkptEntry> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CkptEntry e;
    uint16_t nl = r.u16("name length");
    r.need(nl, "name");
    e.name.assign(raw.data() + r.pos, nl);
    r.pos += nl;
    r.need(1, "rank");
    uint8_t rank = r.p[r.pos++];
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      uint32_t ext = r.u32("extent");
      if (ext == 0) throw DataError("checkpoint: zero extent in " + e.name);
      e.shape.push_back(static_cast<int64_t>(ext));
      n *= ext;
    }
    r.need(static_cast<size_t>(n) * 4, "values");
    e.values.resize(static_cast<size_t>(n));
    for (int64_t v = 0; v < n; ++v) e.values[static_cast<size_t>(v)] = r.f32("value");
    out.push_back(std::move(e));
  }
  if (r.pos != r.n) {
    throw DataError("checkpoint: " + std::to_string(r.n - r.pos) + " trailing bytes in " + path);
  }
  return out;
}

template <typename S>
Tensor<S> ParamStore<S>::add(const std::string& name, const Shape& shape, std::vector<S> values) {
  if (has(name)) throw DataError("ParamStore: duplicate parameter " + name);
  Tensor<S> t = Tensor<S>::param(shape, std::move(values));
  entries_.emplace_back(name, t);
  return t;
}

template <typename S>
Tensor<S> ParamStore<S>::add_uniform(const std::string& name, const Shape& shape, int64_t fan_in,
                                     SplitMix64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<S> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  return add(name, shape, std::move(v));
}

template <typename S>
Tensor<S> ParamStore<S>::add_zeros(const std::string& name, const Shape& shape) {
  return add(name, shape, std::vector<S>(static_cast<size_t>(numel(shape)), S(0)));
}

template <typename S>
Tensor<S> ParamStore<S>::add_full(const std::string& name, const Shape& shape, S value) {
  return add(name, shape, std::vector<S>(static_cast<size_t>(numel(shape)), value));
}

template <typename S>
bool ParamStore<S>::has(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

template <typename S>
Tensor<S> ParamStore<S>::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw DataError("ParamStore: no parameter named " + name);
}

template <typename S>
int64_t ParamStore<S>::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename S>
int64_t ParamStore<S>::total_params(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  }
  return n;
}

template <typename S>
void ParamStore<S>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename S>
std::vector<CkptEntry> ParamStore<S>::to_entries() const {
  std::vector<CkptEntry> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) {
    CkptEntry e;
    e.name = name;
    e.shape = t.shape();
    e.values.resize(static_cast<size_t>(t.numel()));
    const S* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) e.values[static_cast<size_t>(i)] = static_cast<float>(p[i]);
    out.push_back(std::move(e));
  }
  return out;
}

template <typename S>
void ParamStore<S>::load_entries(const std::vector<CkptEntry>& entries) {
  for (auto& [name, t] : entries_) {
    const CkptEntry* found = nullptr;
    for (const auto& e : entries) {
      if (e.name == name) {
        found = &e;
        break;
      }
    }
    if (!found) throw DataError("ParamStore: checkpoint missing parameter " + name);
    if (found->shape != t.shape()) {
      throw DataError("ParamStore: shape mismatch for " + name + ": store " + str(t.shape()) +
                      " vs checkpoint " + str(found->shape));
    }
    S* p = t.raw()->value.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<S>(found->values[static_cast<size_t>(i)]);
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace volumix
