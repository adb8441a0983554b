#include "prid/tensor.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "binary_io.hpp"

namespace prid {

std::string Shape::str() const {
  std::ostringstream os;
  os << *this;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << '[' << s.n << 'x' << s.c << 'x' << s.h << 'x' << s.w << ']';
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

constexpr std::array<char, 4> kPt1Magic = {'P', 'T', '1', '\0'};

template <typename Stored, typename T>
void read_payload(std::istream& is, Tensor<T>& out) {
  std::vector<Stored> buf(out.size());
  const auto bytes = static_cast<std::streamsize>(buf.size() * sizeof(Stored));
  if (bytes > 0 && !is.read(reinterpret_cast<char*>(buf.data()), bytes)) {
    throw FormatError("truncated PT1 payload");
  }
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = static_cast<T>(buf[i]);
}

}  // namespace

template <typename T>
void write_pt1(std::ostream& os, const Tensor<T>& t) {
  os.write(kPt1Magic.data(), kPt1Magic.size());
  const auto code = static_cast<char>(dtype_of<T>());
  os.write(&code, 1);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::write_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw FormatError("failed writing PT1 tensor");
}

DType peek_pt1_dtype(std::istream& is) {
  const auto start = is.tellg();
  std::array<char, 5> head{};
  if (!is.read(head.data(), head.size())) throw FormatError("truncated PT1 header");
  is.seekg(start);
  if (head[4] != 0 && head[4] != 1) throw FormatError("unknown PT1 dtype code");
  return static_cast<DType>(head[4]);
}

template <typename T>
Tensor<T> read_pt1(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kPt1Magic) throw FormatError("bad PT1 magic");
  char code = 0;
  if (!is.read(&code, 1)) throw FormatError("truncated PT1 header");
  Shape s;
  s.n = detail::read_u32(is, "PT1 dims");
  s.c = detail::read_u32(is, "PT1 dims");
  s.h = detail::read_u32(is, "PT1 dims");
  s.w = detail::read_u32(is, "PT1 dims");
  if (s.size() > (std::size_t{1} << 32)) throw FormatError("PT1 tensor too large: " + s.str());
  Tensor<T> out(s);
  switch (static_cast<DType>(code)) {
    case DType::f32:
      read_payload<float>(is, out);
      break;
    case DType::f64:
      read_payload<double>(is, out);
      break;
    default:
      throw FormatError("unknown PT1 dtype code " + std::to_string(static_cast<int>(code)));
  }
  return out;
}

template <typename T>
void save_pt1(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_pt1(os, t);
}

template <typename T>
Tensor<T> load_pt1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_pt1<T>(is);
}

#define PRID_INSTANTIATE(T)                                      \
  template class Tensor<T>;                                      \
  template void write_pt1<T>(std::ostream&, const Tensor<T>&);   \
  template Tensor<T> read_pt1<T>(std::istream&);                 \
  template void save_pt1<T>(const std::string&, const Tensor<T>&); \
  template Tensor<T> load_pt1<T>(const std::string&);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
