#include "vfiqa/weights_io.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vfiqa {

size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kInt32: return 4;
  }
  throw WeightsFormatError("unknown dtype tag " +
                           std::to_string(static_cast<int>(dtype)));
}

template <typename T>
std::vector<T> WeightRecord::values() const {
  if (bytes.size() % sizeof(T) != 0 || dtype_size(dtype) != sizeof(T)) {
    throw WeightsFormatError("tensor '" + name + "' has the wrong dtype");
  }
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

template std::vector<float> WeightRecord::values<float>() const;
template std::vector<double> WeightRecord::values<double>() const;
template std::vector<int32_t> WeightRecord::values<int32_t>() const;

namespace {

template <typename U>
void put(std::ostream& os, U value) {
  uint8_t buf[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<uint8_t>(value >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  uint8_t buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw WeightsFormatError("truncated weights file");
  }
  U value = 0;
  for (size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
  }
  return value;
}

// Element-wise byte swap when the host is big-endian.
std::vector<uint8_t> to_little_endian(const std::vector<uint8_t>& bytes,
                                      size_t width) {
  std::vector<uint8_t> out = bytes;
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i + width <= out.size(); i += width) {
      std::reverse(out.begin() + i, out.begin() + i + width);
    }
  }
  return out;
}

}  // namespace

void write_weights_file(const std::filesystem::path& path,
                        const std::vector<WeightRecord>& records,
                        uint16_t version) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw WeightsFormatError("cannot open " + path.string());
  os.write(kWeightsMagic, sizeof(kWeightsMagic));
  put<uint16_t>(os, version);
  put<uint32_t>(os, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw WeightsFormatError("name too long");
    if (r.dims.size() > 0xFF) throw WeightsFormatError("rank too large");
    size_t count = 1;
    for (uint32_t d : r.dims) count *= d;
    const size_t width = dtype_size(r.dtype);
    if (count * width != r.bytes.size()) {
      throw WeightsFormatError("tensor '" + r.name +
                               "' byte count does not match its dims");
    }
    put<uint16_t>(os, static_cast<uint16_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<uint8_t>(os, static_cast<uint8_t>(r.dtype));
    put<uint8_t>(os, static_cast<uint8_t>(r.dims.size()));
    for (uint32_t d : r.dims) put<uint32_t>(os, d);
    const auto le = to_little_endian(r.bytes, width);
    os.write(reinterpret_cast<const char*>(le.data()),
             static_cast<std::streamsize>(le.size()));
  }
  if (!os) throw WeightsFormatError("write failed for " + path.string());
}

std::vector<WeightRecord> read_weights_file(const std::filesystem::path& path,
                                            uint16_t* version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightsFormatError("cannot open " + path.string());
  char magic[sizeof(kWeightsMagic)];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw WeightsFormatError(path.string() + " is not a weights file");
  }
  const uint16_t v = get<uint16_t>(is);
  if (version) *version = v;
  const uint32_t count = get<uint32_t>(is);
  std::vector<WeightRecord> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    WeightRecord r;
    r.name.resize(get<uint16_t>(is));
    if (!is.read(r.name.data(), static_cast<std::streamsize>(r.name.size()))) {
      throw WeightsFormatError("truncated weights file");
    }
    r.dtype = static_cast<DType>(get<uint8_t>(is));
    const size_t width = dtype_size(r.dtype);
    const uint8_t rank = get<uint8_t>(is);
    size_t elems = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      r.dims.push_back(get<uint32_t>(is));
      elems *= r.dims.back();
    }
    r.bytes.resize(elems * width);
    if (!is.read(reinterpret_cast<char*>(r.bytes.data()),
                 static_cast<std::streamsize>(r.bytes.size()))) {
      throw WeightsFormatError("truncated data for tensor '" + r.name + "'");
    }
    r.bytes = to_little_endian(r.bytes, width);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace vfiqa
