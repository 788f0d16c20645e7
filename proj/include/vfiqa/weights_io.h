#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfiqa {

// Binary weights container:
//   "VFIQA\0" | u16 version | u32 count |
//   count x { u16 name length | name | u8 dtype | u8 rank | rank x u32 dim |
//             raw little-endian values }
enum class DType : uint8_t { kFloat32 = 0, kFloat64 = 1, kInt32 = 2 };

size_t dtype_size(DType dtype);

struct WeightRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  std::vector<uint32_t> dims;
  // Values in host byte order.
  std::vector<uint8_t> bytes;

  template <typename T>
  std::vector<T> values() const;
};

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kWeightsMagic[6] = {'V', 'F', 'I', 'Q', 'A', '\0'};

void write_weights_file(const std::filesystem::path& path,
                        const std::vector<WeightRecord>& records,
                        uint16_t version);
std::vector<WeightRecord> read_weights_file(const std::filesystem::path& path,
                                            uint16_t* version = nullptr);

}  // namespace vfiqa
