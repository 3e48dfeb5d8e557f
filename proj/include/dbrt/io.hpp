#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbrt/model.hpp"
#include "dbrt/train.hpp"
#include "dbrt/world.hpp"

namespace dbrt::io {

using json = nlohmann::json;

// Binary array file, bit-exact:
//   magic "DBRT" | u16 LE format version (=1) | u8 rank |
//   u32 LE dims[rank] | payload f64 LE in row-major order |
//   trailing u32 LE CRC32 over all preceding bytes.
inline constexpr uint16_t kFormatVersion = 1;

void write_array(const std::filesystem::path& file, const double* row_major,
                 const std::vector<uint32_t>& dims);

struct ArrayData {
  std::vector<double> values;  // row-major
  std::vector<uint32_t> dims;
};

ArrayData read_array(const std::filesystem::path& file);

void write_tensor(const std::filesystem::path& file, const TensorRef& t);
// Shape must match the destination tensor exactly.
void read_tensor(const std::filesystem::path& file, const TensorRef& t);

void save_json(const std::filesystem::path& file, const json& j);
json load_json(const std::filesystem::path& file);

// Dataset directory: manifest.json + arrays/*.dbrt. The pooled image feature
// is derived (mean of regions) and recomputed on load.
void save_dataset(const std::filesystem::path& dir,
                  const world::PairedDataset& ds);
world::PairedDataset load_dataset(const std::filesystem::path& dir);

// Model checkpoint directory: manifest.json + one array file per parameter
// tensor; optionally the optimizer state for exact resume.
void save_model(const std::filesystem::path& dir, Model& model,
                const json& config_echo, int stage, int epoch,
                train::Adam* adam = nullptr);

struct LoadedModel {
  Model model;
  json config_echo;
  int stage = 0;
  int epoch = 0;
  bool has_optimizer = false;
  std::vector<double> adam_m, adam_v;  // concatenated, tensor order
  long adam_steps = 0;
};

LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace dbrt::io
