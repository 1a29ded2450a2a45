#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "doconv/net.hpp"
#include "doconv/tensor.hpp"

namespace doconv {

// In-memory dataset: images [count, h, w, 1] scaled to [0,1], one integer
// label per image.
struct DatasetHandle {
  Tensor images;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t height() const { return images.shape()[1]; }
  std::size_t width() const { return images.shape()[2]; }
  Tensor image(std::size_t i) const;  // [h, w, 1]
};

// IDX readers/writer (big-endian headers; 0x00000803 images, 0x00000801 labels).
// Pixel bytes are scaled by 1/255 on load and re-quantized on save.
DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const DatasetHandle& data, const std::string& images_path,
              const std::string& labels_path);

enum class Dtype : std::uint32_t { F64 = 0, F32 = 1 };

// "DOCV" binary model format, little-endian, explicit shape prefixes, no
// compression. Unfolded DO layers store D' then W; folded ones store only the
// composite kernel; bias always last. A JSON sidecar with a human-readable
// layer summary is written next to the binary.
void save_model(const Network& net, const std::string& path, bool folded,
                Dtype dtype = Dtype::F64);
Network load_model(const std::string& path);

std::string model_sidecar_path(const std::string& model_path);

}  // namespace doconv
