#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pauc/numcore.hpp"

namespace pauc {

struct BlobSpec {
  int num_classes = 10;
  int samples_per_class = 1000;
  int input_dim = 3;
  double cluster_std = 1.0;
  double center_min = -10.0;
  double center_max = 10.0;
  uint64_t seed = 1;
};

struct LabeledDataset {
  Matrix features;              // n x d
  std::vector<int32_t> labels;  // empty for unlabeled feature files

  int num_classes() const;
};

struct AugmentConfig {
  double noise_std = 0.5;
  // Scale jitter defaults to identity: an isotropic factor moves points
  // radially by a multiple of the class std at blob geometry, washing out
  // class structure faster than noise adds view diversity.
  double scale_min = 1.0;
  double scale_max = 1.0;
};

// Isotropic Gaussian blobs with class centers drawn uniformly from the
// spec box. Rows are grouped by class, class 0 first.
LabeledDataset generate_blobs(const BlobSpec& spec);

// Two stochastic views of a batch. Each view scales every sample by an
// independent uniform factor from [scale_min, scale_max] and adds
// element-wise Gaussian noise with stddev noise_std.
std::pair<Matrix, Matrix> make_views(const Eigen::Ref<const Matrix>& batch,
                                     const AugmentConfig& cfg, RngStream& rng);

// Dataset container format, little-endian:
//   magic "PAUC", u8 version = 1, u8 kind (0 features only, 1 labeled),
//   u32 rows, u32 cols, rows*cols f32 row-major, then rows u32 labels
//   when kind = 1.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace pauc
