#include "pauc/blobgen.hpp"

#include <set>

#include "binio.hpp"

namespace pauc {

int LabeledDataset::num_classes() const {
  std::set<int32_t> uniq(labels.begin(), labels.end());
  return static_cast<int>(uniq.size());
}

LabeledDataset generate_blobs(const BlobSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("generate_blobs: num_classes must be >= 2");
  if (spec.samples_per_class < 1) throw ConfigError("generate_blobs: samples_per_class must be >= 1");
  if (spec.input_dim < 1) throw ConfigError("generate_blobs: input_dim must be >= 1");
  if (spec.cluster_std < 0.0) throw ConfigError("generate_blobs: cluster_std must be >= 0");
  if (!(spec.center_min < spec.center_max)) {
    throw ConfigError("generate_blobs: center box is empty");
  }

  RngStream rng(spec.seed, /*stream_id=*/0x0b10b5ull);
  Matrix centers(spec.num_classes, spec.input_dim);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int j = 0; j < spec.input_dim; ++j) {
      centers(c, j) = rng.uniform(spec.center_min, spec.center_max);
    }
  }

  int n = spec.num_classes * spec.samples_per_class;
  LabeledDataset ds;
  ds.features.resize(n, spec.input_dim);
  ds.labels.resize(static_cast<size_t>(n));
  int row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (int j = 0; j < spec.input_dim; ++j) {
        ds.features(row, j) = centers(c, j) + spec.cluster_std * rng.normal();
      }
      ds.labels[static_cast<size_t>(row)] = c;
    }
  }
  return ds;
}

std::pair<Matrix, Matrix> make_views(const Eigen::Ref<const Matrix>& batch,
                                     const AugmentConfig& cfg, RngStream& rng) {
  if (cfg.noise_std < 0.0) throw ConfigError("make_views: noise_std must be >= 0");
  if (!(cfg.scale_min <= cfg.scale_max)) throw ConfigError("make_views: scale range is empty");

  auto one_view = [&]() {
    Matrix v(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
      double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
      for (Eigen::Index j = 0; j < batch.cols(); ++j) {
        v(i, j) = batch(i, j) * scale + cfg.noise_std * rng.normal();
      }
    }
    return v;
  };
  Matrix a = one_view();
  Matrix b = one_view();
  return {std::move(a), std::move(b)};
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  bool labeled = !ds.labels.empty();
  if (labeled && ds.labels.size() != static_cast<size_t>(ds.features.rows())) {
    throw ShapeMismatchError("save_dataset: label count does not match rows");
  }
  binio::Writer w(path);
  w.magic("PAUC");
  w.u8(1);
  w.u8(labeled ? 1 : 0);
  w.u32(static_cast<uint32_t>(ds.features.rows()));
  w.u32(static_cast<uint32_t>(ds.features.cols()));
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      w.f32(static_cast<float>(ds.features(i, j)));
    }
  }
  if (labeled) {
    for (int32_t l : ds.labels) w.u32(static_cast<uint32_t>(l));
  }
  w.close();
}

LabeledDataset load_dataset(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("PAUC");
  uint8_t version = r.u8();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  uint8_t kind = r.u8();
  if (kind > 1) throw FormatError(path + ": unknown kind " + std::to_string(kind));
  uint64_t rows = r.u32();
  uint64_t cols = r.u32();
  r.checked_count(rows, cols);

  LabeledDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (uint64_t i = 0; i < rows; ++i) {
    for (uint64_t j = 0; j < cols; ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.f32();
    }
  }
  if (kind == 1) {
    ds.labels.resize(rows);
    for (uint64_t i = 0; i < rows; ++i) {
      ds.labels[i] = static_cast<int32_t>(r.u32());
    }
  }
  r.expect_eof();
  return ds;
}

}  // namespace pauc
