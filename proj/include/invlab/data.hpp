#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invlab/errors.hpp"

namespace invlab {

enum class DatasetKind { Toy2d, SynthImg };

const char* to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Toy2d;
  int classes = 3;
  int samples_per_class = 50;
  int dim = 2;
  double sigma = 0.5;        // per-sample spread around the class template
  std::uint64_t seed = 1;

  void validate() const;
};

/// Immutable labeled sample matrix. Regeneration from (spec, seed) is
/// bit-identical, so datasets are cheap provenance anchors.
struct LabeledDataset {
  std::vector<double> features;  // n x dim, row-major
  std::vector<int> labels;       // values in [0, classes)
  std::string split;             // "train" or "test"
  std::uint64_t seed = 0;
  DatasetSpec spec;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return spec.dim; }
  int classes() const { return spec.classes; }

  const double* row(int i) const {
    return features.data() + static_cast<std::size_t>(i) * spec.dim;
  }
  std::vector<double> row_copy(int i) const {
    return {row(i), row(i) + spec.dim};
  }
};

struct DatasetBundle {
  LabeledDataset train;
  LabeledDataset test;
};

/// Three isotropic Gaussian clusters on an equilateral triangle of side 4
/// centered at the origin; stratified 80/20 train/test split.
DatasetBundle gen_toy2d(const DatasetSpec& spec);

/// Image-like classes: each class is a fixed random sum of three low-frequency
/// 2D cosines over a sqrt(dim) x sqrt(dim) grid, plus per-sample Gaussian
/// noise, clipped to [0, 1].
DatasetBundle gen_synthimg(const DatasetSpec& spec);

/// The noise-free class templates behind gen_synthimg, one row per class.
std::vector<std::vector<double>> synthimg_templates(const DatasetSpec& spec);

DatasetBundle generate(const DatasetSpec& spec);

/// CSV with header "label,f0,f1,...", one sample per line, 17 significant
/// digits so the round trip is value-exact.
void save_csv(const LabeledDataset& ds, const std::string& path);

/// Load a dataset CSV. When classes >= 0, labels are validated against it;
/// otherwise the class count is inferred as max(label) + 1.
LabeledDataset load_csv(const std::string& path, int classes = -1);

}  // namespace invlab
