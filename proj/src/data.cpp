#include "invlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "invlab/rng.hpp"

namespace invlab {

const char* to_string(DatasetKind k) {
  return k == DatasetKind::Toy2d ? "toy2d" : "synthimg";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "toy2d") return DatasetKind::Toy2d;
  if (name == "synthimg") return DatasetKind::SynthImg;
  throw ValidationError("unknown dataset kind '" + name + "'");
}

void DatasetSpec::validate() const {
  if (classes < 2) throw ValidationError("dataset spec: classes must be >= 2, got " +
                                         std::to_string(classes));
  if (samples_per_class < 4) {
    throw ValidationError("dataset spec: samples_per_class must be >= 4, got " +
                          std::to_string(samples_per_class));
  }
  if (!(sigma > 0.0) && sigma != 0.0) {
    throw ValidationError("dataset spec: sigma must be >= 0, got " + std::to_string(sigma));
  }
  if (kind == DatasetKind::Toy2d) {
    if (dim != 2) throw ValidationError("dataset spec: toy2d requires dim = 2, got " +
                                        std::to_string(dim));
    if (classes != 3) throw ValidationError("dataset spec: toy2d requires classes = 3, got " +
                                            std::to_string(classes));
  } else {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
    if (side * side != dim) {
      throw ValidationError("dataset spec: synthimg dim must be a perfect square, got " +
                            std::to_string(dim));
    }
    if (classes > 64) throw ValidationError("dataset spec: synthimg supports at most 64 classes, got " +
                                            std::to_string(classes));
  }
}

namespace {

// Stratified 80/20 split: per class the first ceil-adjusted 80% of generated
// samples go to train, the rest to test. Exact when divisible by 5.
struct SplitCounts {
  int train;
  int test;
};

SplitCounts split_counts(int per_class) {
  int test = static_cast<int>(std::lround(0.2 * per_class));
  test = std::max(1, std::min(test, per_class - 1));
  return {per_class - test, test};
}

DatasetBundle assemble(const DatasetSpec& spec,
                       const std::vector<std::vector<double>>& per_class_rows) {
  const auto counts = split_counts(spec.samples_per_class);
  DatasetBundle bundle;
  bundle.train.split = "train";
  bundle.test.split = "test";
  for (auto* ds : {&bundle.train, &bundle.test}) {
    ds->seed = spec.seed;
    ds->spec = spec;
  }
  for (int c = 0; c < spec.classes; ++c) {
    const auto& rows = per_class_rows[c];
    for (int i = 0; i < spec.samples_per_class; ++i) {
      const bool is_train = i < counts.train;
      auto& ds = is_train ? bundle.train : bundle.test;
      ds.features.insert(ds.features.end(), rows.begin() + static_cast<std::size_t>(i) * spec.dim,
                         rows.begin() + static_cast<std::size_t>(i + 1) * spec.dim);
      ds.labels.push_back(c);
    }
  }
  return bundle;
}

}  // namespace

DatasetBundle gen_toy2d(const DatasetSpec& spec) {
  spec.validate();
  if (spec.kind != DatasetKind::Toy2d) throw ValidationError("gen_toy2d: spec kind is not toy2d");

  // Equilateral triangle of side 4 centered at the origin.
  const double circumradius = 4.0 / std::sqrt(3.0);
  std::vector<std::vector<double>> rows(spec.classes);
  Rng rng(derive_seed(spec.seed, "toy2d"));
  for (int c = 0; c < spec.classes; ++c) {
    const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * c / 3.0;
    const double cx = circumradius * std::cos(angle);
    const double cy = circumradius * std::sin(angle);
    rows[c].reserve(static_cast<std::size_t>(spec.samples_per_class) * 2);
    for (int i = 0; i < spec.samples_per_class; ++i) {
      rows[c].push_back(cx + spec.sigma * rng.normal());
      rows[c].push_back(cy + spec.sigma * rng.normal());
    }
  }
  return assemble(spec, rows);
}

std::vector<std::vector<double>> synthimg_templates(const DatasetSpec& spec) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.dim))));
  Rng rng(derive_seed(spec.seed, "synthimg-templates"));
  std::vector<std::vector<double>> templates(spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    double fx[3], fy[3], phase[3], amp[3];
    for (int k = 0; k < 3; ++k) {
      fx[k] = static_cast<double>(rng.below(3));  // low frequencies only: 0..2
      fy[k] = static_cast<double>(rng.below(3));
      phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      amp[k] = rng.uniform(0.5, 1.0);
    }
    auto& t = templates[c];
    t.resize(spec.dim);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double v = 0.0;
        for (int k = 0; k < 3; ++k) {
          v += amp[k] * std::cos(2.0 * std::numbers::pi *
                                     (fx[k] * x + fy[k] * y) / static_cast<double>(side) +
                                 phase[k]);
        }
        // squash the +-3 range into [0, 1] with headroom for noise
        t[static_cast<std::size_t>(y) * side + x] = 0.5 + v / 6.0;
      }
    }
  }
  return templates;
}

DatasetBundle gen_synthimg(const DatasetSpec& spec) {
  spec.validate();
  if (spec.kind != DatasetKind::SynthImg) {
    throw ValidationError("gen_synthimg: spec kind is not synthimg");
  }
  const auto templates = synthimg_templates(spec);
  Rng rng(derive_seed(spec.seed, "synthimg-samples"));
  std::vector<std::vector<double>> rows(spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    rows[c].reserve(static_cast<std::size_t>(spec.samples_per_class) * spec.dim);
    for (int i = 0; i < spec.samples_per_class; ++i) {
      for (int d = 0; d < spec.dim; ++d) {
        double v = templates[c][d] + spec.sigma * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        rows[c].push_back(v);
      }
    }
  }
  return assemble(spec, rows);
}

DatasetBundle generate(const DatasetSpec& spec) {
  return spec.kind == DatasetKind::Toy2d ? gen_toy2d(spec) : gen_synthimg(spec);
}

void save_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_csv: cannot open '" + path + "' for writing");
  out << "label";
  for (int d = 0; d < ds.dim(); ++d) out << ",f" << d;
  out << "\n";
  char buf[40];
  for (int i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    const double* row = ds.row(i);
    for (int d = 0; d < ds.dim(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[d]);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("save_csv: write to '" + path + "' failed");
}

LabeledDataset load_csv(const std::string& path, int classes) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw ParseError("load_csv: '" + path + "' line 1: missing header");
  }

  LabeledDataset ds;
  ds.split = "loaded";
  int dim = -1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> values;
    int label = -1;
    bool first = true;
    while (std::getline(row, cell, ',')) {
      std::size_t used = 0;
      try {
        if (first) {
          label = std::stoi(cell, &used);
        } else {
          values.push_back(std::stod(cell, &used));
        }
      } catch (const std::exception&) {
        throw ParseError("load_csv: '" + path + "' line " + std::to_string(line_no) +
                         ": bad value '" + cell + "'");
      }
      if (used != cell.size()) {
        throw ParseError("load_csv: '" + path + "' line " + std::to_string(line_no) +
                         ": trailing junk in '" + cell + "'");
      }
      first = false;
    }
    if (label < 0 || values.empty()) {
      throw ParseError("load_csv: '" + path + "' line " + std::to_string(line_no) +
                       ": expected label and at least one feature");
    }
    if (dim == -1) {
      dim = static_cast<int>(values.size());
    } else if (static_cast<int>(values.size()) != dim) {
      throw ParseError("load_csv: '" + path + "' line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dim) + " features, got " + std::to_string(values.size()));
    }
    ds.labels.push_back(label);
    ds.features.insert(ds.features.end(), values.begin(), values.end());
  }
  if (ds.labels.empty()) throw ParseError("load_csv: '" + path + "': no samples");

  int max_label = 0;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  const int n_classes = classes >= 0 ? classes : max_label + 1;
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (ds.labels[i] >= n_classes) {
      throw ValidationError("load_csv: '" + path + "': label " + std::to_string(ds.labels[i]) +
                            " out of range [0, " + std::to_string(n_classes) + ")");
    }
  }
  ds.spec.kind = dim == 2 ? DatasetKind::Toy2d : DatasetKind::SynthImg;
  ds.spec.classes = n_classes;
  ds.spec.dim = dim;
  ds.spec.samples_per_class = std::max(4, static_cast<int>(ds.labels.size()) / n_classes);
  return ds;
}

}  // namespace invlab
