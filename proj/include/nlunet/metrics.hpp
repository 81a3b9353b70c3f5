#pragma once

#include <string>
#include <vector>

#include "nlunet/volume.hpp"

namespace nlunet {

// Per-class binary segmentation map derived from a class map.
struct BinaryMap {
  Dims3 dims{0, 0, 0};
  std::vector<uint8_t> bits;

  int64_t numel() const { return dims_numel(dims); }
  int64_t count() const;  // number of set voxels
};

enum class Axis { D = 0, H = 1, W = 2 };

BinaryMap binarize(const LabelVolume& classmap, int class_id);

// DR = 2|P ^ L| / (|P| + |L|). Both maps empty is undefined and an error.
double dice_ratio(const BinaryMap& p, const BinaryMap& l);

// Modified Hausdorff distance between two sets of vectors:
//   MHD = max(d(A,B), d(B,A)),  d(A,B) = 1/|A| sum_a min_b ||a - b||.
double mhd_vector_sets(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b);

// MHD after vectorizing both maps along `axis`: every index pair over the
// two transverse axes yields one fiber of raw {0,1} values, and all fibers
// participate in the vector sets.
double mhd_directional(const BinaryMap& p, const BinaryMap& l, Axis axis);

// Direction-independent variant: the mean of mhd_directional over D, H, W.
double mhd_3d(const BinaryMap& p, const BinaryMap& l);

struct ClassMetrics {
  int class_id = 0;
  bool defined = true;  // false when both maps are empty for this class
  double dice = 0;
  double mhd3d = 0;
};

struct SegmentationReport {
  std::vector<ClassMetrics> classes;
  double average_dice = 0;   // unweighted mean over defined classes
  double average_mhd3d = 0;
  int64_t defined_classes = 0;
};

// DR and 3D-MHD for every listed class, plus unweighted averages. Classes
// whose metrics are undefined are flagged and excluded from the averages.
SegmentationReport evaluate(const LabelVolume& pred, const LabelVolume& truth,
                            const std::vector<int>& class_ids);

// Flat key-value rendering with a stable key order.
std::string report_to_text(const SegmentationReport& report);

}  // namespace nlunet
