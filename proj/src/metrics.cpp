#include "nlunet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "nlunet/error.hpp"

namespace nlunet {

int64_t BinaryMap::count() const {
  int64_t n = 0;
  for (uint8_t b : bits) n += b;
  return n;
}

BinaryMap binarize(const LabelVolume& classmap, int class_id) {
  if (class_id < 0 || class_id > 255)
    throw ContractError("binarize: class id " + std::to_string(class_id) + " out of range");
  BinaryMap m;
  m.dims = classmap.dims;
  m.bits.resize(classmap.labels.size());
  for (size_t i = 0; i < classmap.labels.size(); ++i)
    m.bits[i] = classmap.labels[i] == class_id ? 1 : 0;
  return m;
}

double dice_ratio(const BinaryMap& p, const BinaryMap& l) {
  if (p.dims != l.dims)
    throw DataError("dice_ratio: dimension mismatch " + dims_str(p.dims) + " vs " +
                    dims_str(l.dims));
  int64_t np = 0, nl = 0, both = 0;
  for (size_t i = 0; i < p.bits.size(); ++i) {
    np += p.bits[i];
    nl += l.bits[i];
    both += p.bits[i] & l.bits[i];
  }
  if (np + nl == 0)
    throw DataError("dice_ratio: undefined, both maps are empty");
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + nl);
}

double mhd_vector_sets(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty())
    throw DataError("mhd: undefined for an empty vector set");
  auto directed = [](const std::vector<std::vector<double>>& from,
                     const std::vector<std::vector<double>>& to) {
    double total = 0;
    for (const auto& v : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& u : to) {
        double ss = 0;
        for (size_t i = 0; i < v.size(); ++i) {
          const double d = v[i] - u[i];
          ss += d * d;
        }
        best = std::min(best, ss);
      }
      total += std::sqrt(best);
    }
    return total / static_cast<double>(from.size());
  };
  return std::max(directed(a, b), directed(b, a));
}

namespace {

// All fibers along `axis`, one per transverse index pair, as raw 0/1 vectors.
std::vector<std::vector<double>> fibers(const BinaryMap& m, Axis axis) {
  const int64_t D = m.dims[0], H = m.dims[1], W = m.dims[2];
  auto bit = [&](int64_t d, int64_t h, int64_t w) {
    return static_cast<double>(m.bits[(d * H + h) * W + w]);
  };
  std::vector<std::vector<double>> out;
  switch (axis) {
    case Axis::D:
      out.reserve(H * W);
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          std::vector<double> v(D);
          for (int64_t d = 0; d < D; ++d) v[d] = bit(d, h, w);
          out.push_back(std::move(v));
        }
      break;
    case Axis::H:
      out.reserve(D * W);
      for (int64_t d = 0; d < D; ++d)
        for (int64_t w = 0; w < W; ++w) {
          std::vector<double> v(H);
          for (int64_t h = 0; h < H; ++h) v[h] = bit(d, h, w);
          out.push_back(std::move(v));
        }
      break;
    case Axis::W:
      out.reserve(D * H);
      for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h) {
          std::vector<double> v(W);
          for (int64_t w = 0; w < W; ++w) v[w] = bit(d, h, w);
          out.push_back(std::move(v));
        }
      break;
  }
  return out;
}

}  // namespace

double mhd_directional(const BinaryMap& p, const BinaryMap& l, Axis axis) {
  if (p.dims != l.dims)
    throw DataError("mhd_directional: dimension mismatch " + dims_str(p.dims) + " vs " +
                    dims_str(l.dims));
  return mhd_vector_sets(fibers(p, axis), fibers(l, axis));
}

double mhd_3d(const BinaryMap& p, const BinaryMap& l) {
  return (mhd_directional(p, l, Axis::D) + mhd_directional(p, l, Axis::H) +
          mhd_directional(p, l, Axis::W)) /
         3.0;
}

SegmentationReport evaluate(const LabelVolume& pred, const LabelVolume& truth,
                            const std::vector<int>& class_ids) {
  if (pred.dims != truth.dims)
    throw DataError("evaluate: dimension mismatch, prediction " + dims_str(pred.dims) +
                    " vs truth " + dims_str(truth.dims));
  SegmentationReport report;
  double dice_acc = 0, mhd_acc = 0;
  for (int id : class_ids) {
    ClassMetrics cm;
    cm.class_id = id;
    const BinaryMap p = binarize(pred, id);
    const BinaryMap l = binarize(truth, id);
    if (p.count() + l.count() == 0) {
      cm.defined = false;
    } else {
      cm.dice = dice_ratio(p, l);
      cm.mhd3d = mhd_3d(p, l);
      dice_acc += cm.dice;
      mhd_acc += cm.mhd3d;
      ++report.defined_classes;
    }
    report.classes.push_back(cm);
  }
  if (report.defined_classes > 0) {
    report.average_dice = dice_acc / static_cast<double>(report.defined_classes);
    report.average_mhd3d = mhd_acc / static_cast<double>(report.defined_classes);
  }
  return report;
}

std::string report_to_text(const SegmentationReport& report) {
  std::string out;
  char buf[128];
  auto emit = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof buf, "%s\t%.9g\n", key.c_str(), v);
    out += buf;
  };
  for (const ClassMetrics& cm : report.classes) {
    const std::string prefix = "class." + std::to_string(cm.class_id);
    if (!cm.defined) {
      out += prefix + ".defined\t0\n";
      continue;
    }
    out += prefix + ".defined\t1\n";
    emit(prefix + ".dice", cm.dice);
    emit(prefix + ".mhd3d", cm.mhd3d);
  }
  out += "defined_classes\t" + std::to_string(report.defined_classes) + "\n";
  emit("average.dice", report.average_dice);
  emit("average.mhd3d", report.average_mhd3d);
  return out;
}

}  // namespace nlunet
