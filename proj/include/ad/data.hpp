#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ad/core.hpp"
#include "ad/rng.hpp"

namespace ad::data {

enum class Normalize { none, unit_range, zero_mean_unit_var };

inline std::string to_string(Normalize n) {
  switch (n) {
    case Normalize::none: return "none";
    case Normalize::unit_range: return "unit_range";
    case Normalize::zero_mean_unit_var: return "zero_mean_unit_var";
  }
  return "none";
}

inline Normalize normalize_from_string(const std::string& s) {
  if (s == "none") return Normalize::none;
  if (s == "unit_range") return Normalize::unit_range;
  if (s == "zero_mean_unit_var") return Normalize::zero_mean_unit_var;
  throw std::invalid_argument("unknown normalize mode: " + s);
}

struct PreprocessSpec {
  double clip_upper_pct = 0.0;
  double clip_lower_pct = 0.0;
  Normalize normalize = Normalize::unit_range;
  bool crop_to_foreground = false;

  void validate() const {
    if (clip_upper_pct < 0 || clip_upper_pct > 100 || clip_lower_pct < 0 || clip_lower_pct > 100)
      throw std::invalid_argument("PreprocessSpec: clip percentages must be in [0,100]");
    if (clip_lower_pct + clip_upper_pct >= 100)
      throw std::invalid_argument("PreprocessSpec: clip_lower_pct + clip_upper_pct must be < 100");
  }
};

struct SyntheticSpec {
  int num_domains = 1;
  int volumes_per_domain = 4;
  double labeled_fraction = 0.5;
  Index grid_size = 16;
  int num_classes = 3;
  double class_frequency_skew = 1.0;  // class-k foreground volume ~ skew^-(k-1)
  std::uint64_t seed = 1;
  // Domains >= labeled_domains contribute no labels (UDA: labeled_domains=1).
  int labeled_domains = -1;  // -1: all domains may be labeled

  void validate() const {
    if (num_domains < 1) throw std::invalid_argument("SyntheticSpec: num_domains must be >= 1");
    if (volumes_per_domain < 1)
      throw std::invalid_argument("SyntheticSpec: volumes_per_domain must be >= 1");
    if (labeled_fraction <= 0 || labeled_fraction > 1)
      throw std::invalid_argument("SyntheticSpec: labeled_fraction must be in (0,1]");
    if (grid_size < 4) throw std::invalid_argument("SyntheticSpec: grid_size must be >= 4");
    if (num_classes < 2) throw std::invalid_argument("SyntheticSpec: num_classes must be >= 2");
    if (class_frequency_skew <= 0)
      throw std::invalid_argument("SyntheticSpec: class_frequency_skew must be > 0");
  }
};

/// Nearest-rank percentile threshold on the sorted copy of the data. With
/// q = 98 on values 0..99 this yields 97, i.e. the top 2% is cut at the
/// 98th-smallest value.
template <typename T>
T percentile_threshold(ArrayX<T> values, double q) {
  std::sort(values.data(), values.data() + values.size());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const Index idx = static_cast<Index>(std::floor(pos));
  return values[std::clamp<Index>(idx, 0, values.size() - 1)];
}

/// Clip the intensity histogram tails, then normalize. Clipping always
/// precedes normalization.
template <typename T>
Volume<T> preprocess(const Volume<T>& v, const PreprocessSpec& spec) {
  spec.validate();
  ArrayX<T> a = v.grid().array();

  if (spec.clip_upper_pct > 0) {
    const T hi = percentile_threshold(a, 100.0 - spec.clip_upper_pct);
    a = a.min(hi);
  }
  if (spec.clip_lower_pct > 0) {
    const T lo = percentile_threshold(a, spec.clip_lower_pct);
    a = a.max(lo);
  }

  switch (spec.normalize) {
    case Normalize::none:
      break;
    case Normalize::unit_range: {
      const T lo = a.minCoeff();
      const T hi = a.maxCoeff();
      if (hi > lo)
        a = (a - lo) / (hi - lo);
      else
        a.setZero();
      break;
    }
    case Normalize::zero_mean_unit_var: {
      const T mean = a.mean();
      const T sd = std::sqrt((a - mean).square().mean());
      if (!(sd > T(0)))
        throw std::invalid_argument("preprocess: constant volume under zero_mean_unit_var");
      a = (a - mean) / sd;
      break;
    }
  }
  return Volume<T>(Grid3<T>(v.shape(), std::move(a)), v.spacing());
}

/// Cyclic slice repetition along depth: out slice j copies in slice j mod D.
template <typename T>
Volume<T> stack_depth(const Volume<T>& v, Index target_depth) {
  const Shape3 s = v.shape();
  if (s.d > target_depth)
    throw std::invalid_argument("stack_depth: volume depth exceeds target");
  Grid3<T> out(target_depth, s.h, s.w);
  const Index plane = s.h * s.w;
  for (Index z = 0; z < target_depth; ++z)
    out.array().segment(z * plane, plane) = v.grid().array().segment((z % s.d) * plane, plane);
  return Volume<T>(std::move(out), v.spacing());
}

inline LabelMap stack_depth(const LabelMap& y, Index target_depth) {
  const Shape3 s = y.shape();
  if (s.d > target_depth)
    throw std::invalid_argument("stack_depth: label depth exceeds target");
  Grid3<std::int32_t> out(target_depth, s.h, s.w);
  const Index plane = s.h * s.w;
  for (Index z = 0; z < target_depth; ++z)
    out.array().segment(z * plane, plane) = y.grid().array().segment((z % s.d) * plane, plane);
  return LabelMap(std::move(out), y.num_classes());
}

namespace detail {

struct Ellipsoid {
  Eigen::Vector3d center;
  Eigen::Vector3d radii;
};

struct Cell {
  Eigen::Vector3d lo, hi;  // half-open box
  double extent(int axis) const { return hi[axis] - lo[axis]; }
  double volume() const { return extent(0) * extent(1) * extent(2); }
};

/// Partition the grid into `n` disjoint boxes by recursively splitting the
/// largest cell along its longest axis.
inline std::vector<Cell> partition_cells(Index grid, int n) {
  std::vector<Cell> cells{{Eigen::Vector3d::Zero(),
                           Eigen::Vector3d::Constant(static_cast<double>(grid))}};
  while (static_cast<int>(cells.size()) < n) {
    std::size_t largest = 0;
    for (std::size_t i = 1; i < cells.size(); ++i)
      if (cells[i].volume() > cells[largest].volume()) largest = i;
    Cell c = cells[largest];
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (c.extent(a) > c.extent(axis)) axis = a;
    const double mid = 0.5 * (c.lo[axis] + c.hi[axis]);
    Cell left = c, right = c;
    left.hi[axis] = mid;
    right.lo[axis] = mid;
    cells[largest] = left;
    cells.push_back(right);
  }
  return cells;
}

/// Fit an ellipsoid of roughly `target_vol` voxels inside `cell`, center
/// jittered by `rng`. Throws when the cell cannot hold any object.
inline Ellipsoid fit_ellipsoid(const Cell& cell, double target_vol, Rng& rng, int num_classes) {
  Eigen::Vector3d cap;
  for (int a = 0; a < 3; ++a) cap[a] = 0.5 * cell.extent(a) - 1.0;
  if (cap.minCoeff() < 1.0)
    throw std::runtime_error("make_synthetic: grid too small to place " +
                             std::to_string(num_classes) + " classes");

  const double r_iso = std::cbrt(3.0 * target_vol / (4.0 * M_PI));
  Eigen::Vector3d jitter(rng.uniform(0.85, 1.2), rng.uniform(0.85, 1.2), 1.0);
  jitter[2] = 1.0 / (jitter[0] * jitter[1]);

  Ellipsoid e;
  e.radii = (r_iso * jitter).cwiseMin(cap);
  // Re-expand uncapped axes toward the target volume, twice.
  for (int pass = 0; pass < 2; ++pass) {
    const double vol = 4.0 / 3.0 * M_PI * e.radii.prod();
    int free_axes = 0;
    for (int a = 0; a < 3; ++a)
      if (e.radii[a] < cap[a] - 1e-12) ++free_axes;
    if (free_axes == 0 || vol <= 0) break;
    const double s = std::pow(target_vol / vol, 1.0 / free_axes);
    for (int a = 0; a < 3; ++a)
      if (e.radii[a] < cap[a] - 1e-12) e.radii[a] = std::min(e.radii[a] * s, cap[a]);
  }
  for (int a = 0; a < 3; ++a) {
    const double lo = cell.lo[a] + e.radii[a] + 1.0;
    const double hi = cell.hi[a] - e.radii[a] - 1.0;
    e.center[a] = hi > lo ? rng.uniform(lo, hi) : 0.5 * (lo + hi);
  }
  return e;
}

}  // namespace detail

/// A synthetic split plus the ground truth of its unlabeled samples (kept
/// aside for evaluation; never exposed through the DatasetSplit itself).
template <typename T>
struct SyntheticDataset {
  DatasetSplit<T> split;
  std::vector<LabelMap> unlabeled_truth;
};

/// Deterministic multi-domain generator. Each domain gets a distinct
/// intensity transfer (gain, bias, texture-noise scale drawn from disjoint
/// per-domain ranges); foreground objects are disjoint ellipsoids, one per
/// foreground class, with target volumes decaying geometrically at ratio
/// 1/class_frequency_skew.
template <typename T>
SyntheticDataset<T> make_synthetic_with_truth(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index g = spec.grid_size;
  const int k = spec.num_classes;
  const int fg_classes = k - 1;

  // Geometric volume decay; total foreground ~8% of the grid.
  std::vector<double> target_vol(fg_classes);
  double geom_sum = 0;
  for (int c = 0; c < fg_classes; ++c) geom_sum += std::pow(spec.class_frequency_skew, -c);
  const double total_fg = 0.08 * static_cast<double>(g * g * g);
  for (int c = 0; c < fg_classes; ++c)
    target_vol[c] = total_fg * std::pow(spec.class_frequency_skew, -c) / geom_sum;

  std::vector<std::pair<Volume<T>, LabelMap>> labeled;
  std::vector<Volume<T>> unlabeled;
  std::vector<int> labeled_domains, unlabeled_domains;
  std::vector<LabelMap> unlabeled_truth;

  const int max_labeled_domain =
      spec.labeled_domains < 0 ? spec.num_domains : spec.labeled_domains;

  for (int dom = 0; dom < spec.num_domains; ++dom) {
    // Disjoint per-domain ranges keep the transfer functions well separated.
    const double gain = rng.uniform(0.9, 1.1);
    const double bias = rng.uniform(0.28 * dom, 0.28 * dom + 0.06);
    const double noise_scale = rng.uniform(0.015, 0.03) * (1.0 + 0.5 * dom);

    int n_labeled = 0;
    if (dom < max_labeled_domain) {
      n_labeled = static_cast<int>(std::lround(spec.labeled_fraction * spec.volumes_per_domain));
      n_labeled = std::clamp(n_labeled, 1, spec.volumes_per_domain);
    }

    for (int vi = 0; vi < spec.volumes_per_domain; ++vi) {
      // One ellipsoid per foreground class, each inside its own grid cell.
      const auto cells = detail::partition_cells(g, fg_classes);
      std::vector<detail::Ellipsoid> objs;
      for (int c = 0; c < fg_classes; ++c)
        objs.push_back(detail::fit_ellipsoid(cells[static_cast<std::size_t>(c)], target_vol[c],
                                             rng, k));

      Grid3<std::int32_t> label(g, g, g);
      Grid3<T> img(g, g, g);
      for (Index z = 0; z < g; ++z)
        for (Index y = 0; y < g; ++y)
          for (Index x = 0; x < g; ++x) {
            const Eigen::Vector3d p(static_cast<double>(z), static_cast<double>(y),
                                    static_cast<double>(x));
            std::int32_t cls = 0;
            for (int c = 0; c < fg_classes; ++c) {
              const Eigen::Vector3d q = (p - objs[c].center).cwiseQuotient(objs[c].radii);
              if (q.squaredNorm() <= 1.0) {
                cls = c + 1;
                break;
              }
            }
            label(z, y, x) = cls;
            const double base =
                cls == 0 ? 0.15 : 0.4 + 0.45 * static_cast<double>(cls - 1) / std::max(1, fg_classes - 1);
            const double val = gain * base + bias + noise_scale * rng.normal();
            img(z, y, x) = static_cast<T>(val);
          }

      Volume<T> vol(std::move(img));
      LabelMap lm(std::move(label), k);
      if (vi < n_labeled) {
        labeled.emplace_back(std::move(vol), std::move(lm));
        labeled_domains.push_back(dom);
      } else {
        unlabeled.push_back(std::move(vol));
        unlabeled_domains.push_back(dom);
        unlabeled_truth.push_back(std::move(lm));
      }
    }
  }

  SyntheticDataset<T> out;
  out.split = DatasetSplit<T>(std::move(labeled), std::move(unlabeled), std::move(labeled_domains),
                              std::move(unlabeled_domains));
  out.unlabeled_truth = std::move(unlabeled_truth);
  return out;
}

template <typename T>
DatasetSplit<T> make_synthetic(const SyntheticSpec& spec) {
  return make_synthetic_with_truth<T>(spec).split;
}

// ---------------------------------------------------------------------------
// Raw grid container and manifests.
//
// Header line (exact): "A&D-RAWv1 D H W K sx sy sz\n". Volumes carry K=0 and
// a float32 little-endian payload; labels carry K=num_classes and a uint8
// payload. Manifest records: "<role> <domain> <volume_path> [<label_path>]",
// one per line, paths relative to the manifest; '#' lines are comments and a
// leading "@preprocess key=value ..." directive configures loading.
// ---------------------------------------------------------------------------

struct RawHeader {
  Index d = 0, h = 0, w = 0;
  int k = 0;
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
};

inline void write_raw_header(std::ostream& os, const RawHeader& hd) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "A&D-RAWv1 %lld %lld %lld %d %.9g %.9g %.9g\n",
                static_cast<long long>(hd.d), static_cast<long long>(hd.h),
                static_cast<long long>(hd.w), hd.k, hd.spacing[0], hd.spacing[1], hd.spacing[2]);
  os << buf;
}

inline RawHeader read_raw_header(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("raw grid: empty file: " + path);
  std::istringstream ss(line);
  std::string magic;
  RawHeader hd;
  ss >> magic >> hd.d >> hd.h >> hd.w >> hd.k >> hd.spacing[0] >> hd.spacing[1] >> hd.spacing[2];
  if (!ss || magic != "A&D-RAWv1")
    throw std::runtime_error("raw grid: bad header in " + path);
  return hd;
}

template <typename T>
void save_volume(const std::filesystem::path& path, const Volume<T>& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  write_raw_header(os, RawHeader{v.shape().d, v.shape().h, v.shape().w, 0, v.spacing()});
  std::vector<float> buf(static_cast<std::size_t>(v.grid().size()));
  for (Index i = 0; i < v.grid().size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(v.grid().array()[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

template <typename T>
Volume<T> load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  const RawHeader hd = read_raw_header(is, path.string());
  Grid3<T> g(hd.d, hd.h, hd.w);
  std::vector<float> buf(static_cast<std::size_t>(g.size()));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw std::runtime_error("raw grid: truncated payload: " + path.string());
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = static_cast<T>(buf[static_cast<std::size_t>(i)]);
  return Volume<T>(std::move(g), hd.spacing);
}

inline void save_label(const std::filesystem::path& path, const LabelMap& y) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  write_raw_header(os, RawHeader{y.shape().d, y.shape().h, y.shape().w, y.num_classes(),
                                 Eigen::Vector3d::Ones()});
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(y.grid().size()));
  for (Index i = 0; i < y.grid().size(); ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(y.grid().array()[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline LabelMap load_label(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  const RawHeader hd = read_raw_header(is, path.string());
  if (hd.k < 1) throw std::runtime_error("raw grid: label file must carry K >= 1: " + path.string());
  Grid3<std::int32_t> g(hd.d, hd.h, hd.w);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(g.size()));
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw std::runtime_error("raw grid: truncated payload: " + path.string());
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = buf[static_cast<std::size_t>(i)];
  return LabelMap(std::move(g), hd.k);
}

struct ManifestEntry {
  bool labeled = false;
  int domain = 0;
  std::string volume_path;
  std::string label_path;  // empty for unlabeled
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::optional<PreprocessSpec> preprocess;
};

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string first;
    ss >> first;
    if (first == "@preprocess") {
      PreprocessSpec spec;
      spec.normalize = Normalize::none;
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("manifest: bad @preprocess token: " + kv);
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "clip_upper_pct") spec.clip_upper_pct = std::stod(val);
        else if (key == "clip_lower_pct") spec.clip_lower_pct = std::stod(val);
        else if (key == "normalize") spec.normalize = normalize_from_string(val);
        else if (key == "crop_to_foreground") spec.crop_to_foreground = val == "1" || val == "true";
        else throw std::runtime_error("manifest: unknown @preprocess key: " + key);
      }
      m.preprocess = spec;
      continue;
    }
    ManifestEntry e;
    if (first == "labeled") e.labeled = true;
    else if (first == "unlabeled") e.labeled = false;
    else throw std::runtime_error("manifest: unknown role: " + first);
    if (!(ss >> e.domain >> e.volume_path))
      throw std::runtime_error("manifest: malformed record: " + line);
    if (e.labeled && !(ss >> e.label_path))
      throw std::runtime_error("manifest: labeled record missing label path: " + line);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline int load_workers() {
  if (const char* env = std::getenv("AD_NUM_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

/// Load every manifest record, apply its @preprocess directive when present,
/// and assemble the split. Files load in parallel across AD_NUM_WORKERS
/// threads; results land in preassigned slots, so the output is
/// order-deterministic.
template <typename T>
DatasetSplit<T> load_split(const std::filesystem::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();

  struct Loaded {
    Volume<T> volume;
    std::optional<LabelMap> label;
  };
  std::vector<Loaded> loaded(m.entries.size());
  std::vector<std::string> errors(m.entries.size());

  const int workers = std::min<int>(load_workers(), std::max<std::size_t>(m.entries.size(), 1));
  auto work = [&](int worker) {
    for (std::size_t i = worker; i < m.entries.size(); i += workers) {
      try {
        const auto& e = m.entries[i];
        Volume<T> v = load_volume<T>(base / e.volume_path);
        if (m.preprocess) v = preprocess(v, *m.preprocess);
        loaded[i].volume = std::move(v);
        if (e.labeled) {
          LabelMap y = load_label(base / e.label_path);
          if (y.shape() != loaded[i].volume.shape())
            throw std::runtime_error("load_split: volume/label shape mismatch for " +
                                     e.volume_path);
          loaded[i].label = std::move(y);
        }
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors)
    if (!err.empty()) throw std::runtime_error(err);

  std::vector<std::pair<Volume<T>, LabelMap>> labeled;
  std::vector<Volume<T>> unlabeled;
  std::vector<int> labeled_domains, unlabeled_domains;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].labeled) {
      labeled.emplace_back(std::move(loaded[i].volume), std::move(*loaded[i].label));
      labeled_domains.push_back(m.entries[i].domain);
    } else {
      unlabeled.push_back(std::move(loaded[i].volume));
      unlabeled_domains.push_back(m.entries[i].domain);
    }
  }
  return DatasetSplit<T>(std::move(labeled), std::move(unlabeled), std::move(labeled_domains),
                         std::move(unlabeled_domains));
}

/// Write a split (and optional hidden truth for the unlabeled part) as raw
/// grids plus train/eval manifests. Returns the train manifest path.
template <typename T>
std::filesystem::path save_dataset(const std::filesystem::path& dir, const SyntheticDataset<T>& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream train_m(dir / "train_manifest.txt");
  std::ofstream eval_m(dir / "eval_manifest.txt");
  if (!train_m || !eval_m) throw std::runtime_error("cannot write manifests in " + dir.string());

  const auto& split = ds.split;
  for (std::size_t i = 0; i < split.labeled().size(); ++i) {
    const auto vol_name = "labeled_" + std::to_string(i) + ".vol";
    const auto lab_name = "labeled_" + std::to_string(i) + ".lab";
    save_volume(dir / vol_name, split.labeled()[i].first);
    save_label(dir / lab_name, split.labeled()[i].second);
    const int dom = split.labeled_domains().empty() ? 0 : split.labeled_domains()[i];
    train_m << "labeled " << dom << ' ' << vol_name << ' ' << lab_name << '\n';
    eval_m << "labeled " << dom << ' ' << vol_name << ' ' << lab_name << '\n';
  }
  for (std::size_t i = 0; i < split.unlabeled().size(); ++i) {
    const auto vol_name = "unlabeled_" + std::to_string(i) + ".vol";
    save_volume(dir / vol_name, split.unlabeled()[i]);
    const int dom = split.unlabeled_domains().empty() ? 0 : split.unlabeled_domains()[i];
    train_m << "unlabeled " << dom << ' ' << vol_name << '\n';
    if (i < ds.unlabeled_truth.size()) {
      const auto lab_name = "unlabeled_" + std::to_string(i) + ".lab";
      save_label(dir / lab_name, ds.unlabeled_truth[i]);
      eval_m << "labeled " << dom << ' ' << vol_name << ' ' << lab_name << '\n';
    }
  }
  return dir / "train_manifest.txt";
}

}  // namespace ad::data
