#include "dmwa/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dmwa/rng.hpp"
#include "dmwa/tensor_io.hpp"

namespace dmwa {

void DatasetConfig::validate() const {
  if (num_classes <= 0 || seen_classes <= 0 || seen_classes >= num_classes) {
    throw ConfigError("dataset config: need 0 < seen_classes < num_classes");
  }
  if (samples_per_class_train <= 0 || gallery_per_class_test <= 0 || queries_per_class_test <= 0 || grid <= 0) {
    throw ConfigError("dataset config: sample counts and grid must be positive");
  }
  if (!(corruption_rate >= 0.0 && corruption_rate < 1.0)) {
    throw ConfigError("dataset config: corruption_rate must lie in [0, 1)");
  }
  if (corruption_rate > 0.0 && seen_classes < 2) {
    throw ConfigError("dataset config: corruption needs at least two seen classes");
  }
}

std::vector<bool> Dataset::seen_mask() const {
  std::vector<bool> seen(static_cast<std::size_t>(config.num_classes), false);
  for (int c = 0; c < config.seen_classes; ++c) seen[static_cast<std::size_t>(c)] = true;
  return seen;
}

namespace {

struct Point {
  double x, y;
};

using Polygon = std::vector<Point>;

// Stream ids for the different draws, so that changing one count does not
// reshuffle unrelated samples.
enum Stream : std::uint64_t {
  kPrototype = 1,
  kTrainSketch = 2,
  kTrainImage = 3,
  kQuery = 4,
  kGallery = 5,
  kCorruption = 6,
};

Rng stream(std::uint64_t seed, Stream s, std::uint64_t a, std::uint64_t b = 0) {
  return Rng(seed).split(static_cast<std::uint64_t>(s)).split(a).split(b);
}

std::vector<Polygon> prototype_polygons(int grid, std::uint64_t seed, int class_id) {
  Rng rng = stream(seed, kPrototype, static_cast<std::uint64_t>(class_id));
  const double g = grid;
  const int count = rng.uniform_int(2, 4);
  std::vector<Polygon> polys;
  for (int p = 0; p < count; ++p) {
    const double cx = rng.uniform(0.2 * g, 0.8 * g);
    const double cy = rng.uniform(0.2 * g, 0.8 * g);
    const double radius = rng.uniform(0.12 * g, 0.28 * g);
    const int vertices = rng.uniform_int(3, 6);
    const double start = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Polygon poly;
    for (int v = 0; v < vertices; ++v) {
      // Evenly spaced angles with jitter keep the polygon simple.
      const double step = 2.0 * std::numbers::pi / vertices;
      const double angle = start + step * (v + rng.uniform(-0.3, 0.3));
      const double r = radius * rng.uniform(0.6, 1.0);
      poly.push_back({cx + r * std::cos(angle), cy + r * std::sin(angle)});
    }
    polys.push_back(std::move(poly));
  }
  return polys;
}

bool inside(const Polygon& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

Grid rasterize(const std::vector<Polygon>& polys, int grid) {
  Grid mask = Grid::Zero(grid, grid);
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      for (const auto& poly : polys) {
        if (inside(poly, x + 0.5, y + 0.5)) {
          mask(y, x) = 1.0f;
          break;
        }
      }
    }
  }
  return mask;
}

// Binarized gradient magnitude: mask pixels with a 4-neighbour outside.
Grid edge_map(const Grid& mask) {
  const auto n = mask.rows();
  Grid edges = Grid::Zero(n, n);
  auto at = [&](Index y, Index x) { return (y < 0 || x < 0 || y >= n || x >= n) ? 0.0f : mask(y, x); };
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      if (mask(y, x) == 0.0f) continue;
      const float dx = std::max(std::abs(mask(y, x) - at(y, x - 1)), std::abs(mask(y, x) - at(y, x + 1)));
      const float dy = std::max(std::abs(mask(y, x) - at(y - 1, x)), std::abs(mask(y, x) - at(y + 1, x)));
      if (std::hypot(dx, dy) > 0.5f) edges(y, x) = 1.0f;
    }
  }
  return edges;
}

Grid make_sketch(const std::vector<Polygon>& polys, int grid, Rng rng) {
  const double angle = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
  const double tx = rng.uniform(-2.0, 2.0);
  const double ty = rng.uniform(-2.0, 2.0);
  const double c = grid / 2.0;
  std::vector<Polygon> moved = polys;
  for (auto& poly : moved) {
    for (auto& p : poly) {
      const double x = p.x - c, y = p.y - c;
      p = {c + std::cos(angle) * x - std::sin(angle) * y + tx, c + std::sin(angle) * x + std::cos(angle) * y + ty};
    }
  }
  return edge_map(rasterize(moved, grid));
}

Grid make_image(const Grid& prototype, Rng rng) {
  const auto n = static_cast<int>(prototype.rows());
  Grid img = prototype;
  const int clutter = rng.uniform_int(0, 3);
  for (int r = 0; r < clutter; ++r) {
    const int w = rng.uniform_int(3, 8);
    const int h = rng.uniform_int(3, 8);
    const int x0 = rng.uniform_int(0, n - w);
    const int y0 = rng.uniform_int(0, n - h);
    const auto level = static_cast<float>(rng.uniform(0.3, 1.0));
    img.block(y0, x0, h, w).setConstant(level);
  }
  for (Index i = 0; i < img.size(); ++i) img.data()[i] += static_cast<float>(0.1 * rng.normal());
  return img;
}

}  // namespace

Grid class_prototype(int grid, std::uint64_t seed, int class_id) {
  return rasterize(prototype_polygons(grid, seed, class_id), grid);
}

Dataset generate(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  const auto seed = config.seed;
  std::vector<std::vector<Polygon>> polys;
  std::vector<Grid> prototypes;
  for (int c = 0; c < config.num_classes; ++c) {
    polys.push_back(prototype_polygons(config.grid, seed, c));
    prototypes.push_back(rasterize(polys.back(), config.grid));
  }

  for (int c = 0; c < config.seen_classes; ++c) {
    for (int i = 0; i < config.samples_per_class_train; ++i) {
      const auto key = static_cast<std::uint64_t>(c) * 100003u + static_cast<std::uint64_t>(i);
      SamplePair pair;
      pair.class_id = c;
      pair.sketch = make_sketch(polys[c], config.grid, stream(seed, kTrainSketch, key));
      pair.image = make_image(prototypes[c], stream(seed, kTrainImage, key));
      ds.train.push_back(std::move(pair));
    }
  }

  const auto n_train = ds.train.size();
  const auto n_corrupt = static_cast<std::size_t>(std::llround(config.corruption_rate * static_cast<double>(n_train)));
  if (n_corrupt > 0) {
    Rng rng = stream(seed, kCorruption, 0);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t k = 0; k < n_corrupt; ++k) {
      auto& pair = ds.train[order[k]];
      int other = rng.uniform_int(0, config.seen_classes - 2);
      if (other >= pair.class_id) ++other;
      pair.image = make_image(prototypes[other], stream(seed, kCorruption, 1 + order[k]));
      pair.corrupted = true;
    }
  }

  for (int c = config.seen_classes; c < config.num_classes; ++c) {
    for (int i = 0; i < config.queries_per_class_test; ++i) {
      const auto key = static_cast<std::uint64_t>(c) * 100003u + static_cast<std::uint64_t>(i);
      ds.queries.push_back({make_sketch(polys[c], config.grid, stream(seed, kQuery, key)), c});
    }
    for (int i = 0; i < config.gallery_per_class_test; ++i) {
      const auto key = static_cast<std::uint64_t>(c) * 100003u + static_cast<std::uint64_t>(i);
      ds.gallery.push_back({make_image(prototypes[c], stream(seed, kGallery, key)), c});
    }
  }
  return ds;
}

KeyValues dataset_config_entries(const DatasetConfig& c) {
  KeyValues kv;
  kv["num_classes"] = std::to_string(c.num_classes);
  kv["seen_classes"] = std::to_string(c.seen_classes);
  kv["samples_per_class_train"] = std::to_string(c.samples_per_class_train);
  kv["gallery_per_class_test"] = std::to_string(c.gallery_per_class_test);
  kv["queries_per_class_test"] = std::to_string(c.queries_per_class_test);
  kv["grid"] = std::to_string(c.grid);
  kv["corruption_rate"] = format_double(c.corruption_rate);
  kv["seed"] = std::to_string(c.seed);
  return kv;
}

DatasetConfig dataset_config_from_entries(const KeyValues& kv) {
  DatasetConfig c;
  c.num_classes = get_int(kv, "num_classes", c.num_classes);
  c.seen_classes = get_int(kv, "seen_classes", c.seen_classes);
  c.samples_per_class_train = get_int(kv, "samples_per_class_train", c.samples_per_class_train);
  c.gallery_per_class_test = get_int(kv, "gallery_per_class_test", c.gallery_per_class_test);
  c.queries_per_class_test = get_int(kv, "queries_per_class_test", c.queries_per_class_test);
  c.grid = get_int(kv, "grid", c.grid);
  c.corruption_rate = get_double(kv, "corruption_rate", c.corruption_rate);
  c.seed = static_cast<std::uint64_t>(get_int64(kv, "seed", static_cast<long long>(c.seed)));
  return c;
}

namespace {

constexpr const char* kManifestHeader = "dmwa-dataset 1";

Tensor grids_tensor(const std::vector<const Grid*>& grids, int grid, std::uint32_t per_item) {
  Tensor t;
  const auto n = static_cast<std::uint32_t>(grids.size() / per_item);
  t.shape = {n};
  if (per_item > 1) t.shape.push_back(per_item);
  t.shape.push_back(static_cast<std::uint32_t>(grid));
  t.shape.push_back(static_cast<std::uint32_t>(grid));
  t.values.reserve(grids.size() * static_cast<std::size_t>(grid * grid));
  for (const Grid* g : grids) t.values.insert(t.values.end(), g->data(), g->data() + g->size());
  return t;
}

Grid grid_at(const Tensor& t, std::size_t index, int grid) {
  Grid g(grid, grid);
  const std::size_t stride = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
  std::copy_n(t.values.begin() + static_cast<std::ptrdiff_t>(index * stride), stride, g.data());
  return g;
}

void check_shape(const Tensor& t, const std::vector<std::uint32_t>& expected, const std::string& name) {
  if (t.shape != expected) {
    std::string got, want;
    for (auto e : t.shape) got += std::to_string(e) + " ";
    for (auto e : expected) want += std::to_string(e) + " ";
    throw FormatError(name + ": shape [" + got + "] does not match manifest [" + want + "]", 8);
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<const Grid*> train, queries, gallery;
  for (const auto& p : ds.train) {
    train.push_back(&p.sketch);
    train.push_back(&p.image);
  }
  for (const auto& s : ds.queries) queries.push_back(&s.pixels);
  for (const auto& s : ds.gallery) gallery.push_back(&s.pixels);
  const int g = ds.config.grid;
  write_tensor(dir / "train.bin", grids_tensor(train, g, 2));
  write_tensor(dir / "queries.bin", grids_tensor(queries, g, 1));
  write_tensor(dir / "gallery.bin", grids_tensor(gallery, g, 1));

  std::ofstream out(dir / "manifest");
  if (!out) throw Error("cannot write " + (dir / "manifest").string());
  out << kManifestHeader << '\n';
  write_key_values(out, dataset_config_entries(ds.config));
  std::size_t id = 0;
  for (const auto& p : ds.train) out << "record " << id++ << ' ' << p.class_id << " train " << (p.corrupted ? 1 : 0) << '\n';
  for (const auto& s : ds.queries) out << "record " << id++ << ' ' << s.class_id << " query 0\n";
  for (const auto& s : ds.gallery) out << "record " << id++ << ' ' << s.class_id << " gallery 0\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest";
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open " + manifest_path.string());
  std::string line;
  long long offset = 0;
  if (!std::getline(in, line) || trim(line) != kManifestHeader) {
    throw FormatError(manifest_path.string() + ": missing `" + kManifestHeader + "` header", 0);
  }
  offset += static_cast<long long>(line.size()) + 1;

  struct Record {
    int class_id;
    std::string role;
    bool corrupted;
  };
  std::vector<Record> records;
  std::ostringstream config_text;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.rfind("record ", 0) == 0) {
      std::istringstream fields(t.substr(7));
      std::size_t id = 0;
      Record r{};
      int corrupted = 0;
      if (!(fields >> id >> r.class_id >> r.role >> corrupted) || id != records.size() ||
          (r.role != "train" && r.role != "query" && r.role != "gallery")) {
        throw FormatError(manifest_path.string() + ": malformed record `" + t + "`", offset);
      }
      r.corrupted = corrupted != 0;
      records.push_back(r);
    } else {
      config_text << line << '\n';
    }
    offset += static_cast<long long>(line.size()) + 1;
  }
  std::istringstream config_in(config_text.str());
  Dataset ds;
  ds.config = dataset_config_from_entries(parse_key_values(config_in, manifest_path.string()));
  ds.config.validate();

  const Tensor train = read_tensor(dir / "train.bin");
  const Tensor queries = read_tensor(dir / "queries.bin");
  const Tensor gallery = read_tensor(dir / "gallery.bin");
  const auto g = static_cast<std::uint32_t>(ds.config.grid);
  const auto count = [&](const char* role) {
    return static_cast<std::uint32_t>(
        std::count_if(records.begin(), records.end(), [&](const Record& r) { return r.role == role; }));
  };
  check_shape(train, {count("train"), 2, g, g}, "train.bin");
  check_shape(queries, {count("query"), g, g}, "queries.bin");
  check_shape(gallery, {count("gallery"), g, g}, "gallery.bin");

  std::size_t ti = 0, qi = 0, gi = 0;
  for (const auto& r : records) {
    if (r.role == "train") {
      SamplePair p;
      p.class_id = r.class_id;
      p.corrupted = r.corrupted;
      p.sketch = grid_at(train, 2 * ti, ds.config.grid);
      p.image = grid_at(train, 2 * ti + 1, ds.config.grid);
      ++ti;
      ds.train.push_back(std::move(p));
    } else if (r.role == "query") {
      ds.queries.push_back({grid_at(queries, qi++, ds.config.grid), r.class_id});
    } else {
      ds.gallery.push_back({grid_at(gallery, gi++, ds.config.grid), r.class_id});
    }
  }
  return ds;
}

template <typename Scalar>
Matrix<Scalar> stack_grids(std::span<const Grid* const> grids) {
  if (grids.empty()) return Matrix<Scalar>(0, 0);
  const Index dim = grids.front()->size();
  Matrix<Scalar> out(static_cast<Index>(grids.size()), dim);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (grids[i]->size() != dim) throw DimensionError("stack_grids: grids of different sizes");
    out.row(static_cast<Index>(i)) = grids[i]->reshaped<Eigen::RowMajor>().transpose().template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> stack_samples(std::span<const Sample> samples) {
  std::vector<const Grid*> grids;
  for (const auto& s : samples) grids.push_back(&s.pixels);
  return stack_grids<Scalar>(grids);
}

template Matrix<float> stack_grids<float>(std::span<const Grid* const>);
template Matrix<double> stack_grids<double>(std::span<const Grid* const>);
template Matrix<float> stack_samples<float>(std::span<const Sample>);
template Matrix<double> stack_samples<double>(std::span<const Sample>);

}  // namespace dmwa
