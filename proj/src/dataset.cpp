#include "desdis/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "desdis/net.hpp"

namespace desdis {

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
constexpr Index kCanvas = 48;  // texture canvas side; patches sample a window of it
}  // namespace

std::vector<Index> PatchDataset::patches_of_point(std::uint32_t id) const {
  std::vector<Index> out;
  for (Index i = 0; i < num_patches(); ++i) {
    if (point_ids[static_cast<std::size_t>(i)] == id) out.push_back(i);
  }
  return out;
}

std::vector<std::uint32_t> PatchDataset::train_point_ids() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t id = 0; id < static_cast<std::uint32_t>(num_points()); ++id) {
    if (!is_holdout_id(id)) out.push_back(id);
  }
  return out;
}

std::vector<std::uint32_t> PatchDataset::holdout_point_ids() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t id = 0; id < static_cast<std::uint32_t>(num_points()); ++id) {
    if (is_holdout_id(id)) out.push_back(id);
  }
  return out;
}

void save_dataset(const PatchDataset& ds, const std::filesystem::path& path) {
  if (ds.patches.size() != static_cast<std::size_t>(ds.num_patches() * ds.side * ds.side)) {
    throw InvalidDatasetError("patch byte count does not match patch count and side length");
  }
  serial::Writer w;
  w.bytes("DSDS", 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.num_patches()));
  w.u32(static_cast<std::uint32_t>(ds.side));
  w.bytes(ds.patches.data(), ds.patches.size());
  for (std::uint32_t id : ds.point_ids) w.u32(id);
  w.write_file(path);
}

namespace {

// Remaps ids to 0..K-1 ascending by original id, tags the holdout split, and
// enforces the pair-availability invariant.
void finalize_ids(PatchDataset& ds, std::vector<std::uint32_t> raw_ids) {
  std::map<std::uint32_t, std::uint32_t> remap;
  for (std::uint32_t id : raw_ids) remap.emplace(id, 0);
  std::uint32_t next = 0;
  for (auto& [orig, fresh] : remap) fresh = next++;

  ds.point_ids.resize(raw_ids.size());
  std::vector<std::size_t> counts(remap.size(), 0);
  for (std::size_t i = 0; i < raw_ids.size(); ++i) {
    const std::uint32_t fresh = remap.at(raw_ids[i]);
    ds.point_ids[i] = fresh;
    ++counts[fresh];
  }
  ds.id_remap.resize(remap.size());
  for (const auto& [orig, fresh] : remap) ds.id_remap[fresh] = orig;

  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < 2) {
      throw InvalidDatasetError("point id " + std::to_string(ds.id_remap[k]) + " has only " +
                                std::to_string(counts[k]) +
                                " patch(es); every point needs at least 2");
    }
  }
  ds.holdout.resize(raw_ids.size());
  for (std::size_t i = 0; i < raw_ids.size(); ++i) {
    ds.holdout[i] = is_holdout_id(ds.point_ids[i]);
  }
}

}  // namespace

PatchDataset load_dataset(const std::filesystem::path& path) {
  serial::Reader r = serial::Reader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "DSDS") {
    throw BadMagicError("'" + path.string() + "' is not a patch dataset (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw VersionMismatchError("dataset version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kDatasetVersion) +
                               ")");
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t side = r.u32();
  if (count == 0 || side == 0) throw InvalidDatasetError("empty dataset");

  PatchDataset ds;
  ds.side = static_cast<Index>(side);
  ds.patches.resize(static_cast<std::size_t>(count) * side * side);
  r.bytes(ds.patches.data(), ds.patches.size());
  std::vector<std::uint32_t> raw_ids(count);
  for (auto& id : raw_ids) id = r.u32();
  r.expect_exhausted("dataset");

  finalize_ids(ds, std::move(raw_ids));
  return ds;
}

namespace {

// Bilinear lookup with border clamp.
double sample_canvas(const std::vector<double>& canvas, double y, double x) {
  const auto clamp = [](double v) { return std::min(std::max(v, 0.0), double(kCanvas - 1)); };
  y = clamp(y);
  x = clamp(x);
  const Index y0 = static_cast<Index>(y);
  const Index x0 = static_cast<Index>(x);
  const Index y1 = std::min(y0 + 1, kCanvas - 1);
  const Index x1 = std::min(x0 + 1, kCanvas - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = canvas[static_cast<std::size_t>(y0 * kCanvas + x0)] * (1 - fx) +
                     canvas[static_cast<std::size_t>(y0 * kCanvas + x1)] * fx;
  const double bot = canvas[static_cast<std::size_t>(y1 * kCanvas + x0)] * (1 - fx) +
                     canvas[static_cast<std::size_t>(y1 * kCanvas + x1)] * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

PatchDataset synth_dataset(int num_points, int patches_per_point, double noise_level,
                           std::uint64_t seed) {
  if (num_points < 2) throw std::invalid_argument("synth_dataset needs at least 2 points");
  if (patches_per_point < 2) {
    throw std::invalid_argument("synth_dataset needs at least 2 patches per point");
  }
  if (noise_level < 0) throw std::invalid_argument("noise_level must be non-negative");

  const Index side = 32;
  PatchDataset ds;
  ds.side = side;
  ds.patches.reserve(static_cast<std::size_t>(num_points) * patches_per_point * side * side);
  std::vector<std::uint32_t> raw_ids;
  raw_ids.reserve(static_cast<std::size_t>(num_points) * patches_per_point);

  for (int p = 0; p < num_points; ++p) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p)));

    // Smooth texture: a coarse random grid, bilinearly upsampled.
    constexpr Index kGrid = 6;
    std::vector<double> grid(kGrid * kGrid);
    for (auto& g : grid) g = rng.normal();
    std::vector<double> canvas(kCanvas * kCanvas);
    for (Index y = 0; y < kCanvas; ++y) {
      for (Index x = 0; x < kCanvas; ++x) {
        const double gy = static_cast<double>(y) / (kCanvas - 1) * (kGrid - 1);
        const double gx = static_cast<double>(x) / (kCanvas - 1) * (kGrid - 1);
        const Index y0 = std::min(static_cast<Index>(gy), kGrid - 2);
        const Index x0 = std::min(static_cast<Index>(gx), kGrid - 2);
        const double fy = gy - static_cast<double>(y0);
        const double fx = gx - static_cast<double>(x0);
        const double top = grid[static_cast<std::size_t>(y0 * kGrid + x0)] * (1 - fx) +
                           grid[static_cast<std::size_t>(y0 * kGrid + x0 + 1)] * fx;
        const double bot = grid[static_cast<std::size_t>((y0 + 1) * kGrid + x0)] * (1 - fx) +
                           grid[static_cast<std::size_t>((y0 + 1) * kGrid + x0 + 1)] * fx;
        canvas[static_cast<std::size_t>(y * kCanvas + x)] = top * (1 - fy) + bot * fy;
      }
    }
    // One brightness mapping per point so all its views share it.
    const auto [mn_it, mx_it] = std::minmax_element(canvas.begin(), canvas.end());
    const double mn = *mn_it;
    const double range = std::max(*mx_it - mn, 1e-9);

    for (int v = 0; v < patches_per_point; ++v) {
      const double angle = noise_level * rng.uniform(-0.25, 0.25);
      const double scale = std::exp(noise_level * rng.uniform(-0.12, 0.12));
      const double ty = noise_level * rng.uniform(-1.5, 1.5);
      const double tx = noise_level * rng.uniform(-1.5, 1.5);
      const double ca = std::cos(angle) * scale;
      const double sa = std::sin(angle) * scale;
      const double cy = (kCanvas - 1) / 2.0;
      const double cx = (kCanvas - 1) / 2.0;
      for (Index y = 0; y < side; ++y) {
        for (Index x = 0; x < side; ++x) {
          const double ry = static_cast<double>(y) - (side - 1) / 2.0;
          const double rx = static_cast<double>(x) - (side - 1) / 2.0;
          const double sy = cy + ty + ca * ry - sa * rx;
          const double sx = cx + tx + sa * ry + ca * rx;
          double value = (sample_canvas(canvas, sy, sx) - mn) / range * 255.0;
          value += 6.0 * noise_level * rng.normal();
          value = std::min(std::max(value, 0.0), 255.0);
          ds.patches.push_back(static_cast<std::uint8_t>(std::lround(value)));
        }
      }
      raw_ids.push_back(static_cast<std::uint32_t>(p));
    }
  }
  finalize_ids(ds, std::move(raw_ids));
  return ds;
}

TripletBatch sample_triplet_batch(const PatchDataset& ds,
                                  std::span<const std::uint32_t> candidate_ids,
                                  Index batch_points, Rng& rng) {
  if (batch_points > static_cast<Index>(candidate_ids.size())) {
    throw std::invalid_argument("batch of " + std::to_string(batch_points) +
                                " points exceeds the " +
                                std::to_string(candidate_ids.size()) + " available");
  }
  if (batch_points < 2) throw std::invalid_argument("batch needs at least 2 points");

  // Partial Fisher-Yates: the first batch_points entries are a uniform
  // sample without replacement.
  std::vector<std::uint32_t> pool(candidate_ids.begin(), candidate_ids.end());
  for (Index i = 0; i < batch_points; ++i) {
    const Index j = i + static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(
                            pool.size() - static_cast<std::size_t>(i))));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }

  TripletBatch batch;
  batch.anchor_idx.reserve(static_cast<std::size_t>(batch_points));
  batch.positive_idx.reserve(static_cast<std::size_t>(batch_points));
  batch.point_ids.assign(pool.begin(), pool.begin() + batch_points);
  for (Index b = 0; b < batch_points; ++b) {
    const auto members = ds.patches_of_point(batch.point_ids[static_cast<std::size_t>(b)]);
    const std::size_t a = rng.bounded(members.size());
    std::size_t q = rng.bounded(members.size() - 1);
    if (q >= a) ++q;  // distinct positive
    batch.anchor_idx.push_back(members[a]);
    batch.positive_idx.push_back(members[q]);
  }
  return batch;
}

template <typename Scalar>
Tensor<Scalar> gather_standardized(const PatchDataset& ds, std::span<const Index> indices) {
  const Index px = ds.side * ds.side;
  std::vector<std::uint8_t> bytes;
  bytes.reserve(indices.size() * static_cast<std::size_t>(px));
  for (Index i : indices) {
    const auto p = ds.patch(i);
    bytes.insert(bytes.end(), p.begin(), p.end());
  }
  return standardize_patches<Scalar>(bytes, static_cast<Index>(indices.size()), ds.side);
}

template Tensor<float> gather_standardized<float>(const PatchDataset&, std::span<const Index>);
template Tensor<double> gather_standardized<double>(const PatchDataset&, std::span<const Index>);

}  // namespace desdis
