#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "desdis/rng.hpp"
#include "desdis/serial.hpp"
#include "desdis/tensor.hpp"

namespace desdis {

class InvalidDatasetError : public IoError {
 public:
  using IoError::IoError;
};

/// Labeled patch collection: N grayscale side×side patches, one point id per
/// patch; patches sharing an id depict the same 3D point. Ids are contiguous
/// 0..K-1 in memory (the loader remaps if the file is not), and every id
/// appears at least twice so a positive pair always exists.
struct PatchDataset {
  Index side = 32;
  std::vector<std::uint8_t> patches;    // num_patches * side * side bytes
  std::vector<std::uint32_t> point_ids;  // one per patch
  // Remap applied at load time: id_remap[new_id] = id as stored in the file.
  // Identity when the file was already contiguous; not serialized.
  std::vector<std::uint32_t> id_remap;
  // Holdout tag per patch (true = evaluation split); derived, not serialized.
  std::vector<bool> holdout;

  Index num_patches() const { return static_cast<Index>(point_ids.size()); }
  Index num_points() const { return static_cast<Index>(id_remap.size()); }

  std::span<const std::uint8_t> patch(Index i) const {
    return {patches.data() + i * side * side, static_cast<std::size_t>(side * side)};
  }

  std::vector<Index> patches_of_point(std::uint32_t id) const;
  std::vector<std::uint32_t> train_point_ids() const;
  std::vector<std::uint32_t> holdout_point_ids() const;
};

// Every 10th point id is held out for evaluation.
inline bool is_holdout_id(std::uint32_t id) { return id % 10 == 0; }

/// Dataset file ("DSDS"): magic | u32 version | u32 patch count | u32 side
/// | patch bytes | u32 point ids. Little-endian throughout.
void save_dataset(const PatchDataset& ds, const std::filesystem::path& path);

/// Loads and validates a dataset: remaps point ids to a contiguous range
/// (ascending by original id), tags the holdout split, and rejects files
/// where some id has fewer than 2 patches. Throws BadMagicError /
/// VersionMismatchError / TruncatedPayloadError / InvalidDatasetError.
PatchDataset load_dataset(const std::filesystem::path& path);

/// Synthetic stand-in for a real patch benchmark. Each 3D point is a random
/// smooth texture on an oversized canvas; its patches are windows sampled
/// under small random affine warps with additive pixel noise. `noise_level`
/// scales both the warp magnitudes and the pixel noise: at 0 every patch of
/// a point is byte-identical. Deterministic in `seed`.
PatchDataset synth_dataset(int num_points, int patches_per_point, double noise_level,
                           std::uint64_t seed);

/// One (anchor, positive) patch pair per sampled point id.
struct TripletBatch {
  std::vector<Index> anchor_idx;
  std::vector<Index> positive_idx;
  std::vector<std::uint32_t> point_ids;
  // Hardest-in-batch negative indices, filled by the mining step.
  std::vector<Index> negative_idx;
};

/// Samples `batch_points` distinct point ids uniformly without replacement
/// from `candidate_ids`, then one anchor/positive pair of distinct patches
/// per id. Throws std::invalid_argument when the batch exceeds the candidate
/// pool.
TripletBatch sample_triplet_batch(const PatchDataset& ds,
                                  std::span<const std::uint32_t> candidate_ids,
                                  Index batch_points, Rng& rng);

/// Gathers the selected patches into a standardized N×1×side×side tensor.
template <typename Scalar>
Tensor<Scalar> gather_standardized(const PatchDataset& ds, std::span<const Index> indices);

}  // namespace desdis
