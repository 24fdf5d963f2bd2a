#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "spwc/mlp.hpp"
#include "spwc/rng.hpp"

namespace spwc {

struct Dataset {
  Matrix inputs;  // n x d
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  // Image geometry when the rows are flattened images; 0 otherwise.
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(inputs.cols()); }

  Dataset select(std::span<const std::size_t> rows) const;
  Dataset first(std::size_t n) const;
  /// Counts per label, length num_classes.
  std::vector<std::size_t> histogram() const;
};

struct Task {
  std::size_t task_id = 0;
  std::size_t head_id = 0;
  Dataset train;
  Dataset valid;
  Dataset test;
  /// Prefix of the test split kept after training for accuracy probes.
  std::shared_ptr<const Dataset> eval_subset;
  /// class_map[local label] = original label.
  std::vector<Label> class_map;
  /// Pixel permutation for permuted tasks: output pixel i = input pixel permutation[i].
  std::vector<std::size_t> permutation;
};

// ---------------------------------------------------------------------------
// IDX container

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;  // unsigned-byte element type only
};

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

/// Parses an unsigned-byte IDX buffer. `name` is used in error messages.
IdxArray parse_idx(std::span<const std::uint8_t> bytes, const std::string& name);
std::vector<std::uint8_t> serialize_idx(const IdxArray& array);
/// Reads a file, transparently inflating it when it starts with 0x1F 0x8B.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Image + label IDX pair. Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);
/// Inverse of load_idx (uncompressed output).
void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

// ---------------------------------------------------------------------------
// Task construction

struct SplitSizes {
  std::size_t train = 5000;
  std::size_t valid = 1000;
  std::size_t test = 1000;
};

struct BaseSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Disjoint train/valid/test drawn from one pool after a seeded shuffle.
BaseSplits split_pool(const Dataset& pool, const SplitSizes& sizes, Rng& rng);
/// Train/valid from `train_pool`, test from `test_pool`.
BaseSplits split_pools(const Dataset& train_pool, const Dataset& test_pool,
                       const SplitSizes& sizes, Rng& rng);

/// Centers each image in a zero canvas of rows x cols.
Dataset pad_images(const Dataset& data, std::size_t rows, std::size_t cols);

/// 28x28 base -> zero-padded 32x32, then one pixel permutation per task
/// (identity for task 0, else Fisher-Yates on stream_rng.derive(task_index)).
Task make_permuted_task(const BaseSplits& base, std::size_t task_index, const Rng& stream_rng,
                        std::size_t eval_subset_size);

/// Keeps only `class_ids` and relabels them 0..k-1 in the given order.
Dataset select_classes(const Dataset& data, std::span<const Label> class_ids);

/// Tracks class usage so every class appears in at most one task.
class SplitStreamBuilder {
 public:
  SplitStreamBuilder(BaseSplits base, std::size_t eval_subset_size);
  Task add_task(std::span<const Label> class_ids);
  std::size_t tasks_built() const noexcept { return next_task_; }

 private:
  BaseSplits base_;
  std::size_t eval_subset_size_;
  std::set<Label> used_;
  std::size_t next_task_ = 0;
};

Task make_split_task(const BaseSplits& base, std::span<const Label> class_ids,
                     std::size_t task_id, std::size_t eval_subset_size);

enum class StreamKind { permuted, split, synthetic };

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t dim = 32;
  double variance = 1.0;    // per-coordinate blob variance
  double separation = 3.0;  // norm of every class mean
};

struct StreamSpec {
  StreamKind kind = StreamKind::synthetic;
  std::size_t tasks = 5;
  SplitSizes sizes;
  std::uint64_t seed = 0;
  std::size_t eval_subset_size = 500;
  // IDX sources (permuted / split). test_* may be empty: then every split is
  // drawn from the train files.
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t classes_per_task = 2;  // split streams
  SyntheticSpec synthetic;
};

/// Every task is `classes` Gaussian blobs whose shared mean layout is rotated
/// by a per-task random orthogonal matrix. Labels are balanced (i mod C) and
/// the rows shuffled.
std::vector<Task> make_synthetic_stream(const StreamSpec& spec);

/// Builds the full stream for any kind.
std::vector<Task> build_stream(const StreamSpec& spec);

std::string to_string(StreamKind kind);
StreamKind parse_stream_kind(const std::string& text);

}  // namespace spwc
