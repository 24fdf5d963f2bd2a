#include "spwc/task_stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spwc {

Dataset Dataset::select(std::span<const std::size_t> rows) const {
  Dataset out;
  out.num_classes = num_classes;
  out.image_rows = image_rows;
  out.image_cols = image_cols;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw LookupError("Dataset::select: row index out of range");
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Dataset Dataset::first(std::size_t n) const {
  n = std::min(n, size());
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return select(rows);
}

std::vector<std::size_t> Dataset::histogram() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto y : labels) {
    if (y >= num_classes) throw UsageError("label exceeds declared class count");
    ++counts[y];
  }
  return counts;
}

namespace {

void check_sizes(std::size_t available, std::size_t wanted, const char* what) {
  if (wanted > available) {
    throw UsageError(std::string(what) + ": requested " + std::to_string(wanted) +
                     " samples but only " + std::to_string(available) + " available");
  }
}

std::span<const std::size_t> slice(const std::vector<std::size_t>& v, std::size_t from,
                                   std::size_t count) {
  return std::span<const std::size_t>(v).subspan(from, count);
}

Dataset permute_pixels(const Dataset& data, std::span<const std::size_t> perm) {
  Dataset out = data;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.inputs.col(static_cast<Eigen::Index>(i)) =
        data.inputs.col(static_cast<Eigen::Index>(perm[i]));
  }
  return out;
}

std::shared_ptr<const Dataset> eval_prefix(const Dataset& test, std::size_t n) {
  return std::make_shared<const Dataset>(test.first(n));
}

Matrix random_rotation(std::size_t d, Rng& rng) {
  Matrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

Dataset sample_blobs(const Matrix& means, std::size_t n, double variance, Rng& rng) {
  const auto classes = static_cast<std::size_t>(means.rows());
  Dataset data;
  data.num_classes = classes;
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.labels[i] = static_cast<Label>(i % classes);
  rng.shuffle(std::span<Label>(data.labels));
  const double sd = std::sqrt(variance);
  data.inputs.resize(static_cast<Eigen::Index>(n), means.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index c = 0; c < means.cols(); ++c) {
      data.inputs(r, c) = means(data.labels[i], c) + sd * rng.normal();
    }
  }
  return data;
}

}  // namespace

BaseSplits split_pool(const Dataset& pool, const SplitSizes& sizes, Rng& rng) {
  check_sizes(pool.size(), sizes.train + sizes.valid + sizes.test, "split_pool");
  const auto perm = random_permutation(pool.size(), rng);
  BaseSplits base;
  base.train = pool.select(slice(perm, 0, sizes.train));
  base.valid = pool.select(slice(perm, sizes.train, sizes.valid));
  base.test = pool.select(slice(perm, sizes.train + sizes.valid, sizes.test));
  return base;
}

BaseSplits split_pools(const Dataset& train_pool, const Dataset& test_pool,
                       const SplitSizes& sizes, Rng& rng) {
  check_sizes(train_pool.size(), sizes.train + sizes.valid, "split_pools (train file)");
  check_sizes(test_pool.size(), sizes.test, "split_pools (test file)");
  if (train_pool.dim() != test_pool.dim()) throw StructuralError("train/test width mismatch");
  const auto train_perm = random_permutation(train_pool.size(), rng);
  const auto test_perm = random_permutation(test_pool.size(), rng);
  BaseSplits base;
  base.train = train_pool.select(slice(train_perm, 0, sizes.train));
  base.valid = train_pool.select(slice(train_perm, sizes.train, sizes.valid));
  base.test = test_pool.select(slice(test_perm, 0, sizes.test));
  base.test.num_classes = std::max(base.train.num_classes, base.test.num_classes);
  base.train.num_classes = base.valid.num_classes = base.test.num_classes;
  return base;
}

Dataset pad_images(const Dataset& data, std::size_t rows, std::size_t cols) {
  if (data.image_rows * data.image_cols != data.dim() || data.image_rows == 0) {
    throw UsageError("pad_images: dataset has no image geometry");
  }
  if (rows < data.image_rows || cols < data.image_cols) {
    throw UsageError("pad_images: target canvas smaller than image");
  }
  const std::size_t top = (rows - data.image_rows) / 2;
  const std::size_t left = (cols - data.image_cols) / 2;
  Dataset out;
  out.labels = data.labels;
  out.num_classes = data.num_classes;
  out.image_rows = rows;
  out.image_cols = cols;
  out.inputs = Matrix::Zero(data.inputs.rows(), static_cast<Eigen::Index>(rows * cols));
  for (std::size_t r = 0; r < data.image_rows; ++r) {
    out.inputs.middleCols(static_cast<Eigen::Index>((top + r) * cols + left),
                          static_cast<Eigen::Index>(data.image_cols)) =
        data.inputs.middleCols(static_cast<Eigen::Index>(r * data.image_cols),
                               static_cast<Eigen::Index>(data.image_cols));
  }
  return out;
}

Task make_permuted_task(const BaseSplits& base, std::size_t task_index, const Rng& stream_rng,
                        std::size_t eval_subset_size) {
  for (const Dataset* split : {&base.train, &base.valid, &base.test}) {
    if (split->dim() != 784 || split->image_rows != 28 || split->image_cols != 28) {
      throw UsageError("make_permuted_task: expected 28x28 images (d = 784), got d = " +
                       std::to_string(split->dim()));
    }
  }
  Task task;
  task.task_id = task_index;
  task.head_id = task_index;
  task.permutation.resize(32 * 32);
  std::iota(task.permutation.begin(), task.permutation.end(), std::size_t{0});
  if (task_index > 0) {
    Rng rng = stream_rng.derive(task_index);
    rng.shuffle(std::span<std::size_t>(task.permutation));
  }
  task.train = permute_pixels(pad_images(base.train, 32, 32), task.permutation);
  task.valid = permute_pixels(pad_images(base.valid, 32, 32), task.permutation);
  task.test = permute_pixels(pad_images(base.test, 32, 32), task.permutation);
  task.eval_subset = eval_prefix(task.test, eval_subset_size);
  task.class_map.resize(base.train.num_classes);
  std::iota(task.class_map.begin(), task.class_map.end(), Label{0});
  return task;
}

Dataset select_classes(const Dataset& data, std::span<const Label> class_ids) {
  std::vector<std::size_t> rows;
  std::vector<Label> local;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto it = std::find(class_ids.begin(), class_ids.end(), data.labels[i]);
    if (it != class_ids.end()) {
      rows.push_back(i);
      local.push_back(static_cast<Label>(it - class_ids.begin()));
    }
  }
  Dataset out = data.select(rows);
  out.labels = std::move(local);
  out.num_classes = class_ids.size();
  return out;
}

Task make_split_task(const BaseSplits& base, std::span<const Label> class_ids,
                     std::size_t task_id, std::size_t eval_subset_size) {
  if (class_ids.empty()) throw UsageError("make_split_task: no classes given");
  std::set<Label> unique(class_ids.begin(), class_ids.end());
  if (unique.size() != class_ids.size()) {
    throw UsageError("make_split_task: duplicate class id");
  }
  for (auto c : class_ids) {
    if (c >= base.train.num_classes) throw UsageError("make_split_task: unknown class id");
  }
  Task task;
  task.task_id = task_id;
  task.head_id = task_id;
  task.train = select_classes(base.train, class_ids);
  task.valid = select_classes(base.valid, class_ids);
  task.test = select_classes(base.test, class_ids);
  task.eval_subset = eval_prefix(task.test, eval_subset_size);
  task.class_map.assign(class_ids.begin(), class_ids.end());
  return task;
}

SplitStreamBuilder::SplitStreamBuilder(BaseSplits base, std::size_t eval_subset_size)
    : base_(std::move(base)), eval_subset_size_(eval_subset_size) {}

Task SplitStreamBuilder::add_task(std::span<const Label> class_ids) {
  for (auto c : class_ids) {
    if (used_.contains(c)) {
      throw UsageError("class " + std::to_string(c) + " already used by an earlier task");
    }
  }
  Task task = make_split_task(base_, class_ids, next_task_, eval_subset_size_);
  used_.insert(class_ids.begin(), class_ids.end());
  ++next_task_;
  return task;
}

std::vector<Task> make_synthetic_stream(const StreamSpec& spec) {
  const auto& syn = spec.synthetic;
  if (syn.classes < 2) throw UsageError("synthetic stream needs at least 2 classes");
  if (syn.dim == 0) throw UsageError("synthetic stream needs a positive dimension");
  if (spec.tasks == 0) throw UsageError("stream needs at least one task");
  if (syn.variance < 0.0) throw UsageError("synthetic variance must be nonnegative");
  const Rng root(spec.seed);
  Rng layout_rng = root.derive(0);
  Matrix means(static_cast<Eigen::Index>(syn.classes), static_cast<Eigen::Index>(syn.dim));
  for (Eigen::Index r = 0; r < means.rows(); ++r) {
    for (Eigen::Index c = 0; c < means.cols(); ++c) means(r, c) = layout_rng.normal();
    means.row(r) *= syn.separation / means.row(r).norm();
  }
  std::vector<Task> tasks;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    Rng task_rng = root.derive(1 + t);
    const Matrix rotated = means * random_rotation(syn.dim, task_rng).transpose();
    Task task;
    task.task_id = t;
    task.head_id = t;
    Rng train_rng = task_rng.derive(1), valid_rng = task_rng.derive(2), test_rng = task_rng.derive(3);
    task.train = sample_blobs(rotated, spec.sizes.train, syn.variance, train_rng);
    task.valid = sample_blobs(rotated, spec.sizes.valid, syn.variance, valid_rng);
    task.test = sample_blobs(rotated, spec.sizes.test, syn.variance, test_rng);
    task.eval_subset = eval_prefix(task.test, spec.eval_subset_size);
    task.class_map.resize(syn.classes);
    std::iota(task.class_map.begin(), task.class_map.end(), Label{0});
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<Task> build_stream(const StreamSpec& spec) {
  if (spec.tasks == 0) throw UsageError("stream needs at least one task");
  if (spec.kind == StreamKind::synthetic) return make_synthetic_stream(spec);

  const Rng root(spec.seed);
  Rng split_rng = root.derive(1);
  const Dataset train_pool = load_idx(spec.train_images, spec.train_labels);
  BaseSplits base;
  if (spec.test_images.empty()) {
    base = split_pool(train_pool, spec.sizes, split_rng);
  } else {
    base = split_pools(train_pool, load_idx(spec.test_images, spec.test_labels), spec.sizes,
                       split_rng);
  }

  std::vector<Task> tasks;
  if (spec.kind == StreamKind::permuted) {
    const Rng perm_rng = root.derive(2);
    for (std::size_t t = 0; t < spec.tasks; ++t) {
      tasks.push_back(make_permuted_task(base, t, perm_rng, spec.eval_subset_size));
    }
    return tasks;
  }

  const std::size_t classes = base.train.num_classes;
  if (spec.classes_per_task == 0 || spec.tasks * spec.classes_per_task > classes) {
    throw UsageError("split stream needs tasks * classes_per_task <= " + std::to_string(classes));
  }
  std::vector<Label> order(classes);
  std::iota(order.begin(), order.end(), Label{0});
  Rng class_rng = root.derive(3);
  class_rng.shuffle(std::span<Label>(order));
  SplitStreamBuilder builder(std::move(base), spec.eval_subset_size);
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    tasks.push_back(builder.add_task(
        std::span<const Label>(order).subspan(t * spec.classes_per_task, spec.classes_per_task)));
  }
  return tasks;
}

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::permuted: return "permuted";
    case StreamKind::split: return "split";
    case StreamKind::synthetic: return "synthetic";
  }
  return "?";
}

StreamKind parse_stream_kind(const std::string& text) {
  if (text == "permuted") return StreamKind::permuted;
  if (text == "split") return StreamKind::split;
  if (text == "synthetic") return StreamKind::synthetic;
  throw UsageError("unknown stream kind '" + text + "'");
}

}  // namespace spwc
