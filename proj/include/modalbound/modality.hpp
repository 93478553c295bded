#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "modalbound/error.hpp"
#include "modalbound/numeric.hpp"

namespace modalbound {

// Dimensions of the K modality blocks of the input vector, in order.
class ModalitySchema {
 public:
  ModalitySchema() = default;

  explicit ModalitySchema(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw ConfigError("schema needs at least one modality");
    offsets_.reserve(dims_.size());
    int off = 0;
    for (int d : dims_) {
      if (d < 1) throw ConfigError("modality dimensions must be positive");
      offsets_.push_back(off);
      off += d;
    }
    total_ = off;
  }

  static ModalitySchema uniform(int modalities, int dim) {
    return ModalitySchema(
        std::vector<int>(static_cast<std::size_t>(modalities), dim));
  }

  int modality_count() const { return static_cast<int>(dims_.size()); }
  int dim(int k) const { return dims_.at(static_cast<std::size_t>(k)); }
  int offset(int k) const { return offsets_.at(static_cast<std::size_t>(k)); }
  int total_dim() const { return total_; }
  const std::vector<int>& dims() const { return dims_; }

  bool operator==(const ModalitySchema& o) const { return dims_ == o.dims_; }
  bool operator!=(const ModalitySchema& o) const { return !(*this == o); }

 private:
  std::vector<int> dims_;
  std::vector<int> offsets_;
  int total_ = 0;
};

// A subset M of the modalities of a schema; the masking projection p_M
// keeps blocks in M and replaces the rest with the absent marker.
class ModalitySubset {
 public:
  ModalitySubset() = default;

  ModalitySubset(ModalitySchema schema, std::vector<bool> mask)
      : schema_(std::move(schema)), mask_(std::move(mask)) {
    if (static_cast<int>(mask_.size()) != schema_.modality_count())
      throw SchemaMismatchError("subset mask length != modality count");
  }

  static ModalitySubset full(const ModalitySchema& s) {
    return ModalitySubset(
        s, std::vector<bool>(static_cast<std::size_t>(s.modality_count()),
                             true));
  }

  static ModalitySubset empty(const ModalitySchema& s) {
    return ModalitySubset(
        s, std::vector<bool>(static_cast<std::size_t>(s.modality_count()),
                             false));
  }

  // Zero-based modality indices.
  static ModalitySubset of(const ModalitySchema& s,
                           const std::vector<int>& indices) {
    std::vector<bool> mask(static_cast<std::size_t>(s.modality_count()),
                           false);
    for (int k : indices) {
      if (k < 0 || k >= s.modality_count())
        throw ConfigError("modality index out of range: " + std::to_string(k));
      mask[static_cast<std::size_t>(k)] = true;
    }
    return ModalitySubset(s, std::move(mask));
  }

  const ModalitySchema& schema() const { return schema_; }
  bool contains(int k) const { return mask_.at(static_cast<std::size_t>(k)); }

  int count() const {
    int c = 0;
    for (bool b : mask_) c += b ? 1 : 0;
    return c;
  }

  bool is_empty() const { return count() == 0; }
  bool is_full() const { return count() == schema_.modality_count(); }

  // Total dimension of the present blocks.
  int active_dim() const {
    int d = 0;
    for (int k = 0; k < schema_.modality_count(); ++k)
      if (contains(k)) d += schema_.dim(k);
    return d;
  }

  std::vector<int> indices() const {
    std::vector<int> out;
    for (int k = 0; k < schema_.modality_count(); ++k)
      if (contains(k)) out.push_back(k);
    return out;
  }

  bool is_subset_of(const ModalitySubset& o) const {
    require_same_schema(o);
    for (int k = 0; k < schema_.modality_count(); ++k)
      if (contains(k) && !o.contains(k)) return false;
    return true;
  }

  ModalitySubset intersect(const ModalitySubset& o) const {
    require_same_schema(o);
    std::vector<bool> mask(static_cast<std::size_t>(schema_.modality_count()));
    for (int k = 0; k < schema_.modality_count(); ++k)
      mask[static_cast<std::size_t>(k)] = contains(k) && o.contains(k);
    return ModalitySubset(schema_, std::move(mask));
  }

  // "m1,m3" style label (1-based, matching column naming).
  std::string label() const {
    std::ostringstream os;
    bool first = true;
    for (int k = 0; k < schema_.modality_count(); ++k) {
      if (!contains(k)) continue;
      if (!first) os << ",";
      os << "m" << (k + 1);
      first = false;
    }
    return first ? std::string("empty") : os.str();
  }

  bool operator==(const ModalitySubset& o) const {
    return schema_ == o.schema_ && mask_ == o.mask_;
  }

 private:
  void require_same_schema(const ModalitySubset& o) const {
    if (schema_ != o.schema_)
      throw SchemaMismatchError("subset schemas differ");
  }

  ModalitySchema schema_;
  std::vector<bool> mask_;
};

// Parses "m1,m3" or "1,3" (1-based) into a subset; "full" and "empty" are
// accepted as shorthands.
inline ModalitySubset parse_subset(const ModalitySchema& schema,
                                   const std::string& text) {
  if (text == "full") return ModalitySubset::full(schema);
  if (text == "empty") return ModalitySubset::empty(schema);
  std::vector<int> idx;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty() && (tok[0] == 'm' || tok[0] == 'M')) tok = tok.substr(1);
    std::size_t pos = 0;
    int v;
    try {
      v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse modality index '" + tok + "'");
    }
    if (pos != tok.size())
      throw ConfigError("cannot parse modality index '" + tok + "'");
    if (v < 1 || v > schema.modality_count())
      throw ConfigError("modality index out of range: " + tok);
    idx.push_back(v - 1);
  }
  if (idx.empty()) throw ConfigError("empty subset spec '" + text + "'");
  return ModalitySubset::of(schema, idx);
}

// One observation: per-modality feature blocks plus a scalar label.
// An absent (masked) block is std::nullopt.
struct MultiModalSample {
  std::vector<std::optional<Eigen::VectorXd>> blocks;
  double label = 0.0;
};

inline void validate_sample(const ModalitySchema& schema,
                            const MultiModalSample& s) {
  if (static_cast<int>(s.blocks.size()) != schema.modality_count())
    throw SchemaMismatchError("sample block count != modality count");
  for (int k = 0; k < schema.modality_count(); ++k) {
    const auto& b = s.blocks[static_cast<std::size_t>(k)];
    if (b && b->size() != schema.dim(k))
      throw SchemaMismatchError("block m" + std::to_string(k + 1) +
                                " has wrong dimension");
  }
  if (!std::isfinite(s.label))
    throw SchemaMismatchError("sample label is not finite");
}

// The masking projection p_M: blocks outside M become absent. Already
// absent blocks stay absent, so p_M . p_M = p_M and p_N . p_M = p_{M & N}.
inline MultiModalSample project(const MultiModalSample& s,
                                const ModalitySubset& subset) {
  MultiModalSample out = s;
  for (int k = 0; k < subset.schema().modality_count(); ++k) {
    if (!subset.contains(k)) out.blocks[static_cast<std::size_t>(k)].reset();
  }
  return out;
}

inline ModalitySubset compose_subsets(const ModalitySubset& n,
                                      const ModalitySubset& m) {
  return n.intersect(m);
}

// Vectorization of a masked sample: blocks in the subset are copied into
// their schema positions, everything else is zero-filled. Equivalent to
// multiplying the concatenated input by the 0/1 diagonal matrix of p_M.
inline Eigen::VectorXd to_masked_vector(const MultiModalSample& s,
                                        const ModalitySubset& subset) {
  const ModalitySchema& schema = subset.schema();
  if (static_cast<int>(s.blocks.size()) != schema.modality_count())
    throw SchemaMismatchError("sample block count != modality count");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(schema.total_dim());
  for (int k = 0; k < schema.modality_count(); ++k) {
    if (!subset.contains(k)) continue;
    const auto& b = s.blocks[static_cast<std::size_t>(k)];
    if (!b)
      throw MissingModalityError("sample lacks modality m" +
                                 std::to_string(k + 1) +
                                 " required by the subset");
    if (b->size() != schema.dim(k))
      throw SchemaMismatchError("block m" + std::to_string(k + 1) +
                                " has wrong dimension");
    x.segment(schema.offset(k), schema.dim(k)) = *b;
  }
  return x;
}

// Provenance carried with every dataset and forwarded into result digests.
struct DatasetMeta {
  std::string generator;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string split = "all";
  std::string parent_digest;
};

class Dataset {
 public:
  Dataset() = default;

  Dataset(ModalitySchema schema, DatasetMeta meta)
      : schema_(std::move(schema)), meta_(std::move(meta)) {}

  const ModalitySchema& schema() const { return schema_; }
  const DatasetMeta& meta() const { return meta_; }
  DatasetMeta& meta() { return meta_; }

  int size() const { return static_cast<int>(samples_.size()); }

  const MultiModalSample& sample(int i) const {
    return samples_.at(static_cast<std::size_t>(i));
  }

  const std::vector<MultiModalSample>& samples() const { return samples_; }

  void add(MultiModalSample s) {
    validate_sample(schema_, s);
    samples_.push_back(std::move(s));
  }

  void reserve(int n) { samples_.reserve(static_cast<std::size_t>(n)); }

  // Deterministic prefix/suffix split; samples are i.i.d. by construction
  // so no shuffling is involved.
  std::pair<Dataset, Dataset> split(double first_fraction) const {
    if (!(first_fraction > 0.0) || !(first_fraction < 1.0))
      throw ConfigError("split fraction must lie in (0, 1)");
    int n_first = static_cast<int>(
        std::llround(first_fraction * static_cast<double>(size())));
    n_first = std::max(1, std::min(size() - 1, n_first));
    DatasetMeta a = meta_, b = meta_;
    a.parent_digest = b.parent_digest = digest();
    a.split = "train";
    b.split = "test";
    Dataset first(schema_, a), second(schema_, b);
    first.reserve(n_first);
    second.reserve(size() - n_first);
    for (int i = 0; i < size(); ++i)
      (i < n_first ? first : second).samples_.push_back(samples_[i]);
    return {std::move(first), std::move(second)};
  }

  // First n samples, same provenance plus a "head" split tag.
  Dataset head(int n) const {
    if (n < 1 || n > size()) throw ConfigError("head: bad sample count");
    DatasetMeta m = meta_;
    m.parent_digest = digest();
    m.split = meta_.split + "/head" + std::to_string(n);
    Dataset out(schema_, m);
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.samples_.push_back(samples_[i]);
    return out;
  }

  // Content digest over schema, metadata and every value.
  std::string digest() const {
    Digest d;
    d.feed(meta_.generator).feed(meta_.seed).feed(meta_.config_digest);
    d.feed(meta_.split);
    for (int dim : schema_.dims()) d.feed(dim);
    d.feed(size());
    for (const auto& s : samples_) {
      for (const auto& b : s.blocks) {
        if (!b) {
          d.feed("absent");
          continue;
        }
        for (Eigen::Index i = 0; i < b->size(); ++i) d.feed((*b)[i]);
      }
      d.feed(s.label);
    }
    return d.hex();
  }

 private:
  ModalitySchema schema_;
  std::vector<MultiModalSample> samples_;
  DatasetMeta meta_;
};

// Gathers to_masked_vector rows for the index range [begin, end) into a
// dense row-major block; shared by trainers and complexity estimators.
inline Eigen::MatrixXd gather_masked(const Dataset& ds,
                                     const ModalitySubset& subset, int begin,
                                     int end) {
  Eigen::MatrixXd x(end - begin, subset.schema().total_dim());
  for (int i = begin; i < end; ++i)
    x.row(i - begin) = to_masked_vector(ds.sample(i), subset).transpose();
  return x;
}

}  // namespace modalbound
