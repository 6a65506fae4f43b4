#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "repmil/binary_io.hpp"
#include "repmil/error.hpp"
#include "repmil/repertoire.hpp"
#include "repmil/tensor.hpp"

namespace repmil {

inline constexpr std::size_t kGeneSlots = 1000;
inline constexpr std::size_t kEmbeddingDim = 640;

// Fixed-capacity, insertion-ordered V-gene index.
class VGeneVocab {
 public:
  explicit VGeneVocab(std::size_t capacity = kGeneSlots) : capacity_(capacity) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return genes_.size(); }
  const std::vector<std::string>& genes() const noexcept { return genes_; }

  std::size_t add(const std::string& gene) {
    if (auto it = index_.find(gene); it != index_.end()) return it->second;
    if (genes_.size() >= capacity_)
      throw Error("V-gene vocabulary overflow: capacity " + std::to_string(capacity_) + " exceeded by '" + gene + "'");
    index_.emplace(gene, genes_.size());
    genes_.push_back(gene);
    return genes_.size() - 1;
  }

  std::optional<std::size_t> find(const std::string& gene) const {
    auto it = index_.find(gene);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const VGeneVocab& o) const { return capacity_ == o.capacity_ && genes_ == o.genes_; }

 private:
  std::size_t capacity_;
  std::vector<std::string> genes_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Genes enter in order of sorted sample_id, then sorted gene name within a
// sample, so the index assignment does not depend on input ordering.
inline VGeneVocab build_vocab(std::span<const Repertoire> reps, std::size_t capacity = kGeneSlots) {
  std::vector<const Repertoire*> order;
  for (const auto& r : reps) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->sample_id < b->sample_id; });
  VGeneVocab vocab(capacity);
  for (const auto* r : order) {
    std::set<std::string> genes;
    for (const auto& rec : r->records) genes.insert(rec.v_gene);
    for (const auto& g : genes) vocab.add(g);
  }
  return vocab;
}

enum class Strictness { strict, lenient };

inline std::vector<float> onehot_encode(const std::string& gene, const VGeneVocab& vocab,
                                        Strictness mode = Strictness::strict) {
  std::vector<float> out(vocab.capacity(), 0.0f);
  if (auto idx = vocab.find(gene)) {
    out[*idx] = 1.0f;
  } else if (mode == Strictness::strict) {
    throw Error("unknown V gene '" + gene + "'");
  }
  return out;
}

struct EmbeddingTable {
  std::size_t dim = kEmbeddingDim;
  std::map<std::string, std::vector<float>> vectors;

  const std::vector<float>* find(const std::string& cdr3) const {
    auto it = vectors.find(cdr3);
    return it == vectors.end() ? nullptr : &it->second;
  }

  bool operator==(const EmbeddingTable&) const = default;
};

// EAM1: "EAM1", u32 dim, u64 count, then per record u16 len, ASCII bytes,
// dim x f32. Little-endian throughout.
inline std::string serialize_embedding_table(const EmbeddingTable& t) {
  binio::Writer w;
  w.magic("EAM1");
  w.u32(static_cast<std::uint32_t>(t.dim));
  w.u64(t.vectors.size());
  for (const auto& [seq, vec] : t.vectors) {
    if (vec.size() != t.dim) throw ShapeError("embedding for '" + seq + "' has wrong length");
    if (seq.size() > UINT16_MAX) throw Error("sequence too long for EAM1");
    w.u16(static_cast<std::uint16_t>(seq.size()));
    w.str(seq);
    w.f32s(vec);
  }
  return w.buffer();
}

inline EmbeddingTable parse_embedding_table(std::string bytes, std::optional<std::size_t> expected_dim = std::nullopt,
                                            std::string what = "embedding table") {
  binio::Reader r(std::move(bytes), std::move(what));
  r.expect_magic("EAM1");
  EmbeddingTable t;
  t.dim = r.u32();
  if (t.dim == 0) throw FormatError("embedding dim must be positive");
  if (expected_dim && *expected_dim != t.dim)
    throw ShapeError("embedding dim " + std::to_string(t.dim) + " != configured " + std::to_string(*expected_dim));
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string seq = r.str(len, "sequence");
    std::vector<float> vec(t.dim);
    r.f32s(vec, "embedding vector");
    for (float v : vec)
      if (!std::isfinite(v)) throw FormatError("non-finite embedding entry for '" + seq + "'");
    t.vectors.insert_or_assign(std::move(seq), std::move(vec));
  }
  return t;
}

inline void write_embedding_table(const std::filesystem::path& path, const EmbeddingTable& t) {
  binio::Writer w;
  w.str(serialize_embedding_table(t));
  w.save(path);
}

inline EmbeddingTable load_embedding_table(const std::filesystem::path& path,
                                           std::optional<std::size_t> expected_dim = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_embedding_table(std::move(data), expected_dim, path.string());
}

inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic stand-in for a protein language model: hashed bag of
// overlapping 3-mers, L2-normalised.
inline std::vector<double> fallback_embed(std::string_view cdr3, std::size_t dim = kEmbeddingDim) {
  if (cdr3.size() < 3) throw Error("fallback embedding needs a sequence of length >= 3, got '" + std::string(cdr3) + "'");
  if (dim == 0) throw ConfigError("embedding dim must be positive");
  std::vector<double> v(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= cdr3.size(); ++i) v[fnv1a64(cdr3.substr(i, 3)) % dim] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

struct InstanceRef {
  std::string cdr3_aa;
  std::string v_gene;
  double frequency = 0.0;

  bool operator==(const InstanceRef&) const = default;
};

// n x L fused features for one bag, with a back-reference per row.
struct InstanceMatrix {
  std::string sample_id;
  SparseRows<float> features;
  std::vector<InstanceRef> refs;

  std::size_t n() const noexcept { return features.rows(); }
  std::size_t width() const noexcept { return features.cols(); }

  bool operator==(const InstanceMatrix& o) const {
    return sample_id == o.sample_id && refs == o.refs && features.to_dense() == o.features.to_dense();
  }
};

// Where per-sequence embeddings come from.
struct EmbeddingSource {
  const EmbeddingTable* table = nullptr;
  // Used when no table is given, or for sequences the table lacks when
  // fallback_for_missing is set.
  bool fallback_for_missing = false;
  std::size_t dim = kEmbeddingDim;

  static EmbeddingSource fallback(std::size_t dim = kEmbeddingDim) { return {nullptr, true, dim}; }
  static EmbeddingSource from(const EmbeddingTable& t, bool fill_missing = false) { return {&t, fill_missing, t.dim}; }
};

// Row j = [one-hot(v_gene_j) over vocab capacity | embedding(cdr3_j)].
inline InstanceMatrix fuse_encode(const Repertoire& rep, const VGeneVocab& vocab, const EmbeddingSource& source,
                                  Strictness genes = Strictness::strict) {
  if (rep.empty()) throw Error("cannot encode empty repertoire '" + rep.sample_id + "'");
  const std::size_t gene_slots = vocab.capacity();
  InstanceMatrix out;
  out.sample_id = rep.sample_id;
  out.features = SparseRows<float>(gene_slots + source.dim);
  std::vector<std::uint32_t> idx;
  std::vector<float> val;
  for (const auto& rec : rep.records) {
    idx.clear();
    val.clear();
    if (auto g = vocab.find(rec.v_gene)) {
      idx.push_back(static_cast<std::uint32_t>(*g));
      val.push_back(1.0f);
    } else if (genes == Strictness::strict) {
      throw Error("unknown V gene '" + rec.v_gene + "' in sample '" + rep.sample_id + "'");
    }
    const std::vector<float>* table_vec = source.table ? source.table->find(rec.cdr3_aa) : nullptr;
    if (table_vec) {
      for (std::size_t j = 0; j < source.dim; ++j) {
        if ((*table_vec)[j] != 0.0f) {
          idx.push_back(static_cast<std::uint32_t>(gene_slots + j));
          val.push_back((*table_vec)[j]);
        }
      }
    } else if (source.fallback_for_missing || !source.table) {
      if (!source.fallback_for_missing) throw Error("no embedding source configured");
      const auto e = fallback_embed(rec.cdr3_aa, source.dim);
      for (std::size_t j = 0; j < source.dim; ++j) {
        if (e[j] != 0.0) {
          idx.push_back(static_cast<std::uint32_t>(gene_slots + j));
          val.push_back(static_cast<float>(e[j]));
        }
      }
    } else {
      throw Error("missing embedding for cdr3 '" + rec.cdr3_aa + "'");
    }
    out.features.push_sparse(idx, val);
    out.refs.push_back({rec.cdr3_aa, rec.v_gene, rec.frequency});
  }
  return out;
}

// EAMX: "EAMX", u32 n, u32 L, n*L f32 (row-major), u32 byte length of a
// UTF-8 TSV block with one (cdr3, v_gene, frequency) line per row.
inline std::string serialize_instance_matrix(const InstanceMatrix& m) {
  binio::Writer w;
  w.magic("EAMX");
  w.u32(static_cast<std::uint32_t>(m.n()));
  w.u32(static_cast<std::uint32_t>(m.width()));
  const auto dense = m.features.to_dense();
  w.f32s(dense.data());
  std::string block;
  char num[64];
  for (const auto& r : m.refs) {
    auto res = std::to_chars(num, num + sizeof num, r.frequency);
    block += r.cdr3_aa + '\t' + r.v_gene + '\t' + std::string(num, res.ptr) + '\n';
  }
  w.u32(static_cast<std::uint32_t>(block.size()));
  w.str(block);
  return w.buffer();
}

inline InstanceMatrix parse_instance_matrix(std::string bytes, std::string sample_id = {}, std::string what = "EAMX") {
  binio::Reader r(std::move(bytes), std::move(what));
  r.expect_magic("EAMX");
  const std::uint32_t n = r.u32();
  const std::uint32_t width = r.u32();
  if (n == 0 || width == 0) throw FormatError("EAMX header declares an empty matrix");
  if (static_cast<std::uint64_t>(n) * width * sizeof(float) > r.remaining())
    throw FormatError("EAMX truncated: header declares " + std::to_string(n) + "x" + std::to_string(width));
  Matrix<float> dense(n, width);
  r.f32s(dense.data(), "matrix data");
  const std::uint32_t block_len = r.u32();
  const std::string block = r.str(block_len, "back-reference block");
  if (r.remaining() != 0) throw FormatError("EAMX has trailing bytes");

  InstanceMatrix m;
  m.sample_id = std::move(sample_id);
  m.features = SparseRows<float>::from_dense(dense);
  std::size_t pos = 0;
  while (pos < block.size()) {
    std::size_t nl = block.find('\n', pos);
    if (nl == std::string::npos) nl = block.size();
    const auto cols = detail::split(std::string_view(block).substr(pos, nl - pos), '\t');
    pos = nl + 1;
    if (cols.size() != 3) throw FormatError("EAMX back-reference row malformed");
    InstanceRef ref{std::string(cols[0]), std::string(cols[1]), 0.0};
    auto res = std::from_chars(cols[2].data(), cols[2].data() + cols[2].size(), ref.frequency);
    if (res.ec != std::errc()) throw FormatError("EAMX back-reference frequency malformed");
    m.refs.push_back(std::move(ref));
  }
  if (m.refs.size() != n)
    throw FormatError("EAMX back-reference rows (" + std::to_string(m.refs.size()) + ") != n (" + std::to_string(n) + ")");
  return m;
}

inline void encode_cache_write(const InstanceMatrix& m, const std::filesystem::path& path) {
  binio::Writer w;
  w.str(serialize_instance_matrix(m));
  w.save(path);
}

inline InstanceMatrix encode_cache_read(const std::filesystem::path& path, std::string sample_id = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (sample_id.empty()) sample_id = path.stem().string();
  return parse_instance_matrix(std::move(data), std::move(sample_id), path.string());
}

}  // namespace repmil
