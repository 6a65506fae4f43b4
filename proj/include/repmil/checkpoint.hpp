#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "repmil/binary_io.hpp"
#include "repmil/error.hpp"
#include "repmil/esmonehot.hpp"
#include "repmil/loss.hpp"
#include "repmil/model.hpp"
#include "repmil/optim.hpp"
#include "repmil/train.hpp"

namespace repmil {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// How raw repertoires become model input; stored so evaluation encodes new
// samples exactly as training did.
struct EncodingSpec {
  std::size_t m = 2000;
  std::size_t gene_slots = kGeneSlots;
  std::size_t embedding_dim = kEmbeddingDim;
  bool fallback = false;
  std::string embeddings_path;

  bool operator==(const EncodingSpec&) const = default;
};

// Names of clinical covariates and the training-set z-score statistics.
struct CovariateSpec {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> scale;

  bool operator==(const CovariateSpec&) const = default;
};

struct Checkpoint {
  ModelConfig model;
  ModelParams<float> params;
  VGeneVocab vocab;
  EncodingSpec encoding;
  CovariateSpec covariates;
  LossConfig loss;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> loss_history;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden_dim", c.hidden_dim}, {"n_classes", c.n_classes},
          {"n_locations", c.n_locations}, {"lambda", c.lambda}, {"dropout", c.dropout},
          {"covariate_dim", c.covariate_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.n_locations = j.at("n_locations").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.covariate_dim = j.at("covariate_dim").get<std::size_t>();
  c.validate();
  return c;
}

namespace detail {

inline nlohmann::json checkpoint_blob(const Checkpoint& ck) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : ck.loss_history) history.push_back({{"sample", h.sample}, {"instance", h.instance}, {"total", h.total}});
  return {
      {"model", to_json(ck.model)},
      {"vocab", {{"capacity", ck.vocab.capacity()}, {"genes", ck.vocab.genes()}}},
      {"encoding",
       {{"m", ck.encoding.m},
        {"gene_slots", ck.encoding.gene_slots},
        {"embedding_dim", ck.encoding.embedding_dim},
        {"fallback", ck.encoding.fallback},
        {"embeddings_path", ck.encoding.embeddings_path}}},
      {"covariates", {{"names", ck.covariates.names}, {"mean", ck.covariates.mean}, {"scale", ck.covariates.scale}}},
      {"loss",
       {{"c1", ck.loss.c1},
        {"k", ck.loss.k},
        {"tau", ck.loss.tau},
        {"use_bottom_k_negatives", ck.loss.use_bottom_k_negatives},
        {"positives_only", ck.loss.positives_only},
        {"loc_weight", ck.loss.loc_weight}}},
      {"training", {{"epoch", ck.epoch}, {"seed", ck.seed}, {"loss_history", history}}},
  };
}

}  // namespace detail

// EAMC: "EAMC", u32 version, u32 length + JSON blob, u32 tensor count, then
// per tensor u16 name length, name, u8 rank, rank x u32 dims, f32 data in
// logical row-major order.
inline std::string serialize_checkpoint(const Checkpoint& ck) {
  ck.params.check_shapes(ck.model);
  binio::Writer w;
  w.magic("EAMC");
  w.u32(kCheckpointVersion);
  const std::string blob = detail::checkpoint_blob(ck).dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.str(blob);
  const auto tensors = ck.params.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(static_cast<std::uint32_t>(d));
    if (t.input_major) {
      const std::size_t rows = t.dims[0], cols = t.dims[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) w.f32(t.data[c * rows + r]);
    } else {
      w.f32s(t.data);
    }
  }
  return w.buffer();
}

inline Checkpoint parse_checkpoint(std::string bytes, std::string what = "checkpoint") {
  binio::Reader r(std::move(bytes), what);
  r.expect_magic("EAMC");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t blob_len = r.u32();
  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(r.str(blob_len, "config blob"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": corrupt config blob: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.model = model_config_from_json(blob.at("model"));
    ck.vocab = VGeneVocab(blob.at("vocab").at("capacity").get<std::size_t>());
    for (const auto& g : blob.at("vocab").at("genes")) ck.vocab.add(g.get<std::string>());
    const auto& e = blob.at("encoding");
    ck.encoding = {e.at("m").get<std::size_t>(), e.at("gene_slots").get<std::size_t>(), e.at("embedding_dim").get<std::size_t>(),
                   e.at("fallback").get<bool>(), e.at("embeddings_path").get<std::string>()};
    const auto& cv = blob.at("covariates");
    ck.covariates = {cv.at("names").get<std::vector<std::string>>(), cv.at("mean").get<std::vector<double>>(),
                     cv.at("scale").get<std::vector<double>>()};
    const auto& l = blob.at("loss");
    ck.loss.c1 = l.at("c1").get<double>();
    ck.loss.k = l.at("k").get<std::size_t>();
    ck.loss.tau = l.at("tau").get<double>();
    ck.loss.use_bottom_k_negatives = l.at("use_bottom_k_negatives").get<bool>();
    ck.loss.positives_only = l.at("positives_only").get<bool>();
    ck.loss.loc_weight = l.at("loc_weight").get<double>();
    const auto& t = blob.at("training");
    ck.epoch = t.at("epoch").get<std::size_t>();
    ck.seed = t.at("seed").get<std::uint64_t>();
    for (const auto& h : t.at("loss_history"))
      ck.loss_history.push_back({h.at("sample").get<double>(), h.at("instance").get<double>(), h.at("total").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": corrupt config blob: " + e.what());
  }

  ck.params = ModelParams<float>::zeros(ck.model);
  auto tensors = ck.params.tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw ShapeError(what + ": tensor count " + std::to_string(count) + " does not match the model configuration (" +
                     std::to_string(tensors.size()) + ")");
  for (auto& t : tensors) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len, "tensor name");
    if (name != t.name) throw FormatError(what + ": expected tensor '" + t.name + "', found '" + name + "'");
    const std::uint8_t rank = r.u8();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    if (dims != t.dims) throw ShapeError(what + ": tensor '" + name + "' has dims inconsistent with the model configuration");
    std::vector<float> data(t.data.size());
    r.f32s(data, "tensor data");
    if (t.input_major) {
      const std::size_t rows = t.dims[0], cols = t.dims[1];
      for (std::size_t rr = 0; rr < rows; ++rr)
        for (std::size_t c = 0; c < cols; ++c) t.data[c * rows + rr] = data[rr * cols + c];
    } else {
      std::copy(data.begin(), data.end(), t.data.begin());
    }
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after tensor block");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  binio::Writer w;
  w.str(serialize_checkpoint(ck));
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  return parse_checkpoint(r.str(r.remaining()), path.string());
}

// Load and insist on a particular architecture.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.model == expected)) throw ShapeError(path.string() + ": model configuration does not match the checkpoint");
  return ck;
}

}  // namespace repmil
