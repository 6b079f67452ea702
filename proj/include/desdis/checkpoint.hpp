#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "desdis/net.hpp"
#include "desdis/serial.hpp"

namespace desdis {

/// Checkpoint file ("DDCK"):
///   magic "DDCK" | u32 version | u32 name_len + name | u32 first_layer_width
///   | u32 record count | records.
/// Record: u32 name_len + name | u32 rank | u32 dims[rank] | f32 values.
/// All integers and floats little-endian; values are 32-bit regardless of the
/// in-memory scalar type, so float nets round-trip bit-exactly.
struct CheckpointData {
  struct Record {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
  };
  std::string spec_name;
  std::uint32_t first_layer_width = 0;
  std::vector<Record> records;

  const Record* find(const std::string& name) const {
    for (const auto& r : records) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint_file(const CheckpointData& ck, const std::filesystem::path& path) {
  serial::Writer w;
  w.bytes("DDCK", 4);
  w.u32(kCheckpointVersion);
  w.str(ck.spec_name);
  w.u32(ck.first_layer_width);
  w.u32(static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    w.str(r.name);
    w.u32(static_cast<std::uint32_t>(r.dims.size()));
    for (std::uint32_t d : r.dims) w.u32(d);
    for (float v : r.values) w.f32(v);
  }
  w.write_file(path);
}

inline CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
  serial::Reader r = serial::Reader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "DDCK") {
    throw BadMagicError("'" + path.string() + "' is not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) +
                               " unsupported (expected " +
                               std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointData ck;
  ck.spec_name = r.str();
  ck.first_layer_width = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointData::Record rec;
    rec.name = r.str();
    const std::uint32_t rank = r.u32();
    std::uint64_t numel = 1;
    rec.dims.resize(rank);
    for (auto& d : rec.dims) {
      d = r.u32();
      numel *= d;
    }
    rec.values.resize(numel);
    for (auto& v : rec.values) v = r.f32();
    ck.records.push_back(std::move(rec));
  }
  r.expect_exhausted("checkpoint");
  return ck;
}

namespace detail {

template <typename Scalar>
CheckpointData::Record tensor_record(const std::string& name, const Tensor<Scalar>& t) {
  CheckpointData::Record rec;
  rec.name = name;
  for (Index d : t.shape()) rec.dims.push_back(static_cast<std::uint32_t>(d));
  rec.values.resize(static_cast<std::size_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) {
    rec.values[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
  }
  return rec;
}

template <typename Scalar>
Tensor<Scalar> record_tensor(const CheckpointData::Record& rec) {
  std::vector<Index> shape;
  for (std::uint32_t d : rec.dims) shape.push_back(static_cast<Index>(d));
  Tensor<Scalar> t(shape);
  if (static_cast<std::size_t>(t.numel()) != rec.values.size()) {
    throw FormatError("record '" + rec.name + "' value count mismatch");
  }
  for (Index i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<Scalar>(rec.values[static_cast<std::size_t>(i)]);
  }
  return t;
}

template <typename Scalar>
CheckpointData::Record vector_record(const std::string& name, const VectorX<Scalar>& v) {
  CheckpointData::Record rec;
  rec.name = name;
  rec.dims.push_back(static_cast<std::uint32_t>(v.size()));
  rec.values.resize(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) {
    rec.values[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  }
  return rec;
}

}  // namespace detail

template <typename Scalar>
CheckpointData to_checkpoint(const DescriptorNet<Scalar>& net) {
  CheckpointData ck;
  ck.spec_name = net.spec().name;
  ck.first_layer_width = static_cast<std::uint32_t>(net.spec().first_layer_width);
  for (const auto& pr : net.parameters()) {
    ck.records.push_back(detail::tensor_record(pr.name, pr.value));
  }
  for (std::size_t i = 0; i < net.bn_stats().size(); ++i) {
    const auto& st = net.bn_stats()[i];
    const std::string prefix = "bn_stats" + std::to_string(i + 1);
    ck.records.push_back(detail::vector_record(prefix + ".running_mean", st.mean));
    ck.records.push_back(detail::vector_record(prefix + ".running_var", st.var));
  }
  return ck;
}

template <typename Scalar>
DescriptorNet<Scalar> net_from_checkpoint(const CheckpointData& ck,
                                          Scalar bn_momentum = Scalar(0.1)) {
  DescriptorNet<Scalar> net(build_spec(ck.spec_name), /*init_seed=*/0, bn_momentum);
  for (auto& pr : net.parameters()) {
    const auto* rec = ck.find(pr.name);
    if (rec == nullptr) throw FormatError("checkpoint is missing parameter '" + pr.name + "'");
    Tensor<Scalar> v = detail::record_tensor<Scalar>(*rec);
    if (!v.same_shape(pr.value)) {
      throw FormatError("checkpoint parameter '" + pr.name + "' has shape " +
                        shape_to_string(v.shape()) + ", net expects " +
                        shape_to_string(pr.value.shape()));
    }
    pr.value = std::move(v);
  }
  for (std::size_t i = 0; i < net.bn_stats().size(); ++i) {
    const std::string prefix = "bn_stats" + std::to_string(i + 1);
    auto& st = net.bn_stats()[i];
    for (bool is_mean : {true, false}) {
      const std::string name = prefix + (is_mean ? ".running_mean" : ".running_var");
      const auto* rec = ck.find(name);
      if (rec == nullptr) throw FormatError("checkpoint is missing '" + name + "'");
      Tensor<Scalar> v = detail::record_tensor<Scalar>(*rec);
      VectorX<Scalar>& dst = is_mean ? st.mean : st.var;
      if (v.numel() != dst.size()) throw FormatError("running-stat size mismatch in checkpoint");
      for (Index j = 0; j < v.numel(); ++j) dst[j] = v[j];
    }
  }
  return net;
}

template <typename Scalar>
void save_checkpoint(const DescriptorNet<Scalar>& net, const std::filesystem::path& path) {
  write_checkpoint_file(to_checkpoint(net), path);
}

template <typename Scalar>
DescriptorNet<Scalar> load_checkpoint(const std::filesystem::path& path,
                                      Scalar bn_momentum = Scalar(0.1)) {
  return net_from_checkpoint<Scalar>(read_checkpoint_file(path), bn_momentum);
}

}  // namespace desdis
