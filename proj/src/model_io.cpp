#include "jens/binio.hpp"
#include "jens/models.hpp"

// Model file layout (little-endian):
//   "JENS" | u16 version | u8 arch | u32 input_dim | u32 classes |
//   u32 image_side | u32 hidden_count | u32 hidden[] |
//   u32 tensor_count | per tensor: u8 rank, u32 extents[] |
//   f64 values of every tensor in order

namespace jens {

namespace {
constexpr std::string_view kMagic = "JENS";
}

std::string serialize_model(const ModelParams& model) {
  model.validate();
  std::string out(kMagic);
  binio::put_u16(out, kModelFormatVersion);
  binio::put_u8(out, static_cast<std::uint8_t>(model.spec.arch));
  binio::put_u32(out, static_cast<std::uint32_t>(model.spec.input_dim));
  binio::put_u32(out, static_cast<std::uint32_t>(model.spec.classes));
  binio::put_u32(out, static_cast<std::uint32_t>(model.spec.image_side));
  binio::put_u32(out, static_cast<std::uint32_t>(model.spec.hidden.size()));
  for (auto h : model.spec.hidden) binio::put_u32(out, static_cast<std::uint32_t>(h));
  binio::put_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    binio::put_u8(out, static_cast<std::uint8_t>(p.rank()));
    for (auto e : p.shape()) binio::put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (const auto& p : model.params)
    for (double v : p.data()) binio::put_f64(out, v);
  return out;
}

ModelParams deserialize_model(std::string_view bytes) {
  binio::Reader in(bytes);
  if (in.take(4) != kMagic) throw binio::FormatError("not a model file (bad magic)");
  const auto version = in.u16();
  if (version != kModelFormatVersion) {
    throw binio::FormatError("unsupported model format version " + std::to_string(version));
  }
  const auto tag = in.u8();
  if (tag > static_cast<std::uint8_t>(Arch::kLeNet)) throw binio::FormatError("unknown arch tag");
  ModelParams model;
  model.spec.arch = static_cast<Arch>(tag);
  model.spec.input_dim = in.u32();
  model.spec.classes = in.u32();
  model.spec.image_side = in.u32();
  model.spec.hidden.resize(in.u32());
  for (auto& h : model.spec.hidden) h = in.u32();

  std::vector<Shape> shapes(in.u32());
  for (auto& s : shapes) {
    s.resize(in.u8());
    for (auto& e : s) e = in.u32();
  }
  try {
    for (const auto& s : shapes) {
      std::vector<double> v(shape_numel(s));
      for (auto& x : v) x = in.f64();
      model.params.emplace_back(s, std::move(v));
    }
    if (in.remaining() != 0) throw binio::FormatError("trailing bytes after model payload");
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw binio::FormatError(std::string("invalid model file: ") + e.what());
  } catch (const NonFiniteError& e) {
    throw binio::FormatError(std::string("invalid model file: ") + e.what());
  }
  return model;
}

void save_model(const ModelParams& model, const std::filesystem::path& path) {
  binio::write_file_atomic(path, serialize_model(model));
}

ModelParams load_model(const std::filesystem::path& path) {
  return deserialize_model(binio::read_file(path));
}

}  // namespace jens
