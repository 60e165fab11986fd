#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fgfp/nn/model.hpp"

namespace fgfp::store {

inline constexpr std::uint16_t kFormatVersion = 1;

// Byte layout (little-endian throughout):
//   "FGFP1"  u16 version
//   u64 header_len  header
//   per layer: u8 tag  u64 payload_len  payload
// The header carries name, seed, epoch, metrics, input shape, class count and
// a per-layer table of (id, kind, dims, logical, stored) so summaries can be
// read without decoding payloads.
std::string encode(const nn::Model& model);

// Throws FormatError on malformed bytes and IntegrityError when a payload
// breaks a model invariant or disagrees with the header counts.
nn::Model decode(std::string_view bytes);

struct SaveOptions {
  // Testing aid: stop after this many bytes reached the temporary file and
  // throw IoError, as a crash mid-write would.
  std::optional<std::size_t> abort_after_bytes;
};

// Writes to a temporary file next to `path`, flushes and renames over it.
void save(const nn::Model& model, const std::filesystem::path& path, const SaveOptions& opts = {});
nn::Model load(const std::filesystem::path& path);

struct LayerSummary {
  std::string id;
  nn::LayerKind kind;
  std::optional<fgf::FgfKind> fgf_kind;
  std::vector<std::int64_t> dims;
  std::int64_t logical = 0;
  std::int64_t stored = 0;
};

struct Summary {
  std::uint16_t version = 0;
  nn::ModelMeta meta;
  nd::Shape input_shape;
  int num_classes = 0;
  std::vector<LayerSummary> layers;

  std::int64_t logical() const;
  std::int64_t stored() const;
};

// Reads only the header section.
Summary read_summary(const std::filesystem::path& path);
Summary summarize(const nn::Model& model);

// Synthesized kernel of one FGF filter, one row per channel slice, then its
// three factor vectors; 9 significant digits (exact for f32):
//   part,index,rows,cols,values...
void export_kernel_csv(std::ostream& os, const nn::FgfConv2d& layer, int filter);

struct KernelCsv {
  nd::Tensor kernel;  // [ch, kh, kw]
  std::vector<float> channel, rows, cols;
};
KernelCsv import_kernel_csv(std::istream& is);

}  // namespace fgfp::store
