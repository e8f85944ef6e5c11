#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lorafuse/library.hpp"

namespace lorafuse {

// Library directory layout:
//   manifest.json        format_version, embedding_dim, per-record metadata,
//                        inline 64-bit centroids, layer tables, blob names, CRC32s
//   adapter-NNN.bin      little-endian float32, row-major; layers in manifest
//                        order, B before A within a layer
//   covariance-NNN.bin   little-endian float64, row-major (eligible records only)
inline constexpr const char* kManifestName = "manifest.json";

struct LayerSpec {
  std::string name;
  std::size_t out_dim = 0;  // d
  std::size_t in_dim = 0;   // k
  std::size_t rank = 0;
  double alpha = 0.0;

  std::size_t float_count() const noexcept { return out_dim * rank + rank * in_dim; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

std::vector<LayerSpec> layer_table(const AdapterSet& adapter);

std::uint32_t crc32(std::span<const std::byte> bytes);

std::vector<std::byte> encode_adapter_blob(const AdapterSet& adapter);
AdapterSet decode_adapter_blob(std::span<const std::byte> blob, std::string adapter_id,
                               std::span<const LayerSpec> layers, Metadata metadata = {},
                               const std::string& blob_name = "adapter blob");

void save_library(const Library& lib, const std::filesystem::path& dir);
Library load_library(const std::filesystem::path& dir);

// Raw bytes of a file; LoadError(kMissingFile) when it cannot be opened.
std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

// Embedding ingestion format: header line "<dim> <N>", then N lines of <dim>
// whitespace-separated decimals. Blank lines and lines starting with '#' are
// ignored anywhere in the file.
std::vector<Embedding> read_embeddings(std::istream& in, const std::string& source = "<stream>");
std::vector<Embedding> read_embedding_file(const std::filesystem::path& path);
void write_embeddings(std::ostream& out, std::span<const Embedding> embeddings);
void write_embedding_file(const std::filesystem::path& path,
                          std::span<const Embedding> embeddings);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

}  // namespace lorafuse
