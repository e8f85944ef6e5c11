#include "lorafuse/storage.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <zlib.h>

#include "json.hpp"

namespace lorafuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename UInt>
void put_le(std::vector<std::byte>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

template <typename UInt>
UInt get_le(std::span<const std::byte> in, std::size_t offset) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    v |= static_cast<UInt>(std::to_integer<unsigned>(in[offset + i])) << (8 * i);
  return v;
}

MatrixF read_floats(std::span<const std::byte> blob, std::size_t& offset, std::size_t rows,
                    std::size_t cols) {
  std::vector<float> data(rows * cols);
  for (auto& v : data) {
    v = std::bit_cast<float>(get_le<std::uint32_t>(blob, offset));
    offset += 4;
  }
  return MatrixF(rows, cols, std::move(data));
}

std::string blob_name(const char* prefix, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%03zu.bin", prefix, index);
  return buf;
}

[[noreturn]] void malformed(const std::string& what) {
  throw LoadError(LoadErrorCode::kMalformedManifest, what);
}

std::vector<std::byte> read_checked_blob(const fs::path& dir, const json& ref,
                                         std::size_t expected_bytes) {
  const std::string name = ref.at("blob").get<std::string>();
  const auto crc = ref.at("crc32").get<std::uint32_t>();
  auto bytes = read_file_bytes(dir / name);
  if (bytes.size() < expected_bytes) {
    throw LoadError(LoadErrorCode::kTruncatedBlob,
                    "blob '" + name + "' has " + std::to_string(bytes.size()) +
                        " bytes, expected " + std::to_string(expected_bytes));
  }
  if (bytes.size() > expected_bytes) {
    malformed("blob '" + name + "' has " + std::to_string(bytes.size()) +
              " bytes, expected " + std::to_string(expected_bytes));
  }
  if (crc32(bytes) != crc) {
    throw LoadError(LoadErrorCode::kChecksumMismatch, "blob '" + name + "' failed CRC32 check");
  }
  return bytes;
}

}  // namespace

std::vector<LayerSpec> layer_table(const AdapterSet& adapter) {
  std::vector<LayerSpec> specs;
  for (const auto& l : adapter.layers())
    specs.push_back({l.layer_name(), l.out_dim(), l.in_dim(), l.rank(), l.alpha()});
  return specs;
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::byte> encode_adapter_blob(const AdapterSet& adapter) {
  std::vector<std::byte> out;
  for (const auto& layer : adapter.layers()) {
    for (float v : layer.b().values()) put_le(out, std::bit_cast<std::uint32_t>(v));
    for (float v : layer.a().values()) put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

AdapterSet decode_adapter_blob(std::span<const std::byte> blob, std::string adapter_id,
                               std::span<const LayerSpec> layers, Metadata metadata,
                               const std::string& blob_name) {
  std::size_t expected = 0;
  for (const auto& spec : layers) expected += 4 * spec.float_count();
  if (blob.size() < expected) {
    throw LoadError(LoadErrorCode::kTruncatedBlob,
                    "'" + blob_name + "' has " + std::to_string(blob.size()) +
                        " bytes, layer table needs " + std::to_string(expected));
  }
  if (blob.size() > expected) {
    throw StructuralError("'" + blob_name + "' has " + std::to_string(blob.size()) +
                          " bytes, layer table needs " + std::to_string(expected));
  }
  std::vector<LoraPair> pairs;
  std::size_t offset = 0;
  for (const auto& spec : layers) {
    MatrixF b = read_floats(blob, offset, spec.out_dim, spec.rank);
    MatrixF a = read_floats(blob, offset, spec.rank, spec.in_dim);
    pairs.emplace_back(spec.name, std::move(b), std::move(a), spec.rank, spec.alpha);
  }
  return AdapterSet(std::move(adapter_id), std::move(pairs), std::move(metadata));
}

std::vector<std::byte> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorCode::kMissingFile, path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("write failed for " + path.string());
}

void save_library(const Library& lib, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = kLibraryFormatVersion;
  manifest["embedding_dim"] = lib.embedding_dim();
  json records = json::array();
  for (std::size_t i = 0; i < lib.size(); ++i) {
    const DomainRecord& rec = lib.record(i);
    const AdapterSet& adapter = rec.adapter();

    const auto payload = encode_adapter_blob(adapter);
    const std::string name = blob_name("adapter", i);
    write_file_bytes(dir / name, payload);

    json layers = json::array();
    for (const auto& spec : layer_table(adapter)) {
      layers.push_back({{"name", spec.name},
                        {"out_dim", spec.out_dim},
                        {"in_dim", spec.in_dim},
                        {"rank", spec.rank},
                        {"alpha", spec.alpha}});
    }

    json entry;
    entry["domain_id"] = rec.domain_id();
    entry["sample_count"] = rec.sample_count();
    entry["centroid"] = std::vector<double>(rec.centroid().values().begin(),
                                            rec.centroid().values().end());
    entry["metadata"] = rec.metadata();
    entry["adapter"] = {{"adapter_id", adapter.adapter_id()},
                        {"metadata", adapter.metadata()},
                        {"layers", layers},
                        {"blob", name},
                        {"bytes", payload.size()},
                        {"crc32", crc32(payload)}};
    if (rec.covariance()) {
      std::vector<std::byte> cov;
      for (double v : rec.covariance()->values()) put_le(cov, std::bit_cast<std::uint64_t>(v));
      const std::string cov_name = blob_name("covariance", i);
      write_file_bytes(dir / cov_name, cov);
      entry["covariance"] = {{"blob", cov_name}, {"bytes", cov.size()}, {"crc32", crc32(cov)}};
    } else {
      entry["covariance"] = nullptr;
    }
    records.push_back(std::move(entry));
  }
  manifest["records"] = std::move(records);

  // Manifest goes last and is renamed into place, so a reader never sees a
  // manifest that points at blobs which are not yet written.
  const fs::path tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out << manifest.dump(2) << '\n';
  }
  fs::rename(tmp, dir / kManifestName);
}

Library load_library(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw LoadError(LoadErrorCode::kMissingFile, manifest_path.string());

  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    malformed(manifest_path.string() + ": " + e.what());
  }

  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kLibraryFormatVersion) {
      throw LoadError(LoadErrorCode::kUnsupportedVersion,
                      "library format_version " + std::to_string(version) +
                          ", this build reads version " +
                          std::to_string(kLibraryFormatVersion));
    }
    const auto dim = manifest.at("embedding_dim").get<std::size_t>();

    Library lib;
    for (const auto& entry : manifest.at("records")) {
      const auto& adapter_ref = entry.at("adapter");
      std::vector<LayerSpec> specs;
      std::size_t expected = 0;
      for (const auto& l : adapter_ref.at("layers")) {
        LayerSpec spec{l.at("name").get<std::string>(), l.at("out_dim").get<std::size_t>(),
                       l.at("in_dim").get<std::size_t>(), l.at("rank").get<std::size_t>(),
                       l.at("alpha").get<double>()};
        expected += 4 * spec.float_count();
        specs.push_back(std::move(spec));
      }
      const auto payload = read_checked_blob(dir, adapter_ref, expected);
      auto adapter = std::make_shared<const AdapterSet>(decode_adapter_blob(
          payload, adapter_ref.at("adapter_id").get<std::string>(), specs,
          adapter_ref.value("metadata", Metadata{}), adapter_ref.at("blob").get<std::string>()));

      std::optional<Matrix> covariance;
      if (const auto& cov_ref = entry.at("covariance"); !cov_ref.is_null()) {
        const auto bytes = read_checked_blob(dir, cov_ref, 8 * dim * dim);
        std::vector<double> values(dim * dim);
        for (std::size_t i = 0; i < values.size(); ++i)
          values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, 8 * i));
        covariance = Matrix(dim, dim, std::move(values));
      }

      auto centroid = entry.at("centroid").get<std::vector<double>>();
      if (centroid.size() != dim) {
        malformed("record '" + entry.at("domain_id").get<std::string>() + "' centroid has " +
                  std::to_string(centroid.size()) + " entries, embedding_dim is " +
                  std::to_string(dim));
      }
      lib = extend(lib, DomainRecord(entry.at("domain_id").get<std::string>(),
                                     Embedding(std::move(centroid)),
                                     entry.at("sample_count").get<std::size_t>(),
                                     std::move(adapter), std::move(covariance),
                                     entry.value("metadata", Metadata{})));
    }
    return lib;
  } catch (const json::exception& e) {
    malformed(manifest_path.string() + ": " + e.what());
  }
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw NumericError("cannot format number");
  return std::string(buf, end);
}

std::vector<Embedding> read_embeddings(std::istream& in, const std::string& source) {
  auto fail = [&](std::size_t line_no, const std::string& what) -> LoadError {
    return LoadError(LoadErrorCode::kMalformedEmbeddings,
                     source + ":" + std::to_string(line_no) + ": " + what);
  };
  auto parse_numbers = [](std::string_view line, std::vector<double>& out) -> bool {
    out.clear();
    std::size_t pos = 0;
    while (true) {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r'))
        ++pos;
      if (pos >= line.size()) return true;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + line.size(), v);
      if (ec != std::errc{}) return false;
      const std::size_t consumed = static_cast<std::size_t>(ptr - (line.data() + pos));
      pos += consumed;
      if (pos < line.size() && line[pos] != ' ' && line[pos] != '\t' && line[pos] != '\r')
        return false;
      out.push_back(v);
    }
  };

  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0, count = 0;
  bool have_header = false;
  std::vector<Embedding> rows;
  std::vector<double> numbers;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    if (!have_header) {
      if (!parse_numbers(line, numbers) || numbers.size() != 2 || numbers[0] < 1 ||
          numbers[1] < 1 || numbers[0] != static_cast<double>(static_cast<std::size_t>(numbers[0])) ||
          numbers[1] != static_cast<double>(static_cast<std::size_t>(numbers[1]))) {
        throw fail(line_no, "expected header '<dim> <N>' with positive integers");
      }
      dim = static_cast<std::size_t>(numbers[0]);
      count = static_cast<std::size_t>(numbers[1]);
      have_header = true;
      rows.reserve(count);
      continue;
    }
    if (!parse_numbers(line, numbers)) throw fail(line_no, "unparseable number");
    if (numbers.size() != dim) {
      throw fail(line_no, "expected " + std::to_string(dim) + " values, found " +
                              std::to_string(numbers.size()));
    }
    if (rows.size() == count) throw fail(line_no, "more rows than the header declares");
    for (double v : numbers)
      if (!std::isfinite(v)) throw fail(line_no, "non-finite value");
    rows.emplace_back(numbers);
  }
  if (!have_header) throw fail(line_no, "missing header");
  if (rows.size() != count) {
    throw fail(line_no, "header declares " + std::to_string(count) + " rows, found " +
                            std::to_string(rows.size()));
  }
  return rows;
}

std::vector<Embedding> read_embedding_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorCode::kMissingFile, path.string());
  return read_embeddings(in, path.string());
}

void write_embeddings(std::ostream& out, std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw UsageError("write_embeddings: nothing to write");
  const std::size_t dim = embeddings.front().dim();
  out << dim << ' ' << embeddings.size() << '\n';
  for (const auto& e : embeddings) {
    if (e.dim() != dim) throw StructuralError("write_embeddings: mixed dimensions");
    for (std::size_t i = 0; i < dim; ++i) out << (i ? " " : "") << format_double(e[i]);
    out << '\n';
  }
}

void write_embedding_file(const fs::path& path, std::span<const Embedding> embeddings) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  write_embeddings(out, embeddings);
}

}  // namespace lorafuse
