// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "core/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "core/error.hpp"

namespace appa {
namespace {

static_assert(std::endian::native == std::endian::little, "container payloads are little-endian");

constexpr char kMagic[8] = {'A', 'P', 'P', 'A', 'C', 'O', 'N', 'T'};
constexpr std::size_t kPreamble = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

bool Container::has(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& Container::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  fail(ErrorCode::kHeaderMismatch, "container of kind '{}' has no tensor '{}'", kind, name);
}

std::string encode_container(const Container& container) {
  nlohmann::json header;
  header["format_version"] = kContainerVersion;
  header["kind"] = container.kind;
  header["meta"] = container.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : container.tensors)
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}});
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : container.tensors)
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  return out;
}

Container decode_container(std::string_view bytes, std::string_view expected_kind) {
  if (bytes.size() < kPreamble) {
    if (bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
      fail(ErrorCode::kHeaderParse, "not an appa container (bad magic)");
    fail(ErrorCode::kTruncated, "container truncated: {} bytes, preamble needs {}", bytes.size(), kPreamble);
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    fail(ErrorCode::kHeaderParse, "not an appa container (bad magic)");
  const auto version = take<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kContainerVersion)
    fail(ErrorCode::kVersionMismatch, "container format version {} unsupported (expected {})", version,
         kContainerVersion);
  const auto header_len = take<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (header_len > bytes.size() - kPreamble)
    fail(ErrorCode::kTruncated, "container truncated inside header ({} of {} header bytes)",
         bytes.size() - kPreamble, header_len);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPreamble, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kHeaderParse, "container header is not valid JSON: {}", e.what());
  }

  Container out;
  std::size_t offset = kPreamble + header_len;
  try {
    if (header.at("format_version").get<std::uint32_t>() != version)
      fail(ErrorCode::kVersionMismatch, "header version disagrees with preamble");
    out.kind = header.at("kind").get<std::string>();
    out.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      if (entry.at("dtype").get<std::string>() != "f64")
        fail(ErrorCode::kHeaderMismatch, "tensor '{}' has unsupported dtype", name);
      const std::size_t count = numel(shape);
      const std::size_t nbytes = count * sizeof(double);
      if (bytes.size() - offset < nbytes)
        fail(ErrorCode::kTruncated, "container truncated in tensor '{}' ({} bytes missing)", name,
             nbytes - (bytes.size() - offset));
      std::vector<double> data(count);
      if (count) std::memcpy(data.data(), bytes.data() + offset, nbytes);
      offset += nbytes;
      out.add(name, Tensor(shape, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kHeaderParse, "malformed container header: {}", e.what());
  }
  if (offset != bytes.size())
    fail(ErrorCode::kHeaderMismatch, "container has {} trailing bytes not described by its header",
         bytes.size() - offset);
  if (!expected_kind.empty() && out.kind != expected_kind)
    fail(ErrorCode::kHeaderMismatch, "expected a '{}' container, found '{}'", expected_kind, out.kind);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '{}' for reading", path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '{}' for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write to '{}' failed", path.string());
}

void write_container(const std::filesystem::path& path, const Container& container) {
  write_file(path, encode_container(container));
}

Container read_container(const std::filesystem::path& path, std::string_view expected_kind) {
  return decode_container(read_file(path), expected_kind);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace appa
