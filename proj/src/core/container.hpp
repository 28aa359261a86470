// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core/tensor.hpp"

namespace appa {

/// On-disk layout shared by datasets, checkpoints, observation sets and
/// ensembles:
///
///   8 bytes   magic "APPACONT"
///   u32 LE    format version
///   u64 LE    header length in bytes
///   header    JSON {"format_version", "kind", "meta", "tensors": [{name, shape, dtype}]}
///   payload   raw little-endian f64 buffers, in header order
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor tensor) { tensors.emplace_back(std::move(name), std::move(tensor)); }
  bool has(std::string_view name) const;
  const Tensor& tensor(std::string_view name) const;
};

std::string encode_container(const Container& container);
/// Parses bytes produced by encode_container. When `expected_kind` is
/// non-empty the header kind must match it.
Container decode_container(std::string_view bytes, std::string_view expected_kind = {});

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path, std::string_view expected_kind = {});

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Stable 64-bit FNV-1a hash rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace appa
