#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attriqe {

using Rng = std::mt19937_64;

// FNV-1a, 64-bit. Stable across platforms; used for checksums and hashes
// that end up in files.
std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

// Derives an independent stream seed from a base seed and stream indices.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Library-independent draws, so streams match across standard libraries.
double uniform01(Rng& rng);                        // [0, 1)
std::size_t uniform_index(Rng& rng, std::size_t n);  // [0, n), n > 0
double standard_normal(Rng& rng);

std::string read_file(const std::filesystem::path& path);
// Writes atomically enough for our purposes: the file is replaced as a whole.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Runs fn(0..n-1) on up to `workers` threads. Work items must write to
// disjoint outputs; results then do not depend on the worker count. The
// exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

std::vector<std::string> split_whitespace(std::string_view text);
std::string join(std::span<const std::string> words, std::string_view sep = " ");

}  // namespace attriqe
