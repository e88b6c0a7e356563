#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "speechflow/tensor.hpp"

namespace speechflow {

// Binary tensor record: "FSTN", u32 version, u32 rank, u32 extents,
// then little-endian f64 data in row-major order.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
// Encoded size in bytes of a tensor record.
std::size_t tensor_record_bytes(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Reads every record in a file of concatenated tensors.
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

// Writes to path.tmp then renames over path; creates missing parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace speechflow
