// SPDX-License-Identifier: Apache-2.0
#include "fedchan/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace fedchan {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kPlanes = 3;
constexpr std::size_t kHeaderBytes = 4 + 7 * 4 + 2 * 8;

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

struct Header {
  std::uint32_t version = kVersion;
  std::uint32_t scenario = 0;
  std::uint32_t user = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t planes = kPlanes;
  std::uint32_t label_len = 0;
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(const char*& p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  p += sizeof v;
  return v;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const LocalDataset& ds) {
  Header h;
  h.scenario = static_cast<std::uint32_t>(ds.scenario);
  h.user = static_cast<std::uint32_t>(ds.user);
  h.count = ds.samples.size();
  h.seed = ds.seed;
  if (!ds.samples.empty()) {
    const TrainingSample& s0 = ds.samples.front();
    h.rows = static_cast<std::uint32_t>(s0.rows);
    h.cols = static_cast<std::uint32_t>(s0.cols);
    h.label_len = static_cast<std::uint32_t>(s0.label.size());
  }
  const std::size_t in_len = static_cast<std::size_t>(h.planes) * h.rows * h.cols;
  for (const TrainingSample& s : ds.samples) {
    if (s.input.size() != in_len || s.label.size() != h.label_len) {
      throw DatasetFormatError("write_dataset: samples have inconsistent dimensions");
    }
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open dataset file for writing: " + path.string());
  os.write(kMagic, 4);
  put(os, h.version);
  put(os, h.scenario);
  put(os, h.user);
  put(os, h.rows);
  put(os, h.cols);
  put(os, h.planes);
  put(os, h.label_len);
  put(os, h.count);
  put(os, h.seed);
  std::vector<float> buf;
  for (const TrainingSample& s : ds.samples) {
    buf.assign(s.input.begin(), s.input.end());
    buf.insert(buf.end(), s.label.begin(), s.label.end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing dataset file: " + path.string());
}

LocalDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset file: " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw TruncatedFileError("dataset file truncated in header: " + path.string());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DatasetFormatError("not a dataset file (bad magic): " + path.string());
  }
  if (bytes.size() < kHeaderBytes) {
    throw TruncatedFileError("dataset file truncated in header: " + path.string());
  }
  const char* p = bytes.data() + 4;
  Header h;
  h.version = take<std::uint32_t>(p);
  if (h.version != kVersion) {
    throw DatasetFormatError("unsupported dataset version " + std::to_string(h.version) + ": " +
                             path.string());
  }
  h.scenario = take<std::uint32_t>(p);
  h.user = take<std::uint32_t>(p);
  h.rows = take<std::uint32_t>(p);
  h.cols = take<std::uint32_t>(p);
  h.planes = take<std::uint32_t>(p);
  h.label_len = take<std::uint32_t>(p);
  h.count = take<std::uint64_t>(p);
  h.seed = take<std::uint64_t>(p);

  if (h.scenario > 1) throw DatasetFormatError("dataset header: unknown scenario code");
  if (h.planes != kPlanes) throw DatasetFormatError("dataset header: expected 3 input planes");
  if (h.count > 0 && (h.rows == 0 || h.cols == 0 || h.label_len == 0)) {
    throw DatasetFormatError("dataset header: zero dimension with a non-empty payload");
  }
  const std::size_t in_len = static_cast<std::size_t>(h.planes) * h.rows * h.cols;
  const std::size_t record = (in_len + h.label_len) * sizeof(float);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (h.count > 0 && h.count > payload / record) {
    throw TruncatedFileError("dataset payload truncated: header declares " +
                             std::to_string(h.count) + " records of " + std::to_string(record) +
                             " bytes, found " + std::to_string(payload) +
                             " payload bytes: " + path.string());
  }
  const std::size_t expected = h.count * record;
  if (payload > expected) {
    throw DatasetFormatError("dataset header dims do not match payload: expected " +
                             std::to_string(expected) + " bytes, found " +
                             std::to_string(payload) + ": " + path.string());
  }

  LocalDataset ds;
  ds.scenario = static_cast<Scenario>(h.scenario);
  ds.user = static_cast<int>(h.user);
  ds.seed = h.seed;
  ds.samples.resize(h.count);
  std::vector<float> buf(in_len + h.label_len);
  for (TrainingSample& s : ds.samples) {
    std::memcpy(buf.data(), p, record);
    p += record;
    s.scenario = ds.scenario;
    s.user = ds.user;
    s.rows = static_cast<int>(h.rows);
    s.cols = static_cast<int>(h.cols);
    s.input.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(in_len));
    s.label.assign(buf.begin() + static_cast<std::ptrdiff_t>(in_len), buf.end());
  }
  split_train_validation(ds, ds.seed);
  return ds;
}

}  // namespace fedchan
