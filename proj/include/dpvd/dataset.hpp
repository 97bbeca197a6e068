// Copyright 2026 The dpvd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPVD_DATASET_H_
#define DPVD_DATASET_H_

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpvd/matrix.hpp"

namespace dpvd {

// Parse or IO failure on a dataset file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledDataset {
  Matrix features;          // rows = examples, values in [0,1]
  std::vector<int> labels;  // class ids in [0,9]
  std::string name;
  std::string split;  // "train" or "test"

  std::size_t size() const { return labels.size(); }
};

struct Batch {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

inline Batch gather_batch(const LabeledDataset& ds,
                          std::span<const std::size_t> idx) {
  Batch b;
  b.features = slice_rows(ds.features, idx);
  b.labels.reserve(idx.size());
  for (std::size_t i : idx) b.labels.push_back(ds.labels[i]);
  return b;
}

inline bool normalize_check(const LabeledDataset& ds) {
  for (double v : ds.features.data()) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
  }
  return true;
}

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const char* what) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw DataError(std::string("truncated file while reading ") + what);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

inline std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

inline double parse_numeric(std::string_view field, std::size_t line,
                            const char* what) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("malformed " + std::string(what) + " '" +
                    std::string(field) + "' on line " + std::to_string(line));
  }
  return value;
}

}  // namespace detail

// Big-endian IDX pair: image magic 0x00000803 (count, rows, cols, pixels),
// label magic 0x00000801 (count, bytes). Pixels are scaled by 1/255.
inline LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                                     const std::filesystem::path& labels_path,
                                     std::string split) {
  std::ifstream img = detail::open_binary(images_path);
  if (detail::read_u32_be(img, "image magic") != 0x00000803u) {
    throw DataError("bad image magic in " + images_path.string());
  }
  const std::uint32_t n = detail::read_u32_be(img, "image count");
  const std::uint32_t rows = detail::read_u32_be(img, "image rows");
  const std::uint32_t cols = detail::read_u32_be(img, "image cols");
  const std::size_t dim = std::size_t(rows) * cols;
  std::vector<unsigned char> pixels(std::size_t(n) * dim);
  if (!img.read(reinterpret_cast<char*>(pixels.data()),
                static_cast<std::streamsize>(pixels.size()))) {
    throw DataError("truncated pixel data in " + images_path.string());
  }
  if (img.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes in " + images_path.string());
  }

  std::ifstream lab = detail::open_binary(labels_path);
  if (detail::read_u32_be(lab, "label magic") != 0x00000801u) {
    throw DataError("bad label magic in " + labels_path.string());
  }
  const std::uint32_t n_labels = detail::read_u32_be(lab, "label count");
  if (n_labels != n) {
    throw DataError("image/label count mismatch: " + std::to_string(n) +
                    " vs " + std::to_string(n_labels));
  }
  std::vector<unsigned char> raw_labels(n_labels);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()),
                static_cast<std::streamsize>(raw_labels.size()))) {
    throw DataError("truncated label data in " + labels_path.string());
  }
  if (lab.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes in " + labels_path.string());
  }

  LabeledDataset ds;
  ds.features = Matrix(n, dim);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    ds.features.data()[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  ds.labels.reserve(n_labels);
  for (unsigned char l : raw_labels) {
    if (l > 9) {
      throw DataError("label " + std::to_string(int(l)) + " outside 0-9 in " +
                      labels_path.string());
    }
    ds.labels.push_back(static_cast<int>(l));
  }
  ds.name = "mnist";
  ds.split = std::move(split);
  return ds;
}

struct DigitsSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// 65-column CSV: 64 pixel intensities in [0,16] then an integer label in
// [0,9]. Features are scaled by 1/16. No splitting; split is "all".
inline LabeledDataset load_digits_rows(const std::filesystem::path& path,
                                       bool skip_header = false) {
  constexpr std::size_t kFeatureCols = 64;

  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::vector<double> features;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  if (skip_header && std::getline(in, line)) ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string_view rest(line);
    std::size_t field_count = 0;
    double label_value = 0.0;
    while (true) {
      const std::size_t comma = rest.find(',');
      const std::string_view field = rest.substr(0, comma);
      const double v = detail::parse_numeric(field, line_no, "value");
      ++field_count;
      if (field_count <= kFeatureCols) {
        if (!(v >= 0.0 && v <= 16.0)) {
          throw DataError("feature " + std::to_string(v) +
                          " out of [0,16] on line " + std::to_string(line_no));
        }
        features.push_back(v / 16.0);
      } else {
        label_value = v;
      }
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (field_count != kFeatureCols + 1) {
      throw DataError("expected 65 columns, got " +
                      std::to_string(field_count) + " on line " +
                      std::to_string(line_no));
    }
    const int label = static_cast<int>(label_value);
    if (label_value != static_cast<double>(label) || label < 0 || label > 9) {
      throw DataError("label " + std::to_string(label_value) +
                      " outside 0-9 on line " + std::to_string(line_no));
    }
    labels.push_back(label);
  }

  LabeledDataset ds;
  ds.features = Matrix(labels.size(), kFeatureCols, std::move(features));
  ds.labels = std::move(labels);
  ds.name = "digits";
  ds.split = "all";
  return ds;
}

// The first 1439 rows in file order are the train split, the remainder the
// test split.
inline DigitsSplit load_digits_csv(const std::filesystem::path& path,
                                   bool skip_header = false) {
  constexpr std::size_t kTrainRows = 1439;

  LabeledDataset all = load_digits_rows(path, skip_header);
  const std::size_t n = all.size();
  if (n <= kTrainRows) {
    throw DataError("need more than " + std::to_string(kTrainRows) +
                    " rows, got " + std::to_string(n));
  }

  DigitsSplit split;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  split.train.features = slice_rows(
      all.features, std::span<const std::size_t>(idx.data(), kTrainRows));
  split.train.labels.assign(all.labels.begin(),
                            all.labels.begin() + kTrainRows);
  split.train.name = "digits";
  split.train.split = "train";
  split.test.features = slice_rows(
      all.features, std::span<const std::size_t>(idx.data() + kTrainRows,
                                                 n - kTrainRows));
  split.test.labels.assign(all.labels.begin() + kTrainRows, all.labels.end());
  split.test.name = "digits";
  split.test.split = "test";
  return split;
}

// Versioned binary cache; reload is bit-exact (features are dumped as raw
// little-endian doubles).
inline void save_dataset_cache(const LabeledDataset& ds,
                               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const char magic[8] = {'D', 'P', 'V', 'D', 'D', 'S', '0', '1'};
  out.write(magic, 8);
  const auto write_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  write_u32(static_cast<std::uint32_t>(ds.features.rows()));
  write_u32(static_cast<std::uint32_t>(ds.features.cols()));
  write_u32(static_cast<std::uint32_t>(ds.name.size()));
  out.write(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
  write_u32(static_cast<std::uint32_t>(ds.split.size()));
  out.write(ds.split.data(), static_cast<std::streamsize>(ds.split.size()));
  out.write(reinterpret_cast<const char*>(ds.features.data().data()),
            static_cast<std::streamsize>(ds.features.size() * sizeof(double)));
  std::vector<std::int32_t> labels32(ds.labels.begin(), ds.labels.end());
  out.write(reinterpret_cast<const char*>(labels32.data()),
            static_cast<std::streamsize>(labels32.size() * sizeof(std::int32_t)));
  if (!out) throw DataError("write failed for " + path.string());
}

inline LabeledDataset load_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in = detail::open_binary(path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "DPVDDS01", 8) != 0) {
    throw DataError("bad cache magic in " + path.string());
  }
  const auto read_u32 = [&in, &path]() {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) {
      throw DataError("truncated cache " + path.string());
    }
    return v;
  };
  const std::uint32_t rows = read_u32();
  const std::uint32_t cols = read_u32();
  LabeledDataset ds;
  const std::uint32_t name_len = read_u32();
  ds.name.resize(name_len);
  if (!in.read(ds.name.data(), name_len)) {
    throw DataError("truncated cache " + path.string());
  }
  const std::uint32_t split_len = read_u32();
  ds.split.resize(split_len);
  if (!in.read(ds.split.data(), split_len)) {
    throw DataError("truncated cache " + path.string());
  }
  ds.features = Matrix(rows, cols);
  if (!in.read(reinterpret_cast<char*>(ds.features.data().data()),
               static_cast<std::streamsize>(ds.features.size() *
                                            sizeof(double)))) {
    throw DataError("truncated cache " + path.string());
  }
  std::vector<std::int32_t> labels32(rows);
  if (!in.read(reinterpret_cast<char*>(labels32.data()),
               static_cast<std::streamsize>(labels32.size() *
                                            sizeof(std::int32_t)))) {
    throw DataError("truncated cache " + path.string());
  }
  ds.labels.assign(labels32.begin(), labels32.end());
  return ds;
}

}  // namespace dpvd

#endif  // DPVD_DATASET_H_
