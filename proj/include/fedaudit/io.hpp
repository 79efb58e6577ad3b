#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedaudit/errors.hpp"
#include "fedaudit/federation.hpp"
#include "fedaudit/matrix.hpp"

// File plumbing: shortest-round-trip decimal floats, atomic writes, CSV rows,
// and the little-endian binary trace layout. All text output uses LF endings.

namespace fedaudit {

// Shortest decimal string that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[40];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (back == v) return shorter;
    }
  }
  return buf;
}

// Write via a temp file in the same directory, then rename into place.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ValidationError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  return contents;
}

// Minimal RFC-4180 writer: quote only when the field needs it.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) {
    row(std::move(header));
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += escape(fields[i]);
    }
    out_ += '\n';
  }

  const std::string& str() const { return out_; }

 private:
  static std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string quoted = "\"";
    for (char c : field) {
      if (c == '"') quoted += '"';
      quoted += c;
    }
    quoted += '"';
    return quoted;
  }

  std::string out_;
};

namespace detail {

inline constexpr char kTraceMagic[8] = {'F', 'E', 'D', 'T', 'R', 'A', 'C', 'E'};
inline constexpr std::uint32_t kTraceVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b)
    out += static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * b)) & 0xff);
}

inline void put_f64(std::string& out, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  put_le(out, bits);
}

inline void put_string(std::string& out, const std::string& s) {
  put_le(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

inline void put_matrix(std::string& out, const Matrix& m) {
  put_le(out, static_cast<std::uint64_t>(m.rows()));
  put_le(out, static_cast<std::uint64_t>(m.cols()));
  for (double v : m.flat()) put_f64(out, v);
}

class Reader {
 public:
  Reader(const std::string& data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t value = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      value |= static_cast<std::uint64_t>(
                   static_cast<unsigned char>(data_[pos_ + b]))
               << (8 * b);
    pos_ += sizeof(T);
    return static_cast<T>(value);
  }

  double get_f64() {
    std::uint64_t bits = get_le<std::uint64_t>();
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
  }

  std::string get_string() {
    const auto len = get_le<std::uint32_t>();
    need(len);
    std::string s = data_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  Matrix get_matrix() {
    const auto rows = static_cast<std::size_t>(get_le<std::uint64_t>());
    const auto cols = static_cast<std::size_t>(get_le<std::uint64_t>());
    if (rows > (1u << 24) || cols > (1u << 24))
      throw ValidationError("implausible matrix size in " + origin_);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = get_f64();
    return m;
  }

  bool at_end() const { return pos_ == data_.size(); }

  void need(std::size_t bytes) {
    if (pos_ + bytes > data_.size())
      throw ValidationError("truncated trace file: " + origin_);
  }

 private:
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline void put_gradients(std::string& out, const ModuleGradients& grads) {
  put_le(out, static_cast<std::uint32_t>(grads.size()));
  for (const auto& [name, g] : grads) {
    put_string(out, name);
    put_matrix(out, g);
  }
}

inline ModuleGradients get_gradients(Reader& reader) {
  const auto count = reader.get_le<std::uint32_t>();
  ModuleGradients grads;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = reader.get_string();
    grads.emplace(std::move(name), reader.get_matrix());
  }
  return grads;
}

}  // namespace detail

inline std::string encode_round_record(const RoundRecord& record) {
  std::string out;
  out.append(detail::kTraceMagic, sizeof(detail::kTraceMagic));
  detail::put_le(out, detail::kTraceVersion);
  detail::put_le(out, static_cast<std::uint64_t>(record.round));
  detail::put_f64(out, record.mean_client_loss);
  detail::put_gradients(out, record.params);
  detail::put_le(out, static_cast<std::uint32_t>(record.updates.size()));
  for (std::size_t c = 0; c < record.updates.size(); ++c) {
    detail::put_le(out, static_cast<std::uint64_t>(record.updates[c].client));
    const auto& ids = record.batch_ids[c];
    detail::put_le(out, static_cast<std::uint64_t>(ids.size()));
    for (std::size_t id : ids) detail::put_le(out, static_cast<std::uint64_t>(id));
    detail::put_gradients(out, record.updates[c].per_module);
  }
  return out;
}

inline RoundRecord decode_round_record(const std::string& data,
                                       const std::string& origin) {
  detail::Reader reader(data, origin);
  reader.need(sizeof(detail::kTraceMagic));
  if (std::memcmp(data.data(), detail::kTraceMagic,
                  sizeof(detail::kTraceMagic)) != 0)
    throw ValidationError("not a trace file: " + origin);
  detail::Reader body(data, origin);
  for (std::size_t i = 0; i < sizeof(detail::kTraceMagic); ++i)
    body.get_le<std::uint8_t>();
  const auto version = body.get_le<std::uint32_t>();
  if (version != detail::kTraceVersion)
    throw ValidationError("unsupported trace version in " + origin);
  RoundRecord record;
  record.round = static_cast<std::size_t>(body.get_le<std::uint64_t>());
  record.present = true;
  record.mean_client_loss = body.get_f64();
  record.params = detail::get_gradients(body);
  const auto clients = body.get_le<std::uint32_t>();
  record.updates.resize(clients);
  record.batch_ids.resize(clients);
  for (std::uint32_t c = 0; c < clients; ++c) {
    record.updates[c].round = record.round;
    record.updates[c].client =
        static_cast<std::size_t>(body.get_le<std::uint64_t>());
    const auto ids = body.get_le<std::uint64_t>();
    record.batch_ids[c].resize(static_cast<std::size_t>(ids));
    for (auto& id : record.batch_ids[c])
      id = static_cast<std::size_t>(body.get_le<std::uint64_t>());
    record.updates[c].per_module = detail::get_gradients(body);
  }
  if (!body.at_end()) throw ValidationError("trailing bytes in " + origin);
  return record;
}

inline void write_trace(const std::filesystem::path& dir,
                        const TrainingTrace& trace) {
  std::filesystem::create_directories(dir);
  for (const auto& record : trace.rounds) {
    if (!record.present) continue;
    write_file_atomic(dir / ("round_" + std::to_string(record.round) + ".bin"),
                      encode_round_record(record));
  }
  std::string final_params;
  detail::put_gradients(final_params, trace.final_params);
  write_file_atomic(dir / "final_params.bin", final_params);
}

inline TrainingTrace read_trace(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ValidationError("trace directory not found: " + dir.string());
  std::vector<RoundRecord> records;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("round_", 0) != 0 || entry.path().extension() != ".bin")
      continue;
    records.push_back(
        decode_round_record(read_file(entry.path()), entry.path().string()));
  }
  if (records.empty())
    throw ValidationError("no round files in trace directory: " + dir.string());
  std::size_t max_round = 0;
  for (const auto& r : records) max_round = std::max(max_round, r.round);
  TrainingTrace trace;
  trace.rounds.resize(max_round + 1);
  for (std::size_t t = 0; t <= max_round; ++t) {
    trace.rounds[t].round = t;
    trace.rounds[t].present = false;
  }
  for (auto& r : records) {
    const std::size_t t = r.round;
    trace.rounds[t] = std::move(r);
  }
  const std::filesystem::path final_path = dir / "final_params.bin";
  if (std::filesystem::exists(final_path)) {
    const std::string data = read_file(final_path);
    detail::Reader reader(data, final_path.string());
    trace.final_params = detail::get_gradients(reader);
  }
  return trace;
}

}  // namespace fedaudit
