#include "ncap/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <limits>

#include "ncap/fileio.hpp"

namespace ncap {

namespace {

constexpr std::string_view kMagic = "NCAPCKPT";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) throw CheckpointError("checkpoint: name too long");
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + what + " (offset " + std::to_string(pos_) + ", need " +
                            std::to_string(n) + " bytes, have " + std::to_string(bytes_.size() - pos_) + ")");
    }
    const std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint64_t uint(std::size_t width, const std::string& what) {
    const std::string_view b = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  std::string str(const std::string& what) {
    const auto n = static_cast<std::size_t>(uint(4, what + " length"));
    return std::string(take(n, what));
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

Matrix scalar(double v) { return Matrix(1, 1, v); }

const Matrix& expect_shape(const Checkpoint& ckpt, std::string_view name, std::size_t rows, std::size_t cols) {
  const Matrix& m = ckpt.at(name);
  if (m.rows() != rows || m.cols() != cols) {
    throw CheckpointError("checkpoint tensor '" + std::string(name) + "' has shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return m;
}

void expect_kind(const Checkpoint& ckpt, std::string_view kind) {
  if (ckpt.kind != kind) {
    throw CheckpointError("checkpoint holds '" + ckpt.kind + "' parameters, expected '" + std::string(kind) + "'");
  }
}

}  // namespace

const Matrix& Checkpoint::at(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw CheckpointError("checkpoint is missing tensor '" + std::string(name) + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_string(out, ckpt.kind);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_string(out, t.name);
    put_u64(out, t.value.rows());
    put_u64(out, t.value.cols());
    for (double v : t.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size(), "magic") != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = static_cast<std::uint32_t>(r.uint(4, "version"));
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.kind = r.str("kind");
  const auto count = static_cast<std::size_t>(r.uint(4, "tensor count"));
  for (std::size_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str("tensor " + std::to_string(i) + " name");
    const std::uint64_t rows = r.uint(8, "'" + t.name + "' rows");
    const std::uint64_t cols = r.uint(8, "'" + t.name + "' cols");
    // Reject absurd shapes before allocating.
    if (cols != 0 && rows > std::numeric_limits<std::uint64_t>::max() / 8 / cols) {
      throw CheckpointError("checkpoint tensor '" + t.name + "' has an impossible shape");
    }
    const std::string_view payload = r.take(static_cast<std::size_t>(rows * cols * 8), "'" + t.name + "' payload");
    std::vector<double> data(static_cast<std::size_t>(rows * cols));
    for (std::size_t k = 0; k < data.size(); ++k) {
      std::uint64_t v = 0;
      for (std::size_t b = 0; b < 8; ++b) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[8 * k + b])) << (8 * b);
      }
      data[k] = std::bit_cast<double>(v);
    }
    t.value = Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data));
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes after the last tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  try {
    write_file_atomic(path, encode_checkpoint(ckpt));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

Checkpoint to_checkpoint(const RecognizerParams& p) {
  return Checkpoint{"recognizer",
                    {{"w_in", p.w_in},
                     {"b_in", p.b_in},
                     {"slope_in", scalar(p.slope_in)},
                     {"w_mid", p.w_mid},
                     {"b_mid", p.b_mid},
                     {"slope_mid", scalar(p.slope_mid)},
                     {"w_out", p.w_out},
                     {"b_out", p.b_out}}};
}

Checkpoint to_checkpoint(const AdapterParams& p) {
  Checkpoint c{"adapter", {{"w1", p.w1}, {"w2", p.w2}, {"slope1", scalar(p.slope1)}, {"slope2", scalar(p.slope2)}}};
  if (p.b1) c.tensors.push_back({"b1", *p.b1});
  if (p.b2) c.tensors.push_back({"b2", *p.b2});
  return c;
}

RecognizerParams recognizer_from_checkpoint(const Checkpoint& ckpt, const TaskConfig& config) {
  expect_kind(ckpt, "recognizer");
  const std::size_t d = config.feature_dim, h = config.hidden_dim, e = config.embed_dim, a = config.alphabet_size;
  RecognizerParams p;
  p.w_in = expect_shape(ckpt, "w_in", d, h);
  p.b_in = expect_shape(ckpt, "b_in", 1, h);
  p.slope_in = expect_shape(ckpt, "slope_in", 1, 1)(0, 0);
  p.w_mid = expect_shape(ckpt, "w_mid", h, e);
  p.b_mid = expect_shape(ckpt, "b_mid", 1, e);
  p.slope_mid = expect_shape(ckpt, "slope_mid", 1, 1)(0, 0);
  p.w_out = expect_shape(ckpt, "w_out", e, a);
  p.b_out = expect_shape(ckpt, "b_out", 1, a);
  return p;
}

AdapterParams adapter_from_checkpoint(const Checkpoint& ckpt, std::size_t embed, std::size_t feature_dim) {
  expect_kind(ckpt, "adapter");
  const std::size_t hidden = embed / 2;
  AdapterParams p;
  p.w1 = expect_shape(ckpt, "w1", embed, hidden);
  p.w2 = expect_shape(ckpt, "w2", hidden, feature_dim);
  p.slope1 = expect_shape(ckpt, "slope1", 1, 1)(0, 0);
  p.slope2 = expect_shape(ckpt, "slope2", 1, 1)(0, 0);
  const bool has_b1 = std::any_of(ckpt.tensors.begin(), ckpt.tensors.end(), [](const NamedTensor& t) { return t.name == "b1"; });
  if (has_b1) {
    p.b1 = expect_shape(ckpt, "b1", 1, hidden);
    p.b2 = expect_shape(ckpt, "b2", 1, feature_dim);
  }
  p.validate();
  return p;
}

void save_recognizer(const RecognizerParams& params, const std::filesystem::path& path) {
  save_checkpoint(to_checkpoint(params), path);
}

RecognizerParams load_recognizer(const std::filesystem::path& path, const TaskConfig& config) {
  return recognizer_from_checkpoint(load_checkpoint(path), config);
}

}  // namespace ncap
