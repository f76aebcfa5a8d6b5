#include "featxlate/archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "featxlate/error.hpp"

namespace featxlate {

namespace {

constexpr char kMagic[4] = {'F', 'X', 'A', 'R'};

class Writer {
 public:
  template <typename T>
  void pod(const T& value) {
    raw(&value, sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<char>& buffer() { return buffer_; }

 private:
  std::vector<char> buffer_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end, std::string origin)
      : bytes_(bytes), end_(end), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    T value;
    raw(&value, sizeof(T));
    return value;
  }
  void raw(void* out, std::size_t n) {
    if (pos_ + n > end_) {
      throw IntegrityError("truncated archive: " + origin_);
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large tensors.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < n; off += kChunk) {
    auto len = static_cast<uInt>(std::min(kChunk, n - off));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + off), len);
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::uint8_t dtype_tag(torch::ScalarType type) {
  switch (type) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    default: throw UnsupportedError("archive cannot store dtype " + std::string(c10::toString(type)));
  }
}

torch::ScalarType dtype_from_tag(std::uint8_t tag) {
  switch (tag) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    default: throw IntegrityError("unknown dtype tag " + std::to_string(tag));
  }
}

const torch::Tensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw NotFoundError("archive has no entry '" + name + "'");
  }
  return it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  Writer w;
  w.raw(kMagic, 4);
  w.pod(kVersion);
  w.str(meta);
  w.pod(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().cpu().contiguous();
    w.str(name);
    w.pod(dtype_tag(t.scalar_type()));
    w.pod(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod(static_cast<std::int64_t>(d));
    auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    w.pod(nbytes);
    w.raw(t.data_ptr(), nbytes);
  }
  auto crc = crc_of(w.buffer().data(), w.buffer().size());
  w.pod(crc);

  std::string bytes(w.buffer().begin(), w.buffer().end());
  write_file_atomic(path, bytes);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("archive not found: " + path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 + 4 + 4 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IntegrityError("not a tensor archive (bad magic or too short): " + path.string());
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != stored_crc) {
    throw IntegrityError("checksum mismatch (corrupted archive): " + path.string());
  }

  Reader r(bytes, body, path.string());
  char magic[4];
  r.raw(magic, 4);
  auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw IntegrityError("unsupported archive version " + std::to_string(version) + " in " + path.string());
  }
  TensorArchive archive;
  archive.meta = r.str();
  auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    auto type = dtype_from_tag(r.pod<std::uint8_t>());
    auto ndim = r.pod<std::uint32_t>();
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<std::int64_t>();
    auto nbytes = r.pod<std::uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(type));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw IntegrityError("entry '" + name + "' size does not match its shape in " + path.string());
    }
    r.raw(t.data_ptr(), nbytes);
    archive.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) {
    throw IntegrityError("trailing bytes in archive: " + path.string());
  }
  return archive;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open for writing: " + tmp.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace featxlate
