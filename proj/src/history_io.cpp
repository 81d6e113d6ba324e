#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "flsim/fedrecover.hpp"

namespace flsim {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'H', 'I', 'S', 'T', '0', '1'};
constexpr std::uint32_t kEndianTag = 0x01020304u;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    require(static_cast<bool>(out_), "cannot open history file '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void vec(const ParamVector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) u64(std::bit_cast<std::uint64_t>(v[i]));
  }
  void finish(const std::string& path) {
    out_.flush();
    require(static_cast<bool>(out_), "failed writing history file '" + path + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    require(static_cast<bool>(in_), "cannot open history file '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(in_.gcount()) == n, "history file '" + path_ + "' is truncated");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  ParamVector vec(std::size_t d) {
    ParamVector v(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) v[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(u64());
    return v;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

struct Header {
  std::size_t d;
  int n;
  int t;
};

Header read_header(Reader& r, const std::string& path) {
  char magic[8];
  r.bytes(magic, 8);
  require(std::memcmp(magic, kMagic, 8) == 0, "'" + path + "' is not a history file");
  require(r.u32() == kEndianTag, "history file '" + path + "' has an unknown endianness tag");
  Header h;
  h.d = static_cast<std::size_t>(r.u64());
  h.n = static_cast<int>(r.u64());
  h.t = static_cast<int>(r.u64());
  return h;
}

}  // namespace

void save_history(const HistoryStore& h, const std::string& path) {
  h.validate();
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kEndianTag);
  w.u64(h.dim);
  w.u64(static_cast<std::uint64_t>(h.num_clients));
  w.u64(static_cast<std::uint64_t>(h.rounds()));
  for (int t = 0; t < h.rounds(); ++t) {
    w.vec(h.globals[static_cast<std::size_t>(t)]);
    const auto& ups = h.updates[static_cast<std::size_t>(t)];
    w.u64(ups.size());
    for (const auto& [id, u] : ups) {
      w.u64(static_cast<std::uint64_t>(id));
      w.vec(u);
    }
  }
  require(static_cast<std::size_t>(h.final_model.size()) == h.dim, "history: bad final model length");
  w.vec(h.final_model);
  w.finish(path);
}

HistoryStore load_history(const std::string& path) {
  Reader r(path);
  const Header hd = read_header(r, path);
  HistoryStore h;
  h.dim = hd.d;
  h.num_clients = hd.n;
  for (int t = 0; t < hd.t; ++t) {
    h.globals.push_back(r.vec(hd.d));
    const auto count = r.u64();
    require(count <= static_cast<std::uint64_t>(hd.n), "history file '" + path + "': bad update count");
    UpdateMap ups;
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto id = static_cast<ClientId>(r.u64());
      ups.emplace(id, r.vec(hd.d));
    }
    h.updates.push_back(std::move(ups));
  }
  h.final_model = r.vec(hd.d);
  require(r.at_end(), "history file '" + path + "' has trailing bytes");
  h.validate();
  return h;
}

HistoryFileStats history_file_stats(const std::string& path) {
  const HistoryStore h = load_history(path);
  HistoryFileStats s;
  s.file_bytes = std::filesystem::file_size(path);
  s.dim = h.dim;
  s.num_clients = h.num_clients;
  s.rounds = h.rounds();
  s.updates = h.update_count();
  return s;
}

}  // namespace flsim
