#include "matfile.hpp"

#include <zlib.h>

#include <cstring>

#include "tsadv/error.hpp"

namespace tsadv::detail {
namespace {

enum : std::uint32_t {
  miINT8 = 1,
  miUINT8 = 2,
  miINT16 = 3,
  miUINT16 = 4,
  miINT32 = 5,
  miUINT32 = 6,
  miSINGLE = 7,
  miDOUBLE = 9,
  miINT64 = 12,
  miUINT64 = 13,
  miMATRIX = 14,
  miCOMPRESSED = 15,
  miUTF8 = 16,
  miUTF16 = 17,
  miUTF32 = 18,
};

enum : std::uint8_t {
  mxCELL = 1,
  mxSTRUCT = 2,
  mxOBJECT = 3,
  mxCHAR = 4,
  mxSPARSE = 5,
  mxDOUBLE = 6,
  mxUINT64 = 15,
};

[[noreturn]] void fail(const std::string& what) { throw ConversionError("MAT file: " + what); }

template <typename T>
T load(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

struct Element {
  std::uint32_t type = 0;
  std::span<const std::uint8_t> data;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }

  Element next() {
    if (pos_ + 8 > bytes_.size()) fail("truncated element tag");
    const auto* p = bytes_.data() + pos_;
    const auto first = load<std::uint32_t>(p);
    Element e;
    if ((first >> 16) != 0) {
      // Small data element: 4-byte payload packed into the tag.
      e.type = first & 0xffffu;
      const std::uint32_t n = first >> 16;
      if (n > 4) fail("small element larger than 4 bytes");
      e.data = bytes_.subspan(pos_ + 4, n);
      pos_ += 8;
      return e;
    }
    e.type = first;
    const std::uint32_t n = load<std::uint32_t>(p + 4);
    if (pos_ + 8 + n > bytes_.size()) fail("element overruns buffer");
    e.data = bytes_.subspan(pos_ + 8, n);
    pos_ += 8 + n;
    if (e.type != miCOMPRESSED) pos_ += (8 - n % 8) % 8;
    return e;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<double> to_doubles(const Element& e) {
  std::vector<double> out;
  auto convert = [&](auto tag) {
    using T = decltype(tag);
    const std::size_t n = e.data.size() / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(load<T>(e.data.data() + i * sizeof(T)));
  };
  switch (e.type) {
    case miINT8: convert(std::int8_t{}); break;
    case miUINT8: convert(std::uint8_t{}); break;
    case miUTF8: convert(std::uint8_t{}); break;
    case miINT16: convert(std::int16_t{}); break;
    case miUINT16: convert(std::uint16_t{}); break;
    case miUTF16: convert(std::uint16_t{}); break;
    case miINT32: convert(std::int32_t{}); break;
    case miUINT32: convert(std::uint32_t{}); break;
    case miUTF32: convert(std::uint32_t{}); break;
    case miSINGLE: convert(float{}); break;
    case miDOUBLE: convert(double{}); break;
    case miINT64: convert(std::int64_t{}); break;
    case miUINT64: convert(std::uint64_t{}); break;
    default: fail("unsupported numeric data type " + std::to_string(e.type));
  }
  return out;
}

MatArray parse_matrix(std::span<const std::uint8_t> body);

MatArray parse_matrix_element(const Element& e) {
  if (e.type != miMATRIX) fail("expected miMATRIX element, got type " + std::to_string(e.type));
  return parse_matrix(e.data);
}

MatArray parse_matrix(std::span<const std::uint8_t> body) {
  MatArray arr;
  if (body.empty()) {
    // Empty placeholder (e.g. an unset cell).
    arr.kind = MatArray::Kind::numeric;
    arr.dims = {0, 0};
    return arr;
  }
  Reader r(body);
  const Element flags = r.next();
  if (flags.type != miUINT32 || flags.data.size() < 8) fail("bad array flags");
  const auto flag_word = load<std::uint32_t>(flags.data.data());
  const std::uint8_t cls = flag_word & 0xffu;
  const bool complex = (flag_word & 0x0800u) != 0;

  const Element dims = r.next();
  for (double d : to_doubles(dims)) arr.dims.push_back(static_cast<std::size_t>(d));
  const Element name = r.next();
  arr.name.assign(name.data.begin(), name.data.end());

  std::size_t count = 1;
  for (auto d : arr.dims) count *= d;

  switch (cls) {
    case mxCELL:
      arr.kind = MatArray::Kind::cell;
      for (std::size_t i = 0; i < count; ++i) arr.cells.push_back(parse_matrix_element(r.next()));
      break;
    case mxSTRUCT: {
      arr.kind = MatArray::Kind::structure;
      const Element len_el = r.next();
      const auto len_values = to_doubles(len_el);
      if (len_values.empty() || len_values[0] <= 0) fail("bad struct field name length");
      const auto name_len = static_cast<std::size_t>(len_values[0]);
      const Element names = r.next();
      const std::size_t n_fields = names.data.size() / name_len;
      for (std::size_t f = 0; f < n_fields; ++f) {
        const auto* p = reinterpret_cast<const char*>(names.data.data() + f * name_len);
        arr.field_names.emplace_back(p, strnlen(p, name_len));
      }
      for (std::size_t i = 0; i < count * n_fields; ++i) arr.fields.push_back(parse_matrix_element(r.next()));
      break;
    }
    case mxCHAR: {
      arr.kind = MatArray::Kind::character;
      if (!r.done()) arr.numeric = to_doubles(r.next());
      break;
    }
    case mxOBJECT:
    case mxSPARSE:
      fail("unsupported array class " + std::to_string(cls) + " for '" + arr.name + "'");
    default:
      if (cls < mxDOUBLE || cls > mxUINT64) fail("unknown array class " + std::to_string(cls));
      arr.kind = MatArray::Kind::numeric;
      arr.numeric = to_doubles(r.next());
      if (complex && !r.done()) r.next();  // imaginary part is ignored
      if (arr.numeric.size() != count) fail("numeric payload size mismatch for '" + arr.name + "'");
      break;
  }
  return arr;
}

}  // namespace

std::size_t MatArray::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const MatArray& MatArray::field(const std::string& field_name, std::size_t element) const {
  if (kind != Kind::structure) fail("'" + name + "' is not a struct");
  for (std::size_t f = 0; f < field_names.size(); ++f)
    if (field_names[f] == field_name) return fields.at(element * field_names.size() + f);
  fail("struct '" + name + "' has no field '" + field_name + "'");
}

std::vector<std::uint8_t> inflate_bytes(std::span<const std::uint8_t> in, bool raw_deflate, std::size_t size_hint) {
  z_stream zs{};
  if (inflateInit2(&zs, raw_deflate ? -MAX_WBITS : MAX_WBITS) != Z_OK) throw ConversionError("zlib init failed");
  std::vector<std::uint8_t> out(std::max<std::size_t>(size_hint, 4096));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  std::size_t produced = 0;
  while (rc != Z_STREAM_END) {
    if (produced == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + produced;
    zs.avail_out = static_cast<uInt>(out.size() - produced);
    rc = inflate(&zs, Z_NO_FLUSH);
    produced = out.size() - zs.avail_out;
    if (rc == Z_BUF_ERROR && zs.avail_in == 0) break;
    if (rc != Z_OK && rc != Z_STREAM_END && rc != Z_BUF_ERROR) {
      inflateEnd(&zs);
      throw ConversionError("corrupt compressed data (zlib error " + std::to_string(rc) + ")");
    }
  }
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw ConversionError("truncated compressed data");
  out.resize(produced);
  return out;
}

std::map<std::string, MatArray> read_mat_v5(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 128) fail("file shorter than the 128-byte header");
  if (std::memcmp(bytes.data(), "MATLAB 5.0 MAT-file", 19) != 0) fail("missing level-5 header text");
  if (bytes[126] != 'I' || bytes[127] != 'M') fail("only little-endian files are supported");

  std::map<std::string, MatArray> vars;
  Reader r(bytes.subspan(128));
  while (!r.done()) {
    Element e = r.next();
    if (e.type == miCOMPRESSED) {
      const auto raw = inflate_bytes(e.data, false, e.data.size() * 4);
      Reader inner(raw);
      MatArray arr = parse_matrix_element(inner.next());
      vars[arr.name] = std::move(arr);
    } else if (e.type == miMATRIX) {
      MatArray arr = parse_matrix(e.data);
      vars[arr.name] = std::move(arr);
    } else {
      fail("unexpected top-level element type " + std::to_string(e.type));
    }
  }
  return vars;
}

std::vector<std::uint8_t> read_zip_entry(std::span<const std::uint8_t> archive, const std::string& entry_name) {
  auto zfail = [](const std::string& what) -> void { throw ConversionError("zip archive: " + what); };
  if (archive.size() < 22) zfail("too small");
  // Locate the end-of-central-directory record (may be followed by a comment).
  std::size_t eocd = archive.size() - 22;
  while (true) {
    if (load<std::uint32_t>(archive.data() + eocd) == 0x06054b50u) break;
    if (eocd == 0 || archive.size() - eocd > 22 + 0xffff) {
      zfail("end of central directory not found");
    }
    --eocd;
  }
  const auto entries = load<std::uint16_t>(archive.data() + eocd + 10);
  std::size_t pos = load<std::uint32_t>(archive.data() + eocd + 16);
  for (std::size_t i = 0; i < entries; ++i) {
    if (pos + 46 > archive.size() || load<std::uint32_t>(archive.data() + pos) != 0x02014b50u)
      zfail("bad central directory header");
    const auto* h = archive.data() + pos;
    const auto method = load<std::uint16_t>(h + 10);
    const std::size_t csize = load<std::uint32_t>(h + 20);
    const std::size_t usize = load<std::uint32_t>(h + 24);
    const std::size_t name_len = load<std::uint16_t>(h + 28);
    const std::size_t extra_len = load<std::uint16_t>(h + 30);
    const std::size_t comment_len = load<std::uint16_t>(h + 32);
    const std::size_t local = load<std::uint32_t>(h + 42);
    if (pos + 46 + name_len > archive.size()) zfail("bad entry name");
    std::string name(reinterpret_cast<const char*>(h + 46), name_len);
    pos += 46 + name_len + extra_len + comment_len;

    const auto slash = name.find_last_of('/');
    const std::string base = slash == std::string::npos ? name : name.substr(slash + 1);
    if (base != entry_name) continue;

    if (local + 30 > archive.size() || load<std::uint32_t>(archive.data() + local) != 0x04034b50u)
      zfail("bad local header for " + name);
    const std::size_t data_start =
        local + 30 + load<std::uint16_t>(archive.data() + local + 26) + load<std::uint16_t>(archive.data() + local + 28);
    if (data_start + csize > archive.size()) zfail("entry data overruns archive");
    const auto payload = archive.subspan(data_start, csize);
    if (method == 0) return {payload.begin(), payload.end()};
    if (method == 8) {
      auto out = inflate_bytes(payload, true, usize);
      if (out.size() != usize) zfail("size mismatch after inflating " + name);
      return out;
    }
    zfail("unsupported compression method " + std::to_string(method));
  }
  throw ConversionError("zip archive: no entry named " + entry_name);
}

}  // namespace tsadv::detail
