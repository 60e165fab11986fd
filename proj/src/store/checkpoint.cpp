#include "fgfp/store/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unistd.h>

#include "fgfp/detail/overloaded.hpp"
#include "fgfp/errors.hpp"

namespace fgfp::store {
namespace {

using detail::overloaded;

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[5] = {'F', 'G', 'F', 'P', '1'};

enum class Tag : std::uint8_t { conv = 1, fgf_conv = 2, bn = 3, pool = 4, relu = 5, flatten = 6, fc = 7 };

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void shape(const nd::Shape& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) put<std::int64_t>(d);
  }
  void floats(std::span<const float> v) { out_.append(reinterpret_cast<const char*>(v.data()), v.size() * 4); }
  void bytes(std::string_view b) { out_.append(b); }
  std::string& buf() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in, std::size_t base = 0) : in_(in), base_(base) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  nd::Shape shape() {
    const auto r = get<std::uint32_t>();
    if (r > 8) fail("implausible rank " + std::to_string(r));
    nd::Shape s(r);
    for (auto& d : s) {
      d = get<std::int64_t>();
      if (d < 1 || d > (std::int64_t{1} << 32)) fail("bad extent " + std::to_string(d));
    }
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    if (n > remaining() / 4) fail("float array of " + std::to_string(n) + " runs past the end");
    std::vector<float> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * 4);
    pos_ += n * 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t offset() const { return base_ + pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("checkpoint: " + what + " at byte " + std::to_string(offset()));
  }
  void need(std::size_t n) const {
    if (n > remaining()) fail("truncated (need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
  }

 private:
  std::string_view in_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

nd::Tensor tensor(Reader& r) {
  auto s = r.shape();
  auto v = r.floats(static_cast<std::size_t>(nd::shape_numel(s)));
  return nd::Tensor(std::move(s), std::move(v));
}

// Shape, packed mask bits (LSB first), then the f32 values under set bits.
void write_weights(Writer& w, const nd::Tensor& weight, const nd::Tensor& mask) {
  w.shape(weight.shape());
  w.put<std::uint8_t>(mask.empty() ? 0 : 1);
  if (mask.empty()) {
    w.floats(weight.data());
    return;
  }
  std::string bits((weight.size() + 7) / 8, '\0');
  std::vector<float> values;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (mask[i] != 0.0f) {
      bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
      values.push_back(weight[i]);
    }
  }
  w.bytes(bits);
  w.put<std::uint64_t>(values.size());
  w.floats(values);
}

void read_weights(Reader& r, nd::Tensor& weight, nd::Tensor& mask) {
  auto shape = r.shape();
  const auto n = static_cast<std::size_t>(nd::shape_numel(shape));
  const auto masked = r.get<std::uint8_t>();
  if (masked > 1) r.fail("bad mask flag");
  if (!masked) {
    weight = nd::Tensor(shape, r.floats(n));
    mask = {};
    return;
  }
  const auto bits = r.take((n + 7) / 8);
  const auto count = r.get<std::uint64_t>();
  std::size_t pop = 0;
  for (std::size_t i = 0; i < n; ++i) pop += (static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1u;
  if (n % 8 != 0 && (static_cast<unsigned char>(bits.back()) >> (n % 8)) != 0) {
    throw IntegrityError("checkpoint: mask padding bits are set");
  }
  if (count != pop) {
    throw IntegrityError("checkpoint: " + std::to_string(count) + " stored values for " + std::to_string(pop) +
                         " set mask bits");
  }
  const auto values = r.floats(count);
  weight = nd::Tensor(shape, 0.0f);
  mask = nd::Tensor(shape, 0.0f);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if ((static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1u) {
      mask[i] = 1.0f;
      weight[i] = values[k++];
    }
  }
}

void write_geom(Writer& w, const nd::Conv2dGeometry& g) {
  w.put<std::int32_t>(g.stride);
  w.put<std::int32_t>(g.pad);
}

nd::Conv2dGeometry read_geom(Reader& r) {
  nd::Conv2dGeometry g;
  g.stride = r.get<std::int32_t>();
  g.pad = r.get<std::int32_t>();
  if (g.stride < 1 || g.pad < 0) r.fail("bad conv geometry");
  return g;
}

std::uint8_t kind_code(nn::LayerKind k) { return static_cast<std::uint8_t>(k); }

void write_header(Writer& w, const nn::Model& model) {
  w.str(model.meta.name);
  w.put<std::uint64_t>(model.meta.seed);
  w.put<std::int32_t>(model.meta.epoch);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.meta.metrics.size()));
  for (const auto& [k, v] : model.meta.metrics) {
    w.str(k);
    w.put<double>(v);
  }
  w.shape(model.input_shape);
  w.put<std::int32_t>(model.num_classes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    const auto d = nn::describe(layer);
    w.str(d.id);
    w.put<std::uint8_t>(kind_code(d.kind));
    w.put<std::int8_t>(d.fgf_kind ? static_cast<std::int8_t>(*d.fgf_kind) : std::int8_t{-1});
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.dims.size()));
    for (auto x : d.dims) w.put<std::int64_t>(x);
    w.put<std::int64_t>(nn::layer_param_count(layer, nn::Counting::logical));
    w.put<std::int64_t>(nn::layer_param_count(layer, nn::Counting::stored));
  }
}

Summary read_header(Reader& r, std::uint16_t version) {
  Summary s;
  s.version = version;
  s.meta.name = r.str();
  s.meta.seed = r.get<std::uint64_t>();
  s.meta.epoch = r.get<std::int32_t>();
  const auto nm = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nm; ++i) {
    auto k = r.str();
    s.meta.metrics[k] = r.get<double>();
  }
  s.input_shape = r.shape();
  s.num_classes = r.get<std::int32_t>();
  if (s.num_classes < 1) r.fail("bad class count");
  const auto nl = r.get<std::uint32_t>();
  if (nl > r.remaining()) r.fail("implausible layer count");
  for (std::uint32_t i = 0; i < nl; ++i) {
    LayerSummary l;
    l.id = r.str();
    const auto k = r.get<std::uint8_t>();
    if (k > kind_code(nn::LayerKind::flatten)) r.fail("unknown layer kind " + std::to_string(k));
    l.kind = static_cast<nn::LayerKind>(k);
    const auto fk = r.get<std::int8_t>();
    if (fk > 2 || fk < -1) r.fail("unknown fgf kind");
    if (fk >= 0) l.fgf_kind = static_cast<fgf::FgfKind>(fk);
    const auto nd = r.get<std::uint32_t>();
    if (nd > 8) r.fail("implausible dims");
    for (std::uint32_t j = 0; j < nd; ++j) l.dims.push_back(r.get<std::int64_t>());
    l.logical = r.get<std::int64_t>();
    l.stored = r.get<std::int64_t>();
    s.layers.push_back(std::move(l));
  }
  return s;
}

std::uint16_t read_preamble(Reader& r) {
  const auto magic = r.take(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not an FGFP checkpoint (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
  return version;
}

void write_layer(Writer& out, const nn::Layer& layer) {
  Writer w;
  Tag tag{};
  w.str(nn::layer_id(layer));
  std::visit(overloaded{
                 [&](const nn::Conv2d& l) {
                   tag = Tag::conv;
                   write_geom(w, l.geom);
                   write_weights(w, l.weight, l.mask);
                 },
                 [&](const nn::FgfConv2d& l) {
                   tag = Tag::fgf_conv;
                   w.put<std::uint8_t>(static_cast<std::uint8_t>(l.spec.kind));
                   w.put<std::uint8_t>(l.spec.gain ? 1 : 0);
                   w.put<std::int32_t>(l.spec.dims.ch);
                   w.put<std::int32_t>(l.spec.dims.kh);
                   w.put<std::int32_t>(l.spec.dims.kw);
                   w.put<std::int32_t>(l.out_channels);
                   write_geom(w, l.geom);
                   w.put<std::uint32_t>(static_cast<std::uint32_t>(l.spec.param_count()));
                   for (double p : l.params) w.put<double>(p);
                 },
                 [&](const nn::BatchNorm2d& l) {
                   tag = Tag::bn;
                   w.put<float>(l.eps);
                   w.put<float>(l.momentum);
                   w.shape(l.gamma.shape());
                   w.floats(l.gamma.data());
                   w.floats(l.beta.data());
                   w.floats(l.running_mean.data());
                   w.floats(l.running_var.data());
                 },
                 [&](const nn::MaxPool2d& l) {
                   tag = Tag::pool;
                   w.put<std::int32_t>(l.size);
                 },
                 [&](const nn::Relu&) { tag = Tag::relu; },
                 [&](const nn::Flatten&) { tag = Tag::flatten; },
                 [&](const nn::Linear& l) {
                   tag = Tag::fc;
                   write_weights(w, l.weight, l.mask);
                   w.shape(l.bias.shape());
                   w.floats(l.bias.data());
                 },
             },
             layer);
  out.put<std::uint8_t>(static_cast<std::uint8_t>(tag));
  out.put<std::uint64_t>(w.buf().size());
  out.bytes(w.buf());
}

nn::Layer read_layer(Reader& r) {
  const auto tag = static_cast<Tag>(r.get<std::uint8_t>());
  const auto len = r.get<std::uint64_t>();
  if (len > r.remaining()) r.fail("layer section longer than the file");
  Reader p(r.take(static_cast<std::size_t>(len)), r.offset() - static_cast<std::size_t>(len));
  auto id = p.str();
  nn::Layer layer;
  switch (tag) {
    case Tag::conv: {
      nn::Conv2d l;
      l.id = std::move(id);
      l.geom = read_geom(p);
      read_weights(p, l.weight, l.mask);
      if (l.weight.rank() != 4) p.fail("conv weight must be rank 4");
      layer = std::move(l);
      break;
    }
    case Tag::fgf_conv: {
      nn::FgfConv2d l;
      l.id = std::move(id);
      const auto kind = p.get<std::uint8_t>();
      if (kind > 2) p.fail("unknown fgf kind");
      l.spec.kind = static_cast<fgf::FgfKind>(kind);
      const auto gain = p.get<std::uint8_t>();
      if (gain > 1 || (gain && l.spec.kind != fgf::FgfKind::three_d)) p.fail("bad gain flag");
      l.spec.gain = gain == 1;
      l.spec.dims.ch = p.get<std::int32_t>();
      l.spec.dims.kh = p.get<std::int32_t>();
      l.spec.dims.kw = p.get<std::int32_t>();
      l.out_channels = p.get<std::int32_t>();
      if (l.spec.dims.ch < 1 || l.spec.dims.kh < 1 || l.spec.dims.kw < 1 || l.out_channels < 1) {
        p.fail("bad fgf dims");
      }
      l.geom = read_geom(p);
      const auto per = p.get<std::uint32_t>();
      if (per != l.spec.param_count()) {
        throw IntegrityError("checkpoint: " + l.id + " stores " + std::to_string(per) + " scalars per filter, kind " +
                             fgf::kind_name(l.spec.kind) + " needs " + std::to_string(l.spec.param_count()));
      }
      const std::size_t n = static_cast<std::size_t>(per) * static_cast<std::size_t>(l.out_channels);
      if (n > p.remaining() / 8) p.fail("fgf parameters run past the end");
      l.params.resize(n);
      for (auto& v : l.params) v = p.get<double>();
      layer = std::move(l);
      break;
    }
    case Tag::bn: {
      nn::BatchNorm2d l;
      l.id = std::move(id);
      l.eps = p.get<float>();
      l.momentum = p.get<float>();
      const auto s = p.shape();
      if (s.size() != 1) p.fail("batch-norm parameters must be rank 1");
      const auto c = static_cast<std::size_t>(s[0]);
      l.gamma = nd::Tensor(s, p.floats(c));
      l.beta = nd::Tensor(s, p.floats(c));
      l.running_mean = nd::Tensor(s, p.floats(c));
      l.running_var = nd::Tensor(s, p.floats(c));
      layer = std::move(l);
      break;
    }
    case Tag::pool: {
      nn::MaxPool2d l;
      l.id = std::move(id);
      l.size = p.get<std::int32_t>();
      if (l.size < 1) p.fail("bad pool size");
      layer = std::move(l);
      break;
    }
    case Tag::relu: layer = nn::Relu{std::move(id)}; break;
    case Tag::flatten: layer = nn::Flatten{std::move(id)}; break;
    case Tag::fc: {
      nn::Linear l;
      l.id = std::move(id);
      read_weights(p, l.weight, l.mask);
      if (l.weight.rank() != 2) p.fail("fc weight must be rank 2");
      l.bias = tensor(p);
      if (l.bias.shape() != nd::Shape{l.weight.dim(0)}) p.fail("fc bias shape mismatch");
      layer = std::move(l);
      break;
    }
    default: r.fail("unknown layer tag " + std::to_string(static_cast<int>(tag)));
  }
  if (p.remaining() != 0) p.fail("trailing bytes in layer section");
  return layer;
}

}  // namespace

std::string encode(const nn::Model& model) {
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.put<std::uint16_t>(kFormatVersion);
  Writer h;
  write_header(h, model);
  w.put<std::uint64_t>(h.buf().size());
  w.bytes(h.buf());
  for (const auto& layer : model.layers) write_layer(w, layer);
  return std::move(w.buf());
}

nn::Model decode(std::string_view bytes) {
  Reader r(bytes);
  const auto version = read_preamble(r);
  const auto hlen = r.get<std::uint64_t>();
  if (hlen > r.remaining()) r.fail("header longer than the file");
  const auto hstart = r.offset();
  Reader hr(r.take(static_cast<std::size_t>(hlen)), hstart);
  const Summary s = read_header(hr, version);
  if (hr.remaining() != 0) hr.fail("trailing bytes in header");

  nn::Model m;
  m.meta = s.meta;
  m.input_shape = s.input_shape;
  m.num_classes = s.num_classes;
  for (std::size_t i = 0; i < s.layers.size(); ++i) m.layers.push_back(read_layer(r));
  if (r.remaining() != 0) r.fail("trailing bytes after the last layer");

  nn::validate(m);
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& claim = s.layers[i];
    const auto d = nn::describe(m.layers[i]);
    const auto logical = nn::layer_param_count(m.layers[i], nn::Counting::logical);
    const auto stored = nn::layer_param_count(m.layers[i], nn::Counting::stored);
    if (claim.id != d.id || claim.kind != d.kind || claim.dims != d.dims || claim.fgf_kind != d.fgf_kind) {
      throw IntegrityError("checkpoint: header entry " + std::to_string(i) + " (" + claim.id +
                           ") does not describe its layer payload");
    }
    if (claim.logical != logical || claim.stored != stored) {
      throw IntegrityError("checkpoint: " + claim.id + " claims " + std::to_string(claim.logical) + "/" +
                           std::to_string(claim.stored) + " logical/stored parameters, payload has " +
                           std::to_string(logical) + "/" + std::to_string(stored));
    }
  }
  return m;
}

void save(const nn::Model& model, const std::filesystem::path& path, const SaveOptions& opts) {
  nn::validate(model);
  const std::string bytes = encode(model);
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    const std::size_t n = opts.abort_after_bytes ? std::min(*opts.abort_after_bytes, bytes.size()) : bytes.size();
    f.write(bytes.data(), static_cast<std::streamsize>(n));
    f.flush();
    if (opts.abort_after_bytes) {
      f.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("save of " + path.string() + " interrupted after " + std::to_string(n) + " bytes");
    }
    if (!f) {
      f.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write to " + tmp.string() + " failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into " + path.string());
  }
}

namespace {
std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}
}  // namespace

nn::Model load(const std::filesystem::path& path) { return decode(read_file(path)); }

std::int64_t Summary::logical() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.logical;
  return n;
}

std::int64_t Summary::stored() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.stored;
  return n;
}

Summary read_summary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string pre(sizeof kMagic + 2 + 8, '\0');
  f.read(pre.data(), static_cast<std::streamsize>(pre.size()));
  if (f.gcount() != static_cast<std::streamsize>(pre.size())) throw FormatError("checkpoint: truncated preamble");
  Reader r(pre);
  const auto version = read_preamble(r);
  const auto hlen = r.get<std::uint64_t>();
  if (hlen > (std::uint64_t{1} << 32)) throw FormatError("checkpoint: implausible header length");
  std::string header(static_cast<std::size_t>(hlen), '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  if (f.gcount() != static_cast<std::streamsize>(hlen)) throw FormatError("checkpoint: truncated header");
  Reader hr(header, pre.size());
  auto s = read_header(hr, version);
  if (hr.remaining() != 0) hr.fail("trailing bytes in header");
  return s;
}

Summary summarize(const nn::Model& model) {
  Writer h;
  write_header(h, model);
  Reader r(h.buf());
  return read_header(r, kFormatVersion);
}

void export_kernel_csv(std::ostream& os, const nn::FgfConv2d& layer, int filter) {
  if (filter < 0 || filter >= layer.out_channels) {
    throw UsageError("filter " + std::to_string(filter) + " out of range for " + layer.id + " (" +
                     std::to_string(layer.out_channels) + " filters)");
  }
  const auto& d = layer.spec.dims;
  const auto k = fgf::synthesize(layer.spec, layer.filter(filter));
  const auto f = fgf::factor_vectors(layer.spec, layer.filter(filter));
  char buf[32];
  auto row = [&](const std::string& head, const double* v, std::size_t n) {
    os << head;
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(static_cast<float>(v[i])));
      os << buf;
    }
    os << '\n';
  };
  os << "part,index,rows,cols,values\n";
  const std::size_t plane = static_cast<std::size_t>(d.kh) * d.kw;
  for (int c = 0; c < d.ch; ++c) {
    row("kernel," + std::to_string(c) + "," + std::to_string(d.kh) + "," + std::to_string(d.kw), k.data() + c * plane,
        plane);
  }
  row("channel,," + std::to_string(f.channel.size()) + ",1", f.channel.data(), f.channel.size());
  row("rows,," + std::to_string(f.rows.size()) + ",1", f.rows.data(), f.rows.size());
  row("cols,," + std::to_string(f.cols.size()) + ",1", f.cols.data(), f.cols.size());
}

KernelCsv import_kernel_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "part,index,rows,cols,values") throw FormatError("kernel csv: missing header");
  KernelCsv out;
  std::vector<std::vector<float>> slices;
  int kh = 0, kw = 0;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    auto bad = [&](const std::string& why) {
      return FormatError("kernel csv line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() < 4) throw bad("too few fields");
    std::vector<float> vals;
    int r = 0, c = 0;
    try {
      r = std::stoi(f[2]);
      c = std::stoi(f[3]);
      for (std::size_t i = 4; i < f.size(); ++i) vals.push_back(static_cast<float>(std::stod(f[i])));
    } catch (const std::logic_error&) {
      throw bad("bad number");
    }
    if (r < 1 || c < 1 || vals.size() != static_cast<std::size_t>(r) * c) throw bad("value count does not match extents");
    if (f[0] == "kernel") {
      int idx = 0;
      try {
        idx = std::stoi(f[1]);
      } catch (const std::logic_error&) {
        throw bad("bad slice index");
      }
      if (idx != static_cast<int>(slices.size())) throw bad("kernel slices out of order");
      if (!slices.empty() && (r != kh || c != kw)) throw bad("slice extents differ");
      kh = r;
      kw = c;
      slices.push_back(std::move(vals));
    } else if (f[0] == "channel") {
      out.channel = std::move(vals);
    } else if (f[0] == "rows") {
      out.rows = std::move(vals);
    } else if (f[0] == "cols") {
      out.cols = std::move(vals);
    } else {
      throw bad("unknown part " + f[0]);
    }
  }
  if (slices.empty()) throw FormatError("kernel csv: no kernel slices");
  out.kernel = nd::Tensor({static_cast<std::int64_t>(slices.size()), kh, kw});
  std::size_t i = 0;
  for (const auto& s : slices) {
    for (float v : s) out.kernel[i++] = v;
  }
  return out;
}

}  // namespace fgfp::store
