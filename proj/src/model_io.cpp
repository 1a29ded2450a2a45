#include "doconv/model_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace doconv {

Tensor DatasetHandle::image(std::size_t i) const {
  const std::size_t h = height(), w = width();
  const std::size_t n = h * w;
  Tensor out({h, w, 1});
  std::memcpy(out.data(), images.data() + i * n, n * sizeof(double));
  return out;
}

namespace {

// ---- IDX (big-endian headers) ----

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated file reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// ---- DOCV (little-endian body) ----

constexpr char kModelMagic[4] = {'D', 'O', 'C', 'V'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated model file (" + what + ")");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated model file (" + what + ")");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void put_tensor(std::ostream& out, const Tensor& t, Dtype dtype) {
  put_u32(out, static_cast<std::uint32_t>(t.shape().rank()));
  for (std::size_t d : t.shape().dims()) put_u64(out, d);
  if (dtype == Dtype::F64) {
    for (std::size_t i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t[i]));
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
    }
  }
}

Tensor get_tensor(std::istream& in, Dtype dtype, const std::string& what) {
  const std::uint32_t rank = get_u32(in, what + " rank");
  if (rank > 8) throw IoError("corrupt tensor rank in model file (" + what + ")");
  std::vector<std::size_t> dims(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t d = get_u64(in, what + " dims");
    if (d == 0 || d > (1ull << 32)) throw IoError("corrupt tensor extent in model file");
    dims[i] = static_cast<std::size_t>(d);
  }
  Tensor t{Shape(dims)};
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (dtype == Dtype::F64) {
      t[i] = std::bit_cast<double>(get_u64(in, what + " data"));
    } else {
      t[i] = static_cast<double>(std::bit_cast<float>(get_u32(in, what + " data")));
    }
  }
  return t;
}

std::uint32_t kind_tag(LayerKind k) { return static_cast<std::uint32_t>(k); }

LayerKind kind_from_tag(std::uint32_t tag) {
  if (tag > static_cast<std::uint32_t>(LayerKind::SoftmaxCE)) {
    throw IoError("unknown layer kind tag " + std::to_string(tag));
  }
  return static_cast<LayerKind>(tag);
}

bool layer_has_params(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::DoConv || k == LayerKind::DoDConv ||
         k == LayerKind::Dense;
}

nlohmann::json geometry_json(const ConvGeometry& g) {
  return {{"m", g.m},         {"n", g.n},     {"c_in", g.c_in},     {"c_out", g.c_out},
          {"stride", g.stride}, {"pad", g.pad}, {"groups", g.groups}, {"d_mul", g.d_mul}};
}

void write_sidecar(const Network& net, const std::string& path, bool folded, Dtype dtype) {
  nlohmann::json j;
  j["format"] = "DOCV";
  j["version"] = kModelVersion;
  j["dtype"] = dtype == Dtype::F64 ? "f64" : "f32";
  j["folded"] = folded;
  j["input"] = {{"height", net.spec().in_h}, {"width", net.spec().in_w},
                {"channels", net.spec().in_c}};
  j["parameters"] = net.param_count();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& l = net.layers()[i];
    nlohmann::json lj;
    lj["kind"] = layer_kind_name(l.spec.kind);
    switch (l.spec.kind) {
      case LayerKind::Conv:
      case LayerKind::DoConv:
      case LayerKind::DoDConv:
        lj["geometry"] = geometry_json(l.spec.geom);
        lj["folded"] = l.folded;
        if (l.do_skipped) lj["doconv_skipped"] = true;
        break;
      case LayerKind::Dense:
        lj["units"] = l.spec.units;
        break;
      default:
        break;
    }
    nlohmann::json tensors = nlohmann::json::array();
    auto add = [&tensors](const char* name, const Tensor& t) {
      tensors.push_back({{"name", name}, {"shape", t.shape().dims()}});
    };
    if (layer_has_params(l.spec.kind)) {
      if (l.has_d) add("D'", l.d_res);
      add(l.folded ? "W'" : "W", l.w);
      if (l.has_bias) add("bias", l.bias);
    }
    if (!tensors.empty()) lj["tensors"] = tensors;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  std::ofstream out(model_sidecar_path(path));
  if (!out) throw IoError("cannot write sidecar next to " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open images file " + images_path);
  if (read_u32_be(img, "images magic") != kIdxImagesMagic) {
    throw IoError("bad magic in images file " + images_path);
  }
  const std::uint32_t count = read_u32_be(img, "image count");
  const std::uint32_t rows = read_u32_be(img, "rows");
  const std::uint32_t cols = read_u32_be(img, "cols");
  if (rows == 0 || cols == 0) throw IoError("empty image dimensions in " + images_path);

  std::vector<unsigned char> pixels(static_cast<std::size_t>(count) * rows * cols);
  if (!img.read(reinterpret_cast<char*>(pixels.data()),
                static_cast<std::streamsize>(pixels.size()))) {
    throw IoError("truncated pixel data in " + images_path);
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open labels file " + labels_path);
  if (read_u32_be(lab, "labels magic") != kIdxLabelsMagic) {
    throw IoError("bad magic in labels file " + labels_path);
  }
  const std::uint32_t lcount = read_u32_be(lab, "label count");
  if (lcount != count) {
    throw IoError("count mismatch: " + std::to_string(count) + " images vs " +
                  std::to_string(lcount) + " labels");
  }
  std::vector<unsigned char> raw_labels(lcount);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()),
                static_cast<std::streamsize>(raw_labels.size()))) {
    throw IoError("truncated label data in " + labels_path);
  }

  if (count == 0) throw IoError("empty dataset in " + images_path);
  DatasetHandle data;
  data.images = Tensor({count, rows, cols, 1});
  double* v = data.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) v[i] = static_cast<double>(pixels[i]) / 255.0;
  data.labels.assign(raw_labels.begin(), raw_labels.end());
  return data;
}

void save_idx(const DatasetHandle& data, const std::string& images_path,
              const std::string& labels_path) {
  const std::size_t count = data.count(), h = data.height(), w = data.width();
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot write images file " + images_path);
  write_u32_be(img, kIdxImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(count));
  write_u32_be(img, static_cast<std::uint32_t>(h));
  write_u32_be(img, static_cast<std::uint32_t>(w));
  const double* v = data.images.data();
  std::vector<unsigned char> bytes(count * h * w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double p = std::min(1.0, std::max(0.0, v[i]));
    bytes[i] = static_cast<unsigned char>(std::lround(p * 255.0));
  }
  img.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot write labels file " + labels_path);
  write_u32_be(lab, kIdxLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(count));
  std::vector<unsigned char> lbytes(count);
  for (std::size_t i = 0; i < count; ++i) lbytes[i] = static_cast<unsigned char>(data.labels[i]);
  lab.write(reinterpret_cast<const char*>(lbytes.data()),
            static_cast<std::streamsize>(lbytes.size()));
}

std::string model_sidecar_path(const std::string& model_path) { return model_path + ".json"; }

void save_model(const Network& net, const std::string& path, bool folded, Dtype dtype) {
  const Network* src = &net;
  Network folded_net;
  if (folded && !net.folded()) {
    folded_net = net.fold();
    src = &folded_net;
  } else if (!folded && net.folded()) {
    throw UnsupportedError("cannot save a folded network as unfolded; D' is gone");
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path);
  out.write(kModelMagic, 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, folded ? 1 : 0);
  put_u32(out, static_cast<std::uint32_t>(src->layers().size()));
  put_u32(out, static_cast<std::uint32_t>(src->spec().in_h));
  put_u32(out, static_cast<std::uint32_t>(src->spec().in_w));
  put_u32(out, static_cast<std::uint32_t>(src->spec().in_c));

  for (const Layer& l : src->layers()) {
    put_u32(out, kind_tag(l.spec.kind));
    const ConvGeometry& g = l.spec.geom;
    for (std::size_t f : {g.m, g.n, g.c_in, g.c_out, g.stride, g.pad, g.groups, g.d_mul}) {
      put_u32(out, static_cast<std::uint32_t>(f));
    }
    put_u32(out, static_cast<std::uint32_t>(l.spec.units));
    std::uint32_t flags = 0;
    if (l.has_bias) flags |= 1u;
    if (l.do_skipped) flags |= 2u;
    if (l.spec.d_init == DInit::Random) flags |= 4u;
    if (l.folded) flags |= 8u;
    put_u32(out, flags);

    std::uint32_t n_tensors = 0;
    if (layer_has_params(l.spec.kind)) {
      n_tensors = 1 + (l.has_d ? 1 : 0) + (l.has_bias ? 1 : 0);
    }
    put_u32(out, n_tensors);
    if (layer_has_params(l.spec.kind)) {
      if (l.has_d) put_tensor(out, l.d_res, dtype);  // D' first, then W
      put_tensor(out, l.w, dtype);
      if (l.has_bias) put_tensor(out, l.bias, dtype);
    }
  }
  if (!out) throw IoError("write failure on " + path);
  out.close();

  write_sidecar(*src, path, folded, dtype);
}

Network load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw IoError("bad magic in model file " + path);
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != kModelVersion) {
    throw IoError("unsupported model version " + std::to_string(version) + " (expected " +
                  std::to_string(kModelVersion) + ")");
  }
  const std::uint32_t dtype_tag = get_u32(in, "dtype");
  if (dtype_tag > 1) throw IoError("unknown dtype tag " + std::to_string(dtype_tag));
  const Dtype dtype = static_cast<Dtype>(dtype_tag);
  const bool folded = get_u32(in, "folded flag") != 0;
  const std::uint32_t n_layers = get_u32(in, "layer count");

  NetworkSpec spec;
  spec.in_h = get_u32(in, "input height");
  spec.in_w = get_u32(in, "input width");
  spec.in_c = get_u32(in, "input channels");

  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    Layer l;
    l.spec.kind = kind_from_tag(get_u32(in, "layer kind"));
    ConvGeometry g;
    g.m = get_u32(in, "m");
    g.n = get_u32(in, "n");
    g.c_in = get_u32(in, "c_in");
    g.c_out = get_u32(in, "c_out");
    g.stride = get_u32(in, "stride");
    g.pad = get_u32(in, "pad");
    g.groups = get_u32(in, "groups");
    g.d_mul = get_u32(in, "d_mul");
    l.spec.geom = g;
    l.spec.units = get_u32(in, "units");
    const std::uint32_t flags = get_u32(in, "flags");
    l.has_bias = (flags & 1u) != 0;
    l.spec.bias = l.has_bias;
    l.do_skipped = (flags & 2u) != 0;
    l.spec.d_init = (flags & 4u) ? DInit::Random : DInit::Identity;
    l.folded = (flags & 8u) != 0;
    const std::uint32_t n_tensors = get_u32(in, "tensor count");

    if (layer_has_params(l.spec.kind)) {
      std::uint32_t expect = 1 + (l.has_bias ? 1 : 0);
      const bool wants_d = (l.spec.kind == LayerKind::DoConv ||
                            l.spec.kind == LayerKind::DoDConv) &&
                           !l.folded && !l.do_skipped;
      if (wants_d) ++expect;
      if (n_tensors != expect) {
        throw IoError("layer " + std::to_string(i) + " declares " + std::to_string(n_tensors) +
                      " tensors, expected " + std::to_string(expect));
      }
      if (wants_d) {
        l.d_res = get_tensor(in, dtype, "D'");
        l.has_d = true;
      }
      l.w = get_tensor(in, dtype, "W");
      if (l.has_bias) l.bias = get_tensor(in, dtype, "bias");
    } else if (n_tensors != 0) {
      throw IoError("parameter-free layer declares tensors");
    }
    spec.layers.push_back(l.spec);
    layers.push_back(std::move(l));
  }
  in.peek();
  if (!in.eof()) throw IoError("trailing bytes in model file " + path);

  // Skipped DO layers were stored with their effective plain-conv spec; the
  // spec kind is already Conv in that case (rewritten at build time).
  return Network::from_parts(std::move(spec), std::move(layers), folded);
}

}  // namespace doconv
