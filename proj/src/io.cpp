#include "fte/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <limits>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fte {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kNetworkVersion = 1;
constexpr std::uint32_t kEnsembleVersion = 1;

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::data, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Writer {
 public:
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  template <typename Derived>
  void tensor(const Eigen::DenseBase<Derived>& t) {
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) f64(t(i, j));
  }
  const std::string& bytes() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::data, "cannot write " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) fail(ErrorCode::data, "short write to " + path);
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string name) : buf_(std::move(bytes)), name_(std::move(name)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::data, name_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) error(std::string("truncated ") + what);
  }

  void magic(const char (&expected)[5]) {
    need(4, "header");
    if (std::memcmp(buf_.data() + pos_, expected, 4) != 0) error(std::string("bad magic, expected \"") + expected + "\"");
    pos_ += 4;
  }
  std::uint32_t u32(const char* what = "field") {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what = "field") {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what = "payload") { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what = "payload") { return std::bit_cast<double>(u64(what)); }

  template <typename Derived>
  void tensor(Eigen::DenseBase<Derived>& t) {
    need(static_cast<std::size_t>(t.size()) * 8, "tensor payload");
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        const double v = f64();
        if (!std::isfinite(v)) error("non-finite parameter value");
        t(i, j) = v;
      }
  }

 private:
  std::string buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

void write_network(Writer& w, const NetParams& params, const BackboneConfig& cfg) {
  w.raw("FTEM", 4);
  w.u32(kNetworkVersion);
  w.u32(cfg.mode == InputMode::image ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(cfg.input_dim));
  w.u32(static_cast<std::uint32_t>(cfg.channels));
  w.u32(static_cast<std::uint32_t>(cfg.height));
  w.u32(static_cast<std::uint32_t>(cfg.width));
  w.u32(static_cast<std::uint32_t>(cfg.conv_channels.size()));
  for (int c : cfg.conv_channels) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(cfg.hidden.size()));
  for (int h : cfg.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(cfg.feature_dim));
  w.u32(static_cast<std::uint32_t>(params.head.weight.cols()));
  w.u32(static_cast<std::uint32_t>(params.head.weight.rows()));
  zip_params([&](bool, const auto& t) { w.tensor(t); }, params);
}

NetParams read_network(Reader& r, BackboneConfig& cfg) {
  r.magic("FTEM");
  const auto version = r.u32("version");
  if (version != kNetworkVersion) r.error("unsupported network checkpoint version " + std::to_string(version));
  cfg = BackboneConfig{};
  const auto mode = r.u32("config");
  if (mode > 1) r.error("bad input mode");
  cfg.mode = mode == 1 ? InputMode::image : InputMode::vector;
  cfg.input_dim = static_cast<int>(r.u32("config"));
  cfg.channels = static_cast<int>(r.u32("config"));
  cfg.height = static_cast<int>(r.u32("config"));
  cfg.width = static_cast<int>(r.u32("config"));
  const auto nconv = r.u32("config");
  if (nconv > 64) r.error("implausible conv layer count");
  for (std::uint32_t i = 0; i < nconv; ++i) cfg.conv_channels.push_back(static_cast<int>(r.u32("config")));
  const auto nhidden = r.u32("config");
  if (nhidden > 64) r.error("implausible hidden layer count");
  for (std::uint32_t i = 0; i < nhidden; ++i) cfg.hidden.push_back(static_cast<int>(r.u32("config")));
  cfg.feature_dim = static_cast<int>(r.u32("config"));
  const int projected = static_cast<int>(r.u32("config"));
  const int classes = static_cast<int>(r.u32("config"));
  try {
    cfg.validate();
  } catch (const Error& e) {
    r.error(std::string("invalid config echo: ") + e.what());
  }
  if (projected < 1 || classes < 1) r.error("invalid classifier shape");
  RngStream dummy(0, 0);
  NetParams params = init_params(cfg, projected, classes, dummy);
  zip_params([&](bool, auto& t) { r.tensor(t); }, params);
  return params;
}

Dataset load_fte1(const std::string& path, DatasetRole role) {
  Reader r(read_bytes(path), path);
  r.magic("FTE1");
  const auto version = r.u32("version");
  if (version != kDatasetVersion) r.error("unsupported dataset version " + std::to_string(version));
  const auto count = r.u32("count");
  const auto c = r.u32("shape");
  const auto h = r.u32("shape");
  const auto w = r.u32("shape");
  if (count == 0) fail(ErrorCode::data, path + ": dataset is empty (count = 0)");
  if ((h == 0) != (w == 0)) r.error("inconsistent image shape");
  if (c == 0) r.error("zero channel count");
  Dataset d;
  d.role = role;
  d.channels = static_cast<int>(c);
  d.height = static_cast<int>(h);
  d.width = static_cast<int>(w);
  const auto dim = static_cast<std::size_t>(d.item_dim());
  r.need(static_cast<std::size_t>(count) * dim * 4, "payload");
  d.inputs.resize(count, static_cast<Eigen::Index>(dim));
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) r.error("non-finite input value");
      d.inputs(i, static_cast<Eigen::Index>(j)) = v;
    }
  const std::size_t label_bytes = static_cast<std::size_t>(count) * 4;
  if (r.remaining() != label_bytes)
    r.error("label/count mismatch: " + std::to_string(r.remaining()) + " label bytes for " + std::to_string(count) + " items");
  d.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto y = r.u32("labels");
    if (y > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) r.error("label out of range");
    d.labels[i] = static_cast<int>(y);
  }
  return d;
}

Dataset load_manifest(const std::string& path, DatasetRole role) {
  std::istringstream is(read_text(path));
  const auto base = std::filesystem::path(path).parent_path();
  Dataset d;
  d.role = role;
  std::vector<Eigen::RowVectorXd> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "relative_path,label") continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) fail(ErrorCode::data, path + " line " + std::to_string(lineno) + ": expected relative_path,label");
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1 || label < 0) throw std::invalid_argument("label");
    } catch (const std::logic_error&) {
      fail(ErrorCode::data, path + " line " + std::to_string(lineno) + ": bad label");
    }
    const Image img = read_ppm((base / line.substr(0, comma)).string());
    if (rows.empty()) {
      d.channels = img.channels;
      d.height = img.height;
      d.width = img.width;
    } else if (img.height != d.height || img.width != d.width) {
      fail(ErrorCode::data, path + " line " + std::to_string(lineno) + ": image size differs from the first image");
    }
    rows.push_back(img.to_row());
    d.labels.push_back(label);
  }
  if (rows.empty()) fail(ErrorCode::data, path + ": manifest lists no images");
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) d.inputs.row(static_cast<Eigen::Index>(i)) = rows[i];
  return d;
}

}  // namespace

std::string read_text(const std::string& path) { return read_bytes(path); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::data, "cannot write " + path);
  out << text;
}

Dataset load_dataset(const std::string& path, const std::string& format, DatasetRole role) {
  std::string fmt = format;
  if (fmt == "auto") fmt = std::filesystem::path(path).extension() == ".csv" ? "ppm" : "fte1";
  Dataset d;
  if (fmt == "fte1")
    d = load_fte1(path, role);
  else if (fmt == "ppm")
    d = load_manifest(path, role);
  else
    fail(ErrorCode::config, "unknown dataset format '" + format + "'");
  d.validate();
  return d;
}

void save_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  Writer w;
  w.raw("FTE1", 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.channels));
  w.u32(static_cast<std::uint32_t>(data.height));
  w.u32(static_cast<std::uint32_t>(data.width));
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i)
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) w.f32(static_cast<float>(data.inputs(i, j)));
  for (int y : data.labels) w.u32(static_cast<std::uint32_t>(y));
  w.save(path);
}

Image read_ppm(const std::string& path) {
  const std::string bytes = read_bytes(path);
  std::size_t pos = 0;
  auto error = [&](const std::string& what) {
    fail(ErrorCode::data, path + ": " + what + " at byte offset " + std::to_string(pos));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') error("not a binary P6 PPM image");
  pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) error("malformed PPM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 20) error("PPM header value too large");
    }
    return static_cast<int>(v);
  };
  const int w = number();
  const int h = number();
  const int maxval = number();
  if (w < 1 || h < 1) error("PPM image has zero size");
  if (maxval < 1 || maxval > 255) error("only 8-bit PPM images are supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) error("malformed PPM header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) error("truncated PPM pixel data");
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<unsigned char>(bytes[pos + (static_cast<std::size_t>(y) * w + x) * 3 + c]) / static_cast<double>(maxval);
  return img;
}

void write_ppm(const Image& img, const std::string& path) {
  require(img.channels == 3, "write_ppm: image must have 3 channels");
  Writer w;
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  w.raw(header.data(), header.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        const char b = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
        w.raw(&b, 1);
      }
  w.save(path);
}

void save_network(const NetParams& params, const BackboneConfig& cfg, const std::string& path) {
  check_shapes(params, cfg);
  Writer w;
  write_network(w, params, cfg);
  w.save(path);
}

NetParams load_network(const std::string& path, BackboneConfig& cfg) {
  Reader r(read_bytes(path), path);
  NetParams p = read_network(r, cfg);
  if (r.remaining() != 0) r.error("trailing bytes after network checkpoint");
  return p;
}

void save_ensemble(const EnsembleModel& model, const std::string& path) {
  model.validate();
  Writer w;
  w.raw("FTEE", 4);
  w.u32(kEnsembleVersion);
  w.u32(static_cast<std::uint32_t>(model.branches.size()));
  w.u32(static_cast<std::uint32_t>(model.num_classes));
  for (const Branch& b : model.branches) {
    w.u32(static_cast<std::uint32_t>(b.index));
    w.u64(b.projection.seed);
    w.u64(b.projection.stream);
    w.u32(static_cast<std::uint32_t>(b.projection.matrix.rows()));
    w.u32(static_cast<std::uint32_t>(b.projection.matrix.cols()));
    w.tensor(b.projection.matrix);
    write_network(w, b.params, model.backbone);
  }
  w.save(path);
}

EnsembleModel load_ensemble(const std::string& path) {
  Reader r(read_bytes(path), path);
  r.magic("FTEE");
  const auto version = r.u32("version");
  if (version != kEnsembleVersion) r.error("unsupported ensemble checkpoint version " + std::to_string(version));
  const auto count = r.u32("branch count");
  if (count == 0 || count > 4096) r.error("implausible branch count");
  EnsembleModel model;
  model.num_classes = static_cast<int>(r.u32("num_classes"));
  for (std::uint32_t i = 0; i < count; ++i) {
    Branch b;
    b.index = static_cast<int>(r.u32("branch index"));
    b.projection.seed = r.u64("projection seed");
    b.projection.stream = r.u64("projection stream");
    const auto rows = r.u32("projection shape");
    const auto cols = r.u32("projection shape");
    if (rows == 0 || cols == 0 || rows > 1 << 16 || cols > 1 << 16) r.error("implausible projection shape");
    b.projection.matrix.resize(rows, cols);
    r.tensor(b.projection.matrix);
    BackboneConfig cfg;
    b.params = read_network(r, cfg);
    if (i == 0)
      model.backbone = cfg;
    else if (!(cfg == model.backbone))
      r.error("branch backbone configs differ");
    model.branches.push_back(std::move(b));
  }
  if (r.remaining() != 0) r.error("trailing bytes after ensemble checkpoint");
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorCode::data, path + ": " + e.what());
  }
  return model;
}

}  // namespace fte
