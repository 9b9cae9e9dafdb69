#include "starbri/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <type_traits>

#include <json.hpp>

namespace starbri {

using nlohmann::json;

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
  }
  template <typename T>
  void values(const Tensor<T>& t) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if constexpr (std::endian::native == std::endian::little) {
      bytes(t.data(), t.numel() * sizeof(T));
    } else {
      for (T v : t.values()) le(std::bit_cast<Bits>(v));
    }
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(std::vector<unsigned char> buf, std::string where)
      : buf_(std::move(buf)), where_(std::move(where)) {}

  const unsigned char* take(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::Truncated,
                        std::string("checkpoint: truncated while reading ") + what +
                            " in " + where_);
    }
    const unsigned char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U le(const char* what) {
    const unsigned char* p = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }
  const std::string& where() const { return where_; }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::string where_;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

json read_header(Reader& r) {
  const unsigned char* magic = r.take(4, "magic");
  if (std::memcmp(magic, "SBCK", 4) != 0) {
    throw FormatError(FormatError::Kind::BadMagic, "checkpoint: bad magic in " + r.where());
  }
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "checkpoint: version " + std::to_string(version) +
                          " not supported (expected " +
                          std::to_string(kCheckpointVersion) + ") in " + r.where());
  }
  const auto len = r.le<std::uint32_t>("config length");
  const unsigned char* blob = r.take(len, "config blob");
  try {
    return json::parse(blob, blob + len);
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: config blob in " + r.where() + ": " + e.what());
  }
}

RunConfig config_of(const json& blob, const std::string& where) {
  try {
    return run_config_from_json(blob.at("run").dump());
  } catch (const std::exception& e) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: config in " + where + ": " + e.what());
  }
}

template <typename T>
void put_tensor(Writer& w, const std::string& name, const Tensor<T>& t) {
  if (name.size() > 0xffff || t.rank() > 0xff) {
    throw std::invalid_argument("checkpoint: tensor '" + name + "' not encodable");
  }
  w.le(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.le(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xffffffffu) throw std::invalid_argument("checkpoint: dimension exceeds 32 bits");
    w.le(static_cast<std::uint32_t>(d));
  }
  w.values(t);
}

template <typename T>
Tensor<T> get_tensor(Reader& r, std::string& name) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const auto nlen = r.le<std::uint16_t>("tensor name length");
  const unsigned char* n = r.take(nlen, "tensor name");
  name.assign(reinterpret_cast<const char*>(n), nlen);
  const auto rank = r.le<std::uint8_t>("tensor rank");
  if (rank == 0) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: tensor '" + name + "' has rank 0");
  }
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.le<std::uint32_t>("tensor dims");
    if (d == 0) {
      throw FormatError(FormatError::Kind::Malformed,
                        "checkpoint: tensor '" + name + "' has a zero dimension");
    }
    count *= d;
  }
  const unsigned char* raw = r.take(count * sizeof(T), "tensor values");
  std::vector<T> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    Bits b = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      b |= static_cast<Bits>(raw[i * sizeof(T) + k]) << (8 * k);
    }
    data[i] = std::bit_cast<T>(b);
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 8 ? Precision::Float64 : Precision::Float32;
}

}  // namespace

template <typename T>
void checkpoint_save(const std::filesystem::path& path, const RunConfig& cfg,
                     const TrainingState<T>& state) {
  if (cfg.precision != precision_of<T>()) {
    throw std::invalid_argument("checkpoint_save: run precision is " +
                                std::string(precision_name(cfg.precision)) +
                                " but parameters are " +
                                std::string(precision_name(precision_of<T>())));
  }
  std::vector<std::string> names;
  std::vector<const Tensor<T>*> tensors;
  state.params.visit([&](std::string_view n, const Tensor<T>& t) {
    names.push_back("param." + std::string(n));
    tensors.push_back(&t);
  });
  const std::size_t n_params = names.size();
  Tensor<T> steps;
  if (!state.optim.empty()) {
    if (state.optim.m.size() != n_params || state.optim.v.size() != n_params ||
        state.optim.steps.size() != n_params) {
      throw ShapeError("checkpoint_save: optimizer state does not mirror parameters");
    }
    for (std::size_t i = 0; i < n_params; ++i) {
      names.push_back("adam.m." + names[i].substr(6));
      tensors.push_back(&state.optim.m[i]);
    }
    for (std::size_t i = 0; i < n_params; ++i) {
      names.push_back("adam.v." + names[i].substr(6));
      tensors.push_back(&state.optim.v[i]);
    }
    std::vector<T> s(n_params);
    for (std::size_t i = 0; i < n_params; ++i) {
      s[i] = static_cast<T>(state.optim.steps[i]);
      if (static_cast<std::uint64_t>(s[i]) != state.optim.steps[i]) {
        throw std::invalid_argument("checkpoint_save: step count not representable");
      }
    }
    steps = Tensor<T>({n_params}, std::move(s));
    names.push_back("adam.steps");
    tensors.push_back(&steps);
  }

  json blob;
  blob["run"] = json::parse(to_json_text(cfg));
  blob["state"] = {{"iteration", state.iteration},
                   {"optimizer_step", state.optim.step},
                   {"has_optimizer", !state.optim.empty()}};
  const std::string text = blob.dump();

  Writer w;
  w.bytes("SBCK", 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.le(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) put_tensor(w, names[i], *tensors[i]);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(w.buffer().data()),
           static_cast<std::streamsize>(w.buffer().size()));
  if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

template <typename T>
Checkpoint<T> checkpoint_load(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  const json blob = read_header(r);
  Checkpoint<T> ck;
  ck.config = config_of(blob, r.where());
  if (ck.config.precision != precision_of<T>()) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: stored precision " +
                          std::string(precision_name(ck.config.precision)) +
                          " does not match the requested one");
  }
  bool has_opt = false;
  try {
    const json& st = blob.at("state");
    ck.state.iteration = st.at("iteration").get<std::uint64_t>();
    ck.state.optim.step = st.at("optimizer_step").get<std::uint64_t>();
    has_opt = st.at("has_optimizer").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: state record in " + r.where() + ": " + e.what());
  }

  const auto count = r.le<std::uint32_t>("tensor count");
  std::map<std::string, Tensor<T>> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Tensor<T> t = get_tensor<T>(r, name);
    if (!stored.emplace(name, std::move(t)).second) {
      throw FormatError(FormatError::Kind::Malformed,
                        "checkpoint: duplicate tensor '" + name + "'");
    }
  }
  if (!r.done()) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: trailing bytes in " + r.where());
  }

  auto claim = [&](const std::string& name, const Shape& shape) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      throw FormatError(FormatError::Kind::Malformed,
                        "checkpoint: missing tensor '" + name + "'");
    }
    if (it->second.shape() != shape) {
      throw FormatError(FormatError::Kind::Malformed,
                        "checkpoint: tensor '" + name + "' has shape " +
                            shape_str(it->second.shape()) + ", expected " +
                            shape_str(shape));
    }
    Tensor<T> t = std::move(it->second);
    stored.erase(it);
    return t;
  };

  try {
    ck.state.params = ModelParams<T>::zeros(ck.config.network);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Kind::Malformed,
                      std::string("checkpoint: network config: ") + e.what());
  }
  std::vector<std::string> names;
  ck.state.params.visit([&](std::string_view n, Tensor<T>& t) {
    names.emplace_back(n);
    t = claim("param." + std::string(n), t.shape());
  });
  if (has_opt) {
    auto& o = ck.state.optim;
    const auto params = tensor_list<T>(ck.state.params);
    for (std::size_t i = 0; i < names.size(); ++i) {
      o.m.push_back(claim("adam.m." + names[i], params[i]->shape()));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      o.v.push_back(claim("adam.v." + names[i], params[i]->shape()));
    }
    const Tensor<T> steps = claim("adam.steps", {names.size()});
    for (T s : steps.values()) {
      if (!(s >= T(0)) || s != std::floor(s)) {
        throw FormatError(FormatError::Kind::Malformed,
                          "checkpoint: invalid optimizer step count");
      }
      o.steps.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (!stored.empty()) {
    throw FormatError(FormatError::Kind::Malformed,
                      "checkpoint: unexpected tensor '" + stored.begin()->first + "'");
  }
  return ck;
}

RunConfig checkpoint_config(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  return config_of(read_header(r), r.where());
}

template void checkpoint_save<float>(const std::filesystem::path&, const RunConfig&,
                                     const TrainingState<float>&);
template void checkpoint_save<double>(const std::filesystem::path&, const RunConfig&,
                                      const TrainingState<double>&);
template Checkpoint<float> checkpoint_load<float>(const std::filesystem::path&);
template Checkpoint<double> checkpoint_load<double>(const std::filesystem::path&);

}  // namespace starbri
