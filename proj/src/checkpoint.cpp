#include "ilr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace ilr {

namespace {

constexpr char kMagic[8] = {'I', 'L', 'R', 'N', '0', '0', '0', '1'};

template <typename U>
void put(std::string &buf, U v)
{
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

class Reader
{
public:
  explicit Reader(std::string data)
    : data_{std::move(data)}
  {}

  template <typename U>
  U get()
  {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n)
  {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

private:
  void need(std::size_t n) const
  {
    if (data_.size() - pos_ < n) {
      throw CheckpointError("checkpoint: truncated at byte " + std::to_string(pos_));
    }
  }

  std::string data_;
  std::size_t pos_ = 0;
};

void push_list(std::vector<double> &v, std::vector<std::size_t> const &xs)
{
  v.push_back(static_cast<double>(xs.size()));
  for (auto x : xs) {
    v.push_back(static_cast<double>(x));
  }
}

} // namespace

void write_checkpoint(std::filesystem::path const &path, std::vector<NamedTensor> const &tensors)
{
  std::string buf(kMagic, 8);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (auto const &t : tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) {
      put<std::uint64_t>(buf, e);
    }
  }
  for (auto const &t : tensors) {
    for (double v : t.value.values()) {
      put<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw CheckpointError("checkpoint: cannot write " + path.string());
  }
}

std::vector<NamedTensor> read_checkpoint(std::filesystem::path const &path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw CheckpointError("checkpoint: cannot open " + path.string());
  }
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (r.bytes(8) != std::string(kMagic, 8)) {
    throw CheckpointError("checkpoint: " + path.string() + " is not an ILRN0001 file");
  }
  auto const count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out(count);
  for (auto &t : out) {
    t.name = r.bytes(r.get<std::uint32_t>());
    auto const rank = r.get<std::uint32_t>();
    if (rank > kMaxRank) {
      throw CheckpointError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(rank));
    }
    Shape s(rank);
    for (auto &e : s) {
      e = r.get<std::uint64_t>();
    }
    t.value = Tensor(s);
  }
  for (auto &t : out) {
    for (double &v : t.value.span()) {
      v = std::bit_cast<double>(r.get<std::uint64_t>());
    }
  }
  if (!r.done()) {
    throw CheckpointError("checkpoint: trailing bytes after payload");
  }
  return out;
}

std::vector<NamedTensor> network_tensors(IlrNet &net)
{
  auto const &c = net.config();
  std::vector<double> meta{1.0, static_cast<double>(c.iterations), c.coarse.rmm_enabled ? 1.0 : 0.0,
                           static_cast<double>(c.coarse.rmm_position), c.coarse.d_init,
                           static_cast<double>(c.lambda.crop)};
  push_list(meta, c.coarse.encoder);
  push_list(meta, c.coarse.decoder);
  push_list(meta, c.refine.encoder);
  push_list(meta, c.refine.decoder);
  push_list(meta, c.lambda.channels);
  meta.push_back(c.svt.kernel == KernelMode::exact ? 1.0 : 0.0);
  meta.push_back(c.svt.form == BackwardForm::paper_reduced ? 1.0 : 0.0);
  meta.push_back(c.svt.threshold_tracks_sigma1 ? 1.0 : 0.0);

  std::vector<NamedTensor> out;
  std::size_t const n = meta.size();
  out.push_back({"meta.config", Tensor({n}, std::move(meta))});
  for (auto const &p : net.parameters()) {
    out.push_back({p.name, *p.value});
  }
  return out;
}

IlrNet network_from_tensors(std::vector<NamedTensor> const &tensors)
{
  if (tensors.empty() || tensors.front().name != "meta.config") {
    throw CheckpointError("checkpoint: missing meta.config");
  }
  auto const &m = tensors.front().value;
  std::size_t pos = 0;
  auto next = [&] {
    if (pos >= m.size()) {
      throw CheckpointError("checkpoint: meta.config too short");
    }
    return m[pos++];
  };
  auto count = [&] { return static_cast<std::size_t>(next()); };
  auto list = [&] {
    std::vector<std::size_t> v(count());
    for (auto &x : v) {
      x = count();
    }
    return v;
  };
  if (next() != 1.0) {
    throw CheckpointError("checkpoint: unsupported meta.config version");
  }
  NetworkConfig c;
  c.iterations = count();
  c.coarse.rmm_enabled = next() != 0;
  c.coarse.rmm_position = count();
  c.coarse.d_init = next();
  c.lambda.crop = count();
  c.coarse.encoder = list();
  c.coarse.decoder = list();
  c.refine.encoder = list();
  c.refine.decoder = list();
  c.lambda.channels = list();
  c.svt.kernel = next() != 0 ? KernelMode::exact : KernelMode::taylor;
  c.svt.form = next() != 0 ? BackwardForm::paper_reduced : BackwardForm::complete;
  c.svt.threshold_tracks_sigma1 = next() != 0;

  IlrNet net;
  try {
    net = IlrNet(c);
  } catch (std::invalid_argument const &e) {
    throw CheckpointError(std::string("checkpoint: bad architecture: ") + e.what());
  }
  std::map<std::string, Tensor const *> by_name;
  for (std::size_t i = 1; i < tensors.size(); ++i) {
    by_name[tensors[i].name] = &tensors[i].value;
  }
  auto params = net.parameters();
  if (by_name.size() != params.size()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) + " parameter tensors, found " +
                          std::to_string(by_name.size()));
  }
  for (auto &p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint: missing tensor '" + p.name + "'");
    }
    if (it->second->shape() != p.value->shape()) {
      throw CheckpointError("checkpoint: tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                            ", expected " + shape_str(p.value->shape()));
    }
    *p.value = *it->second;
  }
  return net;
}

void save_network(std::filesystem::path const &path, IlrNet &net)
{
  write_checkpoint(path, network_tensors(net));
}

IlrNet load_network(std::filesystem::path const &path)
{
  return network_from_tensors(read_checkpoint(path));
}

} // namespace ilr
