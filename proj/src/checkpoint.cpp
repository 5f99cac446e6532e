#include "loopformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace loopformer {

namespace {

constexpr char kMagic[8] = {'L', 'O', 'O', 'P', 'F', 'M', 'R', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double read_f64(std::istream& in) {
  uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  for (double x : v) write_f64(out, x);
}

std::vector<double> read_doubles(std::istream& in, size_t n) {
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = read_f64(in);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  write_u32(out, kVersion);
  write_string(out, ckpt.config_text);
  write_u64(out, ckpt.step);
  write_u32(out, ckpt.has_optimizer ? 1u : 0u);
  write_u64(out, ckpt.params.size());
  for (const auto& [name, t] : ckpt.params) {
    write_string(out, name);
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) write_u32(out, static_cast<uint32_t>(d));
    write_doubles(out, t.data());
  }
  if (ckpt.has_optimizer) {
    write_u64(out, ckpt.adam_t);
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
      write_doubles(out, ckpt.adam_m[i]);
      write_doubles(out, ckpt.adam_v[i]);
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  const uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: " + path + " has unsupported format version " +
                             std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_text = read_string(in);
  ckpt.step = read_u64(in);
  ckpt.has_optimizer = read_u32(in) != 0;
  const uint64_t n_params = read_u64(in);
  for (uint64_t p = 0; p < n_params; ++p) {
    std::string name = read_string(in);
    const uint32_t rank = read_u32(in);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(in));
    auto data = read_doubles(in, static_cast<size_t>(shape_numel(shape)));
    ckpt.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (ckpt.has_optimizer) {
    ckpt.adam_t = read_u64(in);
    for (uint64_t p = 0; p < n_params; ++p) {
      const size_t n = static_cast<size_t>(ckpt.params[p].second.numel());
      ckpt.adam_m.push_back(read_doubles(in, n));
      ckpt.adam_v.push_back(read_doubles(in, n));
    }
  }
  return ckpt;
}

Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::invalid_argument("average_checkpoints: no paths given");
  std::vector<Checkpoint> all;
  all.reserve(paths.size());
  for (const auto& p : paths) all.push_back(load_checkpoint(p));

  std::vector<std::string> offenders;
  const auto& ref = all.front();
  for (size_t c = 1; c < all.size(); ++c) {
    if (all[c].params.size() != ref.params.size()) {
      offenders.push_back(paths[c] + ": has " + std::to_string(all[c].params.size()) +
                          " parameters, expected " + std::to_string(ref.params.size()));
      continue;
    }
    for (size_t p = 0; p < ref.params.size(); ++p) {
      if (all[c].params[p].first != ref.params[p].first) {
        offenders.push_back(paths[c] + ": parameter " + std::to_string(p) + " is '" +
                            all[c].params[p].first + "', expected '" + ref.params[p].first + "'");
      } else if (all[c].params[p].second.shape() != ref.params[p].second.shape()) {
        offenders.push_back(paths[c] + ": " + ref.params[p].first + " has shape " +
                            shape_str(all[c].params[p].second.shape()) + ", expected " +
                            shape_str(ref.params[p].second.shape()));
      }
    }
  }
  if (!offenders.empty()) {
    std::string msg = "average_checkpoints: incompatible checkpoints:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw std::runtime_error(msg);
  }

  Checkpoint out;
  out.config_text = all.back().config_text;
  out.step = all.back().step;
  const double inv = 1.0 / static_cast<double>(all.size());
  // centered mean: ref + sum(x - ref)/k; identical inputs average to
  // themselves bit-exactly
  for (size_t p = 0; p < ref.params.size(); ++p) {
    const auto& base = ref.params[p].second.data();
    std::vector<double> delta(base.size(), 0.0);
    for (const auto& c : all) {
      const auto& d = c.params[p].second.data();
      for (size_t i = 0; i < delta.size(); ++i) delta[i] += d[i] - base[i];
    }
    std::vector<double> mean(base.size());
    for (size_t i = 0; i < mean.size(); ++i) mean[i] = base[i] + delta[i] * inv;
    out.params.emplace_back(ref.params[p].first, Tensor(ref.params[p].second.shape(), std::move(mean)));
  }
  return out;
}

void load_parameters(std::vector<std::pair<std::string, Tensor>> target, const Checkpoint& ckpt) {
  std::vector<std::string> offenders;
  if (target.size() != ckpt.params.size()) {
    offenders.push_back("model has " + std::to_string(target.size()) + " parameters, checkpoint has " +
                        std::to_string(ckpt.params.size()));
  }
  const size_t n = std::min(target.size(), ckpt.params.size());
  for (size_t p = 0; p < n; ++p) {
    if (target[p].first != ckpt.params[p].first) {
      offenders.push_back("parameter " + std::to_string(p) + ": model '" + target[p].first +
                          "' vs checkpoint '" + ckpt.params[p].first + "'");
    } else if (target[p].second.shape() != ckpt.params[p].second.shape()) {
      offenders.push_back(target[p].first + ": model shape " + shape_str(target[p].second.shape()) +
                          " vs checkpoint shape " + shape_str(ckpt.params[p].second.shape()));
    }
  }
  if (!offenders.empty()) {
    std::string msg = "incompatible checkpoint:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw std::runtime_error(msg);
  }
  for (size_t p = 0; p < n; ++p) target[p].second.data() = ckpt.params[p].second.data();
}

}  // namespace loopformer
