#include "fmamba/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "fmamba/tensor_io.hpp"

namespace fmamba {
namespace {

constexpr char kMagic[8] = {'F', 'M', 'C', 'K', '1', 0, 0, 0};

std::vector<Real> read_vector(std::istream& is, std::size_t expected, const std::string& what) {
  const Tensor t = read_fmt1(is);
  if (t.numel() != expected) throw IoError("checkpoint: " + what + " has the wrong size");
  return t.values();
}

}  // namespace

void save_checkpoint(const std::string& path, TrainState& state) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(kMagic, sizeof kMagic);
    write_u32(os, kCheckpointVersion);
    write_string(os, to_text(state.cfg));
    NamedParams params = state.model.named_parameters();
    write_u64(os, params.size());
    for (const auto& [name, t] : params) {
      write_string(os, name);
      write_fmt1(os, *t);
    }
    write_u64(os, static_cast<std::uint64_t>(state.adam.step));
    const bool has_moments = state.adam.m.size() == params.size();
    write_u32(os, has_moments ? 1 : 0);
    if (has_moments) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto n = static_cast<std::int64_t>(state.adam.m[i].size());
        write_fmt1(os, Tensor({n}, state.adam.m[i]));
        write_fmt1(os, Tensor({n}, state.adam.v[i]));
      }
    }
    write_string(os, state.rng.serialize());
    if (!os) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic)) {
    throw IoError(path + " is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  TrainState st;
  st.cfg = parse_train_config(read_string(is));
  st.model = build_model(st.cfg.model);
  NamedParams params = st.model.named_parameters();
  const std::uint64_t n = read_u64(is);
  if (n != params.size()) throw IoError(path + ": parameter count does not match its config");
  for (auto& [name, t] : params) {
    const std::string stored = read_string(is);
    if (stored != name) throw IoError(path + ": expected parameter " + name + ", found " + stored);
    const Tensor v = read_fmt1(is);
    if (v.shape() != t->shape()) {
      throw IoError(path + ": parameter " + name + " has shape " + shape_str(v.shape()) + ", model expects " +
                    shape_str(t->shape()));
    }
    std::copy(v.data().begin(), v.data().end(), t->mutable_data().begin());
  }
  st.adam.step = static_cast<std::int64_t>(read_u64(is));
  if (read_u32(is) != 0) {
    st.adam.m.resize(params.size());
    st.adam.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.adam.m[i] = read_vector(is, params[i].second->numel(), params[i].first + " first moment");
      st.adam.v[i] = read_vector(is, params[i].second->numel(), params[i].first + " second moment");
    }
  }
  st.rng.deserialize(read_string(is));
  return st;
}

}  // namespace fmamba
