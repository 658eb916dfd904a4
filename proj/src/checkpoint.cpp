#include <cstring>
#include <fstream>

#include "flame/engine.hpp"
#include "flame/error.hpp"

namespace flame {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::ofstream out;
  template <typename T>
  void pod(const T& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
  void vec(const ParamVector& v) {
    pod(static_cast<std::uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
};

struct Reader {
  std::ifstream in;
  template <typename T>
  T pod() {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(static_cast<bool>(in), Errc::truncated, "checkpoint truncated");
    return v;
  }
  ParamVector vec() {
    const auto n = pod<std::uint64_t>();
    require(n < (1ULL << 32), Errc::invalid_argument, "checkpoint vector length implausible");
    ParamVector v(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    require(static_cast<bool>(in), Errc::truncated, "checkpoint truncated");
    return v;
  }
};

}  // namespace

void save_checkpoint(const RunState& state, const HyperParams& hp, const std::filesystem::path& path) {
  Writer w{std::ofstream(path, std::ios::binary)};
  require(static_cast<bool>(w.out), Errc::io, "cannot open checkpoint " + path.string());
  w.out.write(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod(static_cast<std::uint32_t>(hp.mode));
  w.pod(state.server.seed);
  w.pod(static_cast<std::int64_t>(state.server.round));
  w.vec(state.server.w);
  w.pod(static_cast<std::uint64_t>(state.clients.size()));
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    const auto& c = state.clients[i];
    w.vec(c.theta);
    w.vec(c.w_local);
    w.vec(c.pi);
    w.vec(c.u);
    w.pod(c.eps);
    w.pod(c.alpha);
    w.pod(c.v);
    w.pod(c.residual_sq);
    w.pod(static_cast<std::int32_t>(c.iters_used));
    w.pod(static_cast<std::uint8_t>(c.met_tolerance));
    w.vec(state.messages[i]);
  }
  w.pod(static_cast<std::uint64_t>(state.projection.rows()));
  w.pod(static_cast<std::uint64_t>(state.projection.cols()));
  w.out.write(reinterpret_cast<const char*>(state.projection.data()),
              static_cast<std::streamsize>(state.projection.size() * sizeof(double)));
  require(static_cast<bool>(w.out), Errc::io, "checkpoint write failed");
}

RunState load_checkpoint(const HyperParams& hp, const std::filesystem::path& path) {
  Reader r{std::ifstream(path, std::ios::binary)};
  require(static_cast<bool>(r.in), Errc::io, "cannot open checkpoint " + path.string());
  char magic[8];
  r.in.read(magic, sizeof(magic));
  require(r.in && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, Errc::bad_magic, "not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  require(version == kVersion, Errc::invalid_argument, "unsupported checkpoint version " + std::to_string(version));
  require(r.pod<std::uint32_t>() == static_cast<std::uint32_t>(hp.mode), Errc::invalid_argument,
          "checkpoint was written by a different mode");

  RunState st;
  st.server.seed = r.pod<std::uint64_t>();
  st.server.round = static_cast<int>(r.pod<std::int64_t>());
  st.server.w = r.vec();
  const auto m = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < m; ++i) {
    ClientState c;
    c.theta = r.vec();
    c.w_local = r.vec();
    c.pi = r.vec();
    c.u = r.vec();
    c.eps = r.pod<double>();
    c.alpha = r.pod<double>();
    c.v = r.pod<double>();
    c.residual_sq = r.pod<double>();
    c.iters_used = r.pod<std::int32_t>();
    c.met_tolerance = r.pod<std::uint8_t>() != 0;
    st.clients.push_back(std::move(c));
    st.messages.push_back(r.vec());
  }
  const auto rows = r.pod<std::uint64_t>();
  const auto cols = r.pod<std::uint64_t>();
  st.projection.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.in.read(reinterpret_cast<char*>(st.projection.data()),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
  require(static_cast<bool>(r.in), Errc::truncated, "checkpoint truncated");
  return st;
}

}  // namespace flame
