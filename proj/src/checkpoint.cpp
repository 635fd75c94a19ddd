#include "ncflow/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace ncflow {

using nlohmann::json;

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::vector<double> pack_row_major(const Matrix& w, const Matrix& v) {
  std::vector<double> out;
  out.reserve(w.size() + v.size());
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) out.push_back(w(r, c));
  for (int r = 0; r < v.rows(); ++r)
    for (int c = 0; c < v.cols(); ++c) out.push_back(v(r, c));
  return out;
}

void write_file(const json& header, const std::vector<double>& payload,
                const std::string& path) {
  json h = header;
  h["payload_fnv1a"] = fnv1a64(reinterpret_cast<const unsigned char*>(payload.data()),
                               payload.size() * sizeof(double));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << h.dump() << '\n';
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!f) throw DataError("short write to " + path);
}

struct Loaded {
  json header;
  Matrix w, v;
};

Loaded read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError("missing checkpoint header in " + path);
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path + ": header parse error: " + e.what());
  }
  const int d = h.at("D").get<int>();
  const int width = h.at("h").get<int>();
  const int dy = h.at("d_y").get<int>();
  if (d <= 0 || width <= 0 || dy <= 0)
    throw DataError(path + ": non-positive dimensions in header");
  const std::size_t count = static_cast<std::size_t>(d) * width +
                            static_cast<std::size_t>(dy) * width;
  std::vector<double> payload(count);
  if (!f.read(reinterpret_cast<char*>(payload.data()),
              static_cast<std::streamsize>(count * sizeof(double))))
    throw DataError(path + ": truncated payload");
  const std::uint64_t sum = fnv1a64(
      reinterpret_cast<const unsigned char*>(payload.data()), count * sizeof(double));
  if (sum != h.at("payload_fnv1a").get<std::uint64_t>())
    throw DataError(path + ": payload checksum mismatch");

  Loaded out;
  out.header = h;
  out.w = Matrix(d, width);
  out.v = Matrix(dy, width);
  std::size_t p = 0;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < width; ++c) out.w(r, c) = payload[p++];
  for (int r = 0; r < dy; ++r)
    for (int c = 0; c < width; ++c) out.v(r, c) = payload[p++];
  return out;
}

}  // namespace

void save_params(const NetParams& params, const std::string& path) {
  json h;
  h["kind"] = "params";
  h["D"] = params.dim();
  h["h"] = params.width();
  h["d_y"] = params.out_dim();
  h["loss"] = loss_kind_name(params.loss_kind);
  write_file(h, pack_row_major(params.W, params.V), path);
}

NetParams load_params(const std::string& path) {
  Loaded l = read_file(path);
  if (l.header.value("kind", "") != "params")
    throw DataError(path + ": not a parameter checkpoint");
  NetParams p;
  p.W = std::move(l.w);
  p.V = std::move(l.v);
  p.loss_kind = loss_kind_from_name(l.header.at("loss").get<std::string>());
  return p;
}

void save_shape(const InitShape& shape, const std::string& path, std::uint64_t seed) {
  json h;
  h["kind"] = "shape";
  h["D"] = shape.dim();
  h["h"] = shape.width();
  h["d_y"] = shape.out_dim();
  h["epsilon"] = shape.epsilon;
  h["seed"] = seed;
  write_file(h, pack_row_major(shape.w_shapes, shape.v_shapes), path);
}

InitShape load_shape(const std::string& path, std::uint64_t* seed_out) {
  Loaded l = read_file(path);
  if (l.header.value("kind", "") != "shape")
    throw DataError(path + ": not a shape checkpoint");
  InitShape s;
  s.w_shapes = std::move(l.w);
  s.v_shapes = std::move(l.v);
  s.epsilon = l.header.at("epsilon").get<double>();
  if (seed_out != nullptr) *seed_out = l.header.value("seed", 0ull);
  return s;
}

}  // namespace ncflow
