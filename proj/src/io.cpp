#include "photosfm/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace photosfm {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace {

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw IoError("cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw IoError("cannot open for reading: " + path);
  return f;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Tensor read_pfm(const std::string& path) {
  std::ifstream f = open_in(path, true);
  std::string magic;
  f >> magic;
  if (magic == "PF") throw IoError(path + ": color PFM is unsupported, expected grayscale \"Pf\"");
  if (magic != "Pf") throw IoError(path + ": not a PFM file");
  int w = 0, h = 0;
  double scale = 0.0;
  f >> w >> h >> scale;
  if (!f || w < 1 || h < 1) throw IoError(path + ": malformed PFM header");
  if (scale >= 0.0) throw IoError(path + ": big-endian PFM is unsupported");
  f.get();  // the single whitespace byte separating header and samples
  Tensor out({1, h, w});
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {  // PFM rows are stored bottom-up
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
    if (!f) throw IoError(path + ": truncated PFM data");
    for (int x = 0; x < w; ++x) out.at(0, y, x) = static_cast<double>(row[static_cast<size_t>(x)]);
  }
  return out;
}

void write_pfm(const Tensor& map, const std::string& path) {
  if (map.rank() != 3 || map.dim(0) != 1)
    throw std::invalid_argument("write_pfm: (1,H,W) tensor required");
  const int h = map.dim(1), w = map.dim(2);
  std::ofstream f = open_out(path, true);
  f << "Pf\n" << w << " " << h << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = static_cast<float>(map.at(0, y, x));
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!f) throw IoError("failed writing " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f = open_in(path, true);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError(path + ": not a binary PPM (P6) file");
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w < 1 || h < 1) throw IoError(path + ": malformed PPM header");
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  f.get();
  Tensor out({3, h, w});
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw IoError(path + ": truncated PPM data");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = row[static_cast<size_t>(x * 3 + c)] / 255.0;
  }
  return out;
}

void write_ppm(const Tensor& image, const std::string& path) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("write_ppm: (3,H,W) tensor required");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream f = open_out(path, true);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(std::max(image.at(c, y, x), 0.0), 1.0);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("failed writing " + path);
}

std::vector<RigidTransform> read_trajectory(const std::string& path) {
  std::ifstream f = open_in(path, false);
  std::vector<RigidTransform> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> v[i]))
        throw IoError(path + ":" + std::to_string(line_no) + ": expected 12 numbers per pose");
    double trailing;
    if (ss >> trailing)
      throw IoError(path + ":" + std::to_string(line_no) + ": extra values on pose line");
    RigidTransform p;
    p.R << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    p.t << v[3], v[7], v[11];
    out.push_back(p);
  }
  if (out.empty()) throw IoError(path + ": no poses found");
  return out;
}

void write_trajectory(const std::vector<RigidTransform>& poses, const std::string& path) {
  std::ofstream f = open_out(path, false);
  for (const auto& p : poses) {
    const double v[12] = {p.R(0, 0), p.R(0, 1), p.R(0, 2), p.t(0),
                          p.R(1, 0), p.R(1, 1), p.R(1, 2), p.t(1),
                          p.R(2, 0), p.R(2, 1), p.R(2, 2), p.t(2)};
    for (int i = 0; i < 12; ++i) f << (i ? " " : "") << fmt_double(v[i]);
    f << "\n";
  }
  if (!f) throw IoError("failed writing " + path);
}

IntrinsicsValues read_intrinsics_json(const std::string& path) {
  std::ifstream f = open_in(path, false);
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  // Minimal extraction to avoid a JSON dependency in the core library.
  IntrinsicsValues k;
  const auto grab = [&](const char* key, double& out) {
    const std::string pat = std::string("\"") + key + "\"";
    const size_t at = text.find(pat);
    if (at == std::string::npos) throw IoError(path + ": missing key " + key);
    const size_t colon = text.find(':', at);
    if (colon == std::string::npos) throw IoError(path + ": malformed JSON near " + key);
    out = std::strtod(text.c_str() + colon + 1, nullptr);
  };
  grab("fx", k.fx);
  grab("fy", k.fy);
  grab("cx", k.cx);
  grab("cy", k.cy);
  return k;
}

void write_intrinsics_json(const IntrinsicsValues& k, const std::string& path) {
  std::ofstream f = open_out(path, false);
  f << "{\n  \"fx\": " << fmt_double(k.fx) << ",\n  \"fy\": " << fmt_double(k.fy)
    << ",\n  \"cx\": " << fmt_double(k.cx) << ",\n  \"cy\": " << fmt_double(k.cy) << "\n}\n";
  if (!f) throw IoError("failed writing " + path);
}

// ---- RunConfig ----

namespace {

struct KeyDef {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean value for " + key + ": '" + v + "'");
}

std::string geometry_name(SceneGeometry g) {
  switch (g) {
    case SceneGeometry::FrontoParallel: return "fronto";
    case SceneGeometry::Slanted: return "slanted";
    case SceneGeometry::Staircase: return "staircase";
  }
  return "slanted";
}

SceneGeometry parse_geometry(const std::string& v) {
  if (v == "fronto") return SceneGeometry::FrontoParallel;
  if (v == "slanted") return SceneGeometry::Slanted;
  if (v == "staircase") return SceneGeometry::Staircase;
  throw ConfigError("config: unknown geometry '" + v + "' (fronto|slanted|staircase)");
}

#define DOUBLE_KEY(name, field)                                                       \
  KeyDef{name, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
         [](const RunConfig& c) { return fmt_double(c.field); }}
#define INT_KEY(name, field)                                                                   \
  KeyDef{name,                                                                                 \
         [](RunConfig& c, const std::string& v) { c.field = static_cast<int>(parse_int(name, v)); }, \
         [](const RunConfig& c) { return std::to_string(c.field); }}
#define UINT64_KEY(name, field)                                                      \
  KeyDef{name,                                                                       \
         [](RunConfig& c, const std::string& v) {                                    \
           c.field = static_cast<std::uint64_t>(parse_int(name, v));                 \
         },                                                                          \
         [](const RunConfig& c) { return std::to_string(c.field); }}
#define BOOL_KEY(name, field)                                                      \
  KeyDef{name, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }, \
         [](const RunConfig& c) { return c.field ? "true" : "false"; }}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      UINT64_KEY("scene.seed", scene.seed),
      KeyDef{"scene.geometry",
             [](RunConfig& c, const std::string& v) { c.scene.geometry = parse_geometry(v); },
             [](const RunConfig& c) { return geometry_name(c.scene.geometry); }},
      INT_KEY("scene.width", scene.width),
      INT_KEY("scene.height", scene.height),
      DOUBLE_KEY("scene.base_depth", scene.base_depth),
      DOUBLE_KEY("scene.slant_x", scene.slant_x),
      DOUBLE_KEY("scene.slant_y", scene.slant_y),
      DOUBLE_KEY("scene.step_depth", scene.step_depth),
      INT_KEY("scene.n_frames", scene.n_frames),
      DOUBLE_KEY("scene.fx", scene.k_gt.fx),
      DOUBLE_KEY("scene.fy", scene.k_gt.fy),
      DOUBLE_KEY("scene.cx", scene.k_gt.cx),
      DOUBLE_KEY("scene.cy", scene.k_gt.cy),
      DOUBLE_KEY("scene.tx", scene.trans_step[0]),
      DOUBLE_KEY("scene.ty", scene.trans_step[1]),
      DOUBLE_KEY("scene.tz", scene.trans_step[2]),
      DOUBLE_KEY("scene.rx", scene.rot_step[0]),
      DOUBLE_KEY("scene.ry", scene.rot_step[1]),
      DOUBLE_KEY("scene.rz", scene.rot_step[2]),
      INT_KEY("scene.texture_octaves", scene.texture_octaves),
      DOUBLE_KEY("loss.alpha", loss.alpha),
      DOUBLE_KEY("loss.lambda", loss.lambda),
      DOUBLE_KEY("loss.ssim_c1", loss.ssim_c1),
      DOUBLE_KEY("loss.ssim_c2", loss.ssim_c2),
      DOUBLE_KEY("loss.sigma_min", loss.sigma_min),
      DOUBLE_KEY("loss.uncert_offset", loss.uncert_offset),
      INT_KEY("loss.n_scales", loss.n_scales),
      BOOL_KEY("loss.scale_lambda_decay", loss.scale_lambda_decay),
      DOUBLE_KEY("loss.min_depth", loss.min_depth),
      DOUBLE_KEY("loss.max_depth", loss.max_depth),
      INT_KEY("opt.steps", opt.steps),
      DOUBLE_KEY("opt.lr_initial", opt.lr_initial),
      DOUBLE_KEY("opt.lr_final", opt.lr_final),
      DOUBLE_KEY("opt.lr_boundary_fraction", opt.lr_boundary_fraction),
      BOOL_KEY("opt.with_uncertainty", opt.with_uncertainty),
      BOOL_KEY("opt.learn_intrinsics", opt.learn_intrinsics),
      DOUBLE_KEY("opt.init_jitter", opt.init_jitter),
      UINT64_KEY("opt.jitter_seed", opt.jitter_seed),
  };
  return table;
}

#undef DOUBLE_KEY
#undef INT_KEY
#undef UINT64_KEY
#undef BOOL_KEY

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  for (const auto& def : key_table())
    if (key == def.name) {
      def.set(*this, value);
      return;
    }
  throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      cfg.apply_override(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f = open_in(path, false);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_text(buf.str());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& def : key_table()) {
    out += def.name;
    out += " = ";
    out += def.get(*this);
    out += "\n";
  }
  return out;
}

}  // namespace photosfm
