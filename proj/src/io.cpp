#include "beacon/io.hpp"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace beacon {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': expected integer, got '" + value + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': expected unsigned integer, got '" + value + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': expected real, got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected boolean, got '" + value + "'");
}

void apply_key(RunConfig& rc, const std::string& key, const std::string& value) {
  TwinConfig& t = rc.twin;
  if (key == "rows") t.rows = static_cast<int>(parse_int(key, value));
  else if (key == "cols") t.cols = static_cast<int>(parse_int(key, value));
  else if (key == "ensemble") t.ensemble = static_cast<int>(parse_int(key, value));
  else if (key == "iterations") t.iterations = static_cast<int>(parse_int(key, value));
  else if (key == "budget") t.budget = static_cast<int>(parse_int(key, value));
  else if (key == "epochs") t.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "batch") t.batch = static_cast<int>(parse_int(key, value));
  else if (key == "lr_theta") t.lr_theta = parse_real(key, value);
  else if (key == "lr_design") t.lr_design = parse_real(key, value);
  else if (key == "noise_sigma") t.sim.noise_sigma = parse_real(key, value);
  else if (key == "injection_row") t.sim.injection_row = static_cast<int>(parse_int(key, value));
  else if (key == "injection_col") t.sim.injection_col = static_cast<int>(parse_int(key, value));
  else if (key == "injection_rate") t.sim.injection_rate = parse_real(key, value);
  else if (key == "dt") t.sim.dt = parse_real(key, value);
  else if (key == "steps_per_interval") t.sim.steps_per_interval = static_cast<int>(parse_int(key, value));
  else if (key == "seismic_blur_radius") t.sim.seismic_blur_radius = static_cast<int>(parse_int(key, value));
  else if (key == "seismic_sigma") t.sim.seismic_sigma = parse_real(key, value);
  else if (key == "perm_base_sigma") t.perm_gen.base_sigma = parse_real(key, value);
  else if (key == "perm_bump_sigma") t.perm_gen.bump_sigma = parse_real(key, value);
  else if (key == "perm_smooth_radius") t.perm_gen.smooth_radius = static_cast<int>(parse_int(key, value));
  else if (key == "couplings") t.n_couplings = static_cast<int>(parse_int(key, value));
  else if (key == "hidden_width") t.hidden = static_cast<int>(parse_int(key, value));
  else if (key == "embed_dim") t.embed = static_cast<int>(parse_int(key, value));
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "threads") t.threads = static_cast<int>(parse_int(key, value));
  else if (key == "deterministic") t.deterministic = parse_bool(key, value);
  else if (key == "out_dir") rc.out_dir = value;
  else if (key == "label") rc.label = value;
  else throw ConfigError("unknown key '" + key + "'");
}

void validate_config(const RunConfig& rc) {
  const TwinConfig& t = rc.twin;
  if (t.rows < 4 || t.cols < 4) throw ConfigError("grid too small (rows/cols must be >= 4)");
  if (t.ensemble < 1) throw ConfigError("ensemble must be >= 1");
  if (t.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (t.budget < 1) throw ConfigError("budget must be >= 1");
  if (t.epochs < 1 || t.batch < 1) throw ConfigError("epochs/batch must be >= 1");
  if (t.lr_theta < 0.0 || t.lr_design < 0.0) throw ConfigError("learning rates must be >= 0");
  if (t.sim.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (t.sim.dt <= 0.0) throw ConfigError("dt must be > 0");
  if (t.sim.steps_per_interval < 1) throw ConfigError("steps_per_interval must be >= 1");
  if (t.sim.seismic_blur_radius < 0) throw ConfigError("seismic_blur_radius must be >= 0");
  if (t.sim.seismic_sigma < 0.0) throw ConfigError("seismic_sigma must be >= 0");
  if (t.sim.injection_row < 0 || t.sim.injection_row >= t.rows || t.sim.injection_col < 0 ||
      t.sim.injection_col >= t.cols)
    throw ConfigError("injection cell outside grid");
  if (t.n_couplings < 2) throw ConfigError("couplings must be >= 2");
  if (t.hidden < 1 || t.embed < 1) throw ConfigError("hidden_width/embed_dim must be >= 1");
  if (t.threads < 0) throw ConfigError("threads must be >= 0");
}

// --- little-endian binary primitives ---

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_i32(std::string& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }
void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
void put_f64s(std::string& out, const std::vector<double>& v) {
  for (double x : v) put_f64(out, x);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string what;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw NumericError(what + ": truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void f64s(std::vector<double>& out, size_t n) {
    out.resize(n);
    for (size_t i = 0; i < n; ++i) out[i] = f64();
  }
};

std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericError(what + ": cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NumericError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw NumericError("write failed for '" + path + "'");
}

void put_field(std::string& out, const Field2D& f) {
  put_u32(out, static_cast<uint32_t>(f.rows));
  put_u32(out, static_cast<uint32_t>(f.cols));
  put_f64s(out, f.data);
}

Field2D get_field(Reader& r) {
  uint32_t rows = r.u32(), cols = r.u32();
  if (rows > (1u << 20) || cols > (1u << 20)) throw NumericError(r.what + ": dim overflow");
  Field2D f(static_cast<int>(rows), static_cast<int>(cols));
  r.f64s(f.data, static_cast<size_t>(rows) * cols);
  return f;
}

void put_adam(std::string& out, const AdamState& a) {
  put_u64(out, static_cast<uint64_t>(a.t));
  put_u64(out, a.m.size());
  put_f64s(out, a.m);
  put_f64s(out, a.v);
}

AdamState get_adam(Reader& r) {
  AdamState a;
  a.t = static_cast<long>(r.u64());
  size_t n = r.u64();
  r.f64s(a.m, n);
  r.f64s(a.v, n);
  return a;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_config_text(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    apply_key(rc, key, value);
  }
  validate_config(rc);
  return rc;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str());
}

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw NumericError("format_double failed");
  return std::string(buf, ptr);
}

void save_grid(const Field2D& field, const std::string& path) {
  std::string out;
  out.reserve(16 + field.size() * 8);
  out += "BEAC";
  put_u32(out, 1);
  put_field(out, field);
  write_file(path, out);
}

Field2D load_grid(const std::string& path) {
  std::string buf = read_file(path, "grid");
  Reader r{buf, 0, "grid"};
  r.need(4);
  if (buf.compare(0, 4, "BEAC") != 0) throw NumericError("not a BEAC grid: '" + path + "'");
  r.pos = 4;
  uint32_t version = r.u32();
  if (version != 1) throw NumericError("grid: unsupported version " + std::to_string(version));
  Field2D f = get_field(r);
  if (r.pos != buf.size()) throw NumericError("grid: trailing bytes");
  return f;
}

void save_checkpoint(const TwinState& state, const TwinConfig& cfg, bool random_placement,
                     const std::string& path) {
  std::string out;
  out += "BCKP";
  put_u32(out, 1);
  put_u64(out, cfg.seed);
  out.push_back(random_placement ? 1 : 0);

  // Structural config.
  put_i32(out, cfg.rows);
  put_i32(out, cfg.cols);
  put_i32(out, cfg.ensemble);
  put_i32(out, cfg.iterations);
  put_i32(out, cfg.budget);
  put_i32(out, cfg.epochs);
  put_i32(out, cfg.batch);
  put_f64(out, cfg.lr_theta);
  put_f64(out, cfg.lr_design);
  put_i32(out, cfg.sim.injection_row);
  put_i32(out, cfg.sim.injection_col);
  put_f64(out, cfg.sim.injection_rate);
  put_f64(out, cfg.sim.dt);
  put_i32(out, cfg.sim.steps_per_interval);
  put_f64(out, cfg.sim.noise_sigma);
  put_i32(out, cfg.sim.seismic_blur_radius);
  put_f64(out, cfg.sim.seismic_sigma);
  put_f64(out, cfg.perm_gen.base_sigma);
  put_f64(out, cfg.perm_gen.bump_sigma);
  put_i32(out, cfg.perm_gen.smooth_radius);
  put_i32(out, cfg.n_couplings);
  put_i32(out, cfg.hidden);
  put_i32(out, cfg.embed);

  // State.
  put_u64(out, static_cast<uint64_t>(state.k));
  std::vector<double> theta(flow_param_count(state.flow));
  flow_flatten(state.flow, theta.data());
  put_u64(out, theta.size());
  put_f64s(out, theta);
  put_u32(out, static_cast<uint32_t>(state.design.logits.size()));
  put_f64s(out, state.design.logits);
  put_u32(out, static_cast<uint32_t>(state.design.drilled.size()));
  for (int c : state.design.drilled) put_i32(out, c);
  put_adam(out, state.opt_theta);
  put_adam(out, state.opt_design);
  put_u32(out, static_cast<uint32_t>(state.prior.sat.size()));
  put_u32(out, static_cast<uint32_t>(state.prior.step));
  for (const Field2D& f : state.prior.sat) put_field(out, f);
  for (const Field2D& f : state.prior.perm) put_field(out, f);
  put_field(out, state.gt_sat);
  put_field(out, state.gt_perm);
  put_u32(out, static_cast<uint32_t>(state.history.size()));
  for (const IterationMetrics& m : state.history) {
    put_i32(out, m.k);
    put_f64(out, m.rmse);
    put_f64(out, m.mean_posterior_std);
    put_i32(out, m.drilled_column);
    put_f64(out, m.final_train_loss);
  }
  write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::string buf = read_file(path, "checkpoint");
  Reader r{buf, 0, "checkpoint"};
  r.need(4);
  if (buf.compare(0, 4, "BCKP") != 0) throw NumericError("not a BCKP checkpoint: '" + path + "'");
  r.pos = 4;
  uint32_t version = r.u32();
  if (version != 1) throw NumericError("checkpoint: unsupported version " + std::to_string(version));

  LoadedCheckpoint out;
  TwinConfig& cfg = out.cfg;
  cfg.seed = r.u64();
  r.need(1);
  out.random_placement = buf[r.pos++] != 0;

  cfg.rows = r.i32();
  cfg.cols = r.i32();
  cfg.ensemble = r.i32();
  cfg.iterations = r.i32();
  cfg.budget = r.i32();
  cfg.epochs = r.i32();
  cfg.batch = r.i32();
  cfg.lr_theta = r.f64();
  cfg.lr_design = r.f64();
  cfg.sim.injection_row = r.i32();
  cfg.sim.injection_col = r.i32();
  cfg.sim.injection_rate = r.f64();
  cfg.sim.dt = r.f64();
  cfg.sim.steps_per_interval = r.i32();
  cfg.sim.noise_sigma = r.f64();
  cfg.sim.seismic_blur_radius = r.i32();
  cfg.sim.seismic_sigma = r.f64();
  cfg.perm_gen.base_sigma = r.f64();
  cfg.perm_gen.bump_sigma = r.f64();
  cfg.perm_gen.smooth_radius = r.i32();
  cfg.n_couplings = r.i32();
  cfg.hidden = r.i32();
  cfg.embed = r.i32();

  TwinState& st = out.state;
  st.k = static_cast<int>(r.u64());
  FlowConfig fc;
  fc.rows = cfg.rows;
  fc.cols = cfg.cols;
  fc.n_couplings = cfg.n_couplings;
  fc.hidden = cfg.hidden;
  fc.embed = cfg.embed;
  st.flow = flow_init(0, fc);
  uint64_t nparams = r.u64();
  if (nparams != flow_param_count(st.flow))
    throw NumericError("checkpoint: flow parameter count mismatch");
  std::vector<double> theta;
  r.f64s(theta, nparams);
  flow_unflatten(st.flow, theta.data());

  uint32_t n_logits = r.u32();
  r.f64s(st.design.logits, n_logits);
  st.design.budget = cfg.budget;
  uint32_t n_drilled = r.u32();
  st.design.drilled.resize(n_drilled);
  for (uint32_t i = 0; i < n_drilled; ++i) st.design.drilled[i] = r.i32();
  st.opt_theta = get_adam(r);
  st.opt_design = get_adam(r);

  uint32_t n_members = r.u32();
  st.prior.step = static_cast<int>(r.u32());
  st.prior.sat.resize(n_members);
  st.prior.perm.resize(n_members);
  for (uint32_t i = 0; i < n_members; ++i) st.prior.sat[i] = get_field(r);
  for (uint32_t i = 0; i < n_members; ++i) st.prior.perm[i] = get_field(r);
  st.gt_sat = get_field(r);
  st.gt_perm = get_field(r);
  uint32_t n_hist = r.u32();
  st.history.resize(n_hist);
  for (uint32_t i = 0; i < n_hist; ++i) {
    IterationMetrics& m = st.history[i];
    m.k = r.i32();
    m.rmse = r.f64();
    m.mean_posterior_std = r.f64();
    m.drilled_column = r.i32();
    m.final_train_loss = r.f64();
  }
  if (r.pos != buf.size()) throw NumericError("checkpoint: trailing bytes");
  return out;
}

void write_metrics_csv(const std::vector<const Report*>& reports, const std::string& path) {
  std::string out = "iteration,method,seed,rmse,mean_posterior_std,drilled_column,final_loss\n";
  for (const Report* rep : reports) {
    for (const IterationMetrics& m : rep->rows) {
      out += std::to_string(m.k);
      out += ',';
      out += rep->method;
      out += ',';
      out += std::to_string(rep->seed);
      out += ',';
      out += format_double(m.rmse);
      out += ',';
      out += format_double(m.mean_posterior_std);
      out += ',';
      out += std::to_string(m.drilled_column);
      out += ',';
      out += format_double(m.final_train_loss);
      out += '\n';
    }
  }
  write_file(path, out);
}

void emit_report(const Report& report, const TwinConfig& cfg, const std::string& label,
                 const std::string& dir) {
  if (report.rows.empty() && cfg.iterations > 0) throw NumericError("emit_report: empty report");
  std::filesystem::create_directories(dir);
  write_metrics_csv({&report}, dir + "/metrics.csv");

  nlohmann::json j;
  j["method"] = report.method;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  j["density"] = report.final_density;
  j["drilled"] = report.drilled;
  write_file(dir + "/design.json", j.dump(2) + "\n");

  std::string echo = twin_config_canon(cfg);
  echo += "seed = " + std::to_string(cfg.seed) + "\n";
  echo += "method = " + report.method + "\n";
  if (!label.empty()) echo += "label = " + label + "\n";
  write_file(dir + "/config_echo.txt", echo);
}

}  // namespace beacon
