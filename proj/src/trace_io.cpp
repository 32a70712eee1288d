#include "plugpull/trace_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "plugpull/errors.hpp"

namespace plugpull::io {

namespace {

void append_vec(std::vector<std::string>& cols, const std::string& stem, const std::vector<std::string>& suffixes) {
  for (const auto& s : suffixes) cols.push_back(stem + s);
}

std::vector<std::string> build_columns() {
  const std::vector<std::string> q{"p_x", "p_y", "p_z", "phi", "theta", "psi", "gamma_1", "gamma_2"};
  std::vector<std::string> c{"t", "mode"};
  c.insert(c.end(), q.begin(), q.end());
  for (const auto& n : q) c.push_back(n + "_dot");
  c.push_back("T");
  append_vec(c, "tau_b_", {"x", "y", "z"});
  append_vec(c, "tau_gamma_", {"1", "2"});
  append_vec(c, "F_E_", {"x", "y", "z"});
  append_vec(c, "eta_d_", {"phi", "theta", "psi"});
  append_vec(c, "u_eta_", {"1", "2", "3"});
  append_vec(c, "pi_u_", {"1", "2", "3"});
  append_vec(c, "xi_", {"11", "12", "21", "22", "31", "32"});
  append_vec(c, "zeta_", {"11", "12", "21", "22", "31", "32"});
  append_vec(c, "p_d_", {"x", "y", "z"});
  append_vec(c, "tau_b0_", {"x", "y", "z"});
  return c;
}

void put(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, ",%.12g", v);
  out += buf;
}

template <typename V>
void put_all(std::string& out, const V& v) {
  for (int i = 0; i < v.size(); ++i) put(out, v(i));
}

Mode parse_mode(const std::string& s) {
  if (s == "WP") return Mode::WP;
  if (s == "ST") return Mode::ST;
  if (s == "FF") return Mode::FF;
  throw Error(ErrorCode::Io, "unknown mode '" + s + "'");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> cols = build_columns();
  return cols;
}

std::string format_trace_csv(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg) {
  std::string out;
  char meta[256];
  std::snprintf(meta, sizeof meta, "# config_hash=%016" PRIx64 " seed=%" PRIu64 " rng=%s status=%s\n",
                config_hash(cfg), cfg.sim.seed, Rng::kName, std::string(hybrid::to_string(tr.status)).c_str());
  out += meta;
  const auto& cols = trace_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ',';
    out += cols[i];
  }
  out += '\n';
  out.reserve(out.size() + tr.samples.size() * 900);
  for (const auto& s : tr.samples) {
    char head[48];
    std::snprintf(head, sizeof head, "%.12g,%s", s.t, std::string(to_string(s.mode)).c_str());
    out += head;
    put_all(out, s.q);
    put_all(out, s.qd);
    put(out, s.thrust);
    put_all(out, s.tau_b);
    put_all(out, s.tau_gamma);
    put_all(out, s.F_E);
    put_all(out, s.eta_d);
    put_all(out, s.u_eta);
    put_all(out, s.pi_u);
    put_all(out, s.xi);
    put_all(out, s.zeta);
    put_all(out, s.p_d);
    put_all(out, s.tau_b0);
    out += '\n';
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path);
}

void write_trace_csv(const std::string& path, const hybrid::HybridTrace& tr, const ScenarioConfig& cfg) {
  write_text(path, format_trace_csv(tr, cfg));
}

std::string format_events_csv(const hybrid::HybridTrace& tr) {
  std::string out = "t,from,to";
  for (const char* side : {"pre", "post"}) {
    for (const auto& c : {"p_x", "p_y", "p_z", "phi", "theta", "psi", "gamma_1", "gamma_2"}) {
      out += std::string(",") + side + "_" + c;
    }
    for (const auto& c : {"v_x", "v_y", "v_z", "phi_dot", "theta_dot", "psi_dot", "gamma_1_dot", "gamma_2_dot"}) {
      out += std::string(",") + side + "_" + c;
    }
  }
  out += ",jump_x,jump_y,jump_z\n";
  for (const auto& e : tr.events) {
    char head[64];
    std::snprintf(head, sizeof head, "%.12g,%s,%s", e.t, std::string(to_string(e.from)).c_str(),
                  std::string(to_string(e.to)).c_str());
    out += head;
    put_all(out, e.pre.q);
    put_all(out, e.pre.qd);
    put_all(out, e.post.q);
    put_all(out, e.post.qd);
    put_all(out, e.jump);
    out += '\n';
  }
  return out;
}

void write_events_csv(const std::string& path, const hybrid::HybridTrace& tr) {
  write_text(path, format_events_csv(tr));
}

int TraceTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

double TraceTable::at(std::size_t row, const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw Error(ErrorCode::Io, "no column " + name);
  return rows.at(row).at(static_cast<std::size_t>(c));
}

TraceTable parse_trace_csv(const std::string& text) {
  TraceTable t;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const auto& kv : split(line.substr(1), ' ')) {
        const auto eq = kv.find('=');
        if (eq != std::string::npos) t.metadata[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      continue;
    }
    if (t.columns.empty()) {
      t.columns = split(line, ',');
      if (t.columns.size() < 2 || t.columns[0] != "t" || t.columns[1] != "mode")
        throw Error(ErrorCode::Io, "missing trace header");
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != t.columns.size()) {
      throw Error(ErrorCode::Io, "line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                     " cells, expected " + std::to_string(t.columns.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == 1) {
        t.modes.push_back(parse_mode(cells[i]));
        row[i] = static_cast<double>(t.modes.back());
        continue;
      }
      try {
        row[i] = std::stod(cells[i]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Io, "line " + std::to_string(lineno) + ": bad number '" + cells[i] + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw Error(ErrorCode::Io, "empty trace");
  return t;
}

TraceTable read_trace_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_trace_csv(ss.str());
}

}  // namespace plugpull::io
