#pragma once

// Artifact persistence: scenario files, policy weights, strategies,
// references, closed-loop traces, plot-data emission, and the staged
// pipeline manifest. All numeric text output uses shortest round-trip
// decimal (std::to_chars), so save/load is the identity and repeated runs
// with identical inputs produce byte-identical files.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "confres/dmpc.hpp"
#include "confres/policy.hpp"
#include "confres/ref_planner.hpp"
#include "confres/scenario.hpp"
#include "confres/strategy.hpp"

namespace confres {

using Json = nlohmann::ordered_json;

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ioutil {

inline std::string fmt(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + path);
  out << data;
  if (!out) throw ArtifactError("write failed for " + path);
}

inline Json parse_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArtifactError(path + ": " + e.what());
  }
}

inline const Json& field(const Json& j, const char* key,
                         const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end())
    throw ArtifactError(where + ": missing field '" + key + "'");
  return *it;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace ioutil

// ---------------------------------------------------------------------------
// Scenario

namespace detail {

inline Json box_to_json(const Box2& b) {
  return Json{{"xmin", b.xmin}, {"xmax", b.xmax},
              {"ymin", b.ymin}, {"ymax", b.ymax}};
}

inline Box2 box_from_json(const Json& j, const std::string& where) {
  Box2 b;
  b.xmin = ioutil::field(j, "xmin", where).get<double>();
  b.xmax = ioutil::field(j, "xmax", where).get<double>();
  b.ymin = ioutil::field(j, "ymin", where).get<double>();
  b.ymax = ioutil::field(j, "ymax", where).get<double>();
  return b;
}

inline Json polytope_to_json(const Polytope2D& p) {
  Json verts = Json::array();
  for (const Vec2& v : p.vertices()) verts.push_back({v.x(), v.y()});
  return verts;
}

inline Polytope2D polytope_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() < 3)
    throw ArtifactError(where + ": obstacle needs >= 3 vertices");
  std::vector<Vec2> pts;
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 2)
      throw ArtifactError(where + ": vertex must be [x, y]");
    pts.emplace_back(v[0].get<double>(), v[1].get<double>());
  }
  return Polytope2D::from_vertices(pts);
}

}  // namespace detail

inline Json scenario_to_json(const Scenario& sc) {
  Json j;
  j["kind"] = "scenario";
  j["lot"] = detail::box_to_json(sc.lot);
  j["grid"] = Json{{"cell_size", sc.grid.cell_size},
                   {"origin", {sc.grid.origin.x(), sc.grid.origin.y()}}};
  j["t_s"] = sc.t_s;
  j["seed"] = sc.seed;
  Json obstacles = Json::array();
  for (const auto& p : sc.obstacles)
    obstacles.push_back(detail::polytope_to_json(p));
  j["obstacles"] = std::move(obstacles);
  Json vehicles = Json::array();
  for (const auto& v : sc.vehicles) {
    Json jv;
    jv["initial"] = {v.initial.x, v.initial.y, v.initial.psi};
    jv["target_box"] = detail::box_to_json(v.target_box);
    jv["target_psi"] = v.target_psi;
    jv["body"] = Json{{"length", v.body.length},
                      {"width", v.body.width},
                      {"wheelbase", v.body.wheelbase},
                      {"rear_overhang", v.body.rear_overhang}};
    vehicles.push_back(std::move(jv));
  }
  j["vehicles"] = std::move(vehicles);
  return j;
}

inline Scenario scenario_from_json(const Json& j, const std::string& where) {
  using ioutil::field;
  Scenario sc;
  sc.lot = detail::box_from_json(field(j, "lot", where), where + ".lot");
  const Json& grid = field(j, "grid", where);
  sc.grid.cell_size = field(grid, "cell_size", where + ".grid").get<double>();
  const Json& origin = field(grid, "origin", where + ".grid");
  sc.grid.origin = Vec2(origin.at(0).get<double>(), origin.at(1).get<double>());
  sc.t_s = field(j, "t_s", where).get<double>();
  sc.seed = field(j, "seed", where).get<std::uint64_t>();
  int k = 0;
  for (const auto& jo : field(j, "obstacles", where))
    sc.obstacles.push_back(detail::polytope_from_json(
        jo, where + ".obstacles[" + std::to_string(k++) + "]"));
  k = 0;
  for (const auto& jv : field(j, "vehicles", where)) {
    const std::string wv = where + ".vehicles[" + std::to_string(k++) + "]";
    VehicleSpec v;
    const Json& init = field(jv, "initial", wv);
    if (!init.is_array() || init.size() != 3)
      throw ArtifactError(wv + ": initial must be [x, y, psi]");
    v.initial = VehicleState{init[0].get<double>(), init[1].get<double>(),
                             init[2].get<double>(), 0.0, 0.0};
    v.target_box =
        detail::box_from_json(field(jv, "target_box", wv), wv + ".target_box");
    v.target_psi = field(jv, "target_psi", wv).get<double>();
    const Json& body = field(jv, "body", wv);
    v.body.length = ioutil::field(body, "length", wv).get<double>();
    v.body.width = ioutil::field(body, "width", wv).get<double>();
    v.body.wheelbase = ioutil::field(body, "wheelbase", wv).get<double>();
    v.body.rear_overhang =
        ioutil::field(body, "rear_overhang", wv).get<double>();
    sc.vehicles.push_back(std::move(v));
  }
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw ArtifactError(where + ": " + e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  return scenario_from_json(ioutil::parse_json(path), path);
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  ioutil::write_file(path, scenario_to_json(sc).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Policy weights (binary: magic, layer count, per-layer dims + row-major data)

inline void save_weights(const QNetwork& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + path);
  const char magic[8] = {'C', 'R', 'Q', 'N', 'E', 'T', '0', '1'};
  out.write(magic, sizeof(magic));
  const std::uint32_t layers = static_cast<std::uint32_t>(net.num_layers());
  out.write(reinterpret_cast<const char*>(&layers), sizeof(layers));
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weights[l];
    const std::uint32_t rows = static_cast<std::uint32_t>(w.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(w.cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) {
        const double x = w(r, c);
        out.write(reinterpret_cast<const char*>(&x), sizeof(x));
      }
    for (int r = 0; r < net.biases[l].size(); ++r) {
      const double x = net.biases[l](r);
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  if (!out) throw ArtifactError("write failed for " + path);
}

inline QNetwork load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != "CRQNET01")
    throw ArtifactError(path + ": not a policy weights file");
  std::uint32_t layers = 0;
  in.read(reinterpret_cast<char*>(&layers), sizeof(layers));
  if (!in || layers == 0 || layers > 64)
    throw ArtifactError(path + ": bad layer count");
  QNetwork net;
  for (std::uint32_t l = 0; l < layers; ++l) {
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows == 0 || cols == 0)
      throw ArtifactError(path + ": bad layer shape");
    Eigen::MatrixXd w(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        double x;
        in.read(reinterpret_cast<char*>(&x), sizeof(x));
        w(r, c) = x;
      }
    Eigen::VectorXd b(rows);
    for (std::uint32_t r = 0; r < rows; ++r) {
      double x;
      in.read(reinterpret_cast<char*>(&x), sizeof(x));
      b(r) = x;
    }
    if (!in) throw ArtifactError(path + ": truncated weights file");
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

inline void save_training_log(const std::vector<TrainLogRow>& log,
                              const std::string& path) {
  std::string s = "episode,episode_return,epsilon,loss\n";
  for (const auto& r : log)
    s += std::to_string(r.episode) + "," + ioutil::fmt(r.episode_return) +
         "," + ioutil::fmt(r.epsilon) + "," + ioutil::fmt(r.loss) + "\n";
  ioutil::write_file(path, s);
}

// ---------------------------------------------------------------------------
// Strategies

inline void save_strategies(const std::vector<Strategy>& strategies,
                            const std::string& path) {
  Json j;
  j["kind"] = "strategies";
  Json list = Json::array();
  for (const auto& s : strategies) {
    Json js;
    js["t_s"] = s.t_s;
    Json steps = Json::array();
    for (const auto& st : s.steps) {
      Json step;
      step["cells"] = {{st.cells.front.col, st.cells.front.row},
                       {st.cells.back.col, st.cells.back.row}};
      step["front_box"] = detail::box_to_json(st.front_box);
      step["back_box"] = detail::box_to_json(st.back_box);
      steps.push_back(std::move(step));
    }
    js["steps"] = std::move(steps);
    list.push_back(std::move(js));
  }
  j["vehicles"] = std::move(list);
  ioutil::write_file(path, j.dump(2) + "\n");
}

inline std::vector<Strategy> load_strategies(const std::string& path) {
  const Json j = ioutil::parse_json(path);
  if (ioutil::field(j, "kind", path) != "strategies")
    throw ArtifactError(path + ": not a strategies file");
  std::vector<Strategy> out;
  for (const auto& js : ioutil::field(j, "vehicles", path)) {
    Strategy s;
    s.t_s = ioutil::field(js, "t_s", path).get<double>();
    for (const auto& step : ioutil::field(js, "steps", path)) {
      StrategyStep st;
      const Json& cells = ioutil::field(step, "cells", path);
      st.cells.front = {cells[0][0].get<int>(), cells[0][1].get<int>()};
      st.cells.back = {cells[1][0].get<int>(), cells[1][1].get<int>()};
      st.front_box = detail::box_from_json(
          ioutil::field(step, "front_box", path), path);
      st.back_box = detail::box_from_json(
          ioutil::field(step, "back_box", path), path);
      s.steps.push_back(st);
    }
    if (s.steps.empty()) throw ArtifactError(path + ": empty strategy");
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// References

inline void save_references(const std::vector<ReferenceTrajectory>& refs,
                            const std::string& path) {
  Json j;
  j["kind"] = "references";
  Json list = Json::array();
  for (const auto& r : refs) {
    Json jr;
    jr["t_s"] = r.t_s;
    jr["objective"] = r.objective;
    Json nodes = Json::array();
    for (int i = 0; i < r.nodes.size(); ++i) nodes.push_back(r.nodes(i));
    jr["nodes"] = std::move(nodes);
    Json states = Json::array();
    for (const auto& m : r.states) {
      Json cols = Json::array();
      for (int c = 0; c < m.cols(); ++c) {
        Json col = Json::array();
        for (int rr = 0; rr < m.rows(); ++rr) col.push_back(m(rr, c));
        cols.push_back(std::move(col));
      }
      states.push_back(std::move(cols));
    }
    jr["states"] = std::move(states);
    Json inputs = Json::array();
    for (const auto& m : r.inputs) {
      Json cols = Json::array();
      for (int c = 0; c < m.cols(); ++c) {
        Json col = Json::array();
        for (int rr = 0; rr < m.rows(); ++rr) col.push_back(m(rr, c));
        cols.push_back(std::move(col));
      }
      inputs.push_back(std::move(cols));
    }
    jr["inputs"] = std::move(inputs);
    list.push_back(std::move(jr));
  }
  j["vehicles"] = std::move(list);
  ioutil::write_file(path, j.dump(2) + "\n");
}

inline std::vector<ReferenceTrajectory> load_references(
    const std::string& path) {
  const Json j = ioutil::parse_json(path);
  if (ioutil::field(j, "kind", path) != "references")
    throw ArtifactError(path + ": not a references file");
  std::vector<ReferenceTrajectory> out;
  for (const auto& jr : ioutil::field(j, "vehicles", path)) {
    ReferenceTrajectory r;
    r.t_s = ioutil::field(jr, "t_s", path).get<double>();
    r.objective = ioutil::field(jr, "objective", path).get<double>();
    const Json& nodes = ioutil::field(jr, "nodes", path);
    r.nodes.resize(static_cast<int>(nodes.size()));
    for (size_t i = 0; i < nodes.size(); ++i)
      r.nodes(static_cast<int>(i)) = nodes[i].get<double>();
    auto parse_mats = [&](const Json& list, int rows) {
      std::vector<Eigen::MatrixXd> mats;
      for (const auto& cols : list) {
        Eigen::MatrixXd m(rows, static_cast<int>(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) {
          if (static_cast<int>(cols[c].size()) != rows)
            throw ArtifactError(path + ": bad matrix column length");
          for (int rr = 0; rr < rows; ++rr)
            m(rr, static_cast<int>(c)) = cols[c][rr].get<double>();
        }
        mats.push_back(std::move(m));
      }
      return mats;
    };
    r.states = parse_mats(ioutil::field(jr, "states", path), 5);
    r.inputs = parse_mats(ioutil::field(jr, "inputs", path), 2);
    if (r.states.size() != r.inputs.size() || r.states.empty())
      throw ArtifactError(path + ": interval count mismatch");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace

inline void save_trace(const ClosedLoopTrace& tr, const std::string& path) {
  std::string s =
      "round,t,vehicle,x,y,psi,v,delta_f,a,omega,"
      "solve_status,solve_iterations,fallback,solve_ms\n";
  const auto f = [](double x) { return ioutil::fmt(x); };
  for (int k = 0; k <= tr.rounds; ++k) {
    for (int i = 0; i < tr.num_vehicles; ++i) {
      const VehicleState& z = tr.states[k][i];
      s += std::to_string(k) + "," + f(k * tr.tau) + "," + std::to_string(i) +
           "," + f(z.x) + "," + f(z.y) + "," + f(z.psi) + "," + f(z.v) + "," +
           f(z.delta_f);
      if (k < tr.rounds) {
        const ControlInput& u = tr.inputs[k][i];
        const SolveRecord& r = tr.solves[k][i];
        s += "," + f(u.a) + "," + f(u.omega) + "," + to_string(r.status) +
             "," + std::to_string(r.iterations) + "," +
             (r.fallback ? "1" : "0") + "," + f(r.solve_ms);
      } else {
        s += ",,,,,,";
      }
      s += "\n";
    }
  }
  ioutil::write_file(path, s);
}

inline void save_pairwise(const ClosedLoopTrace& tr, const std::string& path) {
  std::string s = "round,t,i,j,distance\n";
  for (int k = 0; k < static_cast<int>(tr.pairwise_distance.size()); ++k)
    for (int i = 0; i < tr.num_vehicles; ++i)
      for (int j = i + 1; j < tr.num_vehicles; ++j)
        s += std::to_string(k) + "," + ioutil::fmt(k * tr.tau) + "," +
             std::to_string(i) + "," + std::to_string(j) + "," +
             ioutil::fmt(tr.pairwise_distance[k](i, j)) + "\n";
  ioutil::write_file(path, s);
}

namespace detail {

inline double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double idx = p * (static_cast<double>(xs.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(idx));
  const size_t hi = static_cast<size_t>(std::ceil(idx));
  const double w = idx - static_cast<double>(lo);
  return (1.0 - w) * xs[lo] + w * xs[hi];
}

}  // namespace detail

inline Json trace_summary(const ClosedLoopTrace& tr) {
  std::vector<double> ms;
  std::vector<double> iters;
  int fallbacks = 0;
  for (const auto& round : tr.solves)
    for (const auto& r : round) {
      ms.push_back(r.solve_ms);
      iters.push_back(static_cast<double>(r.iterations));
      if (r.fallback) ++fallbacks;
    }
  double min_pair = std::numeric_limits<double>::infinity();
  for (const auto& m : tr.pairwise_distance)
    for (int i = 0; i < tr.num_vehicles; ++i)
      for (int j = i + 1; j < tr.num_vehicles; ++j)
        min_pair = std::min(min_pair, m(i, j));
  double min_obs = std::numeric_limits<double>::infinity();
  for (const auto& row : tr.obstacle_clearance)
    for (double d : row) min_obs = std::min(min_obs, d);
  Json j;
  j["kind"] = "trace_summary";
  j["rounds"] = tr.rounds;
  j["num_vehicles"] = tr.num_vehicles;
  j["all_arrived"] = tr.all_arrived;
  j["arrival_round"] = tr.arrival_round;
  j["total_solves"] = static_cast<int>(ms.size());
  j["fallbacks"] = fallbacks;
  j["solve_ms_median"] = detail::percentile(ms, 0.5);
  j["solve_ms_p98"] = detail::percentile(ms, 0.98);
  j["iterations_median"] = detail::percentile(iters, 0.5);
  if (tr.num_vehicles > 1) j["min_pairwise_distance"] = min_pair;
  j["min_obstacle_clearance"] = min_obs;
  return j;
}

/// Rows parsed back from a trace CSV; enough for plot emission and checks.
struct TraceRow {
  int round = 0;
  double t = 0.0;
  int vehicle = 0;
  VehicleState state;
  bool has_input = false;
  ControlInput input;
  std::string status;
  int iterations = 0;
  bool fallback = false;
  double solve_ms = 0.0;
};

inline std::vector<TraceRow> load_trace(const std::string& path) {
  std::istringstream in(ioutil::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("round,t,vehicle", 0) != 0)
    throw ArtifactError(path + ": not a trace file");
  std::vector<TraceRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = ioutil::split(line, ',');
    if (cols.size() != 14)
      throw ArtifactError(path + ":" + std::to_string(lineno) +
                          ": expected 14 columns");
    TraceRow r;
    r.round = std::stoi(cols[0]);
    r.t = std::stod(cols[1]);
    r.vehicle = std::stoi(cols[2]);
    r.state = VehicleState{std::stod(cols[3]), std::stod(cols[4]),
                           std::stod(cols[5]), std::stod(cols[6]),
                           std::stod(cols[7])};
    if (!cols[8].empty()) {
      r.has_input = true;
      r.input = ControlInput{std::stod(cols[8]), std::stod(cols[9])};
      r.status = cols[10];
      r.iterations = std::stoi(cols[11]);
      r.fallback = cols[12] == "1";
      r.solve_ms = std::stod(cols[13]);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ArtifactError(path + ": empty trace");
  return rows;
}

// ---------------------------------------------------------------------------
// Plot data

/// Emits plot-ready CSV series next to nothing else: state/input profiles,
/// solve-time histogram bins, and (when a references file sits beside the
/// trace) reference-vs-actual paths.
inline void emit_plots(const std::string& trace_path,
                       const std::string& out_dir) {
  namespace fs = std::filesystem;
  const std::vector<TraceRow> rows = load_trace(trace_path);
  fs::create_directories(out_dir);

  std::string prof = "t,vehicle,x,y,psi,v,delta_f,a,omega\n";
  for (const auto& r : rows) {
    if (!r.has_input) continue;
    prof += ioutil::fmt(r.t) + "," + std::to_string(r.vehicle) + "," +
            ioutil::fmt(r.state.x) + "," + ioutil::fmt(r.state.y) + "," +
            ioutil::fmt(r.state.psi) + "," + ioutil::fmt(r.state.v) + "," +
            ioutil::fmt(r.state.delta_f) + "," + ioutil::fmt(r.input.a) +
            "," + ioutil::fmt(r.input.omega) + "\n";
  }
  ioutil::write_file((fs::path(out_dir) / "profiles.csv").string(), prof);

  std::vector<double> ms;
  for (const auto& r : rows)
    if (r.has_input) ms.push_back(r.solve_ms);
  const double hi = ms.empty() ? 1.0 : *std::max_element(ms.begin(), ms.end());
  const int bins = 20;
  const double width = std::max(hi / bins, 1e-9);
  std::vector<int> count(bins, 0);
  for (double x : ms)
    ++count[std::min(bins - 1, static_cast<int>(x / width))];
  std::string hist = "bin_lo_ms,bin_hi_ms,count\n";
  for (int b = 0; b < bins; ++b)
    hist += ioutil::fmt(b * width) + "," + ioutil::fmt((b + 1) * width) +
            "," + std::to_string(count[b]) + "\n";
  ioutil::write_file((fs::path(out_dir) / "solve_hist.csv").string(), hist);

  const fs::path refs_path = fs::path(trace_path).parent_path() /
                             "references.json";
  if (fs::exists(refs_path)) {
    const auto refs = load_references(refs_path.string());
    std::string rva = "t,vehicle,ref_x,ref_y,ref_psi,ref_v,x,y,psi,v\n";
    for (const auto& r : rows) {
      if (r.vehicle >= static_cast<int>(refs.size())) continue;
      const VehicleState ref = sample_reference(refs[r.vehicle], r.t);
      rva += ioutil::fmt(r.t) + "," + std::to_string(r.vehicle) + "," +
             ioutil::fmt(ref.x) + "," + ioutil::fmt(ref.y) + "," +
             ioutil::fmt(ref.psi) + "," + ioutil::fmt(ref.v) + "," +
             ioutil::fmt(r.state.x) + "," + ioutil::fmt(r.state.y) + "," +
             ioutil::fmt(r.state.psi) + "," + ioutil::fmt(r.state.v) + "\n";
    }
    ioutil::write_file((fs::path(out_dir) / "ref_vs_actual.csv").string(),
                       rva);
  }
}

// ---------------------------------------------------------------------------
// Configs and manifest

namespace detail {

inline void require_known_keys(const Json& section, const char* name,
                               std::initializer_list<const char*> known) {
  for (const auto& [key, value] : section.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found)
      throw ArtifactError(std::string("config: unknown key ") + name + "." +
                          key);
  }
}

}  // namespace detail

inline void apply_config_overrides(const Json& j, TrainConfig& train,
                                   SolverConfig& solver, MpcConfig& mpc) {
  detail::require_known_keys(j, "<root>", {"train", "solver", "mpc"});
  if (const auto it = j.find("train"); it != j.end()) {
    const Json& t = *it;
    detail::require_known_keys(
        t, "train",
        {"gamma", "learning_rate", "replay_capacity", "batch_size",
         "target_sync_period", "epsilon_start", "epsilon_end",
         "epsilon_decay_steps", "episodes", "max_steps_per_episode", "hidden",
         "learn_start"});
    if (t.contains("gamma")) train.gamma = t["gamma"].get<double>();
    if (t.contains("learning_rate"))
      train.learning_rate = t["learning_rate"].get<double>();
    if (t.contains("replay_capacity"))
      train.replay_capacity = t["replay_capacity"].get<size_t>();
    if (t.contains("batch_size"))
      train.batch_size = t["batch_size"].get<int>();
    if (t.contains("target_sync_period"))
      train.target_sync_period = t["target_sync_period"].get<int>();
    if (t.contains("epsilon_start"))
      train.epsilon_start = t["epsilon_start"].get<double>();
    if (t.contains("epsilon_end"))
      train.epsilon_end = t["epsilon_end"].get<double>();
    if (t.contains("epsilon_decay_steps"))
      train.epsilon_decay_steps = t["epsilon_decay_steps"].get<int>();
    if (t.contains("episodes")) train.episodes = t["episodes"].get<int>();
    if (t.contains("max_steps_per_episode"))
      train.max_steps_per_episode = t["max_steps_per_episode"].get<int>();
    if (t.contains("hidden"))
      train.hidden = t["hidden"].get<std::vector<int>>();
    if (t.contains("learn_start"))
      train.learn_start = t["learn_start"].get<int>();
  }
  if (const auto it = j.find("solver"); it != j.end()) {
    const Json& s = *it;
    detail::require_known_keys(s, "solver", {"tol", "max_iter", "mu_init"});
    if (s.contains("tol")) solver.tol = s["tol"].get<double>();
    if (s.contains("max_iter")) solver.max_iter = s["max_iter"].get<int>();
    if (s.contains("mu_init")) solver.mu_init = s["mu_init"].get<double>();
  }
  if (const auto it = j.find("mpc"); it != j.end()) {
    const Json& m = *it;
    detail::require_known_keys(
        m, "mpc", {"horizon", "tau", "d_min", "max_rounds", "parallel", "q"});
    if (m.contains("horizon")) mpc.horizon = m["horizon"].get<int>();
    if (m.contains("tau")) mpc.tau = m["tau"].get<double>();
    if (m.contains("d_min")) mpc.d_min = m["d_min"].get<double>();
    if (m.contains("max_rounds"))
      mpc.max_rounds = m["max_rounds"].get<int>();
    if (m.contains("parallel")) mpc.parallel = m["parallel"].get<bool>();
    if (m.contains("q")) {
      const auto q = m["q"].get<std::vector<double>>();
      if (q.size() != 5)
        throw ArtifactError("config: mpc.q must have 5 entries");
      for (int i = 0; i < 5; ++i) mpc.q(i) = q[i];
    }
  }
}

struct RunManifest {
  std::string scenario_path;
  std::string weights_path;  // optional pre-trained policy for strategize
  std::string out_dir = ".";
  bool train = false;
  bool strategize = false;
  bool plan = false;
  bool simulate = false;
  TrainConfig train_config;
  SolverConfig solver_config;
  MpcConfig mpc_config;
  double d_min = 0.05;
  std::uint64_t seed = 0;
  bool seed_set = false;  // overrides the scenario seed when true

  void validate() const {
    namespace fs = std::filesystem;
    if (!fs::exists(scenario_path))
      throw ArtifactError("manifest: scenario file missing: " +
                          scenario_path);
    if (strategize && !train && !weights_path.empty() &&
        !fs::exists(weights_path))
      throw ArtifactError("manifest: weights file missing: " + weights_path);
  }
};

// ---------------------------------------------------------------------------
// Pipeline stages. Each stage reads the previous stage's artifact files from
// the output directory, so stages can rerun independently.

namespace detail {

inline std::string artifact(const RunManifest& m, const char* name) {
  return (std::filesystem::path(m.out_dir) / name).string();
}

inline void require_artifact(const std::string& path, const char* stage) {
  if (!std::filesystem::exists(path))
    throw ArtifactError(std::string(stage) +
                        ": missing input artifact: " + path);
}

}  // namespace detail

inline void run_train_stage(const RunManifest& m, const Scenario& sc) {
  TrainConfig cfg = m.train_config;
  cfg.seed = m.seed_set ? m.seed : sc.seed;
  const auto factory = [&sc](std::mt19937_64&) {
    return from_scenario(sc, sc.grid);
  };
  std::vector<TrainLogRow> log;
  const QNetwork net = train(factory, cfg, &log);
  std::filesystem::create_directories(m.out_dir);
  save_weights(net, detail::artifact(m, "weights.bin"));
  save_training_log(log, detail::artifact(m, "training_log.csv"));
}

inline void run_strategize_stage(const RunManifest& m, const Scenario& sc) {
  const std::string weights = !m.weights_path.empty() && !m.train
                                  ? m.weights_path
                                  : detail::artifact(m, "weights.bin");
  detail::require_artifact(weights, "strategize");
  const QNetwork net = load_weights(weights);
  const GridWorld world = from_scenario(sc, sc.grid);
  const Rollout rollout = greedy_rollout(world, net, 100);
  std::vector<Strategy> strategies;
  for (int i = 0; i < world.num_vehicles(); ++i)
    strategies.push_back(extract_strategy(rollout, i, sc.grid, sc.t_s));
  std::filesystem::create_directories(m.out_dir);
  save_strategies(strategies, detail::artifact(m, "strategies.json"));
}

inline void run_plan_stage(const RunManifest& m, const Scenario& sc) {
  const std::string spath = detail::artifact(m, "strategies.json");
  detail::require_artifact(spath, "plan");
  const std::vector<Strategy> strategies = load_strategies(spath);
  if (strategies.size() != sc.vehicles.size())
    throw ArtifactError("plan: strategy count does not match scenario");
  std::vector<ReferenceTrajectory> refs;
  for (size_t i = 0; i < strategies.size(); ++i) {
    const VehicleSpec& v = sc.vehicles[i];
    const TargetSet target{v.target_box, v.target_psi};
    refs.push_back(plan_reference(
        v.initial, target, strategies[i], sc.obstacles, v.body,
        Limits::operational(), StageCostSpec{},
        CollocationGrid::make(strategies[i].length(), strategies[i].t_s),
        m.d_min, m.solver_config));
  }
  std::filesystem::create_directories(m.out_dir);
  save_references(refs, detail::artifact(m, "references.json"));
}

inline void run_simulate_stage(const RunManifest& m, const Scenario& sc) {
  const std::string rpath = detail::artifact(m, "references.json");
  detail::require_artifact(rpath, "simulate");
  const std::vector<ReferenceTrajectory> refs = load_references(rpath);
  if (refs.size() != sc.vehicles.size())
    throw ArtifactError("simulate: reference count does not match scenario");
  std::vector<VehicleState> initial;
  std::vector<TargetSet> targets;
  for (const auto& v : sc.vehicles) {
    initial.push_back(v.initial);
    targets.push_back(TargetSet{v.target_box, v.target_psi});
  }
  MpcConfig cfg = m.mpc_config;
  cfg.d_min = m.d_min;
  cfg.solver = m.solver_config;
  const unsigned seed =
      static_cast<unsigned>(m.seed_set ? m.seed : sc.seed);
  const ClosedLoopTrace tr =
      run_closed_loop(initial, refs, targets, sc.obstacles,
                      sc.vehicles.front().body, Limits::operational(), cfg,
                      seed);
  std::filesystem::create_directories(m.out_dir);
  save_trace(tr, detail::artifact(m, "trace.csv"));
  save_pairwise(tr, detail::artifact(m, "pairwise.csv"));
  ioutil::write_file(detail::artifact(m, "summary.json"),
                     trace_summary(tr).dump(2) + "\n");
}

/// Executes the enabled stages in order train -> strategize -> plan ->
/// simulate. Throws ArtifactError naming the failing stage.
inline void run_pipeline(const RunManifest& m) {
  m.validate();
  const Scenario sc = load_scenario(m.scenario_path);
  const auto guard = [](const char* stage, const auto& fn) {
    try {
      fn();
    } catch (const ArtifactError&) {
      throw;
    } catch (const std::exception& e) {
      throw ArtifactError(std::string(stage) + ": " + e.what());
    }
  };
  if (m.train) guard("train", [&] { run_train_stage(m, sc); });
  if (m.strategize) guard("strategize", [&] { run_strategize_stage(m, sc); });
  if (m.plan) guard("plan", [&] { run_plan_stage(m, sc); });
  if (m.simulate) guard("simulate", [&] { run_simulate_stage(m, sc); });
}

// ---------------------------------------------------------------------------
// Artifact checks (the `check` subcommand)

/// Validates an artifact file against its module invariants. Scenario files
/// re-run Scenario::validate; references are checked for dynamics residuals,
/// strategy-box memberships cannot be checked without the strategy file, so
/// references are checked against obstacles and limits; traces are checked
/// for safety distances and input limits against the scenario.
inline std::vector<std::string> check_artifact(const std::string& path,
                                               const std::string& scenario) {
  std::vector<std::string> problems;
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".json") {
    const Json j = ioutil::parse_json(path);
    const std::string kind =
        j.contains("kind") ? j["kind"].get<std::string>() : "scenario";
    if (kind == "scenario") {
      try {
        (void)scenario_from_json(j, path);
      } catch (const ArtifactError& e) {
        problems.push_back(e.what());
      }
    } else if (kind == "strategies") {
      try {
        for (const auto& s : load_strategies(path))
          for (size_t l = 0; l + 1 < s.steps.size(); ++l)
            if (!detail::legal_transition(s.steps[l].cells,
                                          s.steps[l + 1].cells))
              problems.push_back(path + ": illegal grid transition at step " +
                                 std::to_string(l));
      } catch (const ArtifactError& e) {
        problems.push_back(e.what());
      }
    } else if (kind == "references") {
      try {
        const auto refs = load_references(path);
        Scenario sc;
        const bool have_sc = !scenario.empty();
        if (have_sc) sc = load_scenario(scenario);
        for (size_t i = 0; i < refs.size(); ++i) {
          const BodySpec body =
              have_sc ? sc.vehicles.at(i).body : BodySpec{};
          const double resid = collocation_residual(refs[i], body.wheelbase);
          if (resid > 1e-6)
            problems.push_back(path + ": vehicle " + std::to_string(i) +
                               " dynamics residual " + ioutil::fmt(resid));
          if (have_sc) {
            for (double t = 0.0; t <= refs[i].duration() + 1e-9; t += 0.1) {
              const Polytope2D poly =
                  vehicle_polytope(sample_reference(refs[i], t), body);
              for (const auto& obs : sc.obstacles)
                if (polytope_distance(poly, obs) < 0.05 - 1e-6) {
                  problems.push_back(path + ": vehicle " +
                                     std::to_string(i) +
                                     " obstacle margin violated at t=" +
                                     ioutil::fmt(t));
                  t = refs[i].duration() + 1.0;
                  break;
                }
            }
          }
        }
      } catch (const ArtifactError& e) {
        problems.push_back(e.what());
      }
    } else if (kind == "trace_summary") {
      if (!j.contains("all_arrived") || !j["all_arrived"].get<bool>())
        problems.push_back(path + ": not all vehicles arrived");
    } else {
      problems.push_back(path + ": unknown artifact kind '" + kind + "'");
    }
  } else if (ext == ".csv") {
    try {
      const auto rows = load_trace(path);
      const Limits lim = Limits::operational();
      for (const auto& r : rows) {
        if (r.state.v < lim.v.lo - 1e-6 || r.state.v > lim.v.hi + 1e-6)
          problems.push_back(path + ": speed limit violated at round " +
                             std::to_string(r.round));
        if (r.state.delta_f < lim.delta.lo - 1e-6 ||
            r.state.delta_f > lim.delta.hi + 1e-6)
          problems.push_back(path + ": steering limit violated at round " +
                             std::to_string(r.round));
      }
      if (!scenario.empty()) {
        const Scenario sc = load_scenario(scenario);
        for (const auto& r : rows) {
          const Polytope2D poly = vehicle_polytope(
              r.state, sc.vehicles.at(r.vehicle).body);
          for (const auto& obs : sc.obstacles)
            if (polytope_distance(poly, obs) < 0.05 - 1e-3)
              problems.push_back(path +
                                 ": obstacle clearance violated at round " +
                                 std::to_string(r.round));
        }
      }
    } catch (const ArtifactError& e) {
      problems.push_back(e.what());
    }
  } else if (ext == ".bin") {
    try {
      (void)load_weights(path);
    } catch (const ArtifactError& e) {
      problems.push_back(e.what());
    }
  } else {
    problems.push_back(path + ": unrecognized artifact extension");
  }
  return problems;
}

}  // namespace confres
