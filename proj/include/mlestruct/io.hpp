#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlestruct/common.hpp"
#include "mlestruct/exact.hpp"
#include "mlestruct/frank_wolfe.hpp"
#include "mlestruct/model.hpp"
#include "mlestruct/synth.hpp"

namespace mlestruct {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Matrix helpers
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw StructuralError("matrix json must be a nested array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) throw StructuralError("ragged matrix json");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Dataset schema
//
// {
//   "kind": "bipartite_matching" | "general_matching" | "grid",
//   bipartite: "n", "K", "features": [K x (n x n)],
//              samples[i] = {"y": [col of row 0, ...]}
//   general:   "num_vertices", "edges": [[a,b],...], "K", "features",
//              samples[i] = {"y_edges": [[a,b],...]}
//   grid:      "rows", "cols", "C", "D", "node_features", "edge_features",
//              samples[i] = {"labels": [0/1 per node]}
//   Top-level features are shared; a sample may override with its own
//   "features" / "node_features" / "edge_features".
// }
// ---------------------------------------------------------------------------

inline json features_to_json(const StructuredModel& base, const Features& f) {
  json j;
  if (base.kind == ModelKind::PairwiseBinaryGrid) {
    j["node_features"] = matrix_to_json(f.grid_node);
    j["edge_features"] = matrix_to_json(f.grid_edge);
  } else {
    json maps = json::array();
    for (const Matrix& fk : f.matching) maps.push_back(matrix_to_json(fk));
    j["features"] = std::move(maps);
  }
  return j;
}

inline json dataset_to_json(const Dataset& data) {
  json j;
  j["kind"] = to_string(data.base.kind);
  switch (data.base.kind) {
    case ModelKind::BipartiteMatching:
      j["n"] = data.base.n;
      j["K"] = data.base.K;
      break;
    case ModelKind::GeneralPerfectMatching: {
      j["num_vertices"] = data.base.graph.num_vertices;
      json edges = json::array();
      for (const auto& [a, b] : data.base.graph.edges) edges.push_back({a, b});
      j["edges"] = std::move(edges);
      j["K"] = data.base.K;
      break;
    }
    case ModelKind::PairwiseBinaryGrid:
      j["rows"] = data.base.grid.rows;
      j["cols"] = data.base.grid.cols;
      j["C"] = data.base.C;
      j["D"] = data.base.D;
      break;
  }
  const Features* shared = data.features.empty() ? nullptr : data.features.front().get();
  bool all_shared = true;
  for (const auto& f : data.features) all_shared = all_shared && f.get() == shared;
  if (shared) {
    const json fj = features_to_json(data.base, *shared);
    for (auto it = fj.begin(); it != fj.end(); ++it) j[it.key()] = it.value();
  }
  json samples = json::array();
  for (int m = 0; m < data.size(); ++m) {
    json s;
    const auto& y = data.observations[m];
    switch (data.base.kind) {
      case ModelKind::BipartiteMatching:
        s["y"] = y;
        break;
      case ModelKind::GeneralPerfectMatching: {
        json ye = json::array();
        for (int v = 0; v < static_cast<int>(y.size()); ++v)
          if (y[v] > v) ye.push_back({v, y[v]});
        s["y_edges"] = std::move(ye);
        break;
      }
      case ModelKind::PairwiseBinaryGrid:
        s["labels"] = y;
        break;
    }
    if (!all_shared && data.features[m].get() != shared) {
      const json fj = features_to_json(data.base, *data.features[m]);
      for (auto it = fj.begin(); it != fj.end(); ++it) s[it.key()] = it.value();
    }
    samples.push_back(std::move(s));
  }
  j["samples"] = std::move(samples);
  return j;
}

inline std::shared_ptr<const Features> features_from_json(const StructuredModel& base,
                                                          const json& j) {
  auto f = std::make_shared<Features>();
  if (base.kind == ModelKind::PairwiseBinaryGrid) {
    f->grid_node = matrix_from_json(j.at("node_features"));
    f->grid_edge = matrix_from_json(j.at("edge_features"));
  } else {
    for (const json& fk : j.at("features")) f->matching.push_back(matrix_from_json(fk));
  }
  return f;
}

inline Dataset dataset_from_json(const json& j) {
  Dataset data;
  const std::string kind = j.at("kind").get<std::string>();
  StructuredModel skeleton;
  if (kind == "bipartite_matching") {
    skeleton.kind = ModelKind::BipartiteMatching;
    skeleton.n = j.at("n").get<int>();
    skeleton.K = j.at("K").get<int>();
  } else if (kind == "general_matching") {
    skeleton.kind = ModelKind::GeneralPerfectMatching;
    std::vector<std::pair<int, int>> edges;
    for (const json& e : j.at("edges")) edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    skeleton.graph = GeneralGraph(j.at("num_vertices").get<int>(), std::move(edges));
    skeleton.K = j.at("K").get<int>();
  } else if (kind == "grid") {
    skeleton.kind = ModelKind::PairwiseBinaryGrid;
    skeleton.grid = GridGraph(j.at("rows").get<int>(), j.at("cols").get<int>());
    skeleton.C = j.at("C").get<int>();
    skeleton.D = j.at("D").get<int>();
  } else {
    throw StructuralError("unknown dataset kind: " + kind);
  }

  std::shared_ptr<const Features> shared;
  const bool has_shared = skeleton.kind == ModelKind::PairwiseBinaryGrid
                              ? (j.contains("node_features") && j.contains("edge_features"))
                              : j.contains("features");
  if (has_shared) shared = features_from_json(skeleton, j);

  // materialize the validated base model from the first available features
  auto build_base = [&](const std::shared_ptr<const Features>& f) {
    switch (skeleton.kind) {
      case ModelKind::BipartiteMatching: return make_bipartite_model(skeleton.n, f);
      case ModelKind::GeneralPerfectMatching:
        return make_general_matching_model(skeleton.graph, f);
      case ModelKind::PairwiseBinaryGrid:
        return make_grid_model(skeleton.grid.rows, skeleton.grid.cols, f);
    }
    throw StructuralError("unknown model kind");
  };

  for (const json& s : j.at("samples")) {
    std::shared_ptr<const Features> f = shared;
    const bool own = skeleton.kind == ModelKind::PairwiseBinaryGrid
                         ? (s.contains("node_features") || s.contains("edge_features"))
                         : s.contains("features");
    if (own) f = features_from_json(skeleton, s);
    if (!f) throw StructuralError("sample has no features and no shared features exist");
    if (data.features.empty()) data.base = build_base(f);
    data.features.push_back(std::move(f));

    std::vector<int> y;
    if (skeleton.kind == ModelKind::BipartiteMatching) {
      y = s.at("y").get<std::vector<int>>();
    } else if (skeleton.kind == ModelKind::GeneralPerfectMatching) {
      y.assign(skeleton.graph.num_vertices, -1);
      for (const json& e : s.at("y_edges")) {
        const int a = e[0].get<int>(), b = e[1].get<int>();
        if (a < 0 || b < 0 || a >= skeleton.graph.num_vertices ||
            b >= skeleton.graph.num_vertices)
          throw StructuralError("matching edge references missing vertex");
        y[a] = b;
        y[b] = a;
      }
    } else {
      y = s.at("labels").get<std::vector<int>>();
    }
    data.observations.push_back(std::move(y));
  }
  if (data.observations.empty()) throw StructuralError("dataset has no samples");
  check_dataset(data);
  return data;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

inline json theta_to_json(const StructuredModel& model, const std::vector<double>& theta,
                          double lambda) {
  json j;
  j["kind"] = to_string(model.kind);
  j["lambda"] = lambda;
  j["theta"] = theta;
  if (model.kind == ModelKind::PairwiseBinaryGrid) {
    j["C"] = model.C;
    j["D"] = model.D;
  } else {
    j["K"] = model.K;
  }
  return j;
}

inline std::vector<double> theta_from_json(const StructuredModel& model, const json& j,
                                           double* lambda_out = nullptr) {
  const auto theta = j.at("theta").get<std::vector<double>>();
  check_theta(model, theta);
  if (j.at("kind").get<std::string>() != to_string(model.kind))
    throw StructuralError("parameter file kind does not match model");
  if (lambda_out && j.contains("lambda")) *lambda_out = j.at("lambda").get<double>();
  return theta;
}

// ---------------------------------------------------------------------------
// Marginals / inference output
// ---------------------------------------------------------------------------

inline json marginals_to_json(const StructuredModel& model, const InferResult& r) {
  json j;
  j["kind"] = to_string(model.kind);
  j["log_z"] = r.log_z;
  j["gap"] = r.gap;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  if (model.kind == ModelKind::BipartiteMatching) {
    Matrix t(model.n, model.n);
    t.data() = r.marginals.edge;
    j["edge_marginals"] = matrix_to_json(t);
  } else if (model.kind == ModelKind::GeneralPerfectMatching) {
    j["edge_marginals"] = r.marginals.edge;
    json edges = json::array();
    for (const auto& [a, b] : model.graph.edges) edges.push_back({a, b});
    j["edges"] = std::move(edges);
  } else {
    j["node_marginals"] = r.marginals.node;
    j["edge_marginals"] = r.marginals.edge;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sandwich report
// ---------------------------------------------------------------------------

inline json bounded_to_json(const BoundedValue& v) {
  return json{{"estimate", v.estimate}, {"lo", v.lo}, {"hi", v.hi}};
}

inline json sandwich_to_json(const SandwichReport& r) {
  json j;
  j["lower"] = bounded_to_json(r.rw_at_rw);        // RW surrogate at its optimum
  j["exact"] = r.exact_at_mle;                     // true likelihood at exact MLE
  j["upper"] = bounded_to_json(r.bethe_at_bethe);  // Bethe surrogate at its optimum
  j["cross_terms"] = {{"bethe_at_rw", bounded_to_json(r.bethe_at_rw)},
                      {"rw_at_bethe", bounded_to_json(r.rw_at_bethe)},
                      {"exact_at_bethe", r.exact_at_bethe},
                      {"exact_at_rw", r.exact_at_rw}};
  j["gaps"] = {{"learn_bethe", r.learn_gap_bethe}, {"learn_rw", r.learn_gap_rw}};
  json checks = json::array();
  for (const auto& c : r.checks)
    checks.push_back({{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"holds", c.holds}});
  j["checks"] = std::move(checks);
  j["all_hold"] = r.all_hold;
  return j;
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

inline std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "t,objective,gap,gamma,seconds\n";
  for (const TraceRow& r : trace)
    os << r.t << ',' << r.objective << ',' << r.gap << ',' << r.gamma << ',' << r.seconds
       << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StructuralError("cannot open for writing: " + path);
  out << content;
  if (!out) throw StructuralError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::string& path) {
  return json::parse(read_text_file(path));
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Experiment configuration (CLI)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string dataset_path;
  std::string theta_path;
  std::string reference_path;  // held-out labels for Hamming evaluation
  double lambda = 1.0;
  bool rho_is_set = false;
  double rho_value = 1.0;
  std::vector<double> rho_values;  // per-factor override
  FWConfig fw;
  SynthSpec synth;
  std::string out_dir = ".";
};

inline FWConfig fw_config_from_json(const json& j) {
  FWConfig cfg;
  if (j.contains("mode")) {
    const std::string m = j.at("mode").get<std::string>();
    if (m == "batch")
      cfg.mode = FWMode::Batch;
    else if (m == "block")
      cfg.mode = FWMode::Block;
    else
      throw StructuralError("fw.mode must be batch or block");
  }
  if (j.contains("step_rule")) {
    const std::string s = j.at("step_rule").get<std::string>();
    if (s == "decay")
      cfg.step_rule = StepRule::Decay;
    else if (s == "line_search")
      cfg.step_rule = StepRule::LineSearch;
    else
      throw StructuralError("fw.step_rule must be decay or line_search");
  }
  if (j.contains("max_iters")) cfg.max_iters = j.at("max_iters").get<long>();
  if (j.contains("gap_tol")) cfg.gap_tol = j.at("gap_tol").get<double>();
  if (j.contains("subproblem_tol")) cfg.subproblem_tol = j.at("subproblem_tol").get<double>();
  if (j.contains("averaging")) cfg.averaging = j.at("averaging").get<bool>();
  if (j.contains("rng_seed")) cfg.rng_seed = j.at("rng_seed").get<uint64_t>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  if (j.contains("refresh_every")) cfg.refresh_every = j.at("refresh_every").get<int>();
  check_config(cfg);
  return cfg;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("dataset")) cfg.dataset_path = j.at("dataset").get<std::string>();
  if (j.contains("theta")) cfg.theta_path = j.at("theta").get<std::string>();
  if (j.contains("reference")) cfg.reference_path = j.at("reference").get<std::string>();
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("rho")) {
    cfg.rho_is_set = true;
    if (j.at("rho").is_number())
      cfg.rho_value = j.at("rho").get<double>();
    else
      cfg.rho_values = j.at("rho").get<std::vector<double>>();
  }
  if (j.contains("fw")) cfg.fw = fw_config_from_json(j.at("fw"));
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    if (s.contains("regime")) {
      const std::string r = s.at("regime").get<std::string>();
      if (r == "high_snr")
        cfg.synth.regime = SynthRegime::HighSNR;
      else if (r == "low_snr")
        cfg.synth.regime = SynthRegime::LowSNR;
      else if (r == "custom")
        cfg.synth.regime = SynthRegime::Custom;
      else
        throw StructuralError("synth.regime must be high_snr, low_snr or custom");
    }
    if (s.contains("n")) cfg.synth.n = s.at("n").get<int>();
    if (s.contains("M")) cfg.synth.num_samples = s.at("M").get<int>();
    if (s.contains("W")) cfg.synth.custom_w = matrix_from_json(s.at("W"));
  }
  return cfg;
}

/// Reweighting from a config: uniform value, per-factor list, or the model
/// default when unspecified.
inline Reweighting rho_from_config(const ExperimentConfig& cfg, const StructuredModel& model) {
  if (!cfg.rho_is_set && cfg.rho_values.empty()) return default_rho(model);
  if (!cfg.rho_values.empty()) {
    Reweighting rho{cfg.rho_values};
    check_rho(rho, model);
    return rho;
  }
  return uniform_rho(model, cfg.rho_value);
}

}  // namespace mlestruct
