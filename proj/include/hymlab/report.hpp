#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hymlab/config.hpp"

namespace hymlab {

using nlohmann::json;

/// Top-level summary with every section present, null until filled.
inline json empty_summary() {
  return json{{"geometry", nullptr}, {"chern", nullptr},    {"flow", nullptr},
              {"pipeline", nullptr}, {"projectivization", nullptr}, {"errors", json::array()}};
}

inline json error_json(const Error& e) {
  json j{{"kind", to_string(e.kind())}, {"message", e.what()}};
  if (!e.history().empty()) j["history"] = e.history();
  return j;
}

inline json geometry_json(const Geometry& g) {
  const auto rho = gauduchon_residual(g);
  return json{{"kind", g.kind()},
              {"grid", g.grid().shape()},
              {"periods", g.grid().periods()},
              {"points", g.points()},
              {"volume", g.volume()},
              {"min_eigenvalue", g.min_eigenvalue()},
              {"rho1", rho.rho1},
              {"rho2", rho.rho2},
              {"d_omega", kahler_residual(g)}};
}

inline json numbers_json(const ChernNumbers& n) {
  return json{{"ch1", n.ch1}, {"ch2", n.ch2}, {"c1sq", n.c1sq}, {"c2", n.c2}};
}

inline json chern_json(const ChernReport& r) {
  return json{{"numbers", numbers_json(r.numbers)},
              {"deg", r.deg},
              {"slope", r.slope},
              {"lambda", r.lambda},
              {"volume", r.volume},
              {"gauduchon_residual", r.gauduchon_residual},
              {"bogomolov", r.bogomolov},
              {"bogomolov_normalized", r.bogomolov / (4.0 * kPi * kPi)},
              {"ch1_vanishes", r.ch1_vanishes},
              {"ch2_vanishes", r.ch2_vanishes},
              {"warnings", r.warnings}};
}

inline json energy_json(const EnergyIdentity& e) {
  return json{{"ym_energy", e.lhs},           {"mean_term", e.mean_term}, {"ch2_term", e.ch2_term},
              {"lambda_term", e.lambda_term}, {"mean_energy", e.mean_energy}, {"residual", e.residual},
              {"relative_residual", e.relative_residual}};
}

inline json bogomolov_json(const BogomolovResult& b) {
  return json{{"quantity", b.quantity},
              {"normalized", b.normalized},
              {"tracefree_energy", b.tracefree_energy},
              {"tracefree_mean", b.tracefree_mean}};
}

inline json flow_json(const FlowTrace& t) {
  return json{{"status", to_string(t.status)},
              {"message", t.message},
              {"steps", t.step},
              {"t", t.t},
              {"dt", t.dt},
              {"halvings", t.halvings},
              {"ym_initial", t.ym0},
              {"ym_final", t.ym_final},
              {"dissipated", t.dissipated},
              {"energy_balance", t.energy_balance()},
              {"ym_nonincreasing", t.ym_nonincreasing()},
              {"samples", t.samples.size()},
              {"sup_F_final", t.samples.empty() ? 0.0 : t.samples.back().sup_F},
              {"he_residual_final", t.samples.empty() ? 0.0 : t.samples.back().he_residual}};
}

inline json pipeline_json(const PipelineReport& r) {
  json stages = json::array();
  for (const auto& s : r.stages)
    stages.push_back(json{{"eps", s.eps},
                          {"ok", s.ok},
                          {"error_kind", s.error_kind},
                          {"error", s.error},
                          {"fallback_start", s.fallback_start},
                          {"perturbed_residual", s.perturbed_residual},
                          {"he_residual", s.he_residual},
                          {"sup_F_start", s.sup_F_start},
                          {"sup_F_after", s.sup_F_after},
                          {"ym_start", s.ym_start},
                          {"ym_after", s.ym_after},
                          {"min_he_residual_flow", s.min_he_residual_flow},
                          {"flow_status", to_string(s.flow_status)}});
  json sup_F = json::array(), he = json::array();
  for (const auto& s : r.stages) {
    sup_F.push_back(s.sup_F_after);
    he.push_back(s.he_residual);
  }
  return json{{"chern", chern_json(r.chern)},
              {"hypothesis_violated", r.hypothesis_violated},
              {"lambda", r.lambda},
              {"initial_sup_F", r.initial_sup_F},
              {"stages", stages},
              {"sup_F", sup_F},
              {"he_residual", he},
              {"sup_F_monotone", r.sup_F_monotone},
              {"he_residual_monotone", r.he_residual_monotone},
              {"final_below_target", r.final_below_target},
              {"final_sup_F", r.final_sup_F},
              {"errors", r.errors}};
}

inline json segre_json(const SegreCheck& c) {
  return json{{"k", c.k},
              {"pushforward", c.pushforward},
              {"segre", c.segre},
              {"integrated", c.integrated},
              {"pointwise", c.pointwise}};
}

inline json metric_change_json(const MetricChange& m) {
  return json{{"xi2_omega", m.xi2_omega}, {"xi3", m.xi3}, {"value", m.value}};
}

}  // namespace hymlab
