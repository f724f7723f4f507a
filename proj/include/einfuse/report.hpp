#pragma once

// JSON views of plans, nests and cost reports; run manifests; atomic file output.

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "cost_model.hpp"
#include "fusion.hpp"
#include "loop_nest.hpp"
#include "validate.hpp"

namespace einfuse {

using json = nlohmann::ordered_json;

// temp file + rename so readers never see a half-written file
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IrError("cannot write " + tmp.string());
    f << content;
    f.flush();
    if (!f) throw IrError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline json to_json(const Diagnostic& d) {
  json j{{"code", d.code}, {"message", d.message}, {"severity", d.warning ? "warning" : "error"}};
  if (d.einsum >= 0) j["einsum"] = d.einsum;
  if (d.line > 0) j["line"] = d.line, j["column"] = d.column;
  return j;
}

inline json to_json(const std::vector<Diagnostic>& ds) {
  json a = json::array();
  for (auto& d : ds) a.push_back(to_json(d));
  return a;
}

inline json ranks_json(const RankSet& s) {
  json a = json::array();
  for (auto& r : s) a.push_back(r);
  return a;
}

inline json to_json(const FusionPlan& p, const Cascade& c) {
  json groups = json::array();
  for (std::size_t k = 0; k < p.groups.size(); ++k) {
    auto& g = p.groups[k];
    json m = json::array(), links = json::array(), chain = json::array(), res = json::object();
    for (auto x : g.members) m.push_back(c.einsums[x].label());
    for (auto l : g.links) links.push_back(class_name(l));
    for (auto& s : g.chain) chain.push_back(ranks_json(s));
    for (auto& [t, r] : g.residency) res[t] = to_string(r);
    json jg{{"id", k}, {"einsums", m}, {"links", links}, {"chain", chain}, {"residency", res}};
    if (!g.segment_starts.empty()) jg["segment_starts"] = g.segment_starts;
    if (g.generational_tile) jg["generational_tile"] = *g.generational_tile;
    if (!g.notes.empty()) jg["notes"] = g.notes;
    groups.push_back(jg);
  }
  return {{"policy", policy_name(p.policy)},
          {"group_count", p.groups.size()},
          {"groups", groups},
          {"diagnostics", to_json(p.diagnostics)}};
}

inline const char* loop_kind_name(LoopKind k) {
  return k == LoopKind::full ? "full" : k == LoopKind::tile_outer ? "tile-outer" : "tile-inner";
}

inline json to_json(const Node& n, const Cascade& c) {
  switch (n.kind) {
  case Node::Kind::stmt: return {{"stmt", c.einsums[n.einsum].label()}};
  case Node::Kind::trigger: return {{"trigger", n.tensor}};
  case Node::Kind::loop: break;
  }
  json body = json::array();
  for (auto& b : n.body) body.push_back(to_json(b, c));
  json j{{"loop", n.loop.var()}, {"rank", n.loop.rank}, {"kind", loop_kind_name(n.loop.kind)},
         {"trips", n.loop.trips()}};
  if (n.loop.kind != LoopKind::full) j["tile"] = n.loop.tile;
  j["body"] = body;
  return j;
}

inline json to_json(const LoopNest& nest, const Cascade& c) {
  json roots = json::array(), ein = json::array(), bufs = json::object(), trig = json::array();
  for (auto& r : nest.roots) roots.push_back(to_json(r, c));
  for (auto j : nest.einsums) ein.push_back(c.einsums[j].label());
  for (auto& [t, b] : nest.buffers) {
    json readers = json::array();
    for (auto& cl : b.backing_reads) {
      json r = json::array();
      for (auto x : cl.readers) r.push_back(c.einsums[x].label());
      readers.push_back(r);
    }
    bufs[t] = {{"residency", to_string(b.residency)}, {"produced_here", b.produced_here},
               {"backing_write", b.backing_write}, {"backing_read_clusters", readers}};
  }
  for (auto& t : nest.triggers)
    trig.push_back({{"tensor", t.tensor}, {"granularity", t.granularity}, {"fires", t.fires},
                    {"consumer", c.einsums[t.consumer].label()}});
  return {{"einsums", ein},  {"stationary", nest.stationary}, {"forced", nest.forced},
          {"buffers", bufs}, {"triggers", trig},              {"loops", roots},
          {"diagnostics", to_json(nest.diagnostics)}};
}

inline json to_json(const Schedule& s, const Cascade& c) {
  json a = json::array();
  for (auto& n : s) a.push_back(to_json(n, c));
  return a;
}

inline json to_json(const CostReport& r) {
  json groups = json::array();
  for (auto& g : r.groups)
    groups.push_back({{"group_id", g.group_id},
                      {"einsum_ids", g.einsum_ids},
                      {"binding", g.binding},
                      {"bound", g.compute_bound ? "compute" : "memory"},
                      {"flops", g.flops},
                      {"bytes_intra", g.bytes_intra},
                      {"bytes_inter_read", g.bytes_inter_read},
                      {"bytes_inter_write", g.bytes_inter_write},
                      {"bytes_spill", g.bytes_spill},
                      {"t_compute_s", g.t_compute},
                      {"t_memory_s", g.t_memory},
                      {"t_start_s", g.t_start},
                      {"t_end_s", g.t_end}});
  return {{"variant", r.variant},
          {"phase", phase_name(r.phase)},
          {"latency_s", r.latency},
          {"ideal_latency_s", r.ideal_latency},
          {"bytes_inter", r.inter_bytes()},
          {"bytes_intra", r.intra_bytes()},
          {"bytes_read", r.read_bytes()},
          {"bytes_write", r.write_bytes()},
          {"groups", groups},
          {"warnings", to_json(r.warnings)}};
}

// everything needed to replay a command
struct RunManifest {
  std::string command;
  std::string builtin;      // "mamba1" or empty
  std::string cascade_file; // used when builtin is empty
  std::string params;       // k=v,... applied to the builtin
  bool tiny = false;
  std::vector<std::string> policies;
  std::string hw_file;
  std::string phase = "prefill";
  std::string scenarios;
  std::string out_dir = ".";
  std::uint64_t seed = 1;

  std::vector<std::string> problems() const {
    std::vector<std::string> v;
    if (builtin.empty() && cascade_file.empty()) v.push_back("manifest names no cascade");
    if (!builtin.empty() && builtin != "mamba1") v.push_back("unknown builtin " + builtin);
    if (policies.empty()) v.push_back("manifest needs at least one policy");
    for (auto& p : policies)
      if (!policy_from_name(p)) v.push_back("unknown policy " + p);
    if (phase != "prefill" && phase != "decode") v.push_back("unknown phase " + phase);
    return v;
  }
};

inline json to_json(const RunManifest& m) {
  return {{"command", m.command}, {"builtin", m.builtin}, {"cascade_file", m.cascade_file},
          {"params", m.params},   {"tiny", m.tiny},       {"policies", m.policies},
          {"hw_file", m.hw_file}, {"phase", m.phase},     {"scenarios", m.scenarios},
          {"out_dir", m.out_dir}, {"seed", m.seed}};
}

inline RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) j.at(k).get_to(dst);
  };
  get("command", m.command);
  get("builtin", m.builtin);
  get("cascade_file", m.cascade_file);
  get("params", m.params);
  get("tiny", m.tiny);
  get("policies", m.policies);
  get("hw_file", m.hw_file);
  get("phase", m.phase);
  get("scenarios", m.scenarios);
  get("out_dir", m.out_dir);
  get("seed", m.seed);
  return m;
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IrError("cannot read manifest " + path);
  try {
    return manifest_from_json(json::parse(f));
  } catch (const json::exception& e) {
    throw IrError("manifest " + path + ": " + e.what());
  }
}

} // namespace einfuse
